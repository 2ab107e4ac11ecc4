import io
import json

import pytest
from PIL import Image

from arenakit.curation import (
    CurationConfig,
    CurationError,
    average_hash,
    dedup,
    diversity_sample,
    export_bench,
    hamming,
    safety_filter,
)

from conftest import make_record, make_tag


def png_bytes(color, size=(32, 32), noise=None):
    img = Image.new("RGB", size, color)
    if noise:
        px = img.load()
        for x, y, c in noise:
            px[x, y] = c
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def gradient_png(seed=0, size=(32, 32)):
    img = Image.new("L", size)
    px = img.load()
    for x in range(size[0]):
        for y in range(size[1]):
            px[x, y] = (x * 8 + y * 3 + seed * 37) % 256
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class TestSafetyFilter:
    def test_threshold_boundary(self):
        records = [
            make_record(rid="safe", image_ids=("i-safe",)),
            make_record(rid="edge", image_ids=("i-edge",)),
            make_record(rid="bad", image_ids=("i-bad",)),
        ]
        scores = {"i-safe": 0.1, "i-edge": 0.5, "i-bad": 0.9}
        out = safety_filter(records, scores.__getitem__, 0.5)
        # score == threshold is removed
        assert [r.id for r in out.kept] == ["safe"]
        assert {e["record_id"] for e in out.removed} == {"edge", "bad"}

    def test_classifier_failure_quarantines(self):
        def clf(iid):
            raise RuntimeError("model offline")

        out = safety_filter([make_record(rid="x")], clf, 0.5)
        assert out.kept == []
        assert out.quarantined[0]["record_id"] == "x"
        assert "model offline" in out.quarantined[0]["reason"]

    def test_no_images_always_kept(self):
        out = safety_filter([make_record(rid="n", image_ids=())], lambda _: 1.0, 0.5)
        assert [r.id for r in out.kept] == ["n"]


class TestHashing:
    def test_identical_bytes_same_hash(self):
        b = gradient_png(1)
        assert average_hash(b) == average_hash(b)

    def test_different_images_differ(self):
        h1 = average_hash(gradient_png(1))
        h2 = average_hash(png_bytes((255, 255, 255), noise=[(0, 0, (0, 0, 0))]))
        assert hamming(h1, h2) > 4

    def test_small_perturbation_near(self):
        base = gradient_png(2)
        tweaked = Image.open(io.BytesIO(base)).convert("RGB")
        px = tweaked.load()
        px[0, 0] = (255, 255, 255)
        buf = io.BytesIO()
        tweaked.save(buf, format="PNG")
        assert hamming(average_hash(base), average_hash(buf.getvalue())) <= 4

    def test_hash_is_64_bit(self):
        assert 0 <= average_hash(gradient_png(3)) < 2**64


class TestDedup:
    def loader(self, images):
        return lambda iid: images[iid]

    def test_exact_duplicate_earliest_wins(self):
        images = {"i1": gradient_png(1), "i2": gradient_png(1)}
        records = [
            make_record(rid="late", timestamp=200, image_ids=("i2",)),
            make_record(rid="early", timestamp=100, image_ids=("i1",)),
        ]
        out = dedup(records, self.loader(images))
        assert [r.id for r in out.kept] == ["early"]
        assert out.removed[0]["duplicate_of"] == "early"
        assert out.removed[0]["reason"] == "exact_duplicate"

    def test_near_duplicate_detected(self):
        base = gradient_png(4)
        img = Image.open(io.BytesIO(base)).convert("RGB")
        img.load()[0, 0] = (255, 255, 255)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        images = {"i1": base, "i2": buf.getvalue()}
        records = [
            make_record(rid="a", timestamp=1, image_ids=("i1",)),
            make_record(rid="b", timestamp=2, image_ids=("i2",)),
        ]
        out = dedup(records, self.loader(images))
        assert [r.id for r in out.kept] == ["a"]
        assert out.removed[0]["reason"] == "near_duplicate"

    def test_distinct_images_all_kept_in_input_order(self):
        images = {f"i{k}": gradient_png(k * 11 + 5) for k in range(4)}
        records = [
            make_record(rid=f"r{k}", timestamp=100 - k, image_ids=(f"i{k}",))
            for k in range(4)
        ]
        out = dedup(records, self.loader(images))
        assert [r.id for r in out.kept] == ["r0", "r1", "r2", "r3"]

    def test_undecodable_dropped_with_reason(self):
        records = [make_record(rid="x", image_ids=("bad",))]
        out = dedup(records, lambda iid: b"not an image")
        assert out.kept == []
        assert "undecodable_image" in out.removed[0]["reason"]

    def test_idempotent(self):
        images = {"i1": gradient_png(1), "i2": gradient_png(1), "i3": gradient_png(9)}
        records = [
            make_record(rid="a", timestamp=1, image_ids=("i1",)),
            make_record(rid="b", timestamp=2, image_ids=("i2",)),
            make_record(rid="c", timestamp=3, image_ids=("i3",)),
        ]
        once = dedup(records, self.loader(images))
        twice = dedup(once.kept, self.loader(images))
        assert [r.id for r in twice.kept] == [r.id for r in once.kept]
        assert twice.removed == []


class TestDiversitySample:
    def corpus(self, n=40):
        cats = ["Descriptive", "Analytical", "Creative", "Recognition"]
        doms = ["Urban", "Natural"]
        return [
            make_record(
                rid=f"r{i:03d}",
                tag=make_tag(category=cats[i % 4], domain=doms[i % 2]),
            )
            for i in range(n)
        ]

    def test_exact_target_size(self):
        out = diversity_sample(self.corpus(), CurationConfig(target_size=20, seed=1))
        assert len(out) == 20
        assert len({s.id for s in out}) == 20

    def test_deterministic_for_seed(self):
        cfg = CurationConfig(target_size=20, seed=5)
        a = diversity_sample(self.corpus(), cfg)
        b = diversity_sample(self.corpus(), cfg)
        assert a == b

    def test_different_seed_differs(self):
        c = self.corpus()
        a = diversity_sample(c, CurationConfig(target_size=20, seed=1))
        b = diversity_sample(c, CurationConfig(target_size=20, seed=2))
        assert a != b

    def test_insufficient_records(self):
        with pytest.raises(CurationError):
            diversity_sample(self.corpus(5), CurationConfig(target_size=10))

    def test_cap_limits_dominant_cell(self):
        # one huge cell plus 7 small ones; the cap keeps the huge cell from
        # swallowing the whole allocation
        records = [
            make_record(rid=f"big{i}", tag=make_tag(category="Descriptive", domain="Urban"))
            for i in range(100)
        ]
        for j, cat in enumerate(
            ["Analytical", "Creative", "Recognition", "Instructive",
             "Comprehensive", "Interactive", "Descriptive"]
        ):
            dom = "Natural" if cat != "Descriptive" else "People"
            records += [
                make_record(rid=f"s{j}_{i}", tag=make_tag(category=cat, domain=dom))
                for i in range(5)
            ]
        out = diversity_sample(records, CurationConfig(target_size=40, seed=0))
        big = sum(1 for s in out if s.source_battle_id.startswith("big"))
        import math

        cap = math.ceil(2 * 40 / 8)
        assert big <= cap
        assert len(out) == 40

    def test_exclude_ids_disjoint_hidden_set(self):
        c = self.corpus(60)
        public = diversity_sample(c, CurationConfig(target_size=20, seed=3))
        hidden = diversity_sample(
            c,
            CurationConfig(target_size=20, seed=4),
            exclude_ids=frozenset(s.source_battle_id for s in public),
        )
        assert not {s.source_battle_id for s in public} & {
            s.source_battle_id for s in hidden
        }

    def test_sample_fields(self):
        out = diversity_sample(self.corpus(), CurationConfig(target_size=5, seed=0))
        s = out[0]
        assert s.id == f"s-{s.source_battle_id}"
        assert s.question.startswith("question")
        assert s.image_id == "img1"


class TestExportBench:
    def test_layout_and_contents(self, tmp_path):
        samples = diversity_sample(
            TestDiversitySample().corpus(), CurationConfig(target_size=5, seed=0)
        )
        images = {"img1": gradient_png(1)}
        out = tmp_path / "bench"
        export_bench(
            samples,
            out,
            image_loader=lambda iid: images[iid],
            config=CurationConfig(target_size=5, seed=0),
            source_log_hash="abc123",
        )
        lines = (out / "bench.jsonl").read_text().strip().splitlines()
        assert len(lines) == 5
        objs = [json.loads(l) for l in lines]
        assert objs == sorted(objs, key=lambda o: o["id"])
        assert (out / "images" / "img1.png").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["count"] == 5
        assert manifest["source_log_hash"] == "abc123"
        assert manifest["config"]["seed"] == 0

    def test_byte_identical_across_runs(self, tmp_path):
        samples = diversity_sample(
            TestDiversitySample().corpus(), CurationConfig(target_size=5, seed=0)
        )
        export_bench(samples, tmp_path / "a")
        export_bench(samples, tmp_path / "b")
        assert (tmp_path / "a" / "bench.jsonl").read_bytes() == (
            tmp_path / "b" / "bench.jsonl"
        ).read_bytes()
