import json
import math

import pytest
from hypothesis import given, strategies as st

from arenakit.bench import (
    BenchRunConfig,
    BenchSample,
    Verdict,
    VerdictCounts,
    VerdictParseError,
    bench_score,
    judgements_to_jsonl,
    load_bench_set,
    marker_for,
    parse_verdict,
    reference_row,
    report_csv,
    reward,
    run_bench,
    verdicts_to_battles,
    win_rate,
)
from arenakit.judge import MockProvider
from arenakit.rating import bt_fit


class TestParseVerdict:
    @pytest.mark.parametrize(
        "marker,expected",
        [
            ("[[A>>B]]", Verdict.MUCH_BETTER),
            ("[[A>B]]", Verdict.BETTER),
            ("[[A=B]]", Verdict.TIE),
            ("[[B>A]]", Verdict.WORSE),
            ("[[B>>A]]", Verdict.MUCH_WORSE),
        ],
    )
    def test_each_marker(self, marker, expected):
        assert parse_verdict(f"analysis... {marker}") is expected

    def test_last_marker_wins(self):
        text = "first I thought [[A>B]] but on reflection [[B>A]]"
        assert parse_verdict(text) is Verdict.WORSE

    def test_orientation_flip(self):
        assert parse_verdict("[[A>>B]]", test_is_a=False) is Verdict.MUCH_WORSE
        assert parse_verdict("[[A=B]]", test_is_a=False) is Verdict.TIE

    def test_no_marker_raises_with_tail(self):
        with pytest.raises(VerdictParseError) as exc:
            parse_verdict("no verdict here")
        assert "no verdict here" in exc.value.tail

    @given(v=st.sampled_from(list(Verdict)), test_is_a=st.booleans())
    def test_marker_round_trip(self, v, test_is_a):
        assert parse_verdict(marker_for(v, test_is_a), test_is_a) is v


class TestCountsArithmetic:
    def test_win_rate(self):
        c = VerdictCounts(mb=3, b=2, t=1, w=2, mw=2)
        assert win_rate(c) == pytest.approx(5 / 10)

    def test_reward(self):
        c = VerdictCounts(mb=3, b=2, t=1, w=2, mw=2)
        assert reward(c) == pytest.approx(100 * (3 + 1 - 1 - 2) / 10)

    def test_empty_counts_rejected(self):
        with pytest.raises(ValueError):
            win_rate(VerdictCounts(0, 0, 0, 0, 0))
        with pytest.raises(ValueError):
            reward(VerdictCounts(0, 0, 0, 0, 0))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            VerdictCounts(-1, 0, 0, 0, 0)

    def test_counts_round_trip(self):
        c = VerdictCounts(mb=2, b=1, t=3, w=0, mw=1)
        assert VerdictCounts.from_verdicts(c.to_verdicts()) == c


class TestVerdictsToBattles:
    def test_weights(self):
        wb = verdicts_to_battles(
            [Verdict.MUCH_BETTER, Verdict.BETTER, Verdict.TIE, Verdict.WORSE, Verdict.MUCH_WORSE],
            "test", "ref", much_weight=3.0,
        )
        assert wb.totals() == {("test", "ref"): 3 + 1 + 0.5, ("ref", "test"): 0.5 + 1 + 3}

    def test_much_weight_validation(self):
        with pytest.raises(ValueError):
            verdicts_to_battles([Verdict.TIE], "t", "r", much_weight=0.5)


class TestBenchScore:
    def test_symmetric_counts_score_50(self):
        row = bench_score(VerdictCounts(mb=2, b=3, t=4, w=3, mw=2), rounds=10)
        assert row.score == pytest.approx(50.0, abs=1e-9)

    def test_all_wins_score_100(self):
        row = bench_score(VerdictCounts(mb=5, b=5, t=0, w=0, mw=0), rounds=10)
        assert row.score == pytest.approx(100.0)

    def test_matches_pairwise_fit(self):
        # independent route: fit the weighted pairwise model and convert the
        # rating gap back to a win probability
        c = VerdictCounts(mb=7, b=9, t=5, w=3, mw=1)
        row = bench_score(c, much_weight=3.0, rounds=10)
        table = bt_fit(verdicts_to_battles(c.to_verdicts(), "test", "ref", 3.0))
        gap = table.ratings["test"] - table.ratings["ref"]
        p = 100.0 / (1.0 + 10 ** (-gap / 400))
        assert row.score == pytest.approx(p, abs=1e-6)

    def test_much_weight_changes_score(self):
        c = VerdictCounts(mb=5, b=0, t=0, w=0, mw=1)
        s1 = bench_score(c, much_weight=1.0, rounds=5).score
        s3 = bench_score(c, much_weight=3.0, rounds=5).score
        assert s1 == pytest.approx(s3, abs=1e-9)  # all mass scales equally
        c2 = VerdictCounts(mb=5, b=2, t=0, w=2, mw=1)
        assert bench_score(c2, much_weight=3.0, rounds=5).score != pytest.approx(
            bench_score(c2, much_weight=1.0, rounds=5).score
        )

    def test_ci_deterministic_and_ordered(self):
        c = VerdictCounts(mb=10, b=8, t=6, w=4, mw=2)
        r1 = bench_score(c, rounds=50, seed=3)
        r2 = bench_score(c, rounds=50, seed=3)
        assert r1.ci == r2.ci
        assert r1.ci[0] <= r1.score <= r1.ci[1]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bench_score(VerdictCounts(0, 0, 0, 0, 0))

    def test_reference_row_fixed_50(self):
        row = reference_row("ref-model")
        assert row.score == 50.0 and row.ci == (50.0, 50.0) and row.win_rate == 0.5


class TestRunBench:
    def make_clients(self, verdict_marker="[[A>B]]"):
        test_client = MockProvider(
            script=lambda text: f"test answer to {text}", name="test-model"
        )
        judge_client = MockProvider(
            script=lambda text: f"thinking... {verdict_marker}", name="judge-model"
        )
        return test_client, judge_client

    def test_end_to_end_verdicts(self, tmp_path):
        samples = [
            BenchSample(id=f"s{i}", question=f"q{i}", reference_answer="ref ans")
            for i in range(4)
        ]
        t, j = self.make_clients("[[A>>B]]")
        out = run_bench(samples, t, {}, j, BenchRunConfig(cache_dir=str(tmp_path)))
        assert [r.verdict for r in out] == [Verdict.MUCH_BETTER] * 4
        assert all(r.error is None for r in out)

    def test_cache_prevents_second_call(self, tmp_path):
        calls = []

        def answer(text):
            calls.append(text)
            return "ans"

        samples = [BenchSample(id="s1", question="q", reference_answer="r")]
        t = MockProvider(script=answer, name="m")
        j = MockProvider(script=lambda _: "[[A=B]]", name="j")
        cfg = BenchRunConfig(cache_dir=str(tmp_path))
        run_bench(samples, t, {}, j, cfg)
        run_bench(samples, t, {}, j, cfg)
        assert len(calls) == 1

    def test_missing_reference_raises(self):
        t, j = self.make_clients()
        with pytest.raises(ValueError):
            run_bench([BenchSample(id="s1", question="q")], t, {}, j)

    def test_per_sample_failure_captured(self):
        def flaky(text):
            raise ConnectionError("boom")

        samples = [BenchSample(id="s1", question="q", reference_answer="r")]
        t = MockProvider(script=flaky, name="m")
        j = MockProvider(script=lambda _: "[[A=B]]", name="j")
        out = run_bench(samples, t, {}, j, BenchRunConfig(retries=2, backoff=0.0))
        assert out[0].verdict is None
        assert "boom" in out[0].error

    def test_judge_without_marker_is_error_not_crash(self):
        samples = [BenchSample(id="s1", question="q", reference_answer="r")]
        t = MockProvider(script=lambda _: "ans", name="m")
        j = MockProvider(script=lambda _: "I refuse to answer", name="j")
        out = run_bench(samples, t, {}, j, BenchRunConfig(retries=1, backoff=0.0))
        assert out[0].verdict is None and out[0].error


class TestSerialization:
    def test_load_bench_set(self, tmp_path):
        p = tmp_path / "bench.jsonl"
        p.write_text(
            json.dumps({"id": 1, "question": "q1", "image_id": "i1"})
            + "\n\n"
            + json.dumps({"id": "s2", "question": "q2", "reference_answer": "ra"})
            + "\n"
        )
        out = load_bench_set(p)
        assert [s.id for s in out] == ["1", "s2"]
        assert out[1].reference_answer == "ra"

    def test_judgements_jsonl(self, tmp_path):
        samples = [BenchSample(id="s1", question="q", reference_answer="r")]
        t = MockProvider(script=lambda _: "ans", name="m")
        j = MockProvider(script=lambda _: "[[B>A]]", name="j")
        out = run_bench(samples, t, {}, j)
        lines = judgements_to_jsonl(out).strip().splitlines()
        obj = json.loads(lines[0])
        assert obj["id"] == "s1" and obj["verdict"] == "worse"

    def test_report_csv_sorted_by_score(self):
        rows = [
            bench_score(VerdictCounts(1, 1, 1, 5, 5), model="weak", rounds=5),
            bench_score(VerdictCounts(5, 5, 1, 1, 1), model="strong", rounds=5),
            reference_row("ref"),
        ]
        lines = report_csv(rows).splitlines()
        assert lines[0].startswith("model,score,ci_low,ci_high,win_rate,reward")
        assert [l.split(",")[0] for l in lines[1:]] == ["strong", "ref", "weak"]
