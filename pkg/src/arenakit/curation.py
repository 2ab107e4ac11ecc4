"""Bench-set curation: safety filtering, image dedup, diversity sampling."""
from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .votelog import BattleRecord, TaxonomyTag

logger = logging.getLogger(__name__)


class CurationError(Exception):
    pass


@dataclass(frozen=True)
class CurationConfig:
    target_size: int = 500
    nsfw_threshold: float = 0.5
    near_dup_hamming: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if not 0.0 <= self.nsfw_threshold <= 1.0:
            raise ValueError("nsfw_threshold must be in [0, 1]")


@dataclass(frozen=True)
class CurationSample:
    id: str
    question: str
    image_id: str
    tag: Optional[TaxonomyTag]
    source_battle_id: str


@dataclass
class FilterResult:
    kept: list[BattleRecord]
    removed: list[dict] = field(default_factory=list)
    quarantined: list[dict] = field(default_factory=list)


def record_image_ids(record: BattleRecord) -> list[str]:
    out = []
    for t in record.conversation_left:
        out.extend(t.image_ids)
    return out


def safety_filter(
    records: Sequence[BattleRecord],
    classifier: Callable[[str], float],
    threshold: float = 0.5,
) -> FilterResult:
    """Keep records whose every image scores below the threshold.

    Classifier failures quarantine the record (kept nowhere, logged) and the
    run continues.
    """
    result = FilterResult(kept=[])
    for r in records:
        try:
            bad = None
            for iid in record_image_ids(r):
                score = classifier(iid)
                if score >= threshold:
                    bad = (iid, score)
                    break
            if bad is None:
                result.kept.append(r)
            else:
                result.removed.append(
                    {"record_id": r.id, "image_id": bad[0], "score": bad[1],
                     "reason": "nsfw_score_at_or_above_threshold"}
                )
        except Exception as e:
            result.quarantined.append({"record_id": r.id, "reason": str(e)})
    return result


def average_hash(image_bytes: bytes) -> int:
    """64-bit average hash: 8x8 grayscale thresholded at its mean."""
    from PIL import Image

    img = Image.open(io.BytesIO(image_bytes)).convert("L").resize((8, 8), Image.LANCZOS)
    px = np.asarray(img, dtype=np.float64)
    bits = (px > px.mean()).flatten()
    h = 0
    for b in bits:
        h = (h << 1) | int(b)
    return h


def hamming(a: int, b: int) -> int:
    return bin(a ^ b).count("1")


def dedup(
    records: Sequence[BattleRecord],
    image_loader: Callable[[str], bytes],
    near_dup_hamming: int = 4,
) -> FilterResult:
    """Drop records whose first image duplicates an earlier-kept record's.

    Exact duplicates go by content hash, near-duplicates by average-hash
    Hamming distance; the earliest timestamp wins. Undecodable images drop
    the record with a reason. Idempotent.
    """
    result = FilterResult(kept=[])
    seen_exact: dict[str, str] = {}
    kept_hashes: list[tuple[int, str]] = []
    for r in sorted(records, key=lambda x: (x.timestamp, x.id)):
        iids = record_image_ids(r)
        if not iids:
            result.kept.append(r)
            continue
        try:
            raw = image_loader(iids[0])
            digest = hashlib.sha256(raw).hexdigest()
            if digest in seen_exact:
                result.removed.append(
                    {"record_id": r.id, "reason": "exact_duplicate",
                     "duplicate_of": seen_exact[digest]}
                )
                continue
            ah = average_hash(raw)
            near = next(
                (rid for h, rid in kept_hashes if hamming(h, ah) <= near_dup_hamming),
                None,
            )
            if near is not None:
                result.removed.append(
                    {"record_id": r.id, "reason": "near_duplicate", "duplicate_of": near}
                )
                continue
            seen_exact[digest] = r.id
            kept_hashes.append((ah, r.id))
            result.kept.append(r)
        except Exception as e:
            result.removed.append(
                {"record_id": r.id, "reason": f"undecodable_image: {e}"}
            )
    order = {r.id: i for i, r in enumerate(records)}
    result.kept.sort(key=lambda r: order[r.id])
    return result


def _cell_of(record: BattleRecord) -> tuple[str, str]:
    if record.tag is None:
        return ("", "")
    return (record.tag.question_category, record.tag.image_domain)


def _allocate(cell_sizes: dict[tuple[str, str], int], target: int) -> dict[tuple[str, str], int]:
    """Capped proportional allocation with largest-remainder rounding."""
    cells = sorted(cell_sizes)
    cap = math.ceil(2 * target / len(cells))
    total = sum(cell_sizes.values())
    if total < target:
        raise CurationError(f"insufficient records: have {total}, need {target}")
    alloc = {c: 0 for c in cells}
    open_cells = set(cells)
    remaining = target
    # cells hit either their own size or the proportional cap; redistribute
    # the shortfall among still-open cells until the allocation settles
    while remaining > 0 and open_cells:
        pool = sum(cell_sizes[c] - alloc[c] for c in open_cells)
        quotas = {}
        for c in sorted(open_cells):
            avail = cell_sizes[c] - alloc[c]
            quotas[c] = remaining * avail / pool
        grants = {c: min(int(math.floor(q)), cell_sizes[c] - alloc[c],
                         cap - alloc[c]) for c, q in quotas.items()}
        leftovers = sorted(
            open_cells,
            key=lambda c: (-(quotas[c] - math.floor(quotas[c])), c),
        )
        granted = sum(grants.values())
        for c in leftovers:
            if granted >= remaining:
                break
            if alloc[c] + grants[c] < min(cell_sizes[c], cap):
                grants[c] += 1
                granted += 1
        progressed = False
        for c, g in grants.items():
            if g > 0:
                alloc[c] += g
                remaining -= g
                progressed = True
        open_cells = {
            c for c in open_cells if alloc[c] < min(cell_sizes[c], cap)
        }
        if not progressed and remaining > 0:
            break
    if remaining > 0:
        # every cell is capped; relax the cap to fill the target
        for c in sorted(cells, key=lambda c: (-cell_sizes[c], c)):
            room = cell_sizes[c] - alloc[c]
            take = min(room, remaining)
            alloc[c] += take
            remaining -= take
            if remaining == 0:
                break
    if remaining > 0:
        raise CurationError(f"allocation shortfall of {remaining}")
    return alloc


def diversity_sample(
    records: Sequence[BattleRecord], cfg: CurationConfig,
    exclude_ids: frozenset[str] = frozenset(),
) -> list[CurationSample]:
    """Stratified sample over (question category, image domain) cells.

    Proportional allocation capped per cell, uniform within-cell selection at
    the configured seed; exactly target_size outputs or an error.
    exclude_ids supports a disjoint second (hidden) set.
    """
    pool = [r for r in records if r.id not in exclude_ids]
    if len(pool) < cfg.target_size:
        raise CurationError(
            f"insufficient records: have {len(pool)}, need {cfg.target_size}"
        )
    by_cell: dict[tuple[str, str], list[BattleRecord]] = {}
    for r in pool:
        by_cell.setdefault(_cell_of(r), []).append(r)
    alloc = _allocate({c: len(v) for c, v in by_cell.items()}, cfg.target_size)
    rng = np.random.default_rng(cfg.seed)
    chosen: list[BattleRecord] = []
    for cell in sorted(by_cell):
        members = sorted(by_cell[cell], key=lambda r: r.id)
        k = alloc[cell]
        if k == 0:
            continue
        idx = rng.choice(len(members), size=k, replace=False)
        chosen.extend(members[i] for i in sorted(idx))
    assert len(chosen) == cfg.target_size
    chosen.sort(key=lambda r: r.id)
    out = []
    for r in chosen:
        first_user = next(t for t in r.conversation_left if t.role == "user")
        iids = record_image_ids(r)
        out.append(
            CurationSample(
                id=f"s-{r.id}",
                question=first_user.text,
                image_id=iids[0] if iids else "",
                tag=r.tag,
                source_battle_id=r.id,
            )
        )
    return out


def export_bench(
    samples: Sequence[CurationSample],
    out_dir: str | os.PathLike,
    image_loader: Optional[Callable[[str], bytes]] = None,
    config: Optional[CurationConfig] = None,
    source_log_hash: str = "",
    reference_answers: Optional[dict[str, str]] = None,
) -> None:
    """Write bench JSONL + images + manifest; cleans up on I/O failure."""
    out = Path(out_dir)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    try:
        lines = []
        for s in sorted(samples, key=lambda s: s.id):
            obj: dict = {"id": s.id, "question": s.question, "image_id": s.image_id}
            if reference_answers and s.id in reference_answers:
                obj["reference_answer"] = reference_answers[s.id]
            if s.tag is not None:
                obj["tag"] = s.tag.to_dict()
            obj["source_battle_id"] = s.source_battle_id
            lines.append(json.dumps(obj, sort_keys=True, ensure_ascii=False))
        (out / "bench.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if image_loader is not None:
            img_dir = out / "images"
            img_dir.mkdir(exist_ok=True)
            for s in samples:
                if s.image_id:
                    (img_dir / f"{s.image_id}.png").write_bytes(image_loader(s.image_id))
        manifest = {
            "count": len(samples),
            "source_log_hash": source_log_hash,
            "config": {
                "target_size": config.target_size,
                "nsfw_threshold": config.nsfw_threshold,
                "near_dup_hamming": config.near_dup_hamming,
                "seed": config.seed,
            }
            if config
            else None,
        }
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
        )
    except OSError:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise


def write_audit_log(path: str | os.PathLike, entries: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
