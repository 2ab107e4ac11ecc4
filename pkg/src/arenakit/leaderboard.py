"""Analytics over the vote log: matrices, slices, snapshots, diagnostics."""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import scipy.stats

from .rating import BTConfig, RatingTable, bt_fit, expand_votes
from .votelog import BattleRecord, VoteOutcome

AXIS_QUESTION_CATEGORY = "question_category"
AXIS_IMAGE_DOMAIN = "image_domain"


@dataclass(frozen=True)
class SliceKey:
    axis: str  # question_category | image_domain
    value: str

    def __post_init__(self):
        if self.axis not in (AXIS_QUESTION_CATEGORY, AXIS_IMAGE_DOMAIN):
            raise ValueError(f"unknown slice axis: {self.axis!r}")
        if not self.value:
            raise ValueError("slice value must be non-empty")

    def matches(self, record: BattleRecord) -> bool:
        if record.tag is None:
            return False
        if self.axis == AXIS_QUESTION_CATEGORY:
            return record.tag.question_category == self.value
        return record.tag.image_domain == self.value


@dataclass(frozen=True)
class PairMatrix:
    models: tuple[str, ...]
    cells: dict[tuple[str, str], float]

    def get(self, a: str, b: str) -> Optional[float]:
        return self.cells.get((a, b))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model"] + list(self.models))
        for a in self.models:
            row: list = [a]
            for b in self.models:
                v = self.cells.get((a, b))
                row.append("" if v is None else f"{v:.6g}")
            writer.writerow(row)
        return buf.getvalue()


def _model_order(records: Sequence[BattleRecord]) -> tuple[str, ...]:
    return tuple(sorted({m for r in records for m in (r.model_left, r.model_right)}))


def battle_count_matrix(records: Sequence[BattleRecord]) -> PairMatrix:
    """Symmetric count of voted comparisons per model pair (any outcome)."""
    counts: Counter[tuple[str, str]] = Counter()
    for r in records:
        counts[(r.model_left, r.model_right)] += 1
        counts[(r.model_right, r.model_left)] += 1
    return PairMatrix(models=_model_order(records), cells=dict(counts))


def win_fraction_matrix(records: Sequence[BattleRecord]) -> PairMatrix:
    """f(a,b) = (wins_a + ties/2) / battles(a,b); BothBad counts as a tie."""
    wins: Counter[tuple[str, str]] = Counter()
    ties: Counter[frozenset] = Counter()
    totals: Counter[frozenset] = Counter()
    for r in records:
        pair = frozenset((r.model_left, r.model_right))
        totals[pair] += 1
        if r.outcome is VoteOutcome.LEFT_WIN:
            wins[(r.model_left, r.model_right)] += 1
        elif r.outcome is VoteOutcome.RIGHT_WIN:
            wins[(r.model_right, r.model_left)] += 1
        else:
            ties[pair] += 1
    cells: dict[tuple[str, str], float] = {}
    for pair, n in totals.items():
        a, b = sorted(pair)
        fa = (wins[(a, b)] + 0.5 * ties[pair]) / n
        cells[(a, b)] = fa
        cells[(b, a)] = 1.0 - fa
    return PairMatrix(models=_model_order(records), cells=cells)


def sliced_ratings(
    records: Sequence[BattleRecord], key: SliceKey, cfg: BTConfig = BTConfig()
) -> RatingTable:
    """bt_fit over records matching the slice; untagged records are excluded."""
    subset = [r for r in records if key.matches(r)]
    if not subset:
        return RatingTable(ratings={}, scale_alpha=cfg.scale_alpha, anchor=cfg.anchor)
    return bt_fit(expand_votes(subset, cfg), cfg)


@dataclass(frozen=True)
class LeaderboardSnapshot:
    created_at: int
    overall: RatingTable
    slices: dict[SliceKey, RatingTable]
    config_fingerprint: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "created_at": self.created_at,
                "config_fingerprint": self.config_fingerprint,
                "overall": json.loads(self.overall.to_json()),
                "slices": [
                    {
                        "axis": k.axis,
                        "value": k.value,
                        "table": json.loads(v.to_json()),
                    }
                    for k, v in sorted(self.slices.items(), key=lambda kv: (kv[0].axis, kv[0].value))
                ],
            },
            indent=2,
        )


def observed_slices(records: Sequence[BattleRecord]) -> list[SliceKey]:
    keys: set[SliceKey] = set()
    for r in records:
        if r.tag is None:
            continue
        if r.tag.question_category:
            keys.add(SliceKey(AXIS_QUESTION_CATEGORY, r.tag.question_category))
        if r.tag.image_domain:
            keys.add(SliceKey(AXIS_IMAGE_DOMAIN, r.tag.image_domain))
    return sorted(keys, key=lambda k: (k.axis, k.value))


def leaderboard_snapshot(
    records: Sequence[BattleRecord],
    cfg: BTConfig = BTConfig(),
    created_at: Optional[int] = None,
) -> LeaderboardSnapshot:
    """Overall plus per-slice rating tables; deterministic for fixed inputs."""
    if records:
        overall = bt_fit(expand_votes(records, cfg), cfg)
        counts: Counter[str] = Counter()
        for r in records:
            counts[r.model_left] += 1
            counts[r.model_right] += 1
        overall = replace(overall, battles=dict(counts))
    else:
        overall = RatingTable(ratings={}, scale_alpha=cfg.scale_alpha, anchor=cfg.anchor)
    slices = {k: sliced_ratings(records, k, cfg) for k in observed_slices(records)}
    stamp = created_at if created_at is not None else int(time.time())
    return LeaderboardSnapshot(
        created_at=stamp,
        overall=overall,
        slices=slices,
        config_fingerprint=cfg.fingerprint(),
    )


def spearman(values_a: dict[str, float], values_b: dict[str, float]) -> float:
    """Spearman rank correlation over the shared models (average-rank ties)."""
    shared = sorted(set(values_a) & set(values_b))
    if len(shared) < 2:
        raise ValueError(f"need >= 2 shared models, got {len(shared)}")
    a = [values_a[m] for m in shared]
    b = [values_b[m] for m in shared]
    rho = scipy.stats.spearmanr(a, b).statistic
    return float(rho)


def length_bias_density(
    records: Sequence[BattleRecord], bin_width: int = 50
) -> dict[int, dict[str, float]]:
    """Per-outcome vote fractions binned by output-token-length difference.

    Keys are bin centers of x = output_tokens_left - output_tokens_right;
    each bin's fractions sum to 1.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    counts: dict[int, Counter[str]] = defaultdict(Counter)
    for r in records:
        x = r.output_tokens_left - r.output_tokens_right
        center = int(math.floor((x + bin_width / 2) / bin_width)) * bin_width
        counts[center][r.outcome.value] += 1
    out: dict[int, dict[str, float]] = {}
    for center, c in sorted(counts.items()):
        total = sum(c.values())
        out[center] = {o.value: c[o.value] / total for o in VoteOutcome}
    return out


def votes_per_day(records: Sequence[BattleRecord]) -> dict[dt.date, int]:
    """UTC-calendar-day vote counts."""
    out: Counter[dt.date] = Counter()
    for r in records:
        out[dt.datetime.fromtimestamp(r.timestamp, dt.timezone.utc).date()] += 1
    return dict(out)
