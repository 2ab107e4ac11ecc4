"""Rating mathematics: online Elo, Bradley-Terry MLE, bootstrap intervals."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .votelog import BattleRecord, VoteOutcome

logger = logging.getLogger(__name__)

LN10 = math.log(10.0)


class RatingError(Exception):
    pass


class FitError(RatingError):
    def __init__(self, message: str, grad_norm: float | None = None):
        super().__init__(message)
        self.grad_norm = grad_norm


class BootstrapError(RatingError):
    pass


@dataclass(frozen=True)
class Anchor:
    kind: str  # "mean" | "fix_model"
    value: float = 1000.0
    model: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("mean", "fix_model"):
            raise ValueError(f"unknown anchor kind: {self.kind!r}")
        if self.kind == "fix_model" and not self.model:
            raise ValueError("fix_model anchor requires a model name")


MEAN_1000 = Anchor("mean", 1000.0)


@dataclass(frozen=True)
class EloConfig:
    k_factor: float = 32.0
    initial_rating: float = 1000.0
    bothbad_policy: str = "as_tie"  # "as_tie" | "drop"

    def __post_init__(self):
        if self.k_factor <= 0:
            raise ValueError("k_factor must be > 0")


@dataclass(frozen=True)
class BTConfig:
    grad_tolerance: float = 1e-8
    max_iterations: int = 1000
    tie_policy: str = "split_half"  # "split_half" | "drop"
    bothbad_policy: str = "as_tie"  # "as_tie" | "drop"
    anchor: Anchor = MEAN_1000
    scale_alpha: float = 400.0

    def __post_init__(self):
        if self.grad_tolerance <= 0:
            raise ValueError("grad_tolerance must be > 0")

    def fingerprint(self) -> str:
        import hashlib

        blob = json.dumps(
            {
                "grad_tolerance": self.grad_tolerance,
                "max_iterations": self.max_iterations,
                "tie_policy": self.tie_policy,
                "bothbad_policy": self.bothbad_policy,
                "anchor": [self.anchor.kind, self.anchor.value, self.anchor.model],
                "scale_alpha": self.scale_alpha,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class WeightedBattles:
    entries: tuple[tuple[str, str, float], ...]  # (winner, loser, weight)
    # source record index per entry, parallel to entries; used by the
    # record-level bootstrap. Empty means untracked.
    record_index: tuple[int, ...] = ()

    def __post_init__(self):
        for winner, loser, weight in self.entries:
            if winner == loser:
                raise ValueError("winner equals loser")
            if weight <= 0:
                raise ValueError("weights must be positive")

    def models(self) -> list[str]:
        seen: dict[str, None] = {}
        for w, l, _ in self.entries:
            seen.setdefault(w)
            seen.setdefault(l)
        return list(seen)

    def totals(self) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        for w, l, wt in self.entries:
            out[(w, l)] = out.get((w, l), 0.0) + wt
        return out


@dataclass(frozen=True)
class RatingTable:
    ratings: dict[str, float]
    scale_alpha: float = 400.0
    anchor: Anchor = MEAN_1000
    unbounded: frozenset[str] = frozenset()
    battles: dict[str, int] = field(default_factory=dict)
    intervals: dict[str, tuple[float, float]] = field(default_factory=dict)

    def sorted_models(self) -> list[str]:
        return sorted(self.ratings, key=lambda m: (-self.ratings[m], m))

    def to_rows(self) -> list[dict]:
        rows = []
        for m in self.sorted_models():
            lo, hi = self.intervals.get(m, (None, None))
            rows.append(
                {
                    "model": m,
                    "rating": self.ratings[m],
                    "battles": self.battles.get(m, 0),
                    "lower": lo,
                    "upper": hi,
                }
            )
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "rating", "battles", "lower", "upper"])
        for row in self.to_rows():
            writer.writerow(
                [
                    row["model"],
                    f"{row['rating']:.6f}",
                    row["battles"],
                    "" if row["lower"] is None else f"{row['lower']:.6f}",
                    "" if row["upper"] is None else f"{row['upper']:.6f}",
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "scale_alpha": self.scale_alpha,
                "anchor": {"kind": self.anchor.kind, "value": self.anchor.value, "model": self.anchor.model},
                "unbounded": sorted(self.unbounded),
                "models": self.to_rows(),
            },
            indent=2,
        )


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    lower: float
    upper: float
    rounds: int
    seed: int

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("lower must be <= upper")


class BootstrapTable(dict):
    """model -> BootstrapResult, with the number of skipped rounds attached."""

    skipped: int = 0


def expected_score(r_i: float, r_j: float, alpha: float = 400.0) -> float:
    """Probability that the first player wins under the logistic model."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    gap = (r_j - r_i) / alpha
    if gap > 300:  # 10**gap would overflow a float
        return 0.0
    return 1.0 / (1.0 + 10.0 ** gap)


_SCORE = {VoteOutcome.LEFT_WIN: 1.0, VoteOutcome.RIGHT_WIN: 0.0, VoteOutcome.TIE: 0.5}


def elo_delta(
    r_left: float, r_right: float, outcome: VoteOutcome, cfg: EloConfig = EloConfig()
) -> float:
    """Points transferred from the right model to the left one (may be < 0).

    A single transfer amount makes the update zero-sum by construction.
    """
    if outcome is VoteOutcome.BOTH_BAD:
        if cfg.bothbad_policy == "drop":
            return 0.0
        s = 0.5
    else:
        s = _SCORE[outcome]
    return cfg.k_factor * (s - expected_score(r_left, r_right))


def elo_update(
    ratings: dict[str, float],
    left: str,
    right: str,
    outcome: VoteOutcome,
    cfg: EloConfig = EloConfig(),
) -> dict[str, float]:
    """One online Elo update; returns a new table (zero-sum over the pair)."""
    out = dict(ratings)
    out.setdefault(left, cfg.initial_rating)
    out.setdefault(right, cfg.initial_rating)
    delta = elo_delta(out[left], out[right], outcome, cfg)
    out[left] += delta
    out[right] -= delta
    return out


def replay_online_elo(
    records: Sequence[BattleRecord], cfg: EloConfig = EloConfig()
) -> dict[str, float]:
    """Sequential Elo over records in the given order (order-sensitive)."""
    models: dict[str, int] = {}
    for r in records:
        models.setdefault(r.model_left, len(models))
        models.setdefault(r.model_right, len(models))
    if not models:
        return {}
    n = len(records)
    left_idx = np.empty(n, dtype=np.int64)
    right_idx = np.empty(n, dtype=np.int64)
    score = np.empty(n, dtype=np.float64)
    for m, r in enumerate(records):
        left_idx[m] = models[r.model_left]
        right_idx[m] = models[r.model_right]
        if r.outcome is VoteOutcome.BOTH_BAD:
            score[m] = -1.0 if cfg.bothbad_policy == "drop" else 0.5
        else:
            score[m] = _SCORE[r.outcome]
    ratings = kernels.elo_replay(
        left_idx, right_idx, score, cfg.k_factor, 400.0, cfg.initial_rating, len(models)
    )
    return {name: float(ratings[i]) for name, i in models.items()}


def expand_votes(
    records: Sequence[BattleRecord], cfg: BTConfig = BTConfig()
) -> WeightedBattles:
    """Duplicate decisive votes (weight 2) and split ties one win each way."""
    entries: list[tuple[str, str, float]] = []
    index: list[int] = []

    def add(ri: int, winner: str, loser: str, weight: float) -> None:
        entries.append((winner, loser, weight))
        index.append(ri)

    for ri, r in enumerate(records):
        if r.outcome is VoteOutcome.LEFT_WIN:
            add(ri, r.model_left, r.model_right, 2.0)
        elif r.outcome is VoteOutcome.RIGHT_WIN:
            add(ri, r.model_right, r.model_left, 2.0)
        elif r.outcome is VoteOutcome.TIE:
            if cfg.tie_policy != "drop":
                add(ri, r.model_left, r.model_right, 1.0)
                add(ri, r.model_right, r.model_left, 1.0)
        elif r.outcome is VoteOutcome.BOTH_BAD:
            if cfg.bothbad_policy == "as_tie" and cfg.tie_policy != "drop":
                add(ri, r.model_left, r.model_right, 1.0)
                add(ri, r.model_right, r.model_left, 1.0)
    return WeightedBattles(entries=tuple(entries), record_index=tuple(index))


def _components(models: list[str], pairs: Iterable[tuple[str, str]]) -> list[list[str]]:
    parent = {m: m for m in models}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups: dict[str, list[str]] = {}
    for m in models:
        groups.setdefault(find(m), []).append(m)
    return list(groups.values())


_PRIOR_STRENGTH = 1e-6  # weak L2 pull toward the anchor, degenerate models only


def _fit_component(
    wins: np.ndarray,
    degenerate: np.ndarray,
    anchor_value: float,
    alpha: float,
    grad_tol: float,
    max_iter: int,
) -> np.ndarray:
    """Damped Newton on the concave log-likelihood; returns strengths (nat-log)."""
    n = wins.shape[0]
    c = alpha / LN10  # Elo units per strength unit
    s = np.full(n, anchor_value / c, dtype=np.float64)
    prior = _PRIOR_STRENGTH * degenerate.astype(np.float64)

    def objective(sv: np.ndarray) -> tuple[float, np.ndarray]:
        ll, grad = kernels.bt_loglik_grad(wins, sv)
        # prior in Elo units: -0.5 * prior * (c*s - anchor)^2
        resid = c * sv - anchor_value
        ll -= 0.5 * float(np.sum(prior * resid * resid))
        grad = grad - prior * resid * c
        return ll, grad

    ll, grad = objective(s)
    # a couple of extra Newton steps after hitting tolerance; quadratic
    # convergence pushes the gradient to machine precision
    polish = 2
    for _ in range(max_iter):
        if np.max(np.abs(grad)) <= grad_tol:
            if polish == 0:
                return s
            polish -= 1
        h = kernels.bt_hessian(wins, s)
        h = h - np.diag(prior * c * c)
        # tiny ridge keeps the translation-degenerate system solvable
        ridge = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(h)))))
        try:
            step = np.linalg.solve(h - ridge * np.eye(n), -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h - ridge * np.eye(n), -grad, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            step = np.linalg.lstsq(h, -grad, rcond=None)[0]
        if np.max(np.abs(step)) <= 1e-4:
            # quadratic regime: the objective change is below float resolution,
            # so a line search cannot see it; the concave objective makes the
            # undamped Newton step safe
            s = s + step
            ll, grad = objective(s)
            continue
        t = 1.0
        for _ in range(60):
            ll_new, grad_new = objective(s + t * step)
            if ll_new >= ll:
                s = s + t * step
                ll, grad = ll_new, grad_new
                break
            t *= 0.5
        else:
            # no improving step; gradient check decides
            if np.max(np.abs(grad)) <= grad_tol:
                return s
            raise FitError(
                "line search stalled", grad_norm=float(np.max(np.abs(grad)))
            )
    if np.max(np.abs(grad)) <= grad_tol:
        return s
    raise FitError(
        f"no convergence within {max_iter} iterations",
        grad_norm=float(np.max(np.abs(grad))),
    )


def bt_fit(battles: WeightedBattles, cfg: BTConfig = BTConfig()) -> RatingTable:
    """Maximum-likelihood ratings on the alpha=400 logistic scale.

    Disconnected comparison components are fitted and anchored independently
    (with a warning). Models with only wins or only losses have divergent
    MLEs; they are pulled to the anchor by a weak prior and flagged
    unbounded.
    """
    models = battles.models()
    if not models:
        raise FitError("empty battle set")
    idx = {m: i for i, m in enumerate(models)}
    totals = battles.totals()
    comps = _components(models, totals.keys())
    if len(comps) > 1:
        logger.warning(
            "comparison graph has %d disconnected components; each is anchored separately",
            len(comps),
        )
    c = cfg.scale_alpha / LN10
    ratings: dict[str, float] = {}
    unbounded: set[str] = set()
    anchor = cfg.anchor
    for comp in comps:
        cidx = {m: i for i, m in enumerate(comp)}
        n = len(comp)
        wins = np.zeros((n, n), dtype=np.float64)
        for (w, l), wt in totals.items():
            if w in cidx and l in cidx:
                wins[cidx[w], cidx[l]] += wt
        won = wins.sum(axis=1) > 0
        lost = wins.sum(axis=0) > 0
        degenerate = ~(won & lost)
        for m in comp:
            if degenerate[cidx[m]]:
                unbounded.add(m)
        s = _fit_component(
            wins, degenerate, anchor.value, cfg.scale_alpha,
            cfg.grad_tolerance, cfg.max_iterations,
        )
        r = s * c
        if anchor.kind == "fix_model" and anchor.model in cidx:
            r += anchor.value - r[cidx[anchor.model]]
        else:
            r += anchor.value - float(np.mean(r))
        for m in comp:
            ratings[m] = float(r[cidx[m]])
    return RatingTable(
        ratings=ratings,
        scale_alpha=cfg.scale_alpha,
        anchor=anchor,
        unbounded=frozenset(unbounded),
    )


def bootstrap_ratings(
    records: Sequence[BattleRecord],
    cfg: BTConfig = BTConfig(),
    rounds: int = 100,
    seed: int = 0,
) -> BootstrapTable:
    """Percentile bootstrap over vote records (resampled with replacement).

    Deterministic given the seed; round k uses seed + k. Rounds whose refit
    fails are skipped; more than 50% skips is an error. Models absent from a
    resample contribute nothing to their own percentiles that round.
    """
    if rounds < 1:
        raise BootstrapError("rounds must be >= 1")
    full = bt_fit(expand_votes(records, cfg), cfg)
    models = sorted(full.ratings)
    midx = {m: i for i, m in enumerate(models)}
    n_rec = len(records)
    expanded = expand_votes(records, cfg)
    winner_idx = np.array([midx[w] for w, _, _ in expanded.entries], dtype=np.int64)
    loser_idx = np.array([midx[l] for _, l, _ in expanded.entries], dtype=np.int64)
    weight = np.array([wt for _, _, wt in expanded.entries], dtype=np.float64)
    rec_of_entry = np.array(expanded.record_index, dtype=np.int64)

    samples = np.full((rounds, len(models)), np.nan)
    skipped = 0
    for k in range(rounds):
        rng = np.random.default_rng(seed + k)
        picked = np.bincount(rng.integers(0, n_rec, size=n_rec), minlength=n_rec)
        wmat = kernels.resample_aggregate(
            winner_idx, loser_idx, weight, rec_of_entry,
            picked.astype(np.int64), len(models),
        )
        entries = []
        for i in range(len(models)):
            for j in range(len(models)):
                if wmat[i, j] > 0:
                    entries.append((models[i], models[j], float(wmat[i, j])))
        if not entries:
            skipped += 1
            continue
        try:
            table = bt_fit(WeightedBattles(entries=tuple(entries)), cfg)
        except FitError:
            skipped += 1
            continue
        for m, r in table.ratings.items():
            samples[k, midx[m]] = r
    if skipped > rounds // 2:
        raise BootstrapError(f"{skipped}/{rounds} bootstrap rounds failed")
    out = BootstrapTable()
    out.skipped = skipped
    for m in models:
        col = samples[:, midx[m]]
        col = col[~np.isnan(col)]
        if col.size == 0:
            lo = hi = full.ratings[m]
        else:
            lo = float(np.percentile(col, 2.5))
            hi = float(np.percentile(col, 97.5))
        out[m] = BootstrapResult(
            point=full.ratings[m], lower=lo, upper=hi, rounds=rounds, seed=seed
        )
    return out


def table_with_intervals(table: RatingTable, boot: BootstrapTable) -> RatingTable:
    return replace(
        table,
        intervals={m: (b.lower, b.upper) for m, b in boot.items()},
    )
