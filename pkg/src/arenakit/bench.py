"""Judge-based benchmark: 5-level verdicts aggregated into scores with CIs."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .judge import ProviderClient, render_bench_judge_prompt
from .rating import WeightedBattles
from .votelog import ChatTurn

logger = logging.getLogger(__name__)


class Verdict(Enum):
    MUCH_BETTER = "much_better"
    BETTER = "better"
    TIE = "tie"
    WORSE = "worse"
    MUCH_WORSE = "much_worse"


class VerdictParseError(Exception):
    def __init__(self, tail: str):
        super().__init__(f"no verdict marker found; tail: {tail!r}")
        self.tail = tail


# markers in the judge's own orientation (A vs B)
_MARKERS = ["[[A>>B]]", "[[A>B]]", "[[A=B]]", "[[B>A]]", "[[B>>A]]"]
_A_IS_TEST = {
    "[[A>>B]]": Verdict.MUCH_BETTER,
    "[[A>B]]": Verdict.BETTER,
    "[[A=B]]": Verdict.TIE,
    "[[B>A]]": Verdict.WORSE,
    "[[B>>A]]": Verdict.MUCH_WORSE,
}
_FLIP = {
    Verdict.MUCH_BETTER: Verdict.MUCH_WORSE,
    Verdict.BETTER: Verdict.WORSE,
    Verdict.TIE: Verdict.TIE,
    Verdict.WORSE: Verdict.BETTER,
    Verdict.MUCH_WORSE: Verdict.MUCH_BETTER,
}


def marker_for(verdict: Verdict, test_is_a: bool = True) -> str:
    v = verdict if test_is_a else _FLIP[verdict]
    for marker, mapped in _A_IS_TEST.items():
        if mapped is v:
            return marker
    raise AssertionError


def parse_verdict(judge_text: str, test_is_a: bool = True) -> Verdict:
    """Map the LAST occurring verdict marker to a Verdict (orientation-aware)."""
    best_pos = -1
    best_marker = None
    for marker in _MARKERS:
        pos = judge_text.rfind(marker)
        if pos > best_pos:
            best_pos = pos
            best_marker = marker
    if best_marker is None:
        raise VerdictParseError(judge_text[-200:])
    v = _A_IS_TEST[best_marker]
    return v if test_is_a else _FLIP[v]


@dataclass(frozen=True)
class VerdictCounts:
    mb: int
    b: int
    t: int
    w: int
    mw: int

    def __post_init__(self):
        for v in (self.mb, self.b, self.t, self.w, self.mw):
            if v < 0:
                raise ValueError("counts must be non-negative")

    @property
    def n(self) -> int:
        return self.mb + self.b + self.t + self.w + self.mw

    @classmethod
    def from_verdicts(cls, verdicts: Sequence[Verdict]) -> "VerdictCounts":
        c = Counter(verdicts)
        return cls(
            mb=c[Verdict.MUCH_BETTER],
            b=c[Verdict.BETTER],
            t=c[Verdict.TIE],
            w=c[Verdict.WORSE],
            mw=c[Verdict.MUCH_WORSE],
        )

    def to_verdicts(self) -> list[Verdict]:
        return (
            [Verdict.MUCH_BETTER] * self.mb
            + [Verdict.BETTER] * self.b
            + [Verdict.TIE] * self.t
            + [Verdict.WORSE] * self.w
            + [Verdict.MUCH_WORSE] * self.mw
        )


def win_rate(counts: VerdictCounts) -> float:
    """Fraction of strictly favorable verdicts, (mb + b) / n."""
    if counts.n == 0:
        raise ValueError("win_rate undefined for empty counts")
    return (counts.mb + counts.b) / counts.n


def reward(counts: VerdictCounts) -> float:
    """Signed average verdict margin on a -100..100 scale."""
    if counts.n == 0:
        raise ValueError("reward undefined for empty counts")
    return 100.0 * (counts.mb + 0.5 * counts.b - 0.5 * counts.w - counts.mw) / counts.n


def verdicts_to_battles(
    verdicts: Sequence[Verdict],
    test: str,
    reference: str,
    much_weight: float = 3.0,
) -> WeightedBattles:
    """Weighted pairwise wins between the test and reference models."""
    if much_weight < 1:
        raise ValueError("much_weight must be >= 1")
    entries: list[tuple[str, str, float]] = []
    index: list[int] = []
    for i, v in enumerate(verdicts):
        if v is Verdict.MUCH_BETTER:
            entries.append((test, reference, much_weight))
            index.append(i)
        elif v is Verdict.BETTER:
            entries.append((test, reference, 1.0))
            index.append(i)
        elif v is Verdict.TIE:
            entries.append((test, reference, 0.5))
            entries.append((reference, test, 0.5))
            index.extend((i, i))
        elif v is Verdict.WORSE:
            entries.append((reference, test, 1.0))
            index.append(i)
        elif v is Verdict.MUCH_WORSE:
            entries.append((reference, test, much_weight))
            index.append(i)
    return WeightedBattles(entries=tuple(entries), record_index=tuple(index))


@dataclass(frozen=True)
class BenchRow:
    model: str
    score: float
    ci: tuple[float, float]
    win_rate: float
    reward: float
    counts: VerdictCounts
    avg_tokens: float = 0.0

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "score": self.score,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "win_rate": self.win_rate,
            "reward": self.reward,
            "much_better": self.counts.mb,
            "better": self.counts.b,
            "tie": self.counts.t,
            "worse": self.counts.w,
            "much_worse": self.counts.mw,
            "avg_tokens": self.avg_tokens,
        }


def _score_from_counts(c: VerdictCounts, much_weight: float) -> float:
    """100 * P(test beats reference); two-player BT reduces to mass ratio."""
    win_mass = much_weight * c.mb + c.b + 0.5 * c.t
    loss_mass = much_weight * c.mw + c.w + 0.5 * c.t
    total = win_mass + loss_mass
    if total == 0:
        raise ValueError("no verdict mass")
    return 100.0 * win_mass / total


def bench_score(
    counts_or_verdicts: VerdictCounts | Sequence[Verdict],
    model: str = "test",
    much_weight: float = 3.0,
    rounds: int = 100,
    seed: int = 0,
    avg_tokens: float = 0.0,
) -> BenchRow:
    """Aggregate verdicts into a BenchRow with a percentile-bootstrap CI.

    The point score is the full-data estimate; the CI resamples per-sample
    verdicts with replacement.
    """
    if isinstance(counts_or_verdicts, VerdictCounts):
        verdicts = counts_or_verdicts.to_verdicts()
        counts = counts_or_verdicts
    else:
        verdicts = list(counts_or_verdicts)
        counts = VerdictCounts.from_verdicts(verdicts)
    if counts.n == 0:
        raise ValueError("no verdicts to score")
    point = _score_from_counts(counts, much_weight)
    scores = np.empty(rounds)
    arr = np.array([v.value for v in verdicts], dtype=object)
    for k in range(rounds):
        rng = np.random.default_rng(seed + k)
        sample = arr[rng.integers(0, len(arr), size=len(arr))]
        c = Counter(sample)
        vc = VerdictCounts(
            mb=c[Verdict.MUCH_BETTER.value],
            b=c[Verdict.BETTER.value],
            t=c[Verdict.TIE.value],
            w=c[Verdict.WORSE.value],
            mw=c[Verdict.MUCH_WORSE.value],
        )
        scores[k] = _score_from_counts(vc, much_weight)
    return BenchRow(
        model=model,
        score=point,
        ci=(float(np.percentile(scores, 2.5)), float(np.percentile(scores, 97.5))),
        win_rate=win_rate(counts),
        reward=reward(counts),
        counts=counts,
        avg_tokens=avg_tokens,
    )


def reference_row(model: str, avg_tokens: float = 0.0) -> BenchRow:
    """The reference model compared with itself scores 50 by definition."""
    return BenchRow(
        model=model,
        score=50.0,
        ci=(50.0, 50.0),
        win_rate=0.5,
        reward=0.0,
        counts=VerdictCounts(0, 0, 0, 0, 0),
        avg_tokens=avg_tokens,
    )


@dataclass(frozen=True)
class BenchSample:
    id: str
    question: str
    image_id: str = ""
    reference_answer: Optional[str] = None


def load_bench_set(path: str | os.PathLike) -> list[BenchSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            samples.append(
                BenchSample(
                    id=str(obj["id"]),
                    question=obj["question"],
                    image_id=obj.get("image_id", ""),
                    reference_answer=obj.get("reference_answer"),
                )
            )
    return samples


@dataclass
class BenchRunConfig:
    cache_dir: Optional[str] = None
    retries: int = 3
    backoff: float = 0.5
    concurrency: int = 8
    temperature: float = 0.0
    max_tokens: int = 1024


@dataclass(frozen=True)
class BenchJudgement:
    sample_id: str
    verdict: Optional[Verdict]
    test_answer: str = ""
    judge_text: str = ""
    error: Optional[str] = None


def _cache_key(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


def _cache_get(cache_dir: Optional[str], key: str) -> Optional[str]:
    if cache_dir is None:
        return None
    p = Path(cache_dir) / f"{key}.txt"
    if p.exists():
        return p.read_text(encoding="utf-8")
    return None


def _cache_put(cache_dir: Optional[str], key: str, text: str) -> None:
    if cache_dir is None:
        return
    d = Path(cache_dir)
    d.mkdir(parents=True, exist_ok=True)
    tmp = d / f".{key}.{os.getpid()}.tmp"
    tmp.write_text(text, encoding="utf-8")
    tmp.rename(d / f"{key}.txt")  # write-then-rename tolerates racing writers


def _call_with_retries(
    client: ProviderClient,
    conversation: list[ChatTurn],
    params: dict,
    retries: int,
    backoff: float,
) -> str:
    last: Exception | None = None
    for attempt in range(retries):
        try:
            return "".join(client.generate(conversation, params))
        except Exception as e:  # transport failure; retry with backoff
            last = e
            if attempt + 1 < retries:
                time.sleep(backoff * (2**attempt))
    raise RuntimeError(f"provider failed after {retries} attempts: {last}")


def run_bench(
    bench_set: Sequence[BenchSample],
    test_client: ProviderClient,
    reference_answers: dict[str, str],
    judge_client: ProviderClient,
    cfg: BenchRunConfig = BenchRunConfig(),
) -> list[BenchJudgement]:
    """Judge one test model against the reference over a bench set.

    Per-sample failures are recorded, not raised; answers and judge outputs
    are cached on disk keyed by (sample id, client identity, prompt hash) so
    re-runs are free.
    """
    for s in bench_set:
        if s.reference_answer is None and s.id not in reference_answers:
            raise ValueError(f"sample {s.id} has no reference answer")

    params = {"temperature": cfg.temperature, "top_p": 1.0, "max_tokens": cfg.max_tokens}

    def one(sample: BenchSample) -> BenchJudgement:
        ref = sample.reference_answer or reference_answers[sample.id]
        try:
            q_turn = ChatTurn(
                role="user",
                text=sample.question,
                image_ids=(sample.image_id,) if sample.image_id else (),
            )
            akey = _cache_key("answer", sample.id, test_client.identity(), sample.question)
            answer = _cache_get(cfg.cache_dir, akey)
            if answer is None:
                answer = _call_with_retries(
                    test_client, [q_turn], params, cfg.retries, cfg.backoff
                )
                _cache_put(cfg.cache_dir, akey, answer)
            prompt = render_bench_judge_prompt(
                question=sample.question,
                image_ref=sample.image_id,
                answer_a=answer,
                answer_b=ref,
            )
            jkey = _cache_key(
                "judge", sample.id, judge_client.identity(),
                hashlib.sha256(prompt.encode()).hexdigest(),
            )
            judge_text = _cache_get(cfg.cache_dir, jkey)
            if judge_text is None:
                judge_text = _call_with_retries(
                    judge_client,
                    [ChatTurn(role="user", text=prompt,
                              image_ids=(sample.image_id,) if sample.image_id else ())],
                    params, cfg.retries, cfg.backoff,
                )
                _cache_put(cfg.cache_dir, jkey, judge_text)
            verdict = parse_verdict(judge_text, test_is_a=True)
            return BenchJudgement(
                sample_id=sample.id, verdict=verdict,
                test_answer=answer, judge_text=judge_text,
            )
        except Exception as e:
            logger.warning("sample %s failed: %s", sample.id, e)
            return BenchJudgement(sample_id=sample.id, verdict=None, error=str(e))

    if not bench_set:
        return []
    with ThreadPoolExecutor(max_workers=max(1, cfg.concurrency)) as pool:
        return list(pool.map(one, bench_set))


def judgements_to_jsonl(results: Sequence[BenchJudgement]) -> str:
    lines = []
    for r in results:
        obj = {
            "id": r.sample_id,
            "verdict": r.verdict.value if r.verdict else None,
            "judge_text_hash": hashlib.sha256(r.judge_text.encode()).hexdigest()
            if r.judge_text else None,
        }
        if r.error:
            obj["error"] = r.error
        lines.append(json.dumps(obj, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def report_csv(rows: Sequence[BenchRow]) -> str:
    """Per-model bench report with score, CI, win rate, reward and counts."""
    import csv as _csv
    import io as _io

    buf = _io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["model", "score", "ci_low", "ci_high", "win_rate", "reward",
         "much_better", "better", "tie", "worse", "much_worse", "avg_tokens"]
    )
    for row in sorted(rows, key=lambda r: (-r.score, r.model)):
        d = row.to_dict()
        writer.writerow(
            [d["model"], f"{d['score']:.2f}", f"{d['ci_low']:.2f}", f"{d['ci_high']:.2f}",
             f"{d['win_rate']:.4f}", f"{d['reward']:.2f}",
             d["much_better"], d["better"], d["tie"], d["worse"], d["much_worse"],
             f"{d['avg_tokens']:.1f}"]
        )
    return buf.getvalue()
