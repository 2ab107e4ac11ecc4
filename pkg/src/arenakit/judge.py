"""Provider abstraction, prompt templates, taxonomy tagging and agreement."""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterator, Optional, Protocol, Sequence

import numpy as np

from .votelog import BattleRecord, ChatTurn, TaxonomyTag

QUESTION_CATEGORIES = frozenset(
    {"Descriptive", "Recognition", "Instructive", "Analytical",
     "Comprehensive", "Interactive", "Creative"}
)
IMAGE_DOMAINS = frozenset(
    {"Urban", "People", "Event", "Objects", "Entertainment", "Expert", "Natural"}
)

ARENA_VOTE_TOKENS = ("leftvote", "rightvote", "tievote", "bothbad_vote", "NA")


class ProviderClient(Protocol):
    def generate(self, conversation: Sequence[ChatTurn], params: dict) -> Iterator[str]:
        """Stream the model's reply for the conversation."""
        ...

    def identity(self) -> str:
        """Model name plus endpoint fingerprint, for caching."""
        ...


def _template(name: str) -> str:
    return resources.files("arenakit.templates").joinpath(name).read_text(encoding="utf-8")


def render_arena_judge_prompt(
    question: str, image_ref: str, resp_a: str, resp_b: str
) -> str:
    return _template("arena_judge.txt").format(
        image=image_ref, question=question, response_a=resp_a, response_b=resp_b
    )


def render_bench_judge_prompt(
    question: str, image_ref: str, answer_a: str, answer_b: str
) -> str:
    return _template("bench_judge.txt").format(
        image=image_ref, question=question, answer_a=answer_a, answer_b=answer_b
    )


def render_taxonomy_prompt(question: str, image_ref: str) -> str:
    return _template("taxonomy.txt").format(image=image_ref, question=question)


_VOTE_RE = re.compile(r"\b(leftvote|rightvote|tievote|bothbad_vote|NA)\b")


def parse_arena_vote(text: str) -> str:
    """First whole-word vote token in the reply; NA when none is present."""
    m = _VOTE_RE.search(text)
    return m.group(1) if m else "NA"


class TagError(Exception):
    pass


class TagFormatError(TagError):
    pass


class TagVocabularyError(TagError):
    def __init__(self, value: str, which: str):
        super().__init__(f"unknown {which}: {value!r}")
        self.value = value


def _parse_tag_reply(reply: str) -> TaxonomyTag:
    fields = [f.strip() for f in reply.split("[&]")]
    if len(fields) != 4:
        raise TagFormatError(f"expected 4 fields separated by [&], got {len(fields)}")
    category, subcategory, domain, subdomain = fields
    if category not in QUESTION_CATEGORIES:
        raise TagVocabularyError(category, "question category")
    if domain not in IMAGE_DOMAINS:
        raise TagVocabularyError(domain, "image domain")
    return TaxonomyTag(
        question_category=category,
        question_subcategory=subcategory,
        image_domain=domain,
        image_subdomain=subdomain,
    )


def tag_record(record: BattleRecord, judge: ProviderClient) -> TaxonomyTag:
    """Classify a battle's question/image via the taxonomy prompt.

    One automatic re-ask on malformed or out-of-vocabulary output before
    failing.
    """
    user_turns = [t for t in record.conversation_left if t.role == "user"]
    with_image = [t for t in user_turns if t.image_ids]
    if not with_image:
        raise TagError("record has no user turn with an image")
    question = user_turns[0].text
    image_ref = with_image[0].image_ids[0]
    prompt = render_taxonomy_prompt(question=question, image_ref=image_ref)
    params = {"temperature": 0.0, "top_p": 1.0, "max_tokens": 128}
    last: TagError | None = None
    for _ in range(2):
        reply = "".join(
            judge.generate([ChatTurn(role="user", text=prompt, image_ids=(image_ref,))], params)
        )
        try:
            return _parse_tag_reply(reply)
        except TagError as e:
            last = e
    assert last is not None
    raise last


MODE_FOUR_WAY = "four_way"
MODE_THREE_WAY = "three_way"
MODE_BINARY = "binary"

_LABEL_CODE = {"left": 0, "right": 1, "tie": 2, "bothbad": 3, "other": 2}
_VOTE_LABEL = {
    "leftvote": "left",
    "rightvote": "right",
    "tievote": "tie",
    "bothbad_vote": "bothbad",
}


def _collapse_one(vote: str, mode: str) -> Optional[str]:
    label = _VOTE_LABEL.get(vote)
    if label is None:  # NA
        return None
    if mode == MODE_FOUR_WAY:
        return label
    if mode == MODE_THREE_WAY:
        return label if label in ("left", "right") else "other"
    if mode == MODE_BINARY:
        return label if label in ("left", "right") else None
    raise ValueError(f"unknown mode: {mode!r}")


def collapse_votes(votes: Sequence[str], mode: str) -> list[str]:
    """Map arena vote tokens to the labels of the given agreement granularity.

    Dropped votes (NA everywhere; tie/bothbad in binary) are removed; when
    comparing two annotators use agreement(), which drops the paired label
    too.
    """
    out = []
    for v in votes:
        label = _collapse_one(v, mode)
        if label is not None:
            out.append(label)
    return out


@dataclass(frozen=True)
class AgreementReport:
    f1_macro: float
    f1_micro: float
    f1_weighted: float
    cohen_kappa: float
    pearson: float
    percent_agreement: float
    collapse_mode: str
    n_pairs: int
    degenerate: bool = False


def agreement(
    pred: Sequence[str], human: Sequence[str], mode: str = MODE_FOUR_WAY
) -> AgreementReport:
    """Inter-annotator agreement between two arena-vote lists.

    Votes are collapsed per the mode; a pair is dropped when either side is
    dropped. Pearson uses the fixed coding left=0, right=1, tie/other=2,
    bothbad=3.
    """
    if len(pred) != len(human):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(human)}")
    pairs = []
    for p, h in zip(pred, human):
        lp, lh = _collapse_one(p, mode), _collapse_one(h, mode)
        if lp is not None and lh is not None:
            pairs.append((lp, lh))
    if len(pairs) < 2:
        raise ValueError(f"need >= 2 label pairs after collapsing, got {len(pairs)}")
    a = [p for p, _ in pairs]
    b = [h for _, h in pairs]

    from sklearn.metrics import cohen_kappa_score, f1_score

    labels = sorted(set(a) | set(b), key=lambda x: _LABEL_CODE[x])
    exact = sum(1 for x, y in pairs if x == y) / len(pairs)
    degenerate = len(labels) == 1
    if degenerate:
        # p_e = 1: kappa is 1 by convention when the single label agrees
        kappa = 1.0 if exact == 1.0 else 0.0
        pearson = kappa
        f1m = f1mi = f1w = exact
    else:
        f1m = float(f1_score(b, a, labels=labels, average="macro", zero_division=0))
        f1mi = float(f1_score(b, a, labels=labels, average="micro", zero_division=0))
        f1w = float(f1_score(b, a, labels=labels, average="weighted", zero_division=0))
        kappa = float(cohen_kappa_score(b, a, labels=labels))
        ca = np.array([_LABEL_CODE[x] for x in a], dtype=float)
        cb = np.array([_LABEL_CODE[x] for x in b], dtype=float)
        if ca.std() == 0 or cb.std() == 0:
            pearson = 1.0 if exact == 1.0 else 0.0
            degenerate = True
        else:
            pearson = float(np.corrcoef(ca, cb)[0, 1])
    return AgreementReport(
        f1_macro=f1m,
        f1_micro=f1mi,
        f1_weighted=f1w,
        cohen_kappa=kappa,
        pearson=pearson,
        percent_agreement=exact,
        collapse_mode=mode,
        n_pairs=len(pairs),
        degenerate=degenerate,
    )


class MockProvider:
    """Deterministic scripted client for tests; streams in fixed-size chunks."""

    def __init__(
        self,
        script: dict[str, str] | Callable[[str], str] | None = None,
        fallback: Optional[str] = None,
        chunk_size: int = 16,
        name: str = "mock",
    ):
        self.script = script or {}
        self.fallback = fallback
        self.chunk_size = chunk_size
        self.name = name

    def _lookup(self, key: str) -> str:
        if callable(self.script):
            return self.script(key)
        if key in self.script:
            return self.script[key]
        if self.fallback is not None:
            return self.fallback
        raise KeyError(f"no scripted reply for {key!r}")

    def generate(self, conversation: Sequence[ChatTurn], params: dict) -> Iterator[str]:
        users = [t for t in conversation if t.role == "user"]
        key = users[-1].text if users else ""
        text = self._lookup(key)
        for i in range(0, len(text), self.chunk_size):
            yield text[i : i + self.chunk_size]

    def identity(self) -> str:
        return f"{self.name}@mock"


def mock_provider(
    script: dict[str, str] | Callable[[str], str] | None = None,
    fallback: Optional[str] = None,
    chunk_size: int = 16,
    name: str = "mock",
) -> MockProvider:
    return MockProvider(script=script, fallback=fallback, chunk_size=chunk_size, name=name)


class HttpProvider:
    """Chat-completions-style HTTP client with inline base64 image parts."""

    def __init__(
        self,
        name: str,
        endpoint: str,
        auth_env: Optional[str] = None,
        model: Optional[str] = None,
        image_loader: Optional[Callable[[str], bytes]] = None,
        timeout: float = 120.0,
    ):
        self.name = name
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.model = model or name
        self.image_loader = image_loader
        self.timeout = timeout

    def _messages(self, conversation: Sequence[ChatTurn]) -> list[dict]:
        import base64

        messages = []
        for turn in conversation:
            if turn.role == "user" and turn.image_ids and self.image_loader:
                content: list[dict] = [{"type": "text", "text": turn.text}]
                for iid in turn.image_ids:
                    raw = self.image_loader(iid)
                    content.append(
                        {
                            "type": "image_url",
                            "image_url": {
                                "url": "data:image/png;base64,"
                                + base64.b64encode(raw).decode()
                            },
                        }
                    )
                messages.append({"role": turn.role, "content": content})
            else:
                messages.append({"role": turn.role, "content": turn.text})
        return messages

    def generate(self, conversation: Sequence[ChatTurn], params: dict) -> Iterator[str]:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.auth_env and os.environ.get(self.auth_env):
            headers["Authorization"] = f"Bearer {os.environ[self.auth_env]}"
        payload = {
            "model": self.model,
            "messages": self._messages(conversation),
            "temperature": params.get("temperature", 0.0),
            "top_p": params.get("top_p", 1.0),
            "max_tokens": params.get("max_tokens", 1024),
        }
        resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        yield resp.json()["choices"][0]["message"]["content"]

    def identity(self) -> str:
        return f"{self.model}@{self.endpoint}"


def load_provider_config(
    path: str | os.PathLike,
    image_loader: Optional[Callable[[str], bytes]] = None,
) -> dict[str, ProviderClient]:
    """Providers from a JSON config: a list of {name, type, ...} entries.

    type "http" takes endpoint/auth_env/model; type "mock" takes
    script/fallback for offline runs and tests.
    """
    with open(path, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    providers: dict[str, ProviderClient] = {}
    for e in entries:
        name = e["name"]
        kind = e.get("type", "http")
        if kind == "http":
            providers[name] = HttpProvider(
                name=name,
                endpoint=e["endpoint"],
                auth_env=e.get("auth_env"),
                model=e.get("model"),
                image_loader=image_loader,
            )
        elif kind == "mock":
            providers[name] = MockProvider(
                script=e.get("script", {}),
                fallback=e.get("fallback"),
                chunk_size=e.get("chunk_size", 16),
                name=name,
            )
        else:
            raise ValueError(f"unknown provider type: {kind!r}")
    return providers
