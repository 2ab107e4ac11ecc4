"""Live battle service: sessions, anonymous pair sampling, SSE chat fan-out,
vote capture with durable logging, and scheduled leaderboard recomputation."""
from __future__ import annotations

import base64
import binascii
import hashlib
import itertools
import json
import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .judge import ProviderClient
from .leaderboard import SliceKey, LeaderboardSnapshot, leaderboard_snapshot
from .rating import BTConfig
from .votelog import (
    BattleRecord,
    ChatTurn,
    VoteOutcome,
    append_record,
    estimate_tokens,
    load_log,
    summary_stats,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairSampler:
    mode: str = "uniform"  # "uniform" | "weighted"
    weights: dict[str, float] = field(default_factory=dict)

    def sample(self, models: list[str], rng: np.random.Generator) -> tuple[str, str]:
        if len(models) < 2:
            raise ValueError("need at least two models to sample a pair")
        pairs = list(itertools.combinations(sorted(models), 2))
        if self.mode == "uniform":
            a, b = pairs[int(rng.integers(0, len(pairs)))]
        else:
            w = np.array(
                [self.weights.get(a, 1.0) + self.weights.get(b, 1.0) for a, b in pairs]
            )
            if (w <= 0).any():
                raise ValueError("weights must be positive")
            a, b = pairs[int(rng.choice(len(pairs), p=w / w.sum()))]
        # randomize side assignment so position is not informative
        if rng.integers(0, 2):
            return b, a
        return a, b


@dataclass
class ServiceConfig:
    log_path: str = "votes.jsonl"
    image_dir: Optional[str] = None
    recompute_interval: float = 3 * 3600.0
    max_sessions: int = 1000
    max_image_bytes: int = 8 * 1024 * 1024
    sampler: PairSampler = field(default_factory=PairSampler)
    bt_config: BTConfig = field(default_factory=BTConfig)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.recompute_interval <= 0:
            raise ValueError("recompute_interval must be > 0")


@dataclass
class Session:
    id: str
    created_at: float
    model_left: str
    model_right: str
    image_ids: list[str]
    params: dict
    conversation_left: list[ChatTurn] = field(default_factory=list)
    conversation_right: list[ChatTurn] = field(default_factory=list)
    voted: bool = False
    streaming: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    def completed_rounds(self) -> int:
        return sum(1 for t in self.conversation_left if t.role == "assistant")


_OUTCOMES = {o.value: o for o in VoteOutcome}


class Arena:
    """Service core, independent of the HTTP layer."""

    def __init__(self, providers: dict[str, ProviderClient], config: ServiceConfig):
        if len(providers) < 2:
            raise ValueError("need at least two providers")
        self.providers = providers
        self.config = config
        self.sessions: dict[str, Session] = {}
        self._sessions_lock = threading.Lock()
        self._log_lock = threading.Lock()  # single serialized log writer
        self._logged_sessions: set[str] = set()
        self._snapshot: Optional[LeaderboardSnapshot] = None
        self._snapshot_lock = threading.Lock()
        self._rng = np.random.default_rng(config.seed)
        self._rng_lock = threading.Lock()
        self._stop = threading.Event()
        self._ticker: Optional[threading.Thread] = None
        if config.image_dir:
            Path(config.image_dir).mkdir(parents=True, exist_ok=True)

    # -- sessions ---------------------------------------------------------

    def create_session(self, image_b64: str, params: Optional[dict] = None) -> dict:
        raw = self._decode_image(image_b64)
        image_id = self._store_image(raw)
        with self._sessions_lock:
            live = sum(1 for s in self.sessions.values() if not s.voted)
            if live >= self.config.max_sessions:
                raise ServiceUnavailable("session limit reached")
        with self._rng_lock:
            left, right = self.config.sampler.sample(list(self.providers), self._rng)
        session = Session(
            id=uuid.uuid4().hex,
            created_at=time.time(),
            model_left=left,
            model_right=right,
            image_ids=[image_id],
            params={"temperature": 0.7, "top_p": 1.0, "max_tokens": 1024, **(params or {})},
        )
        with self._sessions_lock:
            self.sessions[session.id] = session
        return {"session_id": session.id, "sides": ["Model A", "Model B"]}

    def _decode_image(self, image_b64: str) -> bytes:
        try:
            raw = base64.b64decode(image_b64, validate=True)
        except (binascii.Error, ValueError):
            raise BadRequest("image is not valid base64")
        if not raw:
            raise BadRequest("empty image")
        if len(raw) > self.config.max_image_bytes:
            raise BadRequest("image too large")
        try:
            from PIL import Image
            import io

            Image.open(io.BytesIO(raw)).verify()
        except Exception:
            raise BadRequest("image does not decode")
        return raw

    def _store_image(self, raw: bytes) -> str:
        image_id = hashlib.sha256(raw).hexdigest()
        if self.config.image_dir:
            p = Path(self.config.image_dir) / f"{image_id}.bin"
            if not p.exists():
                p.write_bytes(raw)
        return image_id

    def get_session(self, session_id: str) -> Session:
        with self._sessions_lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise NotFound(f"unknown session: {session_id}")
        return session

    # -- chat -------------------------------------------------------------

    def post_message(self, session_id: str, text: str):
        """Yield SSE event dicts; both providers stream concurrently."""
        session = self.get_session(session_id)
        with session.lock:
            if session.voted:
                raise Conflict("session already voted")
            if session.streaming:
                raise Conflict("a message is already streaming")
            session.streaming = True
            first = not session.conversation_left
            image_ids = tuple(session.image_ids) if first else ()
            user_turn = ChatTurn(role="user", text=text, image_ids=image_ids)
            session.conversation_left.append(user_turn)
            session.conversation_right.append(user_turn)
            ctx_left = list(session.conversation_left)
            ctx_right = list(session.conversation_right)

        events: queue.Queue = queue.Queue()
        texts = {"A": [], "B": []}
        errors = {"A": None, "B": None}

        def run(side: str, provider: ProviderClient, ctx: list[ChatTurn]):
            try:
                for chunk in provider.generate(ctx, session.params):
                    texts[side].append(chunk)
                    events.put({"side": side, "delta": chunk})
                events.put({"side": side, "done": True})
            except Exception as e:
                errors[side] = str(e)
                events.put({"side": side, "error": "provider failure"})
            finally:
                events.put(None)

        threads = [
            threading.Thread(
                target=run, args=("A", self.providers[session.model_left], ctx_left)
            ),
            threading.Thread(
                target=run, args=("B", self.providers[session.model_right], ctx_right)
            ),
        ]
        for t in threads:
            t.start()
        finished = 0
        while finished < 2:
            ev = events.get()
            if ev is None:
                finished += 1
                continue
            yield ev
        for t in threads:
            t.join()
        with session.lock:
            if errors["A"] is None:
                session.conversation_left.append(
                    ChatTurn(role="assistant", text="".join(texts["A"]))
                )
            if errors["B"] is None:
                session.conversation_right.append(
                    ChatTurn(role="assistant", text="".join(texts["B"]))
                )
            # keep user turns aligned when one side failed
            if errors["A"] is not None:
                session.conversation_left.append(ChatTurn(role="assistant", text=""))
            if errors["B"] is not None:
                session.conversation_right.append(ChatTurn(role="assistant", text=""))
            session.streaming = False

    # -- votes ------------------------------------------------------------

    def vote(self, session_id: str, outcome: str, reason: Optional[str] = None) -> dict:
        session = self.get_session(session_id)
        if outcome not in _OUTCOMES:
            raise BadRequest(f"unknown outcome: {outcome!r}")
        with session.lock:
            if session.voted:
                raise Conflict("session already voted")
            if session.completed_rounds() < 1:
                raise BadRequest("vote requires at least one completed round")
            record = self._record_from_session(session, _OUTCOMES[outcome], reason)
            with self._log_lock:
                # log append is the commit point; suppress duplicates by session
                if session.id not in self._logged_sessions:
                    append_record(self.config.log_path, record)
                    self._logged_sessions.add(session.id)
            session.voted = True
        return {"model_left": session.model_left, "model_right": session.model_right}

    def _record_from_session(
        self, session: Session, outcome: VoteOutcome, reason: Optional[str]
    ) -> BattleRecord:
        input_tokens = sum(
            estimate_tokens(t.text) for t in session.conversation_left if t.role == "user"
        )
        out_left = sum(
            estimate_tokens(t.text)
            for t in session.conversation_left
            if t.role == "assistant"
        )
        out_right = sum(
            estimate_tokens(t.text)
            for t in session.conversation_right
            if t.role == "assistant"
        )
        return BattleRecord(
            id=session.id,
            timestamp=int(time.time()),
            model_left=session.model_left,
            model_right=session.model_right,
            anonymous=True,
            conversation_left=tuple(session.conversation_left),
            conversation_right=tuple(session.conversation_right),
            outcome=outcome,
            input_tokens=input_tokens,
            output_tokens_left=out_left,
            output_tokens_right=out_right,
            feedback_reason=reason,
        )

    # -- leaderboard ------------------------------------------------------

    def recompute_now(self) -> None:
        """Read a log snapshot, refit, and atomically swap the served table."""
        try:
            records = (
                load_log(self.config.log_path)
                if Path(self.config.log_path).exists()
                else []
            )
            snapshot = leaderboard_snapshot(records, self.config.bt_config)
        except Exception:
            logger.exception("leaderboard recompute failed; keeping previous snapshot")
            return
        with self._snapshot_lock:
            self._snapshot = snapshot

    def current_snapshot(self) -> Optional[LeaderboardSnapshot]:
        with self._snapshot_lock:
            return self._snapshot

    def start_ticker(self) -> None:
        def loop():
            while not self._stop.wait(self.config.recompute_interval):
                self.recompute_now()

        self._ticker = threading.Thread(target=loop, daemon=True)
        self._ticker.start()

    def stop(self) -> None:
        self._stop.set()

    def stats(self) -> dict:
        records = (
            load_log(self.config.log_path) if Path(self.config.log_path).exists() else []
        )
        return summary_stats(records).to_dict()


class BadRequest(Exception):
    status = 400


class NotFound(Exception):
    status = 404


class Conflict(Exception):
    status = 409


class ServiceUnavailable(Exception):
    status = 503


def create_app(providers: dict[str, ProviderClient], config: ServiceConfig) -> FastAPI:
    """HTTP/JSON facade over an Arena; SSE for message streams."""
    arena = Arena(providers, config)
    app = FastAPI(title="arenakit")
    app.state.arena = arena

    @app.exception_handler(BadRequest)
    @app.exception_handler(NotFound)
    @app.exception_handler(Conflict)
    @app.exception_handler(ServiceUnavailable)
    async def _handle(request: Request, exc):
        return JSONResponse(status_code=exc.status, content={"error": str(exc)})

    @app.post("/session")
    async def create_session(body: dict):
        if "image_b64" not in body:
            raise BadRequest("image_b64 is required")
        return arena.create_session(body["image_b64"], body.get("params"))

    @app.post("/session/{session_id}/message")
    async def post_message(session_id: str, body: dict):
        if "text" not in body:
            raise BadRequest("text is required")
        # validate session state before the stream starts
        session = arena.get_session(session_id)
        if session.voted:
            raise Conflict("session already voted")

        def sse():
            for ev in arena.post_message(session_id, body["text"]):
                yield f"data: {json.dumps(ev)}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    @app.post("/session/{session_id}/vote")
    async def vote(session_id: str, body: dict):
        if "outcome" not in body:
            raise BadRequest("outcome is required")
        return arena.vote(session_id, body["outcome"], body.get("reason"))

    @app.get("/leaderboard")
    async def get_leaderboard(slice_axis: str = "", slice_value: str = ""):
        snapshot = arena.current_snapshot()
        if snapshot is None:
            return {"created_at": None, "models": [], "slices": []}
        table = snapshot.overall
        if slice_axis and slice_value:
            try:
                key = SliceKey(slice_axis, slice_value)
            except ValueError as e:
                raise BadRequest(str(e))
            found = snapshot.slices.get(key)
            if found is None:
                return {"created_at": snapshot.created_at, "models": []}
            table = found
        return {
            "created_at": snapshot.created_at,
            "config_fingerprint": snapshot.config_fingerprint,
            "models": table.to_rows(),
        }

    @app.get("/models")
    async def get_models():
        return {"models": sorted(arena.providers)}

    @app.get("/stats")
    async def get_stats():
        return arena.stats()

    return app
