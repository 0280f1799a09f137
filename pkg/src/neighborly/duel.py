"""Blind algorithm-duel experiment.

A participant rates a scheduled sequence of profiles, then sees two
anonymized top-10 recommendation lists (one per algorithm, presentation
side randomized) and picks the better one. Algorithm identities stay out of
every participant-facing payload until the choice is submitted; the engine
records enough in its append-only event log to reconstruct each session and
the running tally exactly.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from random import Random
from threading import RLock
from typing import Optional, TextIO, Union

from .errors import OutOfScaleError, SessionError
from .estimators import RatingPredictor, RecommendationList
from .manager import OPPOSITE, DataManager
from .matrix import DEFAULT_SCALE, GENDERS, RatingScale, RatingsMatrix

PHASE_RATING = "rating"
PHASE_CHOOSING = "choosing"
PHASE_DONE = "done"
PHASE_EXPIRED = "expired"

SIDES = ("left", "right")
DEFAULT_RATING_TARGET = 150
DEFAULT_LIST_LENGTH = 10


@dataclass
class DuelSession:
    token: str
    participant: int
    gender: str
    rating_target: int
    schedule: list[int]
    left_algo: int
    right_algo: int
    phase: str = PHASE_RATING
    next_index: int = 0
    lists: Optional[dict[str, list[tuple[int, float]]]] = None
    choice: Optional[str] = None
    winner: Optional[int] = None
    created_at: float = 0.0
    last_activity: float = 0.0

    @property
    def rated(self) -> int:
        return self.next_index

    @property
    def current_profile(self) -> Optional[int]:
        if self.phase == PHASE_RATING and self.next_index < len(self.schedule):
            return self.schedule[self.next_index]
        return None

    def algo_for(self, side: str) -> int:
        return self.left_algo if side == "left" else self.right_algo


@dataclass
class DuelTally:
    """Win counts per ordered algorithm pair."""

    names: dict[int, str]
    wins: dict[tuple[int, int], int] = field(default_factory=dict)

    def record(self, winner: int, loser: int) -> None:
        key = (winner, loser)
        self.wins[key] = self.wins.get(key, 0) + 1

    def duels(self, a: int, b: int) -> int:
        return self.wins.get((a, b), 0) + self.wins.get((b, a), 0)

    def percentage(self, a: int, b: int) -> Optional[float]:
        total = self.duels(a, b)
        if total == 0:
            return None
        return 100.0 * self.wins.get((a, b), 0) / total

    def rows(self) -> list[dict]:
        out = []
        for (a, b), count in sorted(self.wins.items()):
            out.append(
                {
                    "winner": self.names[a],
                    "loser": self.names[b],
                    "wins": count,
                    "losses": self.wins.get((b, a), 0),
                    "percentage": self.percentage(a, b),
                }
            )
        return out

    def to_csv(self) -> str:
        """Matrix-shaped export: cell = percentage of duels the row algorithm
        won against the column algorithm."""
        ids = sorted(self.names)
        lines = ["algorithm," + ",".join(self.names[i] for i in ids)]
        for a in ids:
            cells = []
            for b in ids:
                if a == b:
                    cells.append("-")
                else:
                    pct = self.percentage(a, b)
                    cells.append("-" if pct is None else f"{pct:.2f}%")
            lines.append(self.names[a] + "," + ",".join(cells))
        return "\n".join(lines) + "\n"


class DuelStore:
    """Holds the experiment matrix, live sessions, the tally, and the event log.

    Thread-safe: every public operation takes the store lock, and the
    experiment matrix takes writes only through it. Sessions idle longer than
    idle_timeout expire lazily and never reach the tally.
    """

    def __init__(
        self,
        algorithms: dict[int, RatingPredictor],
        base_matrix: Optional[RatingsMatrix] = None,
        attributes: Optional[dict[int, str]] = None,
        *,
        scale: RatingScale = DEFAULT_SCALE,
        rating_target: int = DEFAULT_RATING_TARGET,
        list_length: int = DEFAULT_LIST_LENGTH,
        seed: Optional[int] = None,
        asset_template: str = "placeholder://profile/{id}",
        idle_timeout: float = 1800.0,
        event_log_path: Optional[Union[str, Path]] = None,
        clock=time.time,
    ):
        if len(algorithms) < 2:
            raise ValueError("a duel needs at least two algorithms")
        matrix = base_matrix if base_matrix is not None else RatingsMatrix(scale)
        self.dm = DataManager(matrix, attributes=attributes, algorithms=algorithms)
        self.rating_target = rating_target
        self.list_length = list_length
        self.asset_template = asset_template
        self.idle_timeout = idle_timeout
        self.clock = clock
        self.rng = Random(seed)
        self.sessions: dict[str, DuelSession] = {}
        self.events: list[dict] = []
        self._event_seq = 0
        self._lock = RLock()
        self._event_fh: Optional[TextIO] = None
        if event_log_path is not None:
            self._event_fh = open(event_log_path, "a", encoding="utf-8")
        self._pairs = list(combinations(sorted(algorithms), 2))
        existing = list(self.dm.matrix.users()) + list(self.dm.matrix.profiles())
        existing += list(self.dm.attributes)
        self._next_participant = max(existing, default=0) + 1

    # -- events -----------------------------------------------------------------

    def _emit(self, event: str, session: Optional[str], **payload) -> None:
        self._event_seq += 1
        record = {"seq": self._event_seq, "ts": self.clock(), "event": event}
        if session is not None:
            record["session"] = session
        record.update(payload)
        self.events.append(record)
        if self._event_fh is not None:
            self._event_fh.write(json.dumps(record, separators=(",", ":")) + "\n")
            self._event_fh.flush()

    def close(self) -> None:
        if self._event_fh is not None:
            self._event_fh.close()
            self._event_fh = None

    # -- session lifecycle --------------------------------------------------------

    def create_session(
        self, gender: Optional[str] = None, rating_target: Optional[int] = None
    ) -> DuelSession:
        gender = (gender or "U").upper()
        if gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {gender!r}")
        target = rating_target or self.rating_target
        if target < 1:
            raise ValueError(f"rating target must be >= 1, got {target}")
        with self._lock:
            wanted = OPPOSITE.get(gender)
            pool = [
                p
                for p in self.dm.matrix.profiles()
                if wanted is None or self.dm.attributes.get(p) == wanted
            ]
            if len(pool) < target:
                raise SessionError(
                    f"profile pool of {len(pool)} is smaller than the "
                    f"rating target of {target}"
                )
            pool.sort()
            schedule = self.rng.sample(pool, target)
            pair = self.rng.choice(self._pairs)
            left, right = pair if self.rng.random() < 0.5 else (pair[1], pair[0])
            participant = self._next_participant
            self._next_participant += 1
            token = f"{participant:06d}{self.rng.getrandbits(64):016x}"
            now = self.clock()
            session = DuelSession(
                token=token,
                participant=participant,
                gender=gender,
                rating_target=target,
                schedule=schedule,
                left_algo=left,
                right_algo=right,
                created_at=now,
                last_activity=now,
            )
            self.sessions[token] = session
            self.dm.set_gender(participant, gender)
            self._emit(
                "session_created",
                token,
                participant=participant,
                gender=gender,
                rating_target=target,
                schedule=schedule,
                left_algo=left,
                right_algo=right,
            )
            return session

    def session(self, token: str) -> DuelSession:
        with self._lock:
            session = self.sessions.get(token)
            if session is None:
                raise SessionError(f"unknown session {token!r}")
            self._expire_if_idle(session)
            return session

    def _expire_if_idle(self, session: DuelSession) -> None:
        if session.phase in (PHASE_DONE, PHASE_EXPIRED):
            return
        if self.clock() - session.last_activity > self.idle_timeout:
            session.phase = PHASE_EXPIRED
            self._emit("session_expired", session.token)

    def expire_idle(self) -> int:
        """Expire every idle session; returns how many changed state."""
        with self._lock:
            before = sum(1 for s in self.sessions.values() if s.phase == PHASE_EXPIRED)
            for session in self.sessions.values():
                self._expire_if_idle(session)
            return (
                sum(1 for s in self.sessions.values() if s.phase == PHASE_EXPIRED) - before
            )

    # -- participant actions ---------------------------------------------------------

    def submit_rating(self, token: str, profile: int, value: int) -> DuelSession:
        with self._lock:
            session = self.session(token)
            if session.phase != PHASE_RATING:
                raise SessionError(f"session is in phase {session.phase}, not rating")
            expected = session.current_profile
            if profile != expected:
                raise SessionError(
                    f"out-of-order rating: expected profile {expected}, got {profile}"
                )
            if not self.dm.matrix.scale.contains(value):
                raise OutOfScaleError(
                    f"rating {value} outside scale "
                    f"{self.dm.matrix.scale.r_min}..{self.dm.matrix.scale.r_max}"
                )
            self.dm.insert(session.participant, profile, value)
            session.next_index += 1
            session.last_activity = self.clock()
            self._emit("rating_submitted", token, profile=profile, value=value)
            if session.next_index >= session.rating_target:
                self._generate_lists(session)
            return session

    def _generate_lists(self, session: DuelSession) -> None:
        opposite = session.gender in OPPOSITE
        lists = {}
        for side in SIDES:
            rec: RecommendationList = self.dm.recommend(
                session.algo_for(side),
                session.participant,
                self.list_length,
                opposite_sex_only=opposite,
            )
            lists[side] = rec.entries
        session.lists = lists
        session.phase = PHASE_CHOOSING
        left_profiles = {p for p, _ in lists["left"]}
        right_profiles = {p for p, _ in lists["right"]}
        self._emit(
            "lists_generated",
            session.token,
            left=[[p, s] for p, s in lists["left"]],
            right=[[p, s] for p, s in lists["right"]],
            overlap=len(left_profiles & right_profiles),
        )

    def submit_choice(self, token: str, pick: str) -> tuple[DuelSession, str]:
        """Resolve the blind mapping: returns the session and winner name."""
        if pick not in SIDES:
            raise ValueError(f"pick must be one of {SIDES}, got {pick!r}")
        with self._lock:
            session = self.session(token)
            if session.phase == PHASE_DONE:
                raise SessionError("choice already submitted")
            if session.phase != PHASE_CHOOSING:
                raise SessionError(f"session is in phase {session.phase}, not choosing")
            session.choice = pick
            session.winner = session.algo_for(pick)
            session.phase = PHASE_DONE
            session.last_activity = self.clock()
            self._emit(
                "choice_submitted",
                token,
                pick=pick,
                winner=session.winner,
                loser=session.algo_for("left" if pick == "right" else "right"),
            )
            return session, self.algorithm_names()[session.winner]

    # -- exports -------------------------------------------------------------------

    def algorithm_names(self) -> dict[int, str]:
        return {i: algo.display_name for i, algo in self.dm.algorithms.items()}

    def tally(self) -> DuelTally:
        with self._lock:
            tally = DuelTally(names=self.algorithm_names())
            for session in self.sessions.values():
                if session.phase == PHASE_DONE:
                    loser = session.algo_for(
                        "left" if session.choice == "right" else "right"
                    )
                    tally.record(session.winner, loser)
            return tally

    def export_events(self) -> list[dict]:
        with self._lock:
            return [dict(e) for e in self.events]

    def asset_for(self, profile: int) -> str:
        return self.asset_template.format(id=profile)


def replay_events(events: list[dict]) -> tuple[dict[str, dict], dict[tuple[int, int], int]]:
    """Rebuild session end-states and the tally from an event log alone.

    Returns ({token: snapshot}, win counts); the log-completeness tests diff
    this against the live store."""
    sessions: dict[str, dict] = {}
    wins: dict[tuple[int, int], int] = {}
    for event in sorted(events, key=lambda e: e["seq"]):
        kind = event["event"]
        token = event.get("session")
        if kind == "session_created":
            sessions[token] = {
                "participant": event["participant"],
                "gender": event["gender"],
                "rating_target": event["rating_target"],
                "schedule": list(event["schedule"]),
                "left_algo": event["left_algo"],
                "right_algo": event["right_algo"],
                "phase": PHASE_RATING,
                "ratings": [],
                "lists": None,
                "choice": None,
                "winner": None,
            }
        elif kind == "rating_submitted":
            sessions[token]["ratings"].append((event["profile"], event["value"]))
        elif kind == "lists_generated":
            sessions[token]["lists"] = {
                "left": [tuple(e) for e in event["left"]],
                "right": [tuple(e) for e in event["right"]],
            }
            sessions[token]["phase"] = PHASE_CHOOSING
        elif kind == "choice_submitted":
            s = sessions[token]
            s["choice"] = event["pick"]
            s["winner"] = event["winner"]
            s["phase"] = PHASE_DONE
            wins[(event["winner"], event["loser"])] = (
                wins.get((event["winner"], event["loser"]), 0) + 1
            )
        elif kind == "session_expired":
            sessions[token]["phase"] = PHASE_EXPIRED
    return sessions, wins
