"""Listening-test administration: plan construction, listener sessions, an
append-only rating store with replay recovery, and CSV export in the
evaluation module's schema.
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
from dataclasses import asdict, dataclass, field

import numpy as np

from .evaluation import DIALECT_CATEGORIES, RATINGS_HEADER


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Stimulus:
    stimulus_id: str
    utt_id: str
    system_id: str
    split: str
    audio_path: str
    reference_path: str
    true_dialect: str


@dataclass
class TestPlan:
    stimuli: list
    sets: list            # list of lists of stimulus ids
    listeners: list       # listener ids, assignment order
    assignments: dict     # listener id -> list of set indices
    set_size: int
    listeners_per_set: int
    sets_per_listener: int
    seed: int

    def stimulus(self, stimulus_id):
        return self._by_id[stimulus_id]

    def __post_init__(self):
        self._by_id = {s.stimulus_id: s for s in self.stimuli}

    def to_dict(self):
        return {
            "stimuli": [asdict(s) for s in self.stimuli],
            "sets": self.sets,
            "listeners": self.listeners,
            "assignments": self.assignments,
            "set_size": self.set_size,
            "listeners_per_set": self.listeners_per_set,
            "sets_per_listener": self.sets_per_listener,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            stimuli=[Stimulus(**s) for s in d["stimuli"]],
            sets=[list(s) for s in d["sets"]],
            listeners=list(d["listeners"]),
            assignments={k: list(v) for k, v in d["assignments"].items()},
            set_size=d["set_size"],
            listeners_per_set=d["listeners_per_set"],
            sets_per_listener=d["sets_per_listener"],
            seed=d["seed"],
        )


def save_plan(plan, path):
    with open(path, "w") as f:
        json.dump(plan.to_dict(), f)


def load_plan(path):
    with open(path) as f:
        return TestPlan.from_dict(json.load(f))


def build_plan(stimuli, set_size=40, listeners_per_set=5, sets_per_listener=10,
               n_listeners=None, seed=0):
    """Partition stimuli into sets and assign sets to listeners.

    Feasibility requires |stimuli| divisible by set_size and
    n_listeners * sets_per_listener == n_sets * listeners_per_set, with each
    listener receiving distinct sets.
    """
    stimuli = list(stimuli)
    ids = [s.stimulus_id for s in stimuli]
    if len(set(ids)) != len(ids):
        raise PlanError("duplicate stimulus ids in plan input")
    if not stimuli:
        raise PlanError("no stimuli")
    if len(stimuli) % set_size != 0:
        raise PlanError(
            f"{len(stimuli)} stimuli do not divide into sets of {set_size}"
        )
    n_sets = len(stimuli) // set_size
    if n_listeners is None:
        if (n_sets * listeners_per_set) % sets_per_listener != 0:
            raise PlanError(
                f"{n_sets} sets x {listeners_per_set} listeners/set is not "
                f"divisible into workloads of {sets_per_listener}"
            )
        n_listeners = n_sets * listeners_per_set // sets_per_listener
    if n_listeners * sets_per_listener != n_sets * listeners_per_set:
        raise PlanError(
            f"infeasible assignment: {n_listeners} listeners x "
            f"{sets_per_listener} sets/listener = "
            f"{n_listeners * sets_per_listener} but {n_sets} sets x "
            f"{listeners_per_set} listeners/set = {n_sets * listeners_per_set}"
        )
    if sets_per_listener > n_sets:
        raise PlanError(
            f"listeners need {sets_per_listener} distinct sets but only "
            f"{n_sets} exist"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(stimuli))
    shuffled = [stimuli[i] for i in order]
    sets = [[s.stimulus_id for s in shuffled[i * set_size:(i + 1) * set_size]]
            for i in range(n_sets)]
    listeners = [f"L{i + 1:03d}" for i in range(n_listeners)]
    flat = [s for _ in range(listeners_per_set) for s in range(n_sets)]
    assignments = {
        listeners[j]: flat[j * sets_per_listener:(j + 1) * sets_per_listener]
        for j in range(n_listeners)
    }
    for listener, assigned in assignments.items():
        if len(set(assigned)) != len(assigned):
            raise PlanError(f"listener {listener} would rate a set twice")
    return TestPlan(shuffled, sets, listeners, assignments, set_size,
                    listeners_per_set, sets_per_listener, seed)


@dataclass
class Session:
    listener_id: str
    order: list           # stimulus ids in presentation order
    cursor: int = 0
    last_token: str = ""

    @property
    def status(self):
        return "complete" if self.cursor >= len(self.order) else "active"


class RatingStore:
    """Append-only JSONL event log with monotonically increasing sequence
    numbers; replaying the log reconstructs all state exactly."""

    def __init__(self, path, snapshot_every=500):
        self.path = path
        self.snapshot_every = snapshot_every
        self.seq = 0
        self._lock = threading.Lock()
        self._fh = None
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)

    def append(self, event):
        with self._lock:
            self.seq += 1
            event = {"seq": self.seq, **event}
            if self._fh is None:
                self._fh = open(self.path, "a")
            self._fh.write(json.dumps(event, sort_keys=True) + "\n")
            self._fh.flush()
            if self.snapshot_every and self.seq % self.snapshot_every == 0:
                self._write_snapshot()
            return event

    def replay(self):
        if not os.path.exists(self.path):
            return []
        events = []
        with open(self.path) as f:
            for line in f:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        if events:
            self.seq = events[-1]["seq"]
        return events

    def _write_snapshot(self):
        snap = {"seq": self.seq}
        tmp = self.path + ".snapshot.tmp"
        with open(tmp, "w") as f:
            json.dump(snap, f)
        os.replace(tmp, self.path + ".snapshot")

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class ListenService:
    """Session management over a plan, persisted through a RatingStore.

    A listener owns at most one session (the session id is the listener id);
    re-creating it resumes at the stored cursor. Ratings append to the log
    and advance the cursor; replaying the log on startup restores every
    session exactly.
    """

    def __init__(self, plan, store_path, reference_samples=None):
        self.plan = plan
        self.store = RatingStore(store_path)
        self.sessions = {}
        self.ratings = []  # accepted rating events in sequence order
        self.reference_samples = dict(reference_samples or {})
        self._lock = threading.Lock()
        for event in self.store.replay():
            self._apply(event, record=False)

    # -- event handling ------------------------------------------------------

    def _apply(self, event, record=True):
        if event["kind"] == "session":
            self._materialize_session(event["listener_id"])
        elif event["kind"] == "rating":
            session = self.sessions[event["listener_id"]]
            session.cursor += 1
            session.last_token = event["token"]
            self.ratings.append(event)
        return event

    def _materialize_session(self, listener_id):
        if listener_id in self.sessions:
            return self.sessions[listener_id]
        order = []
        rng_base = self.plan.seed
        for set_idx in self.plan.assignments[listener_id]:
            rng = np.random.default_rng(
                [rng_base, set_idx, _stable_hash(listener_id)])
            ids = list(self.plan.sets[set_idx])
            order.extend(ids[i] for i in rng.permutation(len(ids)))
        session = Session(listener_id, order)
        self.sessions[listener_id] = session
        return session

    # -- API operations ------------------------------------------------------

    def create_session(self, listener_id):
        """Create or resume the listener's session."""
        if listener_id not in self.plan.assignments:
            raise KeyError(f"listener '{listener_id}' is not in the plan")
        with self._lock:
            existing = listener_id in self.sessions
            session = self._materialize_session(listener_id)
            if not existing:
                self.store.append({"kind": "session", "listener_id": listener_id})
            return session

    def next_stimulus(self, listener_id):
        """The cursor stimulus descriptor, or a done marker."""
        session = self._require_session(listener_id)
        if session.cursor >= len(session.order):
            return {"done": True, "index": session.cursor,
                    "total": len(session.order)}
        sid = session.order[session.cursor]
        stim = self.plan.stimulus(sid)
        # system_id / true_dialect intentionally withheld (blind test)
        return {
            "done": False,
            "stimulus_id": sid,
            "audio_url": f"/audio/{sid}",
            "reference_url": f"/audio/{sid}.ref",
            "index": session.cursor,
            "total": len(session.order),
        }

    def record_rating(self, listener_id, stimulus_id, mos, dmos, dialect_choice,
                      token):
        """Validate and append one rating; idempotent on a repeated token."""
        session = self._require_session(listener_id)
        with self._lock:
            if token and token == session.last_token:
                return {"accepted": True, "duplicate": True,
                        "cursor": session.cursor}
            if session.cursor >= len(session.order):
                return {"accepted": False, "reason": "session complete"}
            expected = session.order[session.cursor]
            if stimulus_id != expected:
                return {"accepted": False, "reason": "out of order",
                        "expected_stimulus_id": expected}
            if not (isinstance(mos, int) and 1 <= mos <= 5):
                return {"accepted": False, "reason": f"mos out of range: {mos}"}
            if not (isinstance(dmos, int) and 1 <= dmos <= 5):
                return {"accepted": False, "reason": f"dmos out of range: {dmos}"}
            if dialect_choice not in DIALECT_CATEGORIES:
                return {"accepted": False,
                        "reason": f"unknown dialect '{dialect_choice}'"}
            event = self.store.append({
                "kind": "rating", "listener_id": listener_id,
                "stimulus_id": stimulus_id, "mos": mos, "dmos": dmos,
                "dialect_choice": dialect_choice, "token": token,
            })
            self._apply(event, record=False)
            return {"accepted": True, "duplicate": False,
                    "cursor": session.cursor}

    def export_csv(self):
        """All stored ratings in the eval schema, deterministic bytes."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(RATINGS_HEADER)
        for event in self.ratings:
            stim = self.plan.stimulus(event["stimulus_id"])
            writer.writerow([
                event["listener_id"], stim.utt_id, stim.system_id, stim.split,
                event["mos"], event["dmos"], event["dialect_choice"],
                stim.true_dialect,
            ])
        return out.getvalue()

    def cursors(self):
        return {lid: s.cursor for lid, s in self.sessions.items()}

    def references(self):
        """Six accent categories with sample availability."""
        return [{
            "category": c,
            "audio_url": f"/audio/ref-{c.replace(' ', '_')}",
            "available": c in self.reference_samples,
        } for c in DIALECT_CATEGORIES]

    def resolve_audio(self, audio_id):
        """Map an /audio/{id} token to a file path, or None."""
        if audio_id.startswith("ref-"):
            return self.reference_samples.get(audio_id[4:].replace("_", " "))
        if audio_id.endswith(".ref"):
            sid = audio_id[:-4]
            if sid in self.plan._by_id:
                return self.plan.stimulus(sid).reference_path
            return None
        if audio_id in self.plan._by_id:
            return self.plan.stimulus(audio_id).audio_path
        return None

    def _require_session(self, listener_id):
        if listener_id not in self.sessions:
            raise KeyError(f"no session for listener '{listener_id}'")
        return self.sessions[listener_id]

    def close(self):
        self.store.close()


def _stable_hash(text):
    h = 2166136261
    for ch in text.encode():
        h = (h ^ ch) * 16777619 % (1 << 32)
    return h
