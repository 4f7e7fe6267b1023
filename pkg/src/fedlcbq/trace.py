"""Run traces: every local visit plus a snapshot of the server at each sync.

Binary layout (little-endian)::

    b"FLCQT1"
    block*   where block = tag (1 byte) + u32 length + payload
      b"H"   JSON header: dims, M, K, schedule, hyper params, zeta1, seeds
      b"V"   visit records of one episode, ``length`` records of VISIT_DTYPE
      b"S"   JSON snapshot taken right after an aggregation
      b"E"   end marker, length 0

Floats in JSON blocks are written with ``repr`` precision, so a
save/load round trip is bit-exact.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import TraceParseError, ValidationError
from .schedules import SyncSchedule

TRACE_MAGIC = b"FLCQT1"
VISIT_DTYPE = np.dtype([("k", "<u4"), ("m", "<u4"), ("h", "<u4"), ("s", "<u4"),
                        ("a", "<u4"), ("r", "<f8"), ("s_next", "<u4"), ("eta", "<f8")])
_BLOCK = struct.Struct("<cI")

SNAPSHOT_ARRAYS = {"Q": float, "V": float, "policy": np.int64, "N": np.int64,
                   "n_round": np.int64, "B": float, "alpha": float}


@dataclass
class RunTrace:
    """Complete record of a run.

    ``visits`` is a structured array (VISIT_DTYPE) ordered by episode, then
    step, then agent. ``snapshots[u]`` holds the server tables after the
    (u+1)-th aggregation: Q (H,S,A) as stored by the server, V (H+1,S),
    policy (H,S), N (H,S,A) cumulative counts, n_round (H,S,A), B (H,S,A)
    penalty and alpha (M,H,S,A) weights.
    """

    S: int
    A: int
    H: int
    M: int
    K: int
    schedule: SyncSchedule
    hyper: dict
    zeta1: float
    visits: np.ndarray
    snapshots: list
    meta: dict = field(default_factory=dict)

    @property
    def dims(self):
        return self.S, self.A, self.H

    def header(self):
        return {"S": self.S, "A": self.A, "H": self.H, "M": self.M, "K": self.K,
                "schedule": self.schedule.to_dict(), "hyper": self.hyper,
                "zeta1": self.zeta1, "meta": self.meta}

    def visits_at(self, h, s, a):
        v = self.visits
        return v[(v["h"] == h) & (v["s"] == s) & (v["a"] == a)]

    def snapshot_at(self, k):
        try:
            return self.snapshots[self.schedule.sync_points.index(k)]
        except ValueError:
            raise ValidationError(f"episode {k} is not a sync point") from None

    # --- serialization --------------------------------------------------

    def to_bytes(self):
        out = [TRACE_MAGIC]

        def block(tag, payload):
            out.append(_BLOCK.pack(tag, len(payload)))
            out.append(payload)

        block(b"H", json.dumps(self.header()).encode())
        ks = self.visits["k"]
        bounds = np.searchsorted(ks, np.arange(1, self.K + 2))
        sync_iter = iter(zip(self.schedule.sync_points, self.snapshots))
        next_sync = next(sync_iter, None)
        for k in range(1, self.K + 1):
            recs = self.visits[bounds[k - 1]:bounds[k]]
            out.append(_BLOCK.pack(b"V", len(recs)))
            out.append(recs.tobytes())
            if next_sync is not None and next_sync[0] == k:
                snap = {key: (val.tolist() if isinstance(val, np.ndarray) else val)
                        for key, val in next_sync[1].items()}
                block(b"S", json.dumps(snap).encode())
                next_sync = next(sync_iter, None)
        block(b"E", b"")
        return b"".join(out)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, blob):
        if blob[:len(TRACE_MAGIC)] != TRACE_MAGIC:
            raise TraceParseError("bad trace magic", 0)
        pos = len(TRACE_MAGIC)
        header, visits, snapshots, ended = None, [], [], False
        while pos < len(blob):
            if pos + _BLOCK.size > len(blob):
                raise TraceParseError("truncated block header", pos)
            tag, length = _BLOCK.unpack_from(blob, pos)
            start = pos + _BLOCK.size
            if tag == b"V":
                end = start + length * VISIT_DTYPE.itemsize
            else:
                end = start + length
            if end > len(blob):
                raise TraceParseError(f"truncated {tag.decode(errors='replace')!r} block", pos)
            payload = blob[start:end]
            if tag == b"H":
                header = _json_block(payload, pos)
            elif tag == b"V":
                visits.append(np.frombuffer(payload, dtype=VISIT_DTYPE))
            elif tag == b"S":
                snap = _json_block(payload, pos)
                try:
                    snapshots.append({key: (np.array(snap[key], dtype=SNAPSHOT_ARRAYS[key])
                                            if key in SNAPSHOT_ARRAYS else snap[key])
                                      for key in snap})
                except (KeyError, ValueError, TypeError) as exc:
                    raise TraceParseError(f"malformed snapshot: {exc}", pos) from exc
            elif tag == b"E":
                ended = True
                pos = end
                break
            else:
                raise TraceParseError(f"unknown block tag {tag!r}", pos)
            pos = end
        if header is None:
            raise TraceParseError("trace has no header block", len(TRACE_MAGIC))
        if not ended:
            raise TraceParseError("trace is truncated (no end marker)", pos)
        if pos != len(blob):
            raise TraceParseError("trailing bytes after end marker", pos)
        schedule = SyncSchedule.from_dict(header["schedule"])
        if len(snapshots) != len(schedule):
            raise TraceParseError(
                f"trace has {len(snapshots)} snapshots for {len(schedule)} sync points", pos)
        vis = np.concatenate(visits) if visits else np.zeros(0, dtype=VISIT_DTYPE)
        return cls(header["S"], header["A"], header["H"], header["M"], header["K"], schedule,
                   header["hyper"], header["zeta1"], vis.copy(), snapshots, header.get("meta", {}))


def _json_block(payload, pos):
    try:
        return json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TraceParseError(f"corrupt JSON block: {exc}", pos) from exc


class TraceRecorder:
    """Collects visits and snapshots while the engine runs."""

    def __init__(self, state):
        self.state = state
        self._chunks = []
        self.snapshots = []

    def visit_logger(self, k):
        def log(agents, h, s, a, r, s_next, eta):
            rec = np.empty(len(agents), dtype=VISIT_DTYPE)
            rec["k"], rec["m"], rec["h"] = k, agents, h
            rec["s"], rec["a"], rec["r"] = s, a, r
            rec["s_next"], rec["eta"] = s_next, eta
            self._chunks.append(rec)
        return log

    def snapshot(self, state):
        self.snapshots.append({
            "k": state.episode, "sync_index": state.sync_index,
            "Q": state.global_Q.copy(), "V": state.global_V.copy(),
            "policy": state.global_policy.copy(), "N": state.counters.N_global.copy(),
            "n_round": state.counters.n_round.copy(), "B": state.last_penalty.copy(),
            "alpha": state.last_alpha.copy(),
        })

    def finish(self, seeds=()):
        st = self.state
        vis = np.concatenate(self._chunks) if self._chunks else np.zeros(0, dtype=VISIT_DTYPE)
        return RunTrace(st.S, st.A, st.H, st.M, st.K, st.schedule, st.hyper.to_dict(),
                        st.zeta1, vis, self.snapshots, {"seeds": list(seeds)})
