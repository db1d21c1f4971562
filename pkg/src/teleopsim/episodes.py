"""Episode recording and storage.

One episode is a line-delimited JSON file: a header line carrying version,
seed and config hash, one record line per control tick, and an optional
trailing summary line. Records are appendable during a live run and the
whole file round-trips losslessly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EpisodeParseError
from .geometry import Pose, Quat
from .phases import Phase, phase_from_label

FORMAT_VERSION = 1


def pose_to_json(pose: Pose) -> dict:
    return {
        "p": [float(v) for v in pose.position],
        "q": [pose.orientation.w, pose.orientation.x, pose.orientation.y, pose.orientation.z],
    }


def pose_from_json(d: dict) -> Pose:
    return Pose(np.asarray(d["p"], dtype=np.float64), Quat.from_array(d["q"]))


@dataclass(frozen=True)
class DemonstrationRecord:
    """One synchronized control tick of the full pipeline."""

    t: int
    dt: float
    leader_probe: Pose
    leader_needle: Pose
    target_probe: Pose       # post-mapping commanded targets
    target_needle: Pose
    setpoint_probe: Pose     # post-smoothing, post-gate executed setpoints
    setpoint_needle: Pose
    follower_probe: Pose     # post-dynamics
    follower_needle: Pose
    us_features: np.ndarray
    plane_quality: float
    contact: bool
    phase: Phase
    verdict: str
    d_min: float

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "dt": self.dt,
            "leader": {"probe": pose_to_json(self.leader_probe),
                       "needle": pose_to_json(self.leader_needle)},
            "target": {"probe": pose_to_json(self.target_probe),
                       "needle": pose_to_json(self.target_needle)},
            "setpoint": {"probe": pose_to_json(self.setpoint_probe),
                         "needle": pose_to_json(self.setpoint_needle)},
            "follower": {"probe": pose_to_json(self.follower_probe),
                         "needle": pose_to_json(self.follower_needle)},
            "obs": {
                "features": [float(v) for v in self.us_features],
                "plane_quality": self.plane_quality,
                "contact": self.contact,
            },
            "phase": self.phase.label,
            "verdict": self.verdict,
            "d_min": self.d_min,
        }

    @staticmethod
    def from_json(d: dict) -> "DemonstrationRecord":
        return DemonstrationRecord(
            t=int(d["t"]),
            dt=float(d["dt"]),
            leader_probe=pose_from_json(d["leader"]["probe"]),
            leader_needle=pose_from_json(d["leader"]["needle"]),
            target_probe=pose_from_json(d["target"]["probe"]),
            target_needle=pose_from_json(d["target"]["needle"]),
            setpoint_probe=pose_from_json(d["setpoint"]["probe"]),
            setpoint_needle=pose_from_json(d["setpoint"]["needle"]),
            follower_probe=pose_from_json(d["follower"]["probe"]),
            follower_needle=pose_from_json(d["follower"]["needle"]),
            us_features=np.asarray(d["obs"]["features"], dtype=np.float64),
            plane_quality=float(d["obs"]["plane_quality"]),
            contact=bool(d["obs"]["contact"]),
            phase=phase_from_label(d["phase"]),
            verdict=str(d["verdict"]),
            d_min=float(d["d_min"]),
        )


@dataclass
class EpisodeLog:
    records: list[DemonstrationRecord] = field(default_factory=list)
    seed: int = 0
    config_hash: str = ""
    summary: dict = field(default_factory=dict)
    config_hash_mismatch: bool = False

    def append(self, rec: DemonstrationRecord):
        if self.records and rec.t <= self.records[-1].t:
            raise ValueError("timestep indices must be strictly increasing")
        self.records.append(rec)

    @property
    def dt(self) -> float:
        return self.records[0].dt if self.records else 0.0

    def duration(self) -> float:
        return sum(r.dt for r in self.records)

    def phase_transitions(self) -> list[tuple[int, Phase]]:
        """(tick, phase) at every phase entry, derived from the records."""
        out: list[tuple[int, Phase]] = []
        prev: Phase | None = None
        for r in self.records:
            if r.phase != prev:
                out.append((r.t, r.phase))
                prev = r.phase
        return out


class EpisodeWriter:
    """Appends header + records to a file as the run progresses."""

    def __init__(self, path, seed: int, config_hash: str, config: dict | None = None):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")
        header = {
            "kind": "header",
            "version": FORMAT_VERSION,
            "seed": seed,
            "config_hash": config_hash,
        }
        if config is not None:
            header["config"] = config
        self._fh.write(json.dumps(header) + "\n")
        self.count = 0

    def append(self, rec: DemonstrationRecord):
        payload = rec.to_json()
        payload["kind"] = "record"
        self._fh.write(json.dumps(payload) + "\n")
        self.count += 1

    def close(self, summary: dict | None = None):
        if self._fh.closed:
            return
        if summary is not None:
            self._fh.write(json.dumps({"kind": "summary", **summary}) + "\n")
        self._fh.close()


def write_episode(path, log: EpisodeLog, config: dict | None = None):
    writer = EpisodeWriter(path, log.seed, log.config_hash, config)
    for rec in log.records:
        writer.append(rec)
    writer.close(summary=log.summary or None)


def read_episode(path, expected_config_hash: str | None = None) -> EpisodeLog:
    """Parse an episode file; raises EpisodeParseError naming the offending
    record index on corruption or version mismatch."""
    log = EpisodeLog()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise EpisodeParseError("empty episode file", record_index=0)

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise EpisodeParseError(f"corrupt header: {e}", record_index=0) from e
    if header.get("kind") != "header":
        raise EpisodeParseError("first line is not a header", record_index=0)
    if header.get("version") != FORMAT_VERSION:
        raise EpisodeParseError(
            f"unsupported episode version {header.get('version')!r}", record_index=0
        )
    log.seed = int(header.get("seed", 0))
    log.config_hash = str(header.get("config_hash", ""))
    if expected_config_hash is not None and log.config_hash != expected_config_hash:
        log.config_hash_mismatch = True

    index = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise EpisodeParseError(
                f"corrupt record at index {index} (line {lineno}): {e}", record_index=index
            ) from e
        kind = payload.get("kind")
        if kind == "summary":
            payload.pop("kind")
            log.summary = payload
            continue
        if kind != "record":
            raise EpisodeParseError(
                f"unexpected line kind {kind!r} at record index {index}", record_index=index
            )
        try:
            log.append(DemonstrationRecord.from_json(payload))
        except (KeyError, TypeError, ValueError) as e:
            raise EpisodeParseError(
                f"malformed record at index {index}: {e}", record_index=index
            ) from e
        index += 1
    return log
