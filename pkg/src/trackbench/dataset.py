"""Episode recording, JSONL serialization, and training-window extraction."""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass, replace

import numpy as np

from .estimation import FilterBank
from .geometry import to_agent_frame
from .world import AgentPose

FORMAT_VERSION = 1


class NonMonotonicTime(Exception):
    """Step records must arrive with strictly increasing timestamps."""


class TooManyTargets(Exception):
    """More beliefs than feature slots."""


class MalformedEpisode(Exception):
    """Episode file violates the JSONL schema."""


class VersionMismatch(Exception):
    """Episode file was written with an incompatible format version."""


@dataclass(frozen=True)
class FeatureSlot:
    """One target slot: agent-frame mean, scaled upper-triangular covariance, mask."""

    mu: tuple[float, float]
    sigma: tuple[float, float, float]
    mask: int


@dataclass
class StepRecord:
    t: int
    pose: tuple[float, float, float]
    ego_map: np.ndarray
    features: list[FeatureSlot]
    action: tuple[float, float] | None
    mode: str
    expert_id: str

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepRecord):
            return NotImplemented
        return (self.t == other.t and self.pose == other.pose
                and np.array_equal(self.ego_map, other.ego_map)
                and self.features == other.features
                and self.action == other.action
                and self.mode == other.mode
                and self.expert_id == other.expert_id)


@dataclass(frozen=True)
class EpisodeHeader:
    map_path: str
    resolution: float
    n_max: int
    ego_size: int
    fov_radius: float
    fov_half_angle: float
    seed: int
    expert_id: str
    n_targets: int
    version: int = FORMAT_VERSION


@dataclass
class EpisodeRecord:
    header: EpisodeHeader
    steps: list[StepRecord]


@dataclass
class TrainingWindow:
    """Observation context plus the consecutive expert action sequence that follows."""

    observations: list[StepRecord]
    actions: list[tuple[float, float]]

    @property
    def decision_t(self) -> int:
        return self.observations[-1].t


class EpisodeBuffer:
    """Append-only step log with strictly increasing timestamps."""

    def __init__(self):
        self.records: list[StepRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: StepRecord) -> None:
        if self.records and record.t <= self.records[-1].t:
            raise NonMonotonicTime(
                f"step t={record.t} after t={self.records[-1].t}")
        self.records.append(record)


def record_step(buffer: EpisodeBuffer, record: StepRecord) -> None:
    buffer.add(record)


def make_target_features(bank: FilterBank, pose: AgentPose, n_max: int) -> list[FeatureSlot]:
    """Fixed-size slot list: known beliefs by ascending id, then placeholders.

    Means are expressed in the agent frame; covariances are scaled by
    log det(sigma_bar).  A slot is masked when the log det of its stored
    (scaled) covariance reaches 1, which holds for every placeholder and for
    beliefs that have grown as uninformative as the ceiling.
    """
    if len(bank.beliefs) > n_max:
        raise TooManyTargets(f"{len(bank.beliefs)} beliefs > {n_max} slots")
    scale = float(np.linalg.slogdet(bank.sigma_bar)[1])
    pose_t = pose.as_tuple()

    def slot(mu_world: np.ndarray, cov: np.ndarray) -> FeatureSlot:
        mu = to_agent_frame(pose_t, mu_world)
        scaled = cov[:2, :2] / scale
        sign, logdet = np.linalg.slogdet(scaled)
        mask = 1 if (sign > 0 and logdet >= 1.0) else 0
        return FeatureSlot((float(mu[0]), float(mu[1])),
                           (float(scaled[0, 0]), float(scaled[0, 1]), float(scaled[1, 1])),
                           mask)

    slots = [slot(bank.beliefs[j].position(), bank.beliefs[j].sigma)
             for j in sorted(bank.beliefs)]
    while len(slots) < n_max:
        placeholder = slot(np.zeros(2), bank.sigma_bar)
        slots.append(replace(placeholder, mask=1))
    return slots


def _header_to_json(h: EpisodeHeader) -> dict:
    return {
        "version": h.version,
        "map_path": h.map_path,
        "resolution": h.resolution,
        "N_max": h.n_max,
        "ego_size": h.ego_size,
        "fov": {"radius": h.fov_radius, "half_angle": h.fov_half_angle},
        "seed": h.seed,
        "expert_id": h.expert_id,
        "N_y": h.n_targets,
    }


def _step_to_json(s: StepRecord) -> dict:
    return {
        "t": s.t,
        "pose": list(s.pose),
        "ego_map": base64.b64encode(np.ascontiguousarray(s.ego_map, dtype=np.uint8)
                                    .tobytes()).decode("ascii"),
        "features": [{"mu": list(f.mu), "sigma": list(f.sigma), "mask": f.mask}
                     for f in s.features],
        "action": None if s.action is None else list(s.action),
        "mode": s.mode,
        "expert_id": s.expert_id,
    }


def write_episode(path, record: EpisodeRecord) -> None:
    if not record.steps:
        raise ValueError("refusing to write an empty episode")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(_header_to_json(record.header), separators=(",", ":")) + "\n")
        for step in record.steps:
            f.write(json.dumps(_step_to_json(step), separators=(",", ":")) + "\n")


def _parse_step(obj: dict, ego_size: int, line_no: int) -> StepRecord:
    try:
        raw = base64.b64decode(obj["ego_map"], validate=True)
        ego = np.frombuffer(raw, dtype=np.uint8).reshape(ego_size, ego_size).copy()
        features = [FeatureSlot(tuple(float(v) for v in f["mu"]),
                                tuple(float(v) for v in f["sigma"]),
                                int(f["mask"]))
                    for f in obj["features"]]
        action = obj["action"]
        return StepRecord(
            t=int(obj["t"]),
            pose=tuple(float(v) for v in obj["pose"]),
            ego_map=ego,
            features=features,
            action=None if action is None else (float(action[0]), float(action[1])),
            mode=str(obj["mode"]),
            expert_id=str(obj["expert_id"]),
        )
    except (KeyError, TypeError, ValueError, binascii.Error) as e:
        raise MalformedEpisode(f"line {line_no}: {e}") from e


def read_episode(path) -> EpisodeRecord:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise MalformedEpisode("empty episode file")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise MalformedEpisode(f"line 1: {e}") from e
    if not isinstance(head, dict) or "version" not in head:
        raise MalformedEpisode("line 1: missing version field")
    if head["version"] != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported episode version {head['version']!r}")
    try:
        header = EpisodeHeader(
            map_path=str(head["map_path"]),
            resolution=float(head["resolution"]),
            n_max=int(head["N_max"]),
            ego_size=int(head["ego_size"]),
            fov_radius=float(head["fov"]["radius"]),
            fov_half_angle=float(head["fov"]["half_angle"]),
            seed=int(head["seed"]),
            expert_id=str(head["expert_id"]),
            n_targets=int(head["N_y"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedEpisode(f"line 1: {e}") from e
    steps = []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedEpisode(f"line {i}: {e}") from e
        steps.append(_parse_step(obj, header.ego_size, i))
    return EpisodeRecord(header, steps)


def build_training_windows(record: EpisodeRecord, t_o: int, t_a: int) -> list[TrainingWindow]:
    """All (T_o observations, T_a actions) windows fully inside the episode.

    For an episode of length L this yields L - T_a - T_o + 2 windows (none when
    negative); the decision step contributes both the last observation and the
    first action.
    """
    if t_o < 1 or t_a < 1:
        raise ValueError("T_o and T_a must be at least 1")
    steps = record.steps
    for a, b in zip(steps, steps[1:]):
        if b.t != a.t + 1:
            raise ValueError("episode timesteps must be consecutive")
    windows = []
    length = len(steps)
    for i in range(t_o - 1, length - t_a + 1):
        obs = [replace(s, action=None) for s in steps[i - t_o + 1:i + 1]]
        actions = [s.action for s in steps[i:i + t_a]]
        if any(a is None for a in actions):
            raise ValueError("episode steps must carry actions")
        windows.append(TrainingWindow(obs, list(actions)))
    return windows


class DatasetWriter:
    """Writes numbered episode files plus a manifest into one directory."""

    def __init__(self, out_dir):
        from pathlib import Path as _P
        self.out_dir = _P(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.entries: list[dict] = []

    def add_episode(self, record: EpisodeRecord) -> str:
        name = f"episode_{len(self.files):05d}.jsonl"
        write_episode(self.out_dir / name, record)
        self.files.append(name)
        self.entries.append({
            "file": name,
            "expert_id": record.header.expert_id,
            "seed": record.header.seed,
            "steps": len(record.steps),
        })
        return name

    def finalize(self, config: dict) -> None:
        manifest = {"files": self.files, "episodes": self.entries, "config": config}
        with open(self.out_dir / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")


def episode_action_array(record: EpisodeRecord) -> np.ndarray:
    actions = [s.action for s in record.steps]
    if any(a is None for a in actions):
        raise ValueError("episode steps must carry actions")
    return np.asarray(actions, dtype=float)
