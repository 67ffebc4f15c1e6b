"""Synthetic driving scenes with ground truth and a controllable noisy teacher.

Agents follow constant-velocity or constant-turn motion.  A noise model
turns the exact scene into detector-like pseudo-labels: per-object dropouts,
Gaussian perturbations, uniform clutter boxes, and score sampling.

Randomness comes from Philox, a counter-based 64-bit generator, keyed per
(seed, scene, frame, object): every object and every frame draws from its
own stream, so results do not depend on generation order and scenes can be
produced in parallel or regenerated individually, bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Box3D, Frame, Scene, normalize_angle

_M64 = (1 << 64) - 1

#: Default box extents (l, w, h) per class id.
DEFAULT_EXTENTS: dict[int, tuple[float, float, float]] = {
    0: (4.5, 2.0, 1.7),
    1: (8.0, 2.5, 3.0),
    2: (11.0, 2.9, 3.3),
}

#: Class frequencies used for random agents and clutter boxes.
CLASS_WEIGHTS: tuple[tuple[int, float], ...] = ((0, 0.7), (1, 0.2), (2, 0.1))

#: Clutter (false positive) velocity spread, m/s per axis.
FP_VEL_SIGMA = 1.0


def _mix64(h: int) -> int:
    """SplitMix64 finalizer; a cheap, well-mixed 64-bit hash step."""
    h = (h + 0x9E3779B97F4A7C15) & _M64
    z = h
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def stream_key(*parts: object) -> int:
    """Fold arbitrary parts (ints, strings) into a 64-bit stream key."""
    h = 0
    for part in parts:
        if isinstance(part, int):
            h = _mix64(h ^ (part & _M64))
        else:
            for byte in str(part).encode("utf-8"):
                h = _mix64(h ^ byte)
    return h


def substream(seed: int, *parts: object) -> np.random.Generator:
    """Independent generator for the stream named by ``parts`` under ``seed``."""
    key = np.array([seed & _M64, stream_key(*parts)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class ConstantVelocity:
    speed: float
    heading: float


@dataclass(frozen=True)
class ConstantTurn:
    speed: float
    turn_rate: float  # rad/s, positive turns left
    heading: float = 0.0


Motion = ConstantVelocity | ConstantTurn


@dataclass(frozen=True)
class AgentSpec:
    """One simulated object: class, motion, lifetime, and footprint."""

    agent_id: int
    class_id: int
    motion: Motion
    spawn_frame: int
    despawn_frame: int  # exclusive
    extent: tuple[float, float, float]
    position: tuple[float, float]  # BEV center at spawn

    def __post_init__(self) -> None:
        if self.spawn_frame < 0 or self.despawn_frame <= self.spawn_frame:
            raise ValueError("need 0 <= spawn_frame < despawn_frame")
        if self.motion.speed < 0.0:
            raise ValueError("speed must be >= 0")
        if any(e <= 0.0 for e in self.extent):
            raise ValueError("extents must be positive")


def agent_pose(spec: AgentSpec, elapsed: float) -> tuple[float, float, float, float, float]:
    """(x, y, yaw, vx, vy) of an agent ``elapsed`` seconds after spawning."""
    m = spec.motion
    x0, y0 = spec.position
    if isinstance(m, ConstantTurn) and m.turn_rate != 0.0:
        radius = m.speed / m.turn_rate
        a0 = m.heading
        a1 = a0 + m.turn_rate * elapsed
        x = x0 + radius * (math.sin(a1) - math.sin(a0))
        y = y0 - radius * (math.cos(a1) - math.cos(a0))
        yaw = normalize_angle(a1)
    else:
        heading = m.heading
        x = x0 + m.speed * math.cos(heading) * elapsed
        y = y0 + m.speed * math.sin(heading) * elapsed
        yaw = normalize_angle(heading)
    return x, y, yaw, m.speed * math.cos(yaw), m.speed * math.sin(yaw)


def agent_box(spec: AgentSpec, elapsed: float) -> Box3D:
    x, y, yaw, vx, vy = agent_pose(spec, elapsed)
    l, w, h = spec.extent
    return Box3D(x, y, 0.5 * h, l, w, h, yaw, spec.class_id, 1.0, vx, vy)


def generate_scene(agents: Sequence[AgentSpec], n_frames: int, dt: float,
                   scene_id: str = "scene-0000", labeled: bool = False) -> Scene:
    """Exact ground-truth scene: unit scores, true velocities, no noise.

    Boxes within a frame appear in agent-id order.
    """
    if n_frames < 1 or dt <= 0.0:
        raise ValueError("need n_frames >= 1 and dt > 0")
    ordered = sorted(agents, key=lambda a: a.agent_id)
    frames = []
    for f in range(n_frames):
        boxes = [agent_box(a, (f - a.spawn_frame) * dt)
                 for a in ordered if a.spawn_frame <= f < a.despawn_frame]
        frames.append(Frame(scene_id, f, f * dt, tuple(boxes)))
    return Scene(scene_id, dt, tuple(frames), labeled)


@dataclass(frozen=True)
class ScoreModel:
    """Gaussian confidence model, clipped to [0, 1]."""

    tp_mean: float = 0.7
    tp_std: float = 0.15
    fp_mean: float = 0.4
    fp_std: float = 0.15

    def sample(self, rng: np.random.Generator, genuine: bool) -> float:
        mean, std = (self.tp_mean, self.tp_std) if genuine else (self.fp_mean, self.fp_std)
        return float(np.clip(rng.normal(mean, std), 0.0, 1.0))


@dataclass(frozen=True)
class NoiseModel:
    """How a teacher detector corrupts the exact scene."""

    fn_rate: float = 0.25
    fp_per_frame: float = 2.0
    sigma_pos: float = 0.3
    sigma_yaw: float = 0.05
    sigma_extent: float = 0.0
    sigma_vel: float = 0.5
    score_model: ScoreModel = field(default_factory=ScoreModel)
    seed: int = 0
    bounds: float = 200.0  # side of the square clutter region, centered at 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.fn_rate <= 1.0):
            raise ValueError("fn_rate must lie in [0, 1]")
        if self.fp_per_frame < 0.0:
            raise ValueError("fp_per_frame must be >= 0")
        for name in ("sigma_pos", "sigma_yaw", "sigma_extent", "sigma_vel"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.bounds <= 0.0:
            raise ValueError("bounds must be positive")


@dataclass(frozen=True)
class GtObject:
    """One ground-truth object at one frame, with its detection outcome."""

    agent_id: int
    detected: bool
    box: Box3D


@dataclass(frozen=True)
class FrameTruth:
    """Ground-truth sidecar for one corrupted frame.

    ``detection_sources`` aligns with the corrupted frame's boxes: the source
    agent id for perturbed true positives, None for clutter.
    """

    frame_index: int
    timestamp: float
    objects: tuple[GtObject, ...]
    detection_sources: tuple[int | None, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.objects, tuple):
            object.__setattr__(self, "objects", tuple(self.objects))
        if not isinstance(self.detection_sources, tuple):
            object.__setattr__(self, "detection_sources", tuple(self.detection_sources))


@dataclass(frozen=True)
class SceneTruth:
    scene_id: str
    dt: float
    frames: tuple[FrameTruth, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.frames, tuple):
            object.__setattr__(self, "frames", tuple(self.frames))


_FP_CLASS_IDS = np.array([cid for cid, _ in CLASS_WEIGHTS])
_FP_CLASS_P = np.array([p for _, p in CLASS_WEIGHTS])
_FP_CLASS_P = _FP_CLASS_P / _FP_CLASS_P.sum()


def _corrupt_object(gt_box: Box3D, rng: np.random.Generator, noise: NoiseModel) -> Box3D:
    dx, dy, dz = rng.normal(0.0, noise.sigma_pos, size=3)
    dyaw = rng.normal(0.0, noise.sigma_yaw)
    dl, dw, dh = rng.normal(0.0, noise.sigma_extent, size=3)
    dvx, dvy = rng.normal(0.0, noise.sigma_vel, size=2)
    score = noise.score_model.sample(rng, genuine=True)
    return Box3D(
        gt_box.x + dx, gt_box.y + dy, gt_box.z + dz,
        max(gt_box.l + dl, 0.05), max(gt_box.w + dw, 0.05), max(gt_box.h + dh, 0.05),
        normalize_angle(gt_box.yaw + dyaw), gt_box.class_id, score,
        gt_box.vx + dvx, gt_box.vy + dvy)


def _clutter_box(rng: np.random.Generator, noise: NoiseModel) -> Box3D:
    half = 0.5 * noise.bounds
    x = rng.uniform(-half, half)
    y = rng.uniform(-half, half)
    yaw = rng.uniform(-math.pi, math.pi)
    class_id = _weighted_class(rng)
    vx, vy = rng.normal(0.0, FP_VEL_SIGMA, size=2)
    score = noise.score_model.sample(rng, genuine=False)
    l, w, h = DEFAULT_EXTENTS[class_id]
    return Box3D(x, y, 0.5 * h, l, w, h, normalize_angle(yaw), class_id, score, vx, vy)


def corrupt(gt: Scene, noise: NoiseModel,
            agents: Sequence[AgentSpec] | None = None) -> tuple[Scene, SceneTruth]:
    """Corrupt an exact scene into pseudo-labels plus a ground-truth sidecar.

    With ``agents`` given, sidecar objects carry true agent ids (required
    for cross-frame analyses like recall recovery); otherwise ids fall back
    to the per-frame box position.  With an all-zero noise model the output
    boxes equal the ground truth except for their scores.
    """
    by_frame: list[list[tuple[int, Box3D]]] = []
    if agents is not None:
        ordered = sorted(agents, key=lambda a: a.agent_id)
        for frame in gt.frames:
            present = [a for a in ordered
                       if a.spawn_frame <= frame.frame_index < a.despawn_frame]
            if len(present) != len(frame.boxes):
                raise ValueError(
                    f"agent specs disagree with frame {frame.frame_index}: "
                    f"{len(present)} agents vs {len(frame.boxes)} boxes")
            by_frame.append([(a.agent_id, b) for a, b in zip(present, frame.boxes)])
    else:
        by_frame = [list(enumerate(frame.boxes)) for frame in gt.frames]

    frames: list[Frame] = []
    truths: list[FrameTruth] = []
    for frame, members in zip(gt.frames, by_frame):
        boxes: list[Box3D] = []
        sources: list[int | None] = []
        objects: list[GtObject] = []
        for agent_id, gt_box in members:
            rng = substream(noise.seed, gt.scene_id, frame.frame_index, "obj", agent_id)
            dropped = bool(rng.uniform() < noise.fn_rate)
            if not dropped:
                boxes.append(_corrupt_object(gt_box, rng, noise))
                sources.append(agent_id)
            objects.append(GtObject(agent_id, not dropped, gt_box))
        fp_rng = substream(noise.seed, gt.scene_id, frame.frame_index, "fp")
        for _ in range(int(fp_rng.poisson(noise.fp_per_frame))):
            boxes.append(_clutter_box(fp_rng, noise))
            sources.append(None)
        frames.append(Frame(gt.scene_id, frame.frame_index, frame.timestamp, tuple(boxes)))
        truths.append(FrameTruth(frame.frame_index, frame.timestamp,
                                 tuple(objects), tuple(sources)))
    scene = Scene(gt.scene_id, gt.dt, tuple(frames), labeled=False)
    return scene, SceneTruth(gt.scene_id, gt.dt, tuple(truths))


def _weighted_class(rng: np.random.Generator) -> int:
    return int(_FP_CLASS_IDS[rng.choice(len(_FP_CLASS_IDS), p=_FP_CLASS_P)])


def random_agents(seed: int, scene_index: object, n_agents: int, n_frames: int,
                  dt: float, bounds: float = 200.0) -> list[AgentSpec]:
    """Deterministically sample a mixed population of agents for one scene.

    Roughly 30% turn at a constant rate, the rest drive straight; about one
    agent in five spawns late or despawns early to exercise track births and
    deaths.
    """
    rng = substream(seed, "agents", scene_index)
    agents = []
    for i in range(n_agents):
        class_id = _weighted_class(rng)
        x = rng.uniform(-0.35 * bounds, 0.35 * bounds)
        y = rng.uniform(-0.35 * bounds, 0.35 * bounds)
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(2.0, 10.0)
        if rng.uniform() < 0.3:
            rate = rng.uniform(0.05, 0.25) * (1.0 if rng.uniform() < 0.5 else -1.0)
            motion: Motion = ConstantTurn(speed, rate, heading)
        else:
            motion = ConstantVelocity(speed, heading)
        spawn, despawn = 0, n_frames
        min_span = min(8, n_frames)
        if n_frames > min_span and rng.uniform() < 0.2:
            spawn = int(rng.integers(0, n_frames - min_span + 1))
            despawn = int(rng.integers(spawn + min_span, n_frames + 1))
        agents.append(AgentSpec(i, class_id, motion, spawn, despawn,
                                DEFAULT_EXTENTS[class_id], (x, y)))
    return agents


def separated_agents(seed: int, scene_index: int, n_agents: int, n_frames: int,
                     dt: float, min_separation: float = 12.0,
                     bounds: float = 200.0, max_tries: int = 2000) -> list[AgentSpec]:
    """Full-span agents whose trajectories never come near each other.

    Candidates are rejection-sampled until every pair stays farther apart
    than ``min_separation`` at every frame -- the regime in which greedy
    gating can be shown to never switch identities.
    """
    rng = substream(seed, "separated-agents", scene_index)
    agents: list[AgentSpec] = []
    paths: list[np.ndarray] = []
    tries = 0
    while len(agents) < n_agents:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not place separated agents; relax the constraints")
        class_id = _weighted_class(rng)
        x = rng.uniform(-0.4 * bounds, 0.4 * bounds)
        y = rng.uniform(-0.4 * bounds, 0.4 * bounds)
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(2.0, 8.0)
        if rng.uniform() < 0.3:
            rate = rng.uniform(0.05, 0.2) * (1.0 if rng.uniform() < 0.5 else -1.0)
            motion: Motion = ConstantTurn(speed, rate, heading)
        else:
            motion = ConstantVelocity(speed, heading)
        spec = AgentSpec(len(agents), class_id, motion, 0, n_frames,
                         DEFAULT_EXTENTS[class_id], (x, y))
        path = np.array([agent_pose(spec, f * dt)[:2] for f in range(n_frames)])
        if all(np.hypot(*(path - other).T).min() > min_separation for other in paths):
            agents.append(spec)
            paths.append(path)
    return agents


def default_noise(seed: int = 0) -> NoiseModel:
    """The stock teacher noise profile."""
    return NoiseModel(seed=seed)


def make_dataset(n_scenes: int, seed: int, *, n_frames: int = 40, n_agents: int = 12,
                 dt: float = 0.5, noise: NoiseModel | None = None,
                 scene_prefix: str = "scene") -> list[tuple[Scene, SceneTruth]]:
    """Simulate ``n_scenes`` corrupted scenes with their ground-truth sidecars.

    Agent populations derive from ``seed`` and the scene index; corruption
    uses the noise model's own seed (set to ``seed`` when ``noise`` is
    omitted).  Scene ids are ``{prefix}-0000`` onward.
    """
    if noise is None:
        noise = default_noise(seed)
    out = []
    for i in range(n_scenes):
        agents = random_agents(seed, i, n_agents, n_frames, dt)
        gt = generate_scene(agents, n_frames, dt, f"{scene_prefix}-{i:04d}")
        out.append(corrupt(gt, noise, agents))
    return out


def make_labeled_scenes(n_scenes: int, seed: int, *, n_frames: int = 40,
                        n_agents: int = 12, dt: float = 0.5,
                        scene_prefix: str = "labeled") -> list[Scene]:
    """Exact scenes flagged as labeled data, for pairing during export."""
    out = []
    for i in range(n_scenes):
        agents = random_agents(seed, f"{scene_prefix}-{i}", n_agents, n_frames, dt)
        out.append(generate_scene(agents, n_frames, dt, f"{scene_prefix}-{i:04d}",
                                  labeled=True))
    return out
