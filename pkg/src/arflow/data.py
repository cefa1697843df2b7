"""Synthetic paired action-reaction dataset and motion file I/O.

Three scripted two-body scenarios provide labeled (action, reaction) pairs:

* ``push_retreat`` — the actor closes in and shoves; the reactor backs away
  along the approach line and leans back, too slowly to always avoid
  contact in near-contact configurations.
* ``wave_mirror``  — the actor swings an arm sinusoidally; the reactor
  mirrors the swing at the same frames.
* ``kick_dodge``   — the actor lunges with a sharp limb swing; the reactor
  steps sideways, perpendicular to the approach line.

Every reactor frame depends only on actor frames up to the same index, so
the responses are learnable by a causal model.  The ``contact_fraction``
share of samples starts within interaction range (guidance has measurable
effect there); the rest starts several meters apart, far enough that the
bodies can never touch.

Motion files are line-delimited JSON; see README "Motion interchange file".
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import InvalidConfig, SchemaError

SCENARIOS = ("push_retreat", "wave_mirror", "kick_dodge")
FILE_VERSION = 1
DEFAULT_FPS = 20.0
DEFAULT_FRAMES = 16
DEFAULT_JOINTS = 5
DEFAULT_PAIRS = 2000
TEST_FRACTION = 0.1


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    frames: int = DEFAULT_FRAMES
    joints: int = DEFAULT_JOINTS
    noise: float = 0.02
    contact_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidConfig(f"scenario must be one of {SCENARIOS}")
        if self.frames < 2:
            raise InvalidConfig("frames must be >= 2")
        if self.joints < 3:
            raise InvalidConfig("need at least 3 joints (root, torso, limb)")
        if not 0.0 <= self.contact_fraction <= 1.0:
            raise InvalidConfig("contact_fraction must be in [0, 1]")
        if self.noise < 0.0:
            raise InvalidConfig("noise must be >= 0")


@dataclass
class InteractionSample:
    actor: np.ndarray
    reactor: np.ndarray
    label: int
    seed_used: tuple[int, int, int]


def default_skeleton(joints: int = DEFAULT_JOINTS) -> geo.Skeleton:
    """Capsule body used by the synthetic scenarios.

    ``joints = 5`` builds a torso-head-arm tree; other joint counts fall
    back to a simple chain with interpolated radii.
    """
    if joints == 5:
        return geo.Skeleton(
            parents=(-1, 0, 1, 1, 3),
            offsets=np.array([[0.0, 0.0, 0.0],
                              [0.0, 0.0, 0.30],
                              [0.0, 0.0, 0.25],
                              [0.05, 0.0, 0.28],
                              [0.28, 0.0, 0.0]]),
            radii=np.array([0.12, 0.09, 0.06, 0.05]),
        )
    if joints < 2:
        raise InvalidConfig("need at least 2 joints for a capsule body")
    offsets = np.zeros((joints, 3))
    offsets[1:, 2] = 0.25
    return geo.Skeleton(
        parents=tuple([-1] + list(range(joints - 1))),
        offsets=offsets,
        radii=np.linspace(0.12, 0.05, joints - 1),
    )


# ---------------------------------------------------------------------------
# Pose construction helpers
# ---------------------------------------------------------------------------

def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    kx = np.array([[0.0, -axis[2], axis[1]],
                   [axis[2], 0.0, -axis[0]],
                   [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def _yaw_facing(direction: np.ndarray) -> np.ndarray:
    """Rotation about z mapping the local +x axis onto a horizontal direction."""
    return _rotation_about(np.array([0.0, 0.0, 1.0]),
                           float(np.arctan2(direction[1], direction[0])))


_CHEST, _SHOULDER, _LIMB = "chest", "shoulder", "limb"


def _pose_joints(skel: geo.Skeleton) -> dict[str, int]:
    k = skel.joint_count
    return {_CHEST: 1, _SHOULDER: k - 2, _LIMB: k - 1}


def _build_motion(skel: geo.Skeleton, root_pos: np.ndarray, facing: np.ndarray,
                  joint_angles: dict[int, tuple[np.ndarray, np.ndarray]]
                  ) -> np.ndarray:
    """Assemble a motion from root positions, a facing direction, and
    per-joint (axis, angle-series) rotations."""
    h = root_pos.shape[0]
    root6 = geo.rot6d_encode(_yaw_facing(facing))
    frames = []
    for i in range(h):
        frame = geo.identity_frame(skel)
        frame.root_rot = root6.copy()
        frame.root_trans = root_pos[i]
        for j, (axis, series) in joint_angles.items():
            frame.joint_rot[j] = geo.rot6d_encode(_rotation_about(axis, series[i]))
        frames.append(frame)
    return geo.motion_from_frames(skel, frames)


def _bump(tau: np.ndarray, center: float = 0.5, width: float = 0.18) -> np.ndarray:
    return np.exp(-(((tau - center) / width) ** 2))


# ---------------------------------------------------------------------------
# Scenario scripts
# ---------------------------------------------------------------------------

_ARM_REST = np.pi / 2  # arms hang down; raising swings them toward the other body
_Y_AXIS = np.array([0.0, 1.0, 0.0])
_Z_AXIS = np.array([0.0, 0.0, 1.0])


def _scenario_frame(cfg: ScenarioConfig, rng: np.random.Generator,
                    near_range: tuple[float, float]):
    """Geometry shared by all scenarios: where the two bodies start."""
    near = rng.random() < cfg.contact_fraction
    angle = rng.uniform(0.0, 2.0 * np.pi)
    d = np.array([np.cos(angle), np.sin(angle), 0.0])   # reactor -> actor
    e = np.array([-d[1], d[0], 0.0])                    # horizontal perpendicular
    r0 = np.array([0.0, 0.0, 0.9]) + np.concatenate([rng.uniform(-0.05, 0.05, 2),
                                                     [0.0]])
    sep = rng.uniform(*near_range) if near else rng.uniform(3.5, 4.5)
    a0 = r0 + sep * d
    tau = np.linspace(0.0, 1.0, cfg.frames)
    return near, d, e, r0, a0, sep, tau


def _noise_series(rng: np.random.Generator, cfg: ScenarioConfig, h: int) -> np.ndarray:
    return rng.normal(scale=cfg.noise, size=h)


def _push_retreat(cfg: ScenarioConfig, rng: np.random.Generator):
    near, d, e, r0, a0, sep, tau = _scenario_frame(cfg, rng, (0.45, 0.65))
    skel = default_skeleton(cfg.joints)
    jid = _pose_joints(skel)
    h = cfg.frames

    amp = sep + rng.uniform(0.0, 0.1) if near else rng.uniform(0.5, 1.0)
    raise_arm = rng.uniform(0.9, 1.4) * _bump(tau, center=rng.uniform(0.5, 0.7),
                                              width=0.3)
    actor_pos = a0[None, :] - (amp * tau)[:, None] * d[None, :]
    actor = _build_motion(skel, actor_pos, -d, {
        jid[_SHOULDER]: (_Y_AXIS, _ARM_REST - raise_arm),
        jid[_LIMB]: (_Y_AXIS, 0.3 * raise_arm),
    })

    k_push = rng.uniform(0.45, 0.6)
    lean_k = rng.uniform(0.2, 0.4)
    closure = amp * tau                       # how far the actor has closed in
    reactor_pos = r0[None, :] - (k_push * closure)[:, None] * d[None, :]
    reactor = _build_motion(skel, reactor_pos, d, {
        jid[_CHEST]: (e, lean_k * closure / max(amp, 1e-9)
                      + _noise_series(rng, cfg, h)),
        jid[_SHOULDER]: (_Y_AXIS, _ARM_REST + _noise_series(rng, cfg, h)),
        jid[_LIMB]: (_Y_AXIS, _noise_series(rng, cfg, h)),
    })
    return actor, reactor


def _wave_mirror(cfg: ScenarioConfig, rng: np.random.Generator):
    near, d, e, r0, a0, sep, tau = _scenario_frame(cfg, rng, (0.60, 0.80))
    skel = default_skeleton(cfg.joints)
    jid = _pose_joints(skel)
    h = cfg.frames

    amp = rng.uniform(1.0, 1.5)
    freq = rng.integers(1, 3)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    raise_arm = amp * (0.5 + 0.5 * np.sin(2.0 * np.pi * freq * tau + phase))
    sway = 0.03 * np.sin(2.0 * np.pi * tau + phase)

    actor_pos = a0[None, :] + sway[:, None] * e[None, :]
    actor = _build_motion(skel, actor_pos, -d, {
        jid[_SHOULDER]: (_Y_AXIS, _ARM_REST - raise_arm),
        jid[_LIMB]: (_Y_AXIS, 0.25 * raise_arm),
    })

    reactor_pos = np.tile(r0, (h, 1))
    reactor = _build_motion(skel, reactor_pos, d, {
        jid[_SHOULDER]: (_Y_AXIS, _ARM_REST - raise_arm + _noise_series(rng, cfg, h)),
        jid[_LIMB]: (_Y_AXIS, 0.25 * raise_arm + _noise_series(rng, cfg, h)),
        jid[_CHEST]: (e, _noise_series(rng, cfg, h)),
    })
    return actor, reactor


def _kick_dodge(cfg: ScenarioConfig, rng: np.random.Generator):
    near, d, e, r0, a0, sep, tau = _scenario_frame(cfg, rng, (0.5, 0.7))
    skel = default_skeleton(cfg.joints)
    jid = _pose_joints(skel)
    h = cfg.frames

    lunge_amp = sep - rng.uniform(0.05, 0.25) if near else rng.uniform(0.5, 0.8)
    bump = _bump(tau, center=rng.uniform(0.45, 0.55))
    kick = rng.uniform(1.0, 1.5) * bump
    actor_pos = a0[None, :] - (lunge_amp * bump)[:, None] * d[None, :]
    actor = _build_motion(skel, actor_pos, -d, {
        jid[_SHOULDER]: (_Y_AXIS, _ARM_REST - kick),
        jid[_LIMB]: (_Y_AXIS, 0.4 * kick),
    })

    dodge_amp = rng.uniform(0.25, 0.45)
    side = 1.0 if rng.random() < 0.5 else -1.0
    # dodge trails the kick by a couple of frames and stays displaced; the
    # lagged cumulative max is still causal in the actor frames
    lag = int(rng.integers(2, 4))
    delayed = np.concatenate([np.zeros(lag), bump[:-lag]]) if lag else bump
    follow = np.maximum.accumulate(delayed)
    reactor_pos = r0[None, :] + (side * dodge_amp * follow)[:, None] * e[None, :]
    reactor = _build_motion(skel, reactor_pos, d, {
        jid[_CHEST]: (d, side * 0.2 * follow + _noise_series(rng, cfg, h)),
        jid[_SHOULDER]: (_Y_AXIS, _ARM_REST + _noise_series(rng, cfg, h)),
        jid[_LIMB]: (_Y_AXIS, _noise_series(rng, cfg, h)),
    })
    return actor, reactor


_SCRIPTS = {"push_retreat": _push_retreat,
            "wave_mirror": _wave_mirror,
            "kick_dodge": _kick_dodge}


def generate_dataset(cfg: ScenarioConfig, count: int) -> list[InteractionSample]:
    """Seeded samples of one scenario; sample i only depends on (seed, label, i)."""
    if count < 1:
        raise InvalidConfig("count must be >= 1")
    label = SCENARIOS.index(cfg.scenario)
    script = _SCRIPTS[cfg.scenario]
    samples = []
    for i in range(count):
        rng = np.random.default_rng((cfg.seed, label, i))
        actor, reactor = script(cfg, rng)
        samples.append(InteractionSample(actor, reactor, label,
                                         (cfg.seed, label, i)))
    return samples


def generate_mixed(count: int, frames: int = DEFAULT_FRAMES,
                   joints: int = DEFAULT_JOINTS, noise: float = 0.02,
                   contact_fraction: float = 0.5, seed: int = 0,
                   scenario: str = "all") -> list[InteractionSample]:
    """Round-robin over the scenarios (or a single one when named)."""
    if count < 1:
        raise InvalidConfig("count must be >= 1")
    if scenario != "all":
        cfg = ScenarioConfig(scenario, frames, joints, noise, contact_fraction, seed)
        return generate_dataset(cfg, count)
    cfgs = [ScenarioConfig(s, frames, joints, noise, contact_fraction, seed)
            for s in SCENARIOS]
    samples = []
    for i in range(count):
        cfg = cfgs[i % len(SCENARIOS)]
        sub = i // len(SCENARIOS)
        rng = np.random.default_rng((seed, i % len(SCENARIOS), sub))
        actor, reactor = _SCRIPTS[cfg.scenario](cfg, rng)
        samples.append(InteractionSample(actor, reactor, i % len(SCENARIOS),
                                         (seed, i % len(SCENARIOS), sub)))
    return samples


def train_test_split(samples: list[InteractionSample]
                     ) -> tuple[list[InteractionSample], list[InteractionSample]]:
    """Deterministic 90/10 split by sample index."""
    cut = int(round(len(samples) * (1.0 - TEST_FRACTION)))
    return samples[:cut], samples[cut:]


# ---------------------------------------------------------------------------
# Scenario response properties (construction guarantees, re-checkable)
# ---------------------------------------------------------------------------

def approach_direction(sample: InteractionSample) -> np.ndarray:
    """Unit vector from the reactor's start toward the actor's start."""
    a0 = sample.actor[0, -3:]
    r0 = sample.reactor[0, -3:]
    v = a0 - r0
    return v / np.linalg.norm(v)


def response_property(sample: InteractionSample, skel: geo.Skeleton) -> bool:
    """Check the per-scenario reactor response on a generated sample."""
    d = approach_direction(sample)
    disp = sample.reactor[-1, -3:] - sample.reactor[0, -3:]
    if sample.label == 0:       # push_retreat: move away from the actor
        return float(disp @ d) < 0.0
    if sample.label == 2:       # kick_dodge: move sideways, not along the line
        e = np.array([-d[1], d[0], 0.0])
        return abs(float(disp @ e)) > abs(float(disp @ d))
    # wave_mirror: shoulder swing series of both bodies strongly correlated
    jid = _pose_joints(skel)[_SHOULDER]
    def shoulder_angle(motion):
        rots = geo.rot6d_decode(motion[:, 6 * jid: 6 * jid + 6])
        return np.arctan2(rots[:, 0, 2], rots[:, 0, 0])  # rotation about +y
    a = shoulder_angle(sample.actor)
    r = shoulder_angle(sample.reactor)
    return float(np.corrcoef(a, r)[0, 1]) > 0.95


# ---------------------------------------------------------------------------
# Motion file I/O (line-delimited JSON; schema in README)
# ---------------------------------------------------------------------------

def _person_record(skel: geo.Skeleton, motion: np.ndarray, fps: float) -> dict:
    k = skel.joint_count
    frames = []
    for row in motion:
        frames.append({
            "rot6d": row[: 6 * k].reshape(k, 6).tolist(),
            "root_rot6d": row[6 * k: 6 * k + 6].tolist(),
            "trans": row[6 * k + 6:].tolist(),
        })
    return {
        "version": FILE_VERSION,
        "fps": fps,
        "skeleton": {
            "parents": list(skel.parents),
            "offsets": skel.offsets.tolist(),
            "radii": skel.radii.tolist(),
        },
        "frames": frames,
    }


def _person_motion(rec: dict, line: int) -> tuple[geo.Skeleton, np.ndarray]:
    try:
        sk = rec["skeleton"]
        skel = geo.Skeleton(tuple(sk["parents"]), np.asarray(sk["offsets"]),
                            np.asarray(sk["radii"]))
        rows = []
        for f in rec["frames"]:
            rows.append(np.concatenate([
                np.asarray(f["rot6d"], dtype=np.float64).reshape(-1),
                np.asarray(f["root_rot6d"], dtype=np.float64),
                np.asarray(f["trans"], dtype=np.float64),
            ]))
        motion = np.stack(rows)
    except (KeyError, TypeError, ValueError, InvalidConfig) as err:
        raise SchemaError(f"bad person record ({err})", line=line) from err
    if motion.shape[1] != skel.motion_dim:
        raise SchemaError("frame width does not match skeleton", line=line)
    if not np.all(np.isfinite(motion)):
        raise SchemaError("non-finite motion values", line=line)
    return skel, motion


def save_samples(path: str, samples: list[InteractionSample], skel: geo.Skeleton,
                 fps: float = DEFAULT_FPS) -> None:
    """Write samples as one JSON record per line (atomic, diffable)."""
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            for s in samples:
                rec = {
                    "version": FILE_VERSION,
                    "label": int(s.label),
                    "seed": list(s.seed_used),
                    "actor": _person_record(skel, s.actor, fps),
                    "reactor": _person_record(skel, s.reactor, fps),
                }
                fh.write(json.dumps(rec) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_samples(path: str) -> tuple[list[InteractionSample], geo.Skeleton | None]:
    """Read a motion file back; returns (samples, skeleton).

    The skeleton is None only for an empty file.  Raises ``SchemaError``
    with the offending line number on malformed or inconsistent records.
    """
    samples: list[InteractionSample] = []
    skel: geo.Skeleton | None = None
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise SchemaError(f"invalid JSON ({err.msg})", line=line_no) from err
            if rec.get("version") != FILE_VERSION:
                raise SchemaError("missing or unsupported version", line=line_no)
            try:
                label = int(rec["label"])
                seed = tuple(rec.get("seed", ()))
                actor_rec, reactor_rec = rec["actor"], rec["reactor"]
            except (KeyError, TypeError) as err:
                raise SchemaError(f"missing field ({err})", line=line_no) from err
            skel_a, actor = _person_motion(actor_rec, line_no)
            skel_b, reactor = _person_motion(reactor_rec, line_no)
            if skel is None:
                skel = skel_a
            for cand in (skel_a, skel_b):
                if (cand.parents != skel.parents
                        or not np.array_equal(cand.offsets, skel.offsets)
                        or not np.array_equal(cand.radii, skel.radii)):
                    raise SchemaError("skeleton differs from first record",
                                      line=line_no)
            if actor.shape[0] != reactor.shape[0]:
                raise SchemaError("actor and reactor frame counts differ",
                                  line=line_no)
            samples.append(InteractionSample(actor, reactor, label, seed))
    return samples, skel
