"""Serial-chain manipulator description, model-file loading and forward kinematics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

_TOL = 1e-9


class ModelError(ValueError):
    """Raised when a model document is malformed or violates an invariant."""

    def __init__(self, message, field_name=None):
        super().__init__(message)
        self.field = field_name


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(rpy):
    """Extrinsic x-y-z (roll about x, then pitch about y, then yaw about z)."""
    r, p, y = rpy
    return rot_z(y) @ rot_y(p) @ rot_x(r)


def matrix_to_rpy(R):
    """Inverse of :func:`rpy_to_matrix`; pitch is returned in [-pi/2, pi/2]."""
    pitch = np.arctan2(-R[2, 0], np.hypot(R[0, 0], R[1, 0]))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def axis_angle(axis, angle):
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class JointSpec:
    name: str
    axis: np.ndarray
    origin_translation: np.ndarray
    origin_rotation: np.ndarray
    armature: float = 0.0   # reflected rotor inertia about the joint axis

    def validate(self):
        if not np.isfinite(self.armature) or self.armature < 0:
            raise ModelError(f"joint {self.name!r}: armature must be >= 0", "armature")
        if self.axis.shape != (3,) or abs(np.linalg.norm(self.axis) - 1.0) > _TOL:
            raise ModelError(f"joint {self.name!r}: axis must be a unit 3-vector, got {self.axis}", "axis")
        if self.origin_translation.shape != (3,):
            raise ModelError(f"joint {self.name!r}: origin_translation must have 3 entries", "origin_translation")
        R = self.origin_rotation
        if (R.shape != (3, 3) or np.abs(R.T @ R - np.eye(3)).max() > _TOL
                or abs(np.linalg.det(R) - 1.0) > _TOL):
            raise ModelError(f"joint {self.name!r}: origin rotation is not a proper rotation", "origin_rpy")


@dataclass(frozen=True)
class LinkSpec:
    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def validate(self, name="link"):
        if not np.isfinite(self.mass) or self.mass < 0:
            raise ModelError(f"{name}: mass must be >= 0, got {self.mass}", "mass")
        if self.com.shape != (3,):
            raise ModelError(f"{name}: com must have 3 entries", "com")
        I = self.inertia
        if I.shape != (3, 3) or np.abs(I - I.T).max() > 1e-12:
            raise ModelError(f"{name}: inertia must be a symmetric 3x3 matrix", "inertia")
        if np.linalg.eigvalsh(I).min() < -1e-12:
            raise ModelError(f"{name}: inertia is not positive semidefinite", "inertia")


@dataclass(frozen=True)
class RobotModel:
    """An all-revolute serial chain.

    Link ``i`` is rigidly attached to the frame of joint ``i`` after the joint
    rotation. The end-effector frame is fixed in the last link frame.
    """

    joints: tuple
    links: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    ee_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ee_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    name: str = "robot"

    @property
    def n(self):
        return len(self.joints)

    @cached_property
    def armature(self):
        return np.array([j.armature for j in self.joints])

    @cached_property
    def chain(self):
        """Stacked joint constants used by the batched kinematics."""
        return _Chain.of(self)

    def validate(self):
        if len(self.joints) < 1:
            raise ModelError("model needs at least one joint", "joints")
        if len(self.joints) != len(self.links):
            raise ModelError("joints and links differ in length", "joints")
        for j, l in zip(self.joints, self.links):
            j.validate()
            l.validate(f"link of joint {j.name!r}")
        if self.gravity.shape != (3,):
            raise ModelError("gravity must have 3 entries", "gravity")
        return self

    def with_gravity(self, gravity):
        return RobotModel(self.joints, self.links, np.asarray(gravity, float),
                          self.ee_translation, self.ee_rotation, self.name)


@dataclass
class RobotState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qd = np.asarray(self.qd, dtype=float)
        if self.q.shape != self.qd.shape or self.q.ndim != 1:
            raise ValueError(f"q and qd must be equal-length vectors, got {self.q.shape} and {self.qd.shape}")


# ---------------------------------------------------------------------------
# loading

def _vec(record, key, size, where):
    if key not in record:
        raise ModelError(f"{where}: missing key {key!r}", key)
    try:
        v = np.asarray(record[key], dtype=float)
    except (TypeError, ValueError):
        raise ModelError(f"{where}: {key!r} must be numeric", key) from None
    if v.shape != (size,):
        raise ModelError(f"{where}: {key!r} must have {size} numbers, got {v.size}", key)
    return v


def _scalar(record, key, where):
    try:
        return float(record[key])
    except (TypeError, ValueError):
        raise ModelError(f"{where}: {key!r} must be a number", key) from None


def _inertia(six):
    xx, yy, zz, xy, xz, yz = six
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])


def model_from_dict(doc, name="robot"):
    """Build and validate a :class:`RobotModel` from a parsed model document."""
    if not isinstance(doc, dict):
        raise ModelError("model document must be a mapping", None)
    gravity = _vec(doc, "gravity", 3, "model")
    ee = doc.get("ee_offset", {}) or {}
    if not isinstance(ee, dict):
        raise ModelError("ee_offset must be a mapping", "ee_offset")
    ee_t = _vec(ee, "translation", 3, "ee_offset") if "translation" in ee else np.zeros(3)
    ee_r = _vec(ee, "rpy", 3, "ee_offset") if "rpy" in ee else np.zeros(3)
    entries = doc.get("joints")
    if not isinstance(entries, list) or not entries:
        raise ModelError("model: 'joints' must be a non-empty list", "joints")
    joints, links = [], []
    for k, e in enumerate(entries):
        if not isinstance(e, dict):
            raise ModelError(f"joint {k}: entry must be a mapping", "joints")
        jname = str(e.get("name", f"joint{k}"))
        where = f"joint {jname!r}"
        joints.append(JointSpec(
            name=jname,
            axis=_vec(e, "axis", 3, where),
            origin_translation=_vec(e, "origin_translation", 3, where),
            origin_rotation=rpy_to_matrix(_vec(e, "origin_rpy", 3, where)) if "origin_rpy" in e else np.eye(3),
            armature=_scalar(e, "armature", where) if "armature" in e else 0.0,
        ))
        link = e.get("link")
        if not isinstance(link, dict):
            raise ModelError(f"{where}: missing 'link' record", "link")
        if "mass" not in link:
            raise ModelError(f"{where}: link is missing 'mass'", "mass")
        links.append(LinkSpec(
            mass=_scalar(link, "mass", f"{where} link"),
            com=_vec(link, "com", 3, f"{where} link"),
            inertia=_inertia(_vec(link, "inertia", 6, f"{where} link")),
        ))
    model = RobotModel(tuple(joints), tuple(links), gravity, ee_t, rpy_to_matrix(ee_r), name)
    return model.validate()


def load_model(text, name="robot"):
    """Parse model-file text (YAML) into a validated :class:`RobotModel`."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelError(f"could not parse model document: {exc}", None) from exc
    return model_from_dict(doc, name)


MODEL_DIR = Path(__file__).parent / "data" / "models"


def resolve_model_path(path, base_dir=None):
    """Find a model file; bare names fall back to the bundled models directory."""
    p = Path(path)
    candidates = [p]
    if base_dir is not None and not p.is_absolute():
        candidates.insert(0, Path(base_dir) / p)
    candidates += [MODEL_DIR / p, MODEL_DIR / f"{p}.yaml"]
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(f"model file not found: {path}")


def load_model_file(path, base_dir=None):
    p = resolve_model_path(path, base_dir)
    return load_model(p.read_text(encoding="utf-8"), name=p.stem)


# ---------------------------------------------------------------------------
# kinematics

@dataclass
class Kinematics:
    """World-frame poses of every link frame and of the end-effector."""

    positions: np.ndarray   # (n, 3) joint / link frame origins
    rotations: np.ndarray   # (n, 3, 3)
    axes: np.ndarray        # (n, 3) joint axes in world frame
    ee_position: np.ndarray
    ee_rotation: np.ndarray


@dataclass(frozen=True)
class _Chain:
    translations: np.ndarray   # (n, 3)
    rotations: np.ndarray      # (n, 3, 3)
    axes: np.ndarray           # (n, 3)
    K: np.ndarray              # (n, 3, 3) axis cross-product matrices
    K2: np.ndarray             # (n, 3, 3) K @ K

    @staticmethod
    def of(model):
        axes = np.array([j.axis for j in model.joints])
        K = np.zeros((len(axes), 3, 3))
        K[:, 0, 1], K[:, 0, 2] = -axes[:, 2], axes[:, 1]
        K[:, 1, 0], K[:, 1, 2] = axes[:, 2], -axes[:, 0]
        K[:, 2, 0], K[:, 2, 1] = -axes[:, 1], axes[:, 0]
        return _Chain(np.array([j.origin_translation for j in model.joints]),
                      np.array([j.origin_rotation for j in model.joints]),
                      axes, K, K @ K)


def forward_kinematics_batch(model, Q):
    """Forward kinematics for a stack of configurations ``Q`` of shape (B, n).

    Returns a :class:`Kinematics` whose arrays carry a leading batch axis.
    """
    Q = np.asarray(Q, dtype=float)
    B, n = Q.shape
    c = model.chain
    pos = np.empty((B, n, 3))
    rot = np.empty((B, n, 3, 3))
    axes = np.empty((B, n, 3))
    p = np.zeros((B, 3))
    R = np.broadcast_to(np.eye(3), (B, 3, 3))
    sq, cq = np.sin(Q), 1.0 - np.cos(Q)
    for i in range(n):
        p = p + R @ c.translations[i]
        R = R @ c.rotations[i]
        axes[:, i] = R @ c.axes[i]
        Rj = np.eye(3) + sq[:, i, None, None] * c.K[i] + cq[:, i, None, None] * c.K2[i]
        R = R @ Rj
        pos[:, i] = p
        rot[:, i] = R
    ee_p = p + R @ model.ee_translation
    ee_R = R @ model.ee_rotation
    return Kinematics(pos, rot, axes, ee_p, ee_R)


def forward_kinematics(model, q):
    """Compose joint transforms base-to-tip."""
    k = forward_kinematics_batch(model, np.asarray(q, dtype=float)[None, :])
    return Kinematics(k.positions[0], k.rotations[0], k.axes[0], k.ee_position[0], k.ee_rotation[0])


def joint_transform(joint, qi):
    """4x4 transform from the parent link frame to this joint's link frame."""
    T = np.eye(4)
    T[:3, :3] = joint.origin_rotation @ axis_angle(joint.axis, qi)
    T[:3, 3] = joint.origin_translation
    return T
