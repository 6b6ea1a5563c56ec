"""Serial-chain arm description and the model-file loader.

Model files are YAML documents whose first non-comment line must be the
format header ``format: reachlab-model/1``. The full grammar is documented in
``docs/model-format.md``. All lengths are meters, masses kg, angles radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

FORMAT_HEADER = "reachlab-model/1"
BASE = -1  # link index of the fixed base frame


class ModelError(ValueError):
    """Raised when a model description is malformed or physically invalid."""


@dataclass(frozen=True)
class CollisionSphere:
    link: int
    offset: np.ndarray
    radius: float


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Immutable n-joint revolute serial chain.

    Joint ``i`` rotates link ``i`` relative to link ``i - 1`` (or the base for
    ``i == 0``). Arrays are stacked per joint so kinematics can be vectorized.
    """

    name: str
    joint_names: tuple[str, ...]
    origin_xyz: np.ndarray  # (n, 3) joint origin in the parent link frame
    origin_rot: np.ndarray  # (n, 3, 3)
    axis: np.ndarray  # (n, 3) unit axis in the joint frame
    q_lower: np.ndarray
    q_upper: np.ndarray
    qdot_limit: np.ndarray
    mass: np.ndarray  # (n,)
    com: np.ndarray  # (n, 3) in the link frame
    inertia: np.ndarray  # (n, 3, 3) about the COM, link frame
    spheres: tuple[CollisionSphere, ...]
    ee_link: int
    ee_offset: np.ndarray
    gravity: np.ndarray
    home_pose: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return len(self.joint_names)

    @property
    def sphere_links(self) -> np.ndarray:
        return np.array([s.link for s in self.spheres], dtype=int)

    @property
    def sphere_offsets(self) -> np.ndarray:
        return np.array([s.offset for s in self.spheres]).reshape(-1, 3)

    @property
    def sphere_radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.spheres])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.q_lower, self.q_upper)

    def with_gravity(self, gravity) -> "ArmModel":
        g = np.asarray(gravity, dtype=float)
        return _replace(self, gravity=g)

    def reach(self) -> float:
        """Upper bound on the end-effector distance from the first joint axis."""
        offsets = [np.linalg.norm(self.origin_xyz[i]) for i in range(1, self.n)]
        return float(sum(offsets) + np.linalg.norm(self.ee_offset))


def _replace(model: ArmModel, **changes) -> ArmModel:
    from dataclasses import replace

    return replace(model, **changes)


def rpy_matrix(rpy) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw to a rotation matrix, R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _vec(value, length, what) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{what}: expected {length} numbers, got {value!r}") from exc
    if arr.shape != (length,) or not np.all(np.isfinite(arr)):
        raise ModelError(f"{what}: expected {length} finite numbers, got {value!r}")
    return arr


def _inertia(value, what) -> np.ndarray:
    arr = np.asarray(value, dtype=float) if value is not None else np.zeros(6)
    if arr.shape == (6,):
        ixx, iyy, izz, ixy, ixz, iyz = arr
        arr = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    if arr.shape != (3, 3):
        raise ModelError(f"{what}: inertia must be 6 numbers or a 3x3 matrix")
    if not np.allclose(arr, arr.T, atol=1e-12):
        raise ModelError(f"{what}: inertia matrix is not symmetric")
    if np.linalg.eigvalsh(arr).min() < -1e-12:
        raise ModelError(f"{what}: inertia matrix is not positive semi-definite")
    return arr


def _check_header(text: str) -> None:
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.replace(" ", "") != f"format:{FORMAT_HEADER}":
            raise ModelError(f"first line must be 'format: {FORMAT_HEADER}', got {stripped!r}")
        return
    raise ModelError("empty model description")


def parse_model(text: str) -> ArmModel:
    """Parse a model description document into a validated :class:`ArmModel`."""
    _check_header(text)
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelError(f"model description does not parse: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError("model description must be a mapping")
    joints = doc.get("joints")
    if not joints or not isinstance(joints, list):
        raise ModelError("model needs a non-empty 'joints' list")

    names = []
    by_name = {}
    for k, j in enumerate(joints):
        if not isinstance(j, dict) or "name" not in j:
            raise ModelError(f"joint #{k}: missing 'name'")
        name = str(j["name"])
        if name == "base" or name in by_name:
            raise ModelError(f"joint #{k}: duplicate or reserved name {name!r}")
        by_name[name] = j
        names.append(name)

    # order the joints into a single chain rooted at the base
    children: dict[str, list[str]] = {}
    for name in names:
        parent = str(by_name[name].get("parent", "base"))
        if parent != "base" and parent not in by_name:
            raise ModelError(f"joint {name!r}: unknown parent {parent!r}")
        children.setdefault(parent, []).append(name)
    for parent, kids in children.items():
        if len(kids) > 1:
            raise ModelError(f"link {parent!r} has several child joints {kids}; only chains are supported")
    order = []
    current = "base"
    while current in children:
        current = children[current][0]
        if current in order:
            raise ModelError("joint parents form a cycle")
        order.append(current)
    if len(order) != len(names):
        missing = sorted(set(names) - set(order))
        raise ModelError(f"chain is disconnected from the base: {missing}")

    n = len(order)
    index = {name: i for i, name in enumerate(order)}
    index["base"] = BASE
    origin_xyz = np.zeros((n, 3))
    origin_rot = np.zeros((n, 3, 3))
    axis = np.zeros((n, 3))
    lower, upper, vlim = np.zeros(n), np.zeros(n), np.zeros(n)
    mass, com, inertia = np.zeros(n), np.zeros((n, 3)), np.zeros((n, 3, 3))
    for i, name in enumerate(order):
        j = by_name[name]
        what = f"joint {name!r}"
        origin = j.get("origin") or {}
        origin_xyz[i] = _vec(origin.get("xyz", [0, 0, 0]), 3, f"{what} origin.xyz")
        origin_rot[i] = rpy_matrix(_vec(origin.get("rpy", [0, 0, 0]), 3, f"{what} origin.rpy"))
        ax = _vec(j.get("axis", [0, 0, 1]), 3, f"{what} axis")
        norm = np.linalg.norm(ax)
        if norm < 1e-9:
            raise ModelError(f"{what}: zero rotation axis")
        axis[i] = ax / norm
        lim = j.get("limits") or {}
        lower[i] = float(lim.get("lower", -np.pi))
        upper[i] = float(lim.get("upper", np.pi))
        vlim[i] = float(lim.get("velocity", 2.0))
        if not lower[i] < upper[i]:
            raise ModelError(f"{what}: lower limit {lower[i]} must be below upper limit {upper[i]}")
        if vlim[i] <= 0:
            raise ModelError(f"{what}: velocity limit must be positive")
        link = j.get("link") or {}
        mass[i] = float(link.get("mass", 0.0))
        if not mass[i] > 0:
            raise ModelError(f"{what}: link mass must be positive, got {mass[i]}")
        com[i] = _vec(link.get("com", [0, 0, 0]), 3, f"{what} link.com")
        inertia[i] = _inertia(link.get("inertia"), what)

    spheres = []
    for k, s in enumerate(doc.get("collision_spheres") or []):
        link = str(s.get("link", "base"))
        if link not in index:
            raise ModelError(f"collision sphere #{k}: unknown link {link!r}")
        radius = float(s.get("radius", 0.0))
        if not radius > 0:
            raise ModelError(f"collision sphere #{k}: radius must be positive, got {radius}")
        spheres.append(CollisionSphere(index[link], _vec(s.get("offset", [0, 0, 0]), 3, f"sphere #{k} offset"), radius))

    ee = doc.get("end_effector") or {}
    ee_link_name = str(ee.get("link", order[-1]))
    if ee_link_name not in index or index[ee_link_name] == BASE:
        raise ModelError(f"end effector: unknown link {ee_link_name!r}")

    home = doc.get("home_pose")
    home = np.zeros(n) if home is None else _vec(home, n, "home_pose")
    if np.any(home < lower) or np.any(home > upper):
        raise ModelError("home_pose lies outside the joint limits")

    return ArmModel(
        name=str(doc.get("name", "arm")),
        joint_names=tuple(order),
        origin_xyz=origin_xyz,
        origin_rot=origin_rot,
        axis=axis,
        q_lower=lower,
        q_upper=upper,
        qdot_limit=vlim,
        mass=mass,
        com=com,
        inertia=inertia,
        spheres=tuple(spheres),
        ee_link=index[ee_link_name],
        ee_offset=_vec(ee.get("offset", [0, 0, 0]), 3, "end_effector.offset"),
        gravity=_vec(doc.get("gravity", [0, 0, -9.81]), 3, "gravity"),
        home_pose=home,
    )


def load_model(source: str | Path) -> ArmModel:
    """Load a model from a file path or the name of a bundled model (``planar2``, ``spatial6``...)."""
    path = Path(source)
    if path.exists():
        return parse_model(path.read_text())
    bundled = resources.files("reachlab.data").joinpath(f"{source}.yaml")
    if bundled.is_file():
        return parse_model(bundled.read_text())
    raise ModelError(f"no model file or bundled model named {str(source)!r}")


@dataclass
class RobotState:
    q: np.ndarray
    qdot: np.ndarray
    qddot_last: np.ndarray

    @classmethod
    def at_rest(cls, q) -> "RobotState":
        q = np.array(q, dtype=float)
        return cls(q, np.zeros_like(q), np.zeros_like(q))

    def copy(self) -> "RobotState":
        return RobotState(self.q.copy(), self.qdot.copy(), self.qddot_last.copy())


@dataclass
class EePose:
    position: np.ndarray
    linear_velocity: np.ndarray
