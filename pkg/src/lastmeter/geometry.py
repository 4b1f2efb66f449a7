"""Rigid/similarity transforms, Sim(3) fitting and pose-precision metrics.

Conventions: a :class:`Pose` stores a body-to-world rotation and the body
origin (camera centre) in world coordinates. The body x axis points forward,
y to the left and z up, so a planar pose with yaw ``psi`` has rotation
``Rz(psi)``. Yaw angles are in degrees and increase counter-clockwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, EmptyInput, TooFewPoints

ORTHO_TOL = 1e-9
COLLINEAR_RATIO = 1e-8


def wrap_degrees(angle: float) -> float:
    """Normalise an angle in degrees into [0, 360)."""
    a = math.fmod(float(angle), 360.0)
    if a < 0.0:
        a += 360.0
    if a >= 360.0:
        a = 0.0
    return a


def signed_angle_diff(a: float, b: float) -> float:
    """Return a - b wrapped into [-180, 180) degrees."""
    d = math.fmod(float(a) - float(b) + 180.0, 360.0)
    if d < 0.0:
        d += 360.0
    return d - 180.0


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.linalg.norm(R.T @ R - np.eye(3)) < tol and np.linalg.det(R) > 0)


def rotation_angle_deg(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    rel = np.asarray(R_a).T @ np.asarray(R_b)
    # atan2 of the skew and trace parts stays accurate near 0 and 180 degrees
    sin = 0.5 * math.sqrt((rel[2, 1] - rel[1, 2]) ** 2 + (rel[0, 2] - rel[2, 0]) ** 2
                          + (rel[1, 0] - rel[0, 1]) ** 2)
    cos = (np.trace(rel) - 1.0) / 2.0
    return math.degrees(math.atan2(sin, cos))


def yaw_of(R: np.ndarray) -> float:
    """Heading of the body x axis projected onto the ground plane."""
    return wrap_degrees(math.degrees(math.atan2(R[1, 0], R[0, 0])))


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_degrees(self.yaw))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_pose(self, height: float = 0.0) -> "Pose":
        return Pose(rot_z(self.yaw), np.array([self.x, self.y, height]))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose2D":
        return cls(d["x"], d["y"], d.get("yaw", 0.0))


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not is_rotation(R):
            raise ValueError("rotation must be orthonormal with det +1")
        if not np.all(np.isfinite(p)):
            raise ValueError("position must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", p)

    def to_2d(self) -> Pose2D:
        return Pose2D(self.position[0], self.position[1], yaw_of(self.rotation))


@dataclass(frozen=True)
class Sim3Transform:
    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not is_rotation(R, tol=1e-6):
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        return Pose(self.rotation @ pose.rotation, self.apply_points(pose.position))

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        """Return ``self o other`` (apply ``other`` first)."""
        return Sim3Transform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Sim3Transform":
        Rt = self.rotation.T
        return Sim3Transform(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.scale * self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class AlignmentResult:
    sim3: Sim3Transform
    orientation_fix: np.ndarray
    centroid: np.ndarray
    mean_position_residual: float
    mean_rotation_residual: float


def umeyama_sim3(source_points, target_points) -> Sim3Transform:
    """Closed-form least-squares similarity transform mapping source onto target.

    Minimises ``sum ||Y_k - (s R X_k + t)||^2`` (Umeyama 1991). A reflection is
    never returned: the last singular direction is flipped when
    ``det(U) det(V) < 0``, which also covers the coplanar (rank-2) case.
    """
    X = np.asarray(source_points, dtype=float)
    Y = np.asarray(target_points, dtype=float)
    if X.ndim != 2 or X.shape[1] != 3 or X.shape != Y.shape:
        raise ValueError("source and target must be equal-length lists of 3-vectors")
    n = X.shape[0]
    if n < 3:
        raise TooFewPoints(f"need at least 3 correspondences, got {n}")

    mu_x = X.mean(axis=0)
    mu_y = Y.mean(axis=0)
    Xc = X - mu_x
    Yc = Y - mu_y
    var_x = float(np.sum(Xc * Xc)) / n
    cov = Yc.T @ Xc / n

    src_sv = np.linalg.svd(Xc, compute_uv=False)
    if src_sv[0] == 0.0 or src_sv[1] < COLLINEAR_RATIO * src_sv[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    s = float(np.sum(D * S)) / var_x
    if s <= 0:
        raise DegenerateConfiguration("non-positive scale; target configuration degenerate")
    t = mu_y - s * R @ mu_x
    return Sim3Transform(s, R, t)


def _mean_angle(R: Rotation, residuals: Rotation) -> float:
    return float(np.mean((R.inv() * residuals).magnitude()))


def orientation_correction(aligned_rotations, reference_rotations, iters: int = 200) -> np.ndarray:
    """Rotation R_or minimising the mean geodesic angle between R_or R_aligned_k and R_ref_k.

    The chordal (quaternion) mean of the residuals ``R_ref_k R_aligned_k^T`` is
    the starting point; it is then refined by Weiszfeld iterations for the
    geodesic L1 mean, and individual residuals are tried as candidates since the
    L1 minimiser frequently sits on a data point.
    """
    aligned = [np.asarray(r, dtype=float) for r in aligned_rotations]
    reference = [np.asarray(r, dtype=float) for r in reference_rotations]
    if not aligned or not reference:
        raise EmptyInput("orientation_correction needs at least one rotation pair")
    if len(aligned) != len(reference):
        raise ValueError("rotation lists differ in length")

    residuals = Rotation.from_matrix(np.stack([Rr @ Ra.T for Ra, Rr in zip(aligned, reference)]))
    best = residuals.mean()
    best_cost = _mean_angle(best, residuals)
    if best_cost < 1e-12 or len(residuals) == 1:
        return best.as_matrix()

    current = best
    for _ in range(iters):
        v = (current.inv() * residuals).as_rotvec()
        norms = np.linalg.norm(v, axis=1)
        mask = norms > 1e-12
        if not np.any(mask):
            break
        w = 1.0 / norms[mask]
        step = (v[mask] * w[:, None]).sum(axis=0) / w.sum()
        current = current * Rotation.from_rotvec(step)
        if np.linalg.norm(step) < 1e-12:
            break
    cost = _mean_angle(current, residuals)
    if cost < best_cost - 1e-12:
        best, best_cost = current, cost

    for k in range(len(residuals)):
        cand = residuals[k]
        cost = _mean_angle(cand, residuals)
        if cost < best_cost - 1e-12:
            best, best_cost = cand, cost
    return best.as_matrix()


def apply_about_centroid(positions, R_or, centroid) -> np.ndarray:
    P = np.asarray(positions, dtype=float)
    c = np.asarray(centroid, dtype=float)
    return (P - c) @ np.asarray(R_or, dtype=float).T + c


def align_trajectories(canonical: Sequence[Pose], recorded: Sequence[Pose]) -> AlignmentResult:
    """Sim(3) position alignment followed by the centroid-anchored orientation fix."""
    X = np.stack([p.position for p in canonical])
    Y = np.stack([p.position for p in recorded])
    sim3 = umeyama_sim3(X, Y)
    aligned_R = [sim3.rotation @ p.rotation for p in canonical]
    ref_R = [p.rotation for p in recorded]
    R_or = orientation_correction(aligned_R, ref_R)
    centroid = Y.mean(axis=0)
    X3 = apply_about_centroid(sim3.apply_points(X), R_or, centroid)
    pos_res = float(np.mean(np.linalg.norm(X3 - Y, axis=1)))
    rot_res = float(np.mean([rotation_angle_deg(R_or @ Ra, Rr) for Ra, Rr in zip(aligned_R, ref_R)]))
    return AlignmentResult(sim3, R_or, centroid, pos_res, rot_res)


def transport_goal_pose(alignment: AlignmentResult, goal_canonical: Pose) -> Pose:
    sim3 = alignment.sim3
    centre = sim3.apply_points(goal_canonical.position)
    centre = apply_about_centroid(centre[None, :], alignment.orientation_fix, alignment.centroid)[0]
    rotation = alignment.orientation_fix @ sim3.rotation @ goal_canonical.rotation
    return Pose(rotation, centre)


def position_error(p_hat: Pose2D, p_goal: Pose2D) -> float:
    return math.hypot(p_hat.x - p_goal.x, p_hat.y - p_goal.y)


def heading_error(psi_hat: float, psi_goal: float, fold_mode: str = "mod180") -> float:
    """Minimum angular difference in degrees.

    ``mod180`` folds the difference modulo 180 degrees (range [0, 90]);
    ``mod360`` is the conventional wrapped yaw error (range [0, 180]).
    """
    d = abs(signed_angle_diff(psi_hat, psi_goal))
    mode = fold_mode.lower()
    if mode == "mod360":
        return d
    if mode == "mod180":
        return min(d, 180.0 - d)
    raise ValueError(f"unknown fold mode {fold_mode!r}")
