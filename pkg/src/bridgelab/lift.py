"""Horizontal lifts of paths to the orthonormal frame bundle.

A frame at p is stored as an m x m matrix whose rows are the components of
the frame vectors in the model's canonical orthonormal frame at p, so
orthonormality reads Gram = M M^T = I regardless of the ambient signature.

The discrete horizontal lift transports the frame along the minimizing
geodesic between consecutive path points with the closed-form parallel
transport of each model (identity on Euclidean space and the circle, a
rotation in the spanning 2-plane on the sphere, its hyperbolic analogue on
H^3). Geodesic-segment transport is the midpoint (Stratonovich) rule for the
horizontal lift equation, and it is exact per segment, so the orthonormality
defect is pure float roundoff; frames are re-orthonormalized by polar
projection only when the defect exceeds a threshold, and every projection is
counted.

Holonomy orientation convention: on the sphere, traversing a positively
oriented loop (counterclockwise seen from outside) rotates the frame by the
enclosed area in the positive (counterclockwise) tangent-plane sense; on H^3
a geodesic triangle rotates frames by its angle defect about the normal of
the triangle's plane, with the sign fixed by the traversal orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import BridgePath
from .geometry import ManifoldModel, _coords


class LiftPreconditionError(ValueError):
    """Initial frame or path does not meet the lift's requirements."""


PROJECTION_THRESHOLD = 1e-9


@dataclass
class Frame:
    """Orthonormal frame: base point plus an m x m matrix of frame-vector
    components in the canonical frame at the base."""

    base: np.ndarray
    vectors: np.ndarray

    def gram_defect(self) -> float:
        g = self.vectors @ self.vectors.T
        return float(np.max(np.abs(g - np.eye(g.shape[0]))))


def identity_frame(model: ManifoldModel, p) -> Frame:
    c = model.check_point(_coords(p)).copy()
    return Frame(base=c, vectors=np.eye(model.dim))


def polar_project(vectors: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(vectors)
    return u @ vt


@dataclass
class LiftPath:
    base_path: BridgePath
    frames: np.ndarray  # (n_times, m, m), frame at base_path.points[j]
    orthonormality_defect: float  # max pre-projection Gram defect along the path
    projections: int = 0
    metadata: dict = field(default_factory=dict)

    def frame(self, j: int) -> Frame:
        return Frame(base=self.base_path.points[j], vectors=self.frames[j].copy())


def horizontal_lift(
    path: BridgePath, u0: Frame, project_threshold: float = PROJECTION_THRESHOLD
) -> LiftPath:
    """Transport u0 along the path's geodesic segments.

    The base point of each lifted frame is the corresponding path point by
    construction (the bundle projection of the lift is the path itself).
    """
    model = path.spec.model
    if not np.array_equal(np.asarray(u0.base, dtype=float), path.points[0]):
        raise LiftPreconditionError("u0 must be based at the path's initial point")
    if u0.vectors.shape != (model.dim, model.dim):
        raise LiftPreconditionError(f"frame matrix must be {model.dim} x {model.dim}")
    n_t = path.points.shape[0]
    frames = np.empty((n_t, model.dim, model.dim))
    frames[0] = u0.vectors
    worst = u0.vectors @ u0.vectors.T - np.eye(model.dim)
    defect = float(np.max(np.abs(worst)))
    projections = 0
    eye = np.eye(model.dim)
    for j in range(n_t - 1):
        p = np.broadcast_to(path.points[j], (model.dim, model.ambient_dim))
        q = np.broadcast_to(path.points[j + 1], (model.dim, model.ambient_dim))
        moved = model.transport(p, q, frames[j])
        d = float(np.max(np.abs(moved @ moved.T - eye)))
        defect = max(defect, d)
        if d > project_threshold:
            moved = polar_project(moved)
            projections += 1
        frames[j + 1] = moved
    return LiftPath(
        base_path=path,
        frames=frames,
        orthonormality_defect=defect,
        projections=projections,
        metadata={"project_threshold": project_threshold},
    )


def holonomy(path: BridgePath, u0: Frame | None = None) -> np.ndarray:
    """Orthogonal matrix expressing the lifted terminal frame in the initial
    one, for a closed path (first point = last point)."""
    if not np.array_equal(path.points[0], path.points[-1]):
        raise LiftPreconditionError("holonomy needs a closed path")
    model = path.spec.model
    if u0 is None:
        u0 = identity_frame(model, path.points[0])
    lifted = horizontal_lift(path, u0)
    h = lifted.frames[-1].T @ np.linalg.inv(lifted.frames[0].T)
    defect = float(np.max(np.abs(h @ h.T - np.eye(model.dim))))
    if defect > 1e-9:
        h = polar_project(h)
    return h


def rotation_angle(h: np.ndarray) -> float:
    """Magnitude of the rotation angle of an orthogonal matrix (2x2 or 3x3)."""
    m = h.shape[0]
    if m == 1:
        return 0.0 if h[0, 0] > 0 else math.pi
    if m == 2:
        return abs(math.atan2(h[1, 0], h[0, 0]))
    cosang = (np.trace(h) - 1.0) / 2.0
    return float(np.arccos(np.clip(cosang, -1.0, 1.0)))
