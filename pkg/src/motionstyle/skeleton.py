"""Skeleton topology, rotation algebra, forward kinematics and body-part grouping.

This is the geometric substrate for the whole pipeline. Everything here is
pure NumPy over immutable inputs and safe to call concurrently; the learned
modules keep their own torch counterparts of a few of these operations
(see tensor_ops.py) so losses stay differentiable.

Conventions:
    - Joint order is BVH depth-first document order; parent index < joint
      index always holds.
    - 6D rotations are the first two columns of a rotation matrix,
      concatenated into a 6-vector [col0 | col1] (continuous representation).
    - Offsets and translations are in meters, rotations dimensionless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateDegreeError,
    EmptyPartError,
    InvalidRotationError,
    ShapeError,
)

BODY_PARTS = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")

_DEGENERACY_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class Skeleton:
    """One character structure: joint hierarchy, rest offsets, part labels.

    Attributes
    ----------
    joints : tuple[str, ...]
        Joint names in depth-first order.
    parents : tuple[int, ...]
        Per-joint parent index; the root has parent -1. Parent indices are
        always smaller than the child index.
    offsets : np.ndarray, shape (N, 3)
        Rest-pose bone offset of each joint relative to its parent, meters.
    part_map : tuple[str, ...] | None
        Per-joint body-part label from BODY_PARTS, or None until a sidecar
        part map has been attached.
    """

    joints: tuple
    parents: tuple
    offsets: np.ndarray
    part_map: tuple | None = None

    def __post_init__(self):
        n = len(self.joints)
        if n < 2:
            raise ShapeError(f"skeleton needs at least 2 joints, got {n}")
        if len(self.parents) != n:
            raise ShapeError("parents length does not match joint count")
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if offsets.shape != (n, 3):
            raise ShapeError(f"offsets must be ({n}, 3), got {offsets.shape}")
        object.__setattr__(self, "offsets", offsets)
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1 or roots[0] != 0:
            raise ShapeError("skeleton must have exactly one root at index 0")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ShapeError(
                    f"joint {i} has parent {p}; parents must precede children"
                )
        if self.part_map is not None:
            if len(self.part_map) != n:
                raise ShapeError("part_map length does not match joint count")
            bad = [p for p in self.part_map if p not in BODY_PARTS]
            if bad:
                raise ShapeError(f"unknown body part labels: {sorted(set(bad))}")
            object.__setattr__(self, "part_map", tuple(self.part_map))
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return (
            self.joints == other.joints
            and self.parents == other.parents
            and np.array_equal(self.offsets, other.offsets)
            and self.part_map == other.part_map
        )

    @property
    def num_joints(self):
        return len(self.joints)

    def children(self, index):
        """Indices of the direct children of a joint."""
        return [i for i, p in enumerate(self.parents) if p == index]

    def with_part_map(self, mapping) -> "Skeleton":
        """Attach a part map given as {joint name: part label}.

        Every joint must be covered; unknown joint names are an error.
        """
        unknown = set(mapping) - set(self.joints)
        if unknown:
            raise ShapeError(f"part map covers unknown joints: {sorted(unknown)}")
        missing = [j for j in self.joints if j not in mapping]
        if missing:
            raise ShapeError(f"part map misses joints: {missing}")
        return replace(self, part_map=tuple(mapping[j] for j in self.joints))

    def to_dict(self):
        """JSON-serializable description (checkpoint manifests)."""
        return {
            "joints": list(self.joints),
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "part_map": list(self.part_map) if self.part_map else None,
        }

    @classmethod
    def from_dict(cls, data) -> "Skeleton":
        return cls(
            tuple(data["joints"]),
            tuple(data["parents"]),
            np.asarray(data["offsets"], dtype=np.float64),
            part_map=tuple(data["part_map"]) if data.get("part_map") else None,
        )


@dataclass
class MotionClip:
    """A motion on one skeleton: per-frame per-joint 6D rotations + root track.

    Attributes
    ----------
    rotations : np.ndarray, shape (T, N, 6)
        6D rotation features per frame and joint (root orientation included
        as joint 0).
    translation : np.ndarray, shape (T, 3)
        Root position per frame, meters.
    fps : float
        Frames per second, > 0.
    """

    rotations: np.ndarray
    translation: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotations.ndim != 3 or self.rotations.shape[2] != 6:
            raise ShapeError(f"rotations must be (T, N, 6), got {self.rotations.shape}")
        t = self.rotations.shape[0]
        if t < 1:
            raise ShapeError("clip needs at least one frame")
        if self.translation.shape != (t, 3):
            raise ShapeError(
                f"translation must be ({t}, 3), got {self.translation.shape}"
            )
        if not self.fps > 0:
            raise ShapeError(f"fps must be positive, got {self.fps}")

    @property
    def num_frames(self):
        return self.rotations.shape[0]

    @property
    def num_joints(self):
        return self.rotations.shape[1]


def identity_rot6d(shape=()):
    """6D feature(s) of the identity rotation, shape (*shape, 6)."""
    r = np.zeros(tuple(shape) + (6,), dtype=np.float64)
    r[..., 0] = 1.0
    r[..., 4] = 1.0
    return r


def rest_pose_clip(skeleton: Skeleton, num_frames=1, fps=30.0) -> MotionClip:
    """All-identity clip with zero root translation."""
    rot = identity_rot6d((num_frames, skeleton.num_joints))
    return MotionClip(rot, np.zeros((num_frames, 3)), fps=fps)


# ---------------------------------------------------------------------------
# Rotation algebra
# ---------------------------------------------------------------------------

def rot6d_to_matrix(r) -> np.ndarray:
    """Decode 6D rotation features into rotation matrices.

    Gram-Schmidt on the two 3-vector halves, third column by cross product.
    Output is orthonormal with determinant +1.

    Parameters
    ----------
    r : array_like, shape (*, 6)

    Returns
    -------
    R : np.ndarray, shape (*, 3, 3)

    Raises
    ------
    InvalidRotationError
        If either half is (near) zero or the halves are (near) parallel,
        i.e. Gram-Schmidt is not well defined. Degenerate inputs are never
        silently projected; corrupted data should fail loudly.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise ShapeError(f"expected trailing dim 6, got {r.shape}")
    a1 = r[..., :3]
    a2 = r[..., 3:]

    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(n1 < _DEGENERACY_EPS):
        raise InvalidRotationError("first 6D column is (near) zero")
    b1 = a1 / n1[..., None]

    proj = np.sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - proj * b1
    n2 = np.linalg.norm(u2, axis=-1)
    if np.any(n2 < _DEGENERACY_EPS):
        raise InvalidRotationError("6D columns are (near) parallel or second is zero")
    b2 = u2 / n2[..., None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(matrix) -> np.ndarray:
    """Encode rotation matrices as 6D features (first two columns).

    Parameters
    ----------
    matrix : array_like, shape (*, 3, 3)
        Must be orthonormal with determinant +1 within 1e-6.

    Raises
    ------
    InvalidRotationError
        If the input is not a proper rotation.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ShapeError(f"expected (*, 3, 3), got {m.shape}")
    eye = np.eye(3)
    gram = np.einsum("...ji,...jk->...ik", m, m)
    if np.max(np.abs(gram - eye)) > 1e-6:
        raise InvalidRotationError("matrix is not orthonormal within 1e-6")
    if np.max(np.abs(np.linalg.det(m) - 1.0)) > 1e-6:
        raise InvalidRotationError("matrix determinant is not +1 within 1e-6")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def build_adjacency(skeleton: Skeleton) -> np.ndarray:
    """Binary symmetric bone adjacency (no self loops), shape (N, N)."""
    n = skeleton.num_joints
    a = np.zeros((n, n), dtype=np.float64)
    for child, parent in enumerate(skeleton.parents):
        if parent >= 0:
            a[child, parent] = 1.0
            a[parent, child] = 1.0
    return a


def build_normalized_adjacency(skeleton: Skeleton, add_self_loops=True) -> np.ndarray:
    """Degree-normalized adjacency D^{-1/2} A D^{-1/2}.

    Self loops (A := A + I) are added by default: without them an isolated
    node divides by zero and the token refinement loses self information.
    Pass add_self_loops=False for the strict bare form.

    Raises
    ------
    DegenerateDegreeError
        If a joint has zero degree (only possible with self loops disabled).
    """
    a = build_adjacency(skeleton)
    if add_self_loops:
        a = a + np.eye(skeleton.num_joints)
    degree = a.sum(axis=1)
    if np.any(degree <= 0):
        isolated = [skeleton.joints[i] for i in np.nonzero(degree <= 0)[0]]
        raise DegenerateDegreeError(f"zero-degree joints: {isolated}")
    d_inv_sqrt = 1.0 / np.sqrt(degree)
    return a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------

def forward_kinematics(skeleton: Skeleton, clip: MotionClip) -> np.ndarray:
    """Global joint positions from local rotations and the root track.

    The root sits at clip.translation; every child sits at its parent's
    position plus the parent's global rotation applied to the child offset.

    Returns
    -------
    positions : np.ndarray, shape (T, N, 3)
    """
    if clip.num_joints != skeleton.num_joints:
        raise ShapeError(
            f"clip has {clip.num_joints} joints, skeleton has {skeleton.num_joints}"
        )
    local = rot6d_to_matrix(clip.rotations)  # (T, N, 3, 3)
    t, n = clip.num_frames, clip.num_joints
    global_rot = np.empty_like(local)
    # Accumulate root-relative positions, then add the root track as one
    # broadcast so translation equivariance is exact.
    relative = np.empty((t, n, 3), dtype=np.float64)
    global_rot[:, 0] = local[:, 0]
    relative[:, 0] = 0.0
    for j in range(1, n):
        p = skeleton.parents[j]
        relative[:, j] = relative[:, p] + np.einsum(
            "tij,j->ti", global_rot[:, p], skeleton.offsets[j]
        )
        global_rot[:, j] = global_rot[:, p] @ local[:, j]
    return relative + clip.translation[:, None, :]


def joint_velocities(positions, fps) -> np.ndarray:
    """Forward-difference velocities of a (T, N, 3) position track.

    v_t = (p_{t+1} - p_t) * fps; the final frame repeats the penultimate
    velocity so the output keeps shape T. A single-frame track yields zeros.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[2] != 3:
        raise ShapeError(f"positions must be (T, N, 3), got {positions.shape}")
    t = positions.shape[0]
    if t == 1:
        return np.zeros_like(positions)
    v = np.empty_like(positions)
    v[:-1] = (positions[1:] - positions[:-1]) * fps
    v[-1] = v[-2]
    return v


# ---------------------------------------------------------------------------
# Body parts
# ---------------------------------------------------------------------------

def part_indices(skeleton: Skeleton):
    """Joint indices of each of the five parts, in BODY_PARTS order.

    Raises EmptyPartError if any part has no joints: the five-part grouping
    is part of the loss contract, so an empty group is a configuration bug.
    """
    if skeleton.part_map is None:
        raise EmptyPartError("skeleton has no part map attached")
    groups = []
    for part in BODY_PARTS:
        idx = [i for i, p in enumerate(skeleton.part_map) if p == part]
        if not idx:
            raise EmptyPartError(f"part {part!r} has no joints")
        groups.append(idx)
    return groups


def group_by_parts(rotations, skeleton: Skeleton) -> np.ndarray:
    """Average (T, N, 6) joint features into (T, 5, 6) body-part features.

    Group g is the arithmetic mean of the 6D features of the joints labeled
    with BODY_PARTS[g], per frame. This aligns joint count and order across
    structurally different skeletons.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.ndim != 3 or rotations.shape[1] != skeleton.num_joints:
        raise ShapeError(
            f"rotations must be (T, {skeleton.num_joints}, 6), got {rotations.shape}"
        )
    groups = part_indices(skeleton)
    return np.stack([rotations[:, idx].mean(axis=1) for idx in groups], axis=1)


# ---------------------------------------------------------------------------
# Sidecar part maps and the built-in canonical structure
# ---------------------------------------------------------------------------

def load_part_map(path) -> dict:
    """Load a sidecar part map: a JSON object {joint name: part label}."""
    with open(path, "r", encoding="utf-8") as f:
        mapping = json.load(f)
    if not isinstance(mapping, dict):
        raise ShapeError("part map sidecar must be a JSON object")
    return {str(k): str(v) for k, v in mapping.items()}


_CANONICAL_LAYOUT = [
    # name, parent, offset (meters), part
    ("pelvis", -1, (0.0, 0.0, 0.0), "torso"),
    ("spine1", 0, (0.0, 0.12, 0.0), "torso"),
    ("spine2", 1, (0.0, 0.13, 0.0), "torso"),
    ("spine3", 2, (0.0, 0.13, 0.0), "torso"),
    ("chest", 3, (0.0, 0.12, 0.0), "torso"),
    ("neck", 4, (0.0, 0.10, 0.0), "torso"),
    ("head", 5, (0.0, 0.12, 0.0), "torso"),
    ("left_collar", 4, (0.06, 0.06, 0.0), "left_arm"),
    ("left_shoulder", 7, (0.12, 0.0, 0.0), "left_arm"),
    ("left_elbow", 8, (0.26, 0.0, 0.0), "left_arm"),
    ("left_wrist", 9, (0.25, 0.0, 0.0), "left_arm"),
    ("right_collar", 4, (-0.06, 0.06, 0.0), "right_arm"),
    ("right_shoulder", 11, (-0.12, 0.0, 0.0), "right_arm"),
    ("right_elbow", 12, (-0.26, 0.0, 0.0), "right_arm"),
    ("right_wrist", 13, (-0.25, 0.0, 0.0), "right_arm"),
    ("left_hip", 0, (0.09, -0.06, 0.0), "left_leg"),
    ("left_knee", 15, (0.0, -0.38, 0.0), "left_leg"),
    ("left_ankle", 16, (0.0, -0.40, 0.0), "left_leg"),
    ("left_foot", 17, (0.0, -0.06, 0.12), "left_leg"),
    ("right_hip", 0, (-0.09, -0.06, 0.0), "right_leg"),
    ("right_knee", 19, (0.0, -0.38, 0.0), "right_leg"),
    ("right_ankle", 20, (0.0, -0.40, 0.0), "right_leg"),
    ("right_foot", 21, (0.0, -0.06, 0.12), "right_leg"),
]


def canonical_skeleton() -> Skeleton:
    """The built-in 23-joint humanoid that anchors the shared motion space.

    SMPL-inspired topology at human proportions, with the five-part map
    attached. All style embedding happens on this structure.
    """
    names = tuple(row[0] for row in _CANONICAL_LAYOUT)
    parents = tuple(row[1] for row in _CANONICAL_LAYOUT)
    offsets = np.array([row[2] for row in _CANONICAL_LAYOUT], dtype=np.float64)
    parts = tuple(row[3] for row in _CANONICAL_LAYOUT)
    return Skeleton(names, parents, offsets, part_map=parts)
