import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from motionstyle.errors import (
    EmptyPartError,
    InvalidRotationError,
    ShapeError,
)
from motionstyle.skeleton import (
    BODY_PARTS,
    MotionClip,
    Skeleton,
    build_normalized_adjacency,
    canonical_skeleton,
    forward_kinematics,
    group_by_parts,
    identity_rot6d,
    joint_velocities,
    matrix_to_rot6d,
    rest_pose_clip,
    rot6d_to_matrix,
)

from conftest import clip_from_rot6d, make_chain, random_tree


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def gram_schmidt_oracle(r6):
    """Naive scalar Gram-Schmidt + cross product, independent of the library."""
    a1, a2 = np.array(r6[:3], float), np.array(r6[3:], float)
    b1 = a1 / np.linalg.norm(a1)
    u2 = a2 - np.dot(b1, a2) * b1
    b2 = u2 / np.linalg.norm(u2)
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def normalized_adjacency_oracle(parents, self_loops=True):
    n = len(parents)
    a = np.zeros((n, n))
    for c, p in enumerate(parents):
        if p >= 0:
            a[c, p] = a[p, c] = 1.0
    if self_loops:
        a = a + np.eye(n)
    d = np.diag(a.sum(axis=1))
    d_inv_sqrt = np.diag(1.0 / np.sqrt(np.diag(d)))
    return d_inv_sqrt @ a @ d_inv_sqrt


def fk_oracle(skeleton, clip):
    """Per-frame, per-joint matrix composition with explicit loops."""
    t, n = clip.num_frames, clip.num_joints
    out = np.zeros((t, n, 3))
    for f in range(t):
        glob_rot = [None] * n
        glob_pos = [None] * n
        for j in range(n):
            local = gram_schmidt_oracle(clip.rotations[f, j])
            p = skeleton.parents[j]
            if p < 0:
                glob_rot[j] = local
                glob_pos[j] = clip.translation[f].copy()
            else:
                glob_pos[j] = glob_pos[p] + glob_rot[p] @ skeleton.offsets[j]
                glob_rot[j] = glob_rot[p] @ local
            out[f, j] = glob_pos[j]
    return out


def random_rot6d(rng, shape):
    mats = Rotation.random(int(np.prod(shape)), random_state=rng).as_matrix()
    r6 = np.concatenate([mats[:, :, 0], mats[:, :, 1]], axis=-1)
    return r6.reshape(tuple(shape) + (6,))


# ---------------------------------------------------------------------------
# rot6d <-> matrix
# ---------------------------------------------------------------------------

class TestRotation6D:
    def test_identity(self):
        np.testing.assert_allclose(
            rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-12
        )
        np.testing.assert_allclose(
            matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0], atol=1e-12
        )

    def test_ninety_about_z(self):
        # hand Gram-Schmidt: b1=(0,1,0), b2=(-1,0,0), b3=(0,0,1)
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        np.testing.assert_allclose(
            rot6d_to_matrix([0, 1, 0, -1, 0, 0]), expected, atol=1e-12
        )
        np.testing.assert_allclose(
            matrix_to_rot6d(expected), [0, 1, 0, -1, 0, 0], atol=1e-12
        )

    def test_unnormalized_input_orthonormalizes(self):
        # (2,0,0, 0.5,1,0) -> identity after Gram-Schmidt
        np.testing.assert_allclose(
            rot6d_to_matrix([2, 0, 0, 0.5, 1, 0]), np.eye(3), atol=1e-12
        )

    def test_matches_gram_schmidt_oracle(self, rng):
        for _ in range(50):
            r6 = rng.normal(size=6)
            np.testing.assert_allclose(
                rot6d_to_matrix(r6), gram_schmidt_oracle(r6), atol=1e-12
            )

    def test_round_trip_axis_angle(self):
        rng = np.random.default_rng(7)
        mats = Rotation.from_rotvec(rng.normal(size=(200, 3))).as_matrix()
        back = rot6d_to_matrix(matrix_to_rot6d(mats))
        np.testing.assert_allclose(back, mats, atol=1e-6)

    def test_output_is_rotation(self, rng):
        r6 = rng.normal(size=(100, 6))
        m = rot6d_to_matrix(r6)
        gram = np.einsum("bji,bjk->bik", m, m)
        np.testing.assert_allclose(gram, np.broadcast_to(np.eye(3), m.shape), atol=1e-6)
        np.testing.assert_allclose(np.linalg.det(m), 1.0, atol=1e-6)

    def test_degenerate_inputs_raise(self):
        with pytest.raises(InvalidRotationError):
            rot6d_to_matrix([0, 0, 0, 0, 1, 0])
        with pytest.raises(InvalidRotationError):
            rot6d_to_matrix([1, 0, 0, 2, 0, 0])  # parallel
        with pytest.raises(InvalidRotationError):
            rot6d_to_matrix([1, 0, 0, 0, 0, 0])

    def test_non_rotation_matrix_raises(self):
        with pytest.raises(InvalidRotationError):
            matrix_to_rot6d(np.eye(3) * 2.0)
        reflection = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(InvalidRotationError):
            matrix_to_rot6d(reflection)


# ---------------------------------------------------------------------------
# Adjacency
# ---------------------------------------------------------------------------

class TestNormalizedAdjacency:
    def test_single_joint_rejected_by_skeleton(self):
        with pytest.raises(ShapeError):
            Skeleton(("only",), (-1,), np.zeros((1, 3)))

    def test_two_joint_chain(self):
        s = make_chain(2)
        np.testing.assert_allclose(
            build_normalized_adjacency(s), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15
        )

    def test_three_joint_chain_matches_oracle(self):
        s = make_chain(3)
        got = build_normalized_adjacency(s)
        want = normalized_adjacency_oracle(s.parents)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_random_trees_match_oracle_and_spectrum(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 33))
            s = random_tree(rng, n)
            got = build_normalized_adjacency(s)
            np.testing.assert_allclose(
                got, normalized_adjacency_oracle(s.parents), atol=1e-12
            )
            np.testing.assert_allclose(got, got.T, atol=1e-15)
            assert np.all(got >= 0)
            eig = np.linalg.eigvalsh(got)
            assert eig.min() >= -1 - 1e-9 and eig.max() <= 1 + 1e-9

    def test_no_self_loops_works_on_chain(self):
        s = make_chain(3)
        got = build_normalized_adjacency(s, add_self_loops=False)
        want = normalized_adjacency_oracle(s.parents, self_loops=False)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_every_row_nonzero_with_self_loops(self, rng):
        s = random_tree(rng, 12)
        got = build_normalized_adjacency(s)
        assert np.all(got.sum(axis=1) > 0)


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

class TestForwardKinematics:
    def test_rest_pose_accumulates_offsets(self):
        s = make_chain(4, offset=(1.0, 0.5, 0.0))
        clip = rest_pose_clip(s, num_frames=2)
        pos = forward_kinematics(s, clip)
        for j in range(4):
            np.testing.assert_allclose(pos[:, j], [[j, j * 0.5, 0]] * 2, atol=1e-12)

    def test_root_rotation_moves_child(self):
        s = make_chain(2)
        rot = identity_rot6d((1, 2))
        rot[0, 0] = [0, 1, 0, -1, 0, 0]  # 90 deg about +z
        clip = clip_from_rot6d(rot)
        pos = forward_kinematics(s, clip)
        np.testing.assert_allclose(pos[0, 1], [0, 1, 0], atol=1e-12)

    def test_matches_composition_oracle(self, rng):
        s = random_tree(rng, 10)
        rot = random_rot6d(rng, (5, 10))
        clip = clip_from_rot6d(rot, translation=rng.normal(size=(5, 3)))
        np.testing.assert_allclose(
            forward_kinematics(s, clip), fk_oracle(s, clip), atol=1e-6
        )

    def test_translation_equivariance(self, rng):
        s = random_tree(rng, 6)
        rot = random_rot6d(rng, (4, 6))
        zero = clip_from_rot6d(rot)
        t = rng.normal(size=(4, 3))
        moved = MotionClip(zero.rotations, t, fps=zero.fps)
        # exact: translation enters as a single broadcast add
        np.testing.assert_array_equal(
            forward_kinematics(s, moved), forward_kinematics(s, zero) + t[:, None, :]
        )
        d = np.array([0.5, -2.0, 3.25])
        shifted = MotionClip(zero.rotations, t + d, fps=zero.fps)
        np.testing.assert_allclose(
            forward_kinematics(s, shifted), forward_kinematics(s, moved) + d,
            rtol=0, atol=1e-12,
        )

    def test_joint_count_mismatch(self, rng):
        s = make_chain(3)
        clip = clip_from_rot6d(identity_rot6d((1, 4)))
        with pytest.raises(ShapeError):
            forward_kinematics(s, clip)


# ---------------------------------------------------------------------------
# Velocities
# ---------------------------------------------------------------------------

class TestJointVelocities:
    def test_static_pose_zero(self):
        pos = np.ones((5, 3, 3))
        np.testing.assert_array_equal(joint_velocities(pos, 30.0), np.zeros_like(pos))

    def test_linear_motion(self):
        t = np.arange(6, dtype=float)
        pos = np.zeros((6, 1, 3))
        pos[:, 0, 0] = t
        v = joint_velocities(pos, 1.0)
        np.testing.assert_array_equal(v[..., 0], np.ones((6, 1)))

    def test_matches_finite_difference_oracle(self, rng):
        pos = np.sin(np.linspace(0, 4, 20))[:, None, None] * rng.normal(size=(1, 4, 3))
        fps = 24.0
        v = joint_velocities(pos, fps)
        for t in range(19):
            np.testing.assert_array_equal(v[t], (pos[t + 1] - pos[t]) * fps)
        np.testing.assert_array_equal(v[19], v[18])

    def test_single_frame_returns_zeros(self):
        assert np.all(joint_velocities(np.ones((1, 2, 3)), 30.0) == 0)


# ---------------------------------------------------------------------------
# Body-part grouping
# ---------------------------------------------------------------------------

class TestGroupByParts:
    def test_constant_field(self):
        s = canonical_skeleton()
        c = np.arange(6, dtype=float)
        rot = np.tile(c, (3, s.num_joints, 1))
        out = group_by_parts(rot, s)
        assert out.shape == (3, 5, 6)
        np.testing.assert_allclose(out, np.tile(c, (3, 5, 1)), atol=1e-15)

    def test_singleton_groups_copy(self, rng):
        s = make_chain(5, parts=BODY_PARTS)
        rot = rng.normal(size=(2, 5, 6))
        np.testing.assert_array_equal(group_by_parts(rot, s), rot)

    def test_matches_mean_oracle_on_canonical(self, rng):
        s = canonical_skeleton()
        rot = rng.normal(size=(4, s.num_joints, 6))
        out = group_by_parts(rot, s)
        for g, part in enumerate(BODY_PARTS):
            idx = [i for i, p in enumerate(s.part_map) if p == part]
            want = sum(rot[:, i] for i in idx) / len(idx)
            np.testing.assert_allclose(out[:, g], want, atol=1e-7)

    def test_permutation_within_part_invariant(self, rng):
        s = canonical_skeleton()
        rot = rng.normal(size=(3, s.num_joints, 6))
        # swap two joints that share the torso label
        torso = [i for i, p in enumerate(s.part_map) if p == "torso"][:2]
        swapped = rot.copy()
        swapped[:, torso[0]], swapped[:, torso[1]] = (
            rot[:, torso[1]].copy(),
            rot[:, torso[0]].copy(),
        )
        np.testing.assert_array_equal(
            group_by_parts(rot, s), group_by_parts(swapped, s)
        )

    def test_empty_part_raises(self):
        s = make_chain(3, parts=("torso", "torso", "left_arm"))
        with pytest.raises(EmptyPartError):
            group_by_parts(np.zeros((1, 3, 6)), s)

    def test_missing_part_map_raises(self):
        s = make_chain(3)
        with pytest.raises(EmptyPartError):
            group_by_parts(np.zeros((1, 3, 6)), s)


# ---------------------------------------------------------------------------
# Skeleton / clip invariants
# ---------------------------------------------------------------------------

class TestSkeletonValidation:
    def test_parent_after_child_rejected(self):
        with pytest.raises(ShapeError):
            Skeleton(("a", "b", "c"), (-1, 2, 0), np.zeros((3, 3)))

    def test_two_roots_rejected(self):
        with pytest.raises(ShapeError):
            Skeleton(("a", "b"), (-1, -1), np.zeros((2, 3)))

    def test_part_map_label_validated(self):
        with pytest.raises(ShapeError):
            make_chain(2, parts=("torso", "tail"))

    def test_with_part_map_requires_cover(self):
        s = make_chain(2)
        with pytest.raises(ShapeError):
            s.with_part_map({"j0": "torso"})
        s2 = s.with_part_map({"j0": "torso", "j1": "left_arm"})
        assert s2.part_map == ("torso", "left_arm")

    def test_canonical_skeleton_well_formed(self):
        s = canonical_skeleton()
        assert s.num_joints == 23
        assert set(s.part_map) == set(BODY_PARTS)
        build_normalized_adjacency(s)

    def test_clip_validation(self):
        with pytest.raises(ShapeError):
            MotionClip(np.zeros((2, 3, 5)), np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            MotionClip(np.zeros((2, 3, 6)), np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            MotionClip(np.zeros((2, 3, 6)), np.zeros((2, 3)), fps=0.0)
