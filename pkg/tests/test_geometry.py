import numpy as np
import pytest

from arflow import geometry as geo
from arflow.errors import (
    DegenerateRotation,
    GridMismatch,
    GridTooLarge,
    InvalidConfig,
    NotARotation,
)


def chain_skeleton(k=3, offset=(0.0, 0.0, 1.0), radius=0.1):
    return geo.Skeleton(
        parents=tuple([-1] + list(range(k - 1))),
        offsets=np.tile(np.asarray(offset, dtype=float), (k, 1)),
        radii=np.full(k - 1, radius),
    )


def rz(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# 6D rotations
# ---------------------------------------------------------------------------

def test_decode_identity():
    assert np.allclose(geo.rot6d_decode([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-12)


def test_decode_quarter_turn_about_z():
    # hand Gram-Schmidt: columns (0,1,0), (-1,0,0), cross -> (0,0,1)
    m = geo.rot6d_decode([0, 1, 0, -1, 0, 0])
    assert np.allclose(m, rz(np.pi / 2), atol=1e-12)


def test_decode_normalizes_and_orthogonalizes():
    m = geo.rot6d_decode([2, 0, 0, 1, 1, 0])
    assert np.allclose(m, np.eye(3), atol=1e-12)


def test_decode_is_special_orthogonal():
    rng = np.random.default_rng(7)
    r = rng.normal(size=(50, 6))
    m = geo.rot6d_decode(r)
    assert np.allclose(np.einsum("nji,njk->nik", m, m), np.eye(3), atol=1e-9)
    assert np.allclose(np.linalg.det(m), 1.0, atol=1e-9)


@pytest.mark.parametrize("bad", [
    [0, 0, 0, 0, 1, 0],           # zero first column
    [1, 0, 0, 1e-12, 0, 0],       # zero second column
    [1, 0, 0, 2, 0, 0],           # parallel columns
    [1, 0, 0, -3, 0, 0],          # anti-parallel columns
])
def test_decode_degenerate(bad):
    with pytest.raises(DegenerateRotation):
        geo.rot6d_decode(bad)


def test_encode_identity_and_quarter_turn():
    assert np.allclose(geo.rot6d_encode(np.eye(3)), [1, 0, 0, 0, 1, 0])
    assert np.allclose(geo.rot6d_encode(rz(np.pi / 2)), [0, 1, 0, -1, 0, 0],
                       atol=1e-12)


def test_encode_decode_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(25):
        m = random_rotation(rng)
        assert np.allclose(geo.rot6d_decode(geo.rot6d_encode(m)), m, atol=1e-9)


def test_encode_rejects_non_rotation():
    with pytest.raises(NotARotation):
        geo.rot6d_encode(2.0 * np.eye(3))
    with pytest.raises(NotARotation):
        geo.rot6d_encode(np.diag([1.0, 1.0, -1.0]))


def test_decode_tape_matches_strict():
    from arflow import autodiff as ad
    rng = np.random.default_rng(3)
    r = rng.normal(size=(20, 6))
    got = geo.decode_rot6d_t(ad.constant(r)).data
    assert np.allclose(got, geo.rot6d_decode(r), atol=1e-10)


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

def test_fk_identity_chain():
    skel = chain_skeleton(3)
    pos = geo.forward_kinematics(skel, geo.identity_frame(skel))
    assert np.allclose(pos, [[0, 0, 0], [0, 0, 1], [0, 0, 2]], atol=1e-12)


def test_fk_translation_equivariance():
    skel = chain_skeleton(4)
    frame = geo.identity_frame(skel)
    base = geo.forward_kinematics(skel, frame)
    frame.root_trans = np.array([5.0, 0.0, 0.0])
    moved = geo.forward_kinematics(skel, frame)
    assert np.allclose(moved, base + np.array([5.0, 0.0, 0.0]), atol=1e-12)


def test_fk_root_rotation_turns_bone():
    skel = geo.Skeleton((-1, 0), np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([0.1]))
    frame = geo.identity_frame(skel)
    frame.root_rot = geo.rot6d_encode(rz(np.pi / 2))
    pos = geo.forward_kinematics(skel, frame)
    assert np.allclose(pos[1], pos[0] + np.array([0.0, 1.0, 0.0]), atol=1e-12)


def test_fk_rotation_equivariance():
    rng = np.random.default_rng(5)
    skel = chain_skeleton(4, offset=(0.3, 0.1, 0.5))
    frame = geo.identity_frame(skel)
    for j in range(4):
        frame.joint_rot[j] = geo.rot6d_encode(random_rotation(rng))
    frame.root_trans = rng.normal(size=3)
    base = geo.forward_kinematics(skel, frame)
    r = random_rotation(rng)
    frame.root_rot = geo.rot6d_encode(r @ geo.rot6d_decode(frame.root_rot))
    frame.root_trans = r @ frame.root_trans
    rotated = geo.forward_kinematics(skel, frame)
    assert np.allclose(rotated, base @ r.T, atol=1e-10)


def test_motion_fk_matches_per_frame():
    rng = np.random.default_rng(9)
    skel = chain_skeleton(5, offset=(0.2, 0.0, 0.4))
    frames = []
    for _ in range(6):
        f = geo.identity_frame(skel)
        for j in range(5):
            f.joint_rot[j] = geo.rot6d_encode(random_rotation(rng))
        f.root_rot = geo.rot6d_encode(random_rotation(rng))
        f.root_trans = rng.normal(size=3)
        frames.append(f)
    motion = geo.motion_from_frames(skel, frames)
    batched = geo.motion_joint_positions(skel, motion)
    for h, f in enumerate(frames):
        assert np.allclose(batched[h], geo.forward_kinematics(skel, f), atol=1e-12)


def test_fk_tape_matches_numpy():
    from arflow import autodiff as ad
    rng = np.random.default_rng(13)
    skel = chain_skeleton(4, offset=(0.3, 0.2, 0.1))
    motion = rng.normal(size=(5, skel.motion_dim))
    pos_t, rots_t = geo.fk_positions_t(skel, ad.constant(motion))
    assert np.allclose(pos_t.data, geo.motion_joint_positions(skel, motion), atol=1e-9)
    k = skel.joint_count
    rots = geo.rot6d_decode(motion[:, :6 * (k + 1)].reshape(5, k + 1, 6))
    assert np.allclose(rots_t.data, rots, atol=1e-9)


# ---------------------------------------------------------------------------
# Capsules and SDF
# ---------------------------------------------------------------------------

def test_body_capsules_basic():
    skel = chain_skeleton(2)
    caps = geo.body_capsules(skel, geo.identity_frame(skel))
    assert len(caps) == 1
    assert np.allclose(caps.seg_a[0], [0, 0, 0])
    assert np.allclose(caps.seg_b[0], [0, 0, 1])
    assert caps.radius[0] == pytest.approx(0.1)


def test_body_capsules_count_and_translation():
    skel = chain_skeleton(5)
    frame = geo.identity_frame(skel)
    caps = geo.body_capsules(skel, frame)
    assert len(caps) == 4
    frame.root_trans = np.array([1.0, 2.0, 3.0])
    moved = geo.body_capsules(skel, frame)
    assert np.allclose(moved.seg_a, caps.seg_a + np.array([1.0, 2.0, 3.0]))
    assert np.allclose(moved.seg_b, caps.seg_b + np.array([1.0, 2.0, 3.0]))


def one_capsule(a=(0, 0, 0), b=(1, 0, 0), r=0.1):
    return geo.CapsuleSet(np.array([a], float), np.array([b], float), np.array([r]))


def test_sdf_on_surface_and_axis():
    body = one_capsule()
    assert geo.body_sdf([0.5, 0.1, 0.0], body) == pytest.approx(0.0, abs=1e-12)
    assert geo.body_sdf([0.5, 0.0, 0.0], body) == pytest.approx(-0.1, abs=1e-12)


def test_sdf_two_capsules_hand_value():
    body = geo.CapsuleSet(
        np.array([[0.0, 0, 0], [10.0, 0, 0]]),
        np.array([[1.0, 0, 0], [11.0, 0, 0]]),
        np.array([0.1, 0.1]),
    )
    # point 0.5 above the near capsule's axis end: distance 0.5, minus radius
    assert geo.body_sdf([1.0, 0.5, 0.0], body) == pytest.approx(0.4, abs=1e-12)


def test_sdf_gradient_above_midpoint():
    body = one_capsule()
    g = geo.body_sdf_gradient([0.5, 0.0, 0.7], body)
    assert np.allclose(g, [0.0, 0.0, 1.0], atol=1e-12)


def test_sdf_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    body = geo.CapsuleSet(
        rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), np.array([0.2, 0.3, 0.15]))
    h = 1e-6
    checked = 0
    for _ in range(100):
        p = rng.normal(scale=1.5, size=3)
        sdfs = geo._capsule_sdfs(p.reshape(1, 3), body)[0]
        order = np.sort(sdfs)
        if len(order) > 1 and order[1] - order[0] < 1e-3:
            continue  # too close to a capsule-switch kink for FD
        if abs(geo.body_sdf(p, body)) < 1e-3:
            continue
        g = geo.body_sdf_gradient(p, body)
        fd = np.array([
            (geo.body_sdf(p + h * e, body) - geo.body_sdf(p - h * e, body)) / (2 * h)
            for e in np.eye(3)])
        assert np.linalg.norm(fd - g) / np.linalg.norm(fd) < 1e-5
        checked += 1
    assert checked >= 50


def test_sdf_gradient_radial_invariance():
    body = one_capsule()
    p = np.array([0.5, 0.6, 0.3])
    nearest = geo._segment_closest(p.reshape(1, 3), body)[0, 0]
    g1 = geo.body_sdf_gradient(p, body)
    g2 = geo.body_sdf_gradient(nearest + 3.0 * (p - nearest), body)
    assert np.allclose(g1, g2, atol=1e-12)


def test_sdf_gradient_tie_rule_on_axis():
    body = one_capsule(a=(0, 0, 0), b=(0, 0, 1), r=0.1)
    g = geo.body_sdf_gradient([0.0, 0.0, 0.5], body)
    assert np.allclose(g, [1.0, 0.0, 0.0], atol=1e-12)  # +x projected


def test_sdf_is_lipschitz():
    rng = np.random.default_rng(31)
    body = geo.CapsuleSet(
        rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), np.full(4, 0.2))
    p = rng.normal(scale=2.0, size=(200, 3))
    q = rng.normal(scale=2.0, size=(200, 3))
    sp = geo._capsule_sdfs(p, body).min(axis=1)
    sq = geo._capsule_sdfs(q, body).min(axis=1)
    assert np.all(np.abs(sp - sq) <= np.linalg.norm(p - q, axis=1) + 1e-12)


# ---------------------------------------------------------------------------
# Voxelization
# ---------------------------------------------------------------------------

def capsule_volume(length, r):
    return np.pi * r ** 2 * length + 4.0 / 3.0 * np.pi * r ** 3


def test_voxel_volume_close_to_analytic():
    r, length = 0.1, 0.6
    body = one_capsule(a=(0, 0, 0), b=(length, 0, 0), r=r)
    grid = geo.voxelize(body, voxel_size=r / 10.0)
    expected = capsule_volume(length, r)
    assert abs(grid.volume - expected) / expected < 0.05
    assert grid.volume == grid.occupied_count * grid.voxel_size ** 3


def test_voxel_refinement_converges():
    r, length = 0.1, 0.4
    body = one_capsule(a=(0, 0, 0), b=(length, 0, 0), r=r)
    expected = capsule_volume(length, r)
    errs = [abs(geo.voxelize(body, vs).volume - expected)
            for vs in (r / 2.0, r / 4.0, r / 8.0)]
    assert errs[2] < errs[0]
    assert errs[2] / expected < 0.05


def test_voxel_centers_can_all_miss_a_thin_body():
    body = one_capsule(a=(0.0, 0.0, 0.0), b=(0.05, 0.0, 0.0), r=0.01)
    grid = geo.voxelize(body, voxel_size=1.0, bounds=(np.full(3, -5.0), np.full(3, 5.0)))
    assert grid.occupied_count == 0


def test_voxel_additivity_of_disjoint_bodies():
    r = 0.1
    a = one_capsule(a=(0, 0, 0), b=(0.5, 0, 0), r=r)
    b = one_capsule(a=(10, 0, 0), b=(10.5, 0, 0), r=r)
    both = geo.CapsuleSet(np.vstack([a.seg_a, b.seg_a]),
                          np.vstack([a.seg_b, b.seg_b]),
                          np.concatenate([a.radius, b.radius]))
    vs = r / 8.0
    v_both = geo.voxelize(both, vs).volume
    v_sum = geo.voxelize(a, vs).volume + geo.voxelize(b, vs).volume
    assert abs(v_both - v_sum) <= 2 * vs ** 3


def test_voxel_bounds_enclose_body():
    body = one_capsule()
    grid = geo.voxelize(body, 0.05)
    lo, hi = body.aabb()
    assert np.all(grid.origin <= lo)
    assert np.all(grid.origin + np.array(grid.dims) * grid.voxel_size >= hi)


def test_voxelize_grid_too_large():
    with pytest.raises(GridTooLarge):
        geo.voxelize(one_capsule(), voxel_size=1e-5, max_voxels=10 ** 6)


def test_voxelize_rejects_non_enclosing_bounds():
    with pytest.raises(InvalidConfig):
        geo.voxelize(one_capsule(), 0.05, bounds=(np.zeros(3), np.full(3, 0.2)))


# ---------------------------------------------------------------------------
# Intersection volume
# ---------------------------------------------------------------------------

def test_intersection_identical_grids():
    body = one_capsule()
    g = geo.voxelize(body, 0.02)
    assert geo.intersection_volume_frame(g, g) == pytest.approx(g.volume)


def test_intersection_disjoint_and_symmetry():
    a = one_capsule(a=(0, 0, 0), b=(0.4, 0, 0), r=0.1)
    b = one_capsule(a=(3, 0, 0), b=(3.4, 0, 0), r=0.1)
    vs = 0.02
    bounds = geo.shared_bounds(a, b, vs)
    ga = geo.voxelize(a, vs, bounds)
    gb = geo.voxelize(b, vs, bounds)
    assert geo.intersection_volume_frame(ga, gb) == 0.0
    assert (geo.intersection_volume_frame(ga, gb)
            == geo.intersection_volume_frame(gb, ga))


def test_intersection_grid_mismatch():
    a = one_capsule()
    with pytest.raises(GridMismatch):
        geo.intersection_volume_frame(geo.voxelize(a, 0.02), geo.voxelize(a, 0.04))


def test_intersection_offset_capsules_vs_monte_carlo():
    r = 0.1
    a = one_capsule(a=(0, 0, 0), b=(0.4, 0, 0), r=r)
    b = one_capsule(a=(0, r, 0), b=(0.4, r, 0), r=r)
    vs = 0.01
    bounds = geo.shared_bounds(a, b, vs)
    vol = geo.intersection_volume_frame(geo.voxelize(a, vs, bounds),
                                        geo.voxelize(b, vs, bounds))
    # Monte-Carlo oracle over the overlap bounding box, 10^6 samples
    rng = np.random.default_rng(123)
    lo = np.array([-r, 0.0, -r])
    hi = np.array([0.4 + r, r + r, r])
    pts = rng.uniform(lo, hi, size=(10 ** 6, 3))
    inside = ((geo._capsule_sdfs(pts, a).min(axis=1) < 0)
              & (geo._capsule_sdfs(pts, b).min(axis=1) < 0))
    mc = inside.mean() * np.prod(hi - lo)
    assert vol > 0
    assert abs(vol - mc) / mc < 0.05


def test_fast_intersection_matches_full_grid():
    rng = np.random.default_rng(77)
    for _ in range(5):
        a = geo.CapsuleSet(rng.uniform(-0.4, 0.4, (3, 3)),
                           rng.uniform(-0.4, 0.4, (3, 3)),
                           rng.uniform(0.05, 0.15, 3))
        b = geo.CapsuleSet(rng.uniform(-0.4, 0.4, (3, 3)) + 0.15,
                           rng.uniform(-0.4, 0.4, (3, 3)) + 0.15,
                           rng.uniform(0.05, 0.15, 3))
        vs = 0.02
        bounds = geo.shared_bounds(a, b, vs)
        full = geo.intersection_volume_frame(geo.voxelize(a, vs, bounds),
                                             geo.voxelize(b, vs, bounds))
        assert geo.capsule_intersection_volume(a, b, vs) == full


def test_superposed_bodies_intersection_equals_volume():
    body = one_capsule(a=(0, 0, 0), b=(0.3, 0, 0), r=0.08)
    vs = 0.02
    bounds = geo.shared_bounds(body, body, vs)
    g = geo.voxelize(body, vs, bounds)
    assert geo.capsule_intersection_volume(body, body, vs) == g.volume
