import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokestrack.geometry import (
    DomainGeometry, Patch, Pose, SolidShape, advance_rotation, axis_rotation, clearance, euler_from_rotation,
    fibonacci_sphere, in_q_delta, outer_boundary, project_rotation, reference_solid_boundary, rotation_from_euler,
    solid_boundary,
)

angles = st.floats(-np.pi, np.pi, allow_nan=False)
small = st.floats(-1.4, 1.4, allow_nan=False)
coord = st.floats(-0.5, 0.5, allow_nan=False)


def test_euler_identity_and_quarter_turn():
    assert np.array_equal(rotation_from_euler([0, 0, 0]), np.eye(3))
    R = rotation_from_euler([np.pi / 2, 0, 0])
    assert np.allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


def test_euler_orthogonal():
    R = rotation_from_euler([0.3, 0.2, 0.1])
    assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-12
    assert abs(np.linalg.det(R) - 1) <= 1e-12


def test_middle_factor_sign():
    s = np.sin(0.4)
    R = rotation_from_euler([0, 0.4, 0])
    assert R[0, 2] == pytest.approx(-s) and R[2, 0] == pytest.approx(s)


@given(angles, small, angles)
def test_euler_round_trip(t1, t2, t3):
    theta = np.array([t1, t2, t3])
    R = rotation_from_euler(theta)
    assert np.allclose(rotation_from_euler(euler_from_rotation(R)), R, atol=1e-12)


def test_advance_rotation_zero_rate():
    R = rotation_from_euler([0.3, -0.2, 1.0])
    assert np.allclose(advance_rotation(R, np.zeros(3), 0.1), R, atol=1e-15)


def test_advance_rotation_fourth_order():
    w, T = 2.0, 1.0
    exact = axis_rotation([0, 0, 1], w * T)
    errs = []
    for n in (10, 20, 40):
        R = np.eye(3)
        for _ in range(n):
            R = advance_rotation(R, [0, 0, w], T / n)
            assert np.linalg.norm(R.T @ R - np.eye(3)) <= 1e-12
        errs.append(np.linalg.norm(R - exact))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 3.7)


@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=9, max_size=9))
def test_projection_is_rotation(vals):
    M = np.array(vals).reshape(3, 3) + 3 * np.eye(3)
    Q = project_rotation(M)
    assert np.linalg.norm(Q.T @ Q - np.eye(3)) <= 1e-12
    assert np.linalg.det(Q) == pytest.approx(1.0)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        Pose(np.zeros(3), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Pose(np.zeros(3), 1.001 * np.eye(3))


def test_pose_arrays_are_read_only():
    p = Pose([0.1, 0, 0])
    with pytest.raises(ValueError):
        p.h[0] = 1.0


def test_shape_validation():
    with pytest.raises(ValueError):
        SolidShape.sphere(0.1, 0.0)
    with pytest.raises(ValueError):
        SolidShape.sphere(-0.1, 1.0)
    with pytest.raises(ValueError):
        SolidShape("ellipsoid", [0.1, 0.1, 0.1], 1.0, -np.eye(3))
    with pytest.raises(ValueError):
        DomainGeometry(delta=0.0)
    with pytest.raises(ValueError):
        DomainGeometry(gamma_cap=np.pi)


def test_sphere_area_default_resolution():
    shape = SolidShape.sphere(0.1, 1.0)
    disc = solid_boundary(shape, Pose(np.zeros(3)))
    assert disc.weights.sum() == pytest.approx(4 * np.pi * 0.01, rel=5e-3)


def test_area_second_order():
    shape = SolidShape.ellipsoid([0.12, 0.09, 0.07], 1.0)
    errs = [abs(reference_solid_boundary(shape, (n, 2 * n)).weights.sum() - shape.area()) for n in (8, 16, 32)]
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8)


def test_ellipsoid_area_formula_matches_sphere():
    assert SolidShape.ellipsoid([0.2, 0.2, 0.2], 1.0).area() == pytest.approx(4 * np.pi * 0.04)


def test_normals_unit_and_into_solid():
    shape = SolidShape.ellipsoid([0.12, 0.09, 0.07], 1.0)
    pose = Pose.from_euler([0.1, -0.2, 0.05], [0.3, 0.2, -0.4])
    disc = solid_boundary(shape, pose)
    assert np.max(np.abs(np.linalg.norm(disc.normals, axis=1) - 1)) <= 1e-12
    inside = disc.points + 1e-4 * disc.normals
    assert np.all(shape.contains(pose, inside))
    assert np.all(disc.tags == Patch.SOLID)


def test_degenerate_resolution_rejected():
    with pytest.raises(ValueError):
        solid_boundary(SolidShape.sphere(0.1, 1.0), Pose(np.zeros(3)), (3, 8))


def test_identity_pose_keeps_reference():
    shape = SolidShape.ellipsoid([0.12, 0.09, 0.07], 1.0)
    ref = reference_solid_boundary(shape)
    disc = solid_boundary(shape, Pose(np.zeros(3)))
    assert np.array_equal(ref.points, disc.points) and np.array_equal(ref.normals, disc.normals)


def test_translation_shifts_nodes():
    shape = SolidShape.sphere(0.1, 1.0)
    t = np.array([0.2, -0.1, 0.3])
    a = solid_boundary(shape, Pose(np.zeros(3)))
    b = solid_boundary(shape, Pose(t))
    assert np.allclose(b.points - a.points, t, atol=1e-15)


@settings(max_examples=25)
@given(coord, coord, coord, angles, small, angles, angles, small, angles)
def test_equivariance(x, y, z, a1, a2, a3, b1, b2, b3):
    shape = SolidShape.ellipsoid([0.12, 0.09, 0.07], 1.0)
    q = Pose.from_euler([x, y, z], [a1, a2, a3])
    qt = Pose.from_euler([z, x, y], [b1, b2, b3])
    lhs = solid_boundary(shape, q.compose(qt)).points
    rhs = q.apply(solid_boundary(shape, qt).points)
    assert np.max(np.abs(lhs - rhs)) <= 1e-14 * 10


def test_outer_boundary_area_and_cap():
    dom = DomainGeometry(radius=2.0)
    disc = outer_boundary(dom)
    assert disc.weights.sum() == pytest.approx(16 * np.pi, rel=1e-13)
    gamma = disc.select(Patch.GAMMA)
    assert 0 < gamma.sum() < len(disc)
    assert np.all(disc.points[gamma, 2] / 2.0 > np.cos(dom.gamma_cap))
    # flux of a smooth field through the sphere is integrated to roundoff
    assert abs(np.sum(disc.weights * disc.points[:, 2] ** 2 * disc.normals[:, 2])) <= 1e-13


def test_clearance_examples():
    shape, dom = SolidShape.sphere(0.1, 1.0), DomainGeometry()
    assert clearance(shape, Pose(np.zeros(3)), dom) == pytest.approx(0.9)
    assert clearance(shape, Pose([0.5, 0, 0]), dom) == pytest.approx(0.4)
    assert not in_q_delta(shape, Pose([0.85, 0, 0]), dom)
    assert in_q_delta(shape, Pose([0.5, 0, 0]), dom)


def test_clearance_ellipsoid_conservative():
    shape, dom = SolidShape.ellipsoid([0.2, 0.1, 0.1], 1.0), DomainGeometry()
    c = clearance(shape, Pose([0.5, 0, 0]), dom)
    assert 0.3 <= c <= 0.3 + 1e-2


def test_fibonacci_unit():
    x = fibonacci_sphere(100)
    assert np.allclose(np.linalg.norm(x, axis=1), 1)
    assert abs(x.mean(axis=0)).max() < 0.02
