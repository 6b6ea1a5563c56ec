import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachlab.dynamics import (bias_forces, combined_bias, ee_position, forward_kinematics, inverse_dynamics, jacobian,
                               kinetic_energy, link_sphere_centers, mass_matrix)


def planar_closed_form(q, l1=1.0, l2=1.0, m1=1.0, m2=1.0, g=9.81):
    """Two-link arm with point masses at the link tips, gravity along -y."""
    c2 = np.cos(q[1])
    m = np.array([
        [m1 * l1**2 + m2 * (l1**2 + l2**2 + 2 * l1 * l2 * c2), m2 * (l2**2 + l1 * l2 * c2)],
        [m2 * (l2**2 + l1 * l2 * c2), m2 * l2**2],
    ])
    grav = np.array([
        (m1 + m2) * g * l1 * np.cos(q[0]) + m2 * g * l2 * np.cos(q[0] + q[1]),
        m2 * g * l2 * np.cos(q[0] + q[1]),
    ])
    return m, grav


def test_planar_fk_examples(planar2):
    np.testing.assert_allclose(ee_position(planar2, [0.0, 0.0]), [2, 0, 0], atol=1e-15)
    np.testing.assert_allclose(ee_position(planar2, [np.pi / 2, -np.pi / 2]), [1, 1, 0], atol=1e-15)


def test_planar_jacobian_example(planar2):
    np.testing.assert_allclose(jacobian(planar2, [0.0, 0.0]), [[0, 0], [2, 1], [0, 0]], atol=1e-15)


def test_planar_mass_and_gravity_closed_form(planar2, rng):
    for q in rng.uniform(-3, 3, size=(20, 2)):
        m_ref, g_ref = planar_closed_form(q)
        np.testing.assert_allclose(mass_matrix(planar2, q), m_ref, atol=1e-10, rtol=0)
        _, grav = bias_forces(planar2, q, np.zeros(2))
        np.testing.assert_allclose(grav, g_ref, atol=1e-10, rtol=0)
    np.testing.assert_allclose(mass_matrix(planar2, [0.3, 0.0]), [[5, 2], [2, 1]], atol=1e-12)


def test_planar_coriolis_closed_form(planar2, rng):
    # C qdot for point-mass tips: h = -m2 l1 l2 s2 (2 q1d q2d + q2d^2), m2 l1 l2 s2 q1d^2
    for q, qd in zip(rng.uniform(-3, 3, (10, 2)), rng.uniform(-2, 2, (10, 2))):
        s2 = np.sin(q[1])
        ref = np.array([-s2 * (2 * qd[0] * qd[1] + qd[1] ** 2), s2 * qd[0] ** 2])
        cor, _ = bias_forces(planar2, q, qd)
        np.testing.assert_allclose(cor, ref, atol=1e-10)


def fd_jacobian(model, q, eps=1e-6):
    cols = []
    for i in range(model.n):
        dq = np.zeros(model.n)
        dq[i] = eps
        cols.append((ee_position(model, q + dq) - ee_position(model, q - dq)) / (2 * eps))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("name", ["planar2", "spatial6"])
def test_jacobian_matches_finite_differences(name, request, rng):
    model = request.getfixturevalue(name)
    for q in rng.uniform(model.q_lower, model.q_upper, size=(25, model.n)):
        j = jacobian(model, q)
        ref = fd_jacobian(model, q)
        assert np.max(np.abs(j - ref)) <= 1e-6 * max(1.0, np.max(np.abs(ref)))


def test_batched_kinematics_match_single(spatial6, rng):
    qs = rng.uniform(spatial6.q_lower, spatial6.q_upper, size=(4, 3, 6))
    batch = jacobian(spatial6, qs)
    assert batch.shape == (4, 3, 3, 6)
    np.testing.assert_allclose(batch[2, 1], jacobian(spatial6, qs[2, 1]), atol=1e-14)
    np.testing.assert_allclose(mass_matrix(spatial6, qs)[3, 0], mass_matrix(spatial6, qs[3, 0]), atol=1e-14)


def test_mass_matrix_columns_match_inverse_dynamics(spatial6, rng):
    q = rng.uniform(spatial6.q_lower, spatial6.q_upper)
    m = mass_matrix(spatial6, q)
    zero = np.zeros(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = 1.0
        col = inverse_dynamics(spatial6, q, zero, e, gravity=np.zeros(3))
        np.testing.assert_allclose(m[:, i], col, atol=1e-12)


def test_inverse_dynamics_decomposition(spatial6, rng):
    q = rng.uniform(spatial6.q_lower, spatial6.q_upper)
    qd, qdd = rng.normal(size=6), rng.normal(size=6)
    tau = inverse_dynamics(spatial6, q, qd, qdd)
    np.testing.assert_allclose(tau, mass_matrix(spatial6, q) @ qdd + combined_bias(spatial6, q, qd), atol=1e-11)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=6, max_size=6))
def test_mass_matrix_symmetric_positive_definite(spatial6, q):
    m = mass_matrix(spatial6, np.array(q))
    np.testing.assert_allclose(m, m.T, atol=1e-14)
    assert np.linalg.eigvalsh(m).min() > 0


def test_kinetic_energy_is_quadratic_form(spatial6, rng):
    q, qd = rng.uniform(-1, 1, 6), rng.normal(size=6)
    assert kinetic_energy(spatial6, q, qd) == pytest.approx(0.5 * qd @ mass_matrix(spatial6, q) @ qd, rel=1e-12)


def test_mass_matrix_time_derivative_identity(spatial6, rng):
    """qdot^T (Mdot - 2 C) qdot = 0, i.e. Mdot qdot = 2 (C qdot) - dT/dq form check."""
    q, qd = rng.uniform(-1, 1, 6), rng.normal(size=6)
    eps = 1e-6
    mdot = (mass_matrix(spatial6, q + eps * qd) - mass_matrix(spatial6, q - eps * qd)) / (2 * eps)
    cor, _ = bias_forces(spatial6, q, qd)
    assert qd @ (mdot @ qd - 2 * cor) == pytest.approx(0.0, abs=1e-7)


def test_ee_velocity_is_jacobian_times_qdot(spatial6, rng):
    q, qd = rng.uniform(-1, 1, 6), rng.normal(size=6)
    pose, _ = forward_kinematics(spatial6, q, qd)
    np.testing.assert_allclose(pose.linear_velocity, jacobian(spatial6, q) @ qd, atol=1e-14)


def test_sphere_centres_follow_links(planar2):
    links, centers, radii = link_sphere_centers(planar2, np.array([0.0, 0.0]))
    assert centers.shape == (len(planar2.spheres), 3)
    # every sphere lies on the straight arm along +x
    np.testing.assert_allclose(centers[:, 1:], 0.0, atol=1e-15)
    assert np.all(centers[links == 1, 0] > 1.0 - 1e-12)
