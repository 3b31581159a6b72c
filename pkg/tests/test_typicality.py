import numpy as np
import pytest
from scipy import stats as sps

from dmrlab import stats
from dmrlab import typicality as ty
from dmrlab.errors import ValidationError
from dmrlab.hilbert import DensityMatrix, PureState, purity, trace_distance


def test_constraint_validation(rng):
    with pytest.raises(ValidationError):
        ty.SubspaceConstraint(2, 2, np.ones((4, 2)))
    with pytest.raises(ValidationError):
        ty.SubspaceConstraint(2, 2, np.eye(3))
    c = ty.SubspaceConstraint.random(2, 3, 4, rng)
    np.testing.assert_allclose(c.basis.conj().T @ c.basis, np.eye(4), atol=1e-12)
    shell = ty.SubspaceConstraint.energy_shell(2, 8, (-0.5, 0.5), rng)
    assert 1 <= shell.rank < 16
    with pytest.raises(ValidationError):
        ty.make_constraint("nope", 2, 2, rng)


def test_rank_one_sampling_is_the_basis_vector(rng):
    c = ty.SubspaceConstraint.random(2, 2, 1, rng)
    psi = ty.sample_haar(c, rng)
    assert abs(np.vdot(c.basis[:, 0], psi.vector)) == pytest.approx(1.0, abs=1e-12)
    d = ty.trace_distances(c, 5, 0)
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_haar_overlaps_are_exchangeable(rng):
    c = ty.SubspaceConstraint.random(2, 3, 4, rng)
    vs = np.array([c.basis @ ty.haar_coefficients(4, rng) for _ in range(100000)])
    overlaps = np.abs(vs @ c.basis.conj()) ** 2
    np.testing.assert_allclose(overlaps.mean(axis=0), 0.25, rtol=0.01)


def test_average_projector_approaches_normalized_projection(rng):
    c = ty.SubspaceConstraint.random(2, 4, 8, rng)
    acc = np.zeros((8, 8), complex)
    for _ in range(10000):
        v = ty.sample_haar(c, rng).vector
        acc += np.outer(v, v.conj())
    assert trace_distance(DensityMatrix(acc / 10000), ty.normalized_projection(c)) <= 0.05


def test_normalized_projection(rng):
    full = ty.normalized_projection(ty.SubspaceConstraint.full(2, 3))
    np.testing.assert_allclose(full.matrix, np.eye(6) / 6, atol=1e-15)
    c = ty.SubspaceConstraint.random(3, 3, 4, rng)
    w = ty.normalized_projection(c)
    p = 4 * w.matrix
    np.testing.assert_allclose(p @ p, p, atol=1e-12)
    assert purity(w) == pytest.approx(0.25, abs=1e-12)
    one = ty.normalized_projection(ty.SubspaceConstraint.random(3, 3, 1, rng))
    assert purity(one) == pytest.approx(1.0, abs=1e-12)


def test_partial_trace_examples(rng):
    a = PureState.from_values(rng.standard_normal(3) + 1j * rng.standard_normal(3))
    b = PureState.from_values(rng.standard_normal(4) + 1j * rng.standard_normal(4))
    red = ty.reduce_to_subsystem(PureState(np.kron(a.vector, b.vector)), 3, 4)
    assert trace_distance(red, a) < 1e-12
    bell = PureState.from_values(np.eye(3).ravel())
    np.testing.assert_allclose(ty.reduce_to_subsystem(bell, 3, 3).matrix, np.eye(3) / 3, atol=1e-15)
    with pytest.raises(ValidationError):
        ty.reduce_to_subsystem(bell, 2, 4)


def test_partial_trace_defining_property(rng):
    g = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    w = DensityMatrix.from_matrix(g @ g.conj().T, renormalize=True)
    rho = ty.reduce_to_subsystem(w, 3, 4)
    for _ in range(20):
        h = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        obs = h + h.conj().T
        lhs = np.trace(rho.matrix @ obs)
        rhs = np.trace(w.matrix @ np.kron(obs, np.eye(4)))
        assert abs(lhs - rhs) < 1e-10


def test_partial_trace_is_linear(rng):
    states = [PureState.from_values(rng.standard_normal(8) + 1j * rng.standard_normal(8)) for _ in range(3)]
    p = np.array([0.2, 0.5, 0.3])
    mixed = DensityMatrix(sum(pi * np.outer(s.vector, s.vector.conj()) for pi, s in zip(p, states)))
    lhs = ty.reduce_to_subsystem(mixed, 2, 4).matrix
    rhs = sum(pi * ty.reduce_to_subsystem(s, 2, 4).matrix for pi, s in zip(p, states))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_reduced_projection_shortcut(rng):
    c = ty.SubspaceConstraint.random(2, 5, 3, rng)
    np.testing.assert_allclose(ty.reduced_projection(c).matrix,
                               ty.reduce_to_subsystem(ty.normalized_projection(c), 2, 5).matrix, atol=1e-14)


def test_small_environment_is_not_typical():
    row, = ty.typicality_experiment(2, [2], samples=200, seed=0)
    assert row.mean_d > 0.2 and row.r == 4


def test_typicality_trend_and_csv():
    rows = ty.typicality_experiment(4, [16, 64, 256], samples=200, seed=5)
    means = [r.mean_d for r in rows]
    assert means[0] > means[1] > means[2]
    text = ty.rows_to_csv(rows)
    assert text.splitlines()[0] == "d_S,d_E,r,samples,mean_D,max_D,std_D,seed"
    assert len(text.splitlines()) == 4
    with pytest.raises(ValidationError):
        ty.typicality_experiment(8, [4])


def test_thread_count_does_not_change_statistics():
    c = ty.SubspaceConstraint.full(3, 9)
    a = ty.trace_distances(c, 64, 2)
    b = ty.trace_distances(c, 64, 2, threads=4)
    assert a.tobytes() == b.tobytes()
    assert stats.fsum_stats(a) == stats.fsum_stats(a[::-1])


def test_haar_sampling_is_unitarily_invariant(rng):
    c = ty.SubspaceConstraint.random(3, 6, 9, rng)
    rotated = c.transformed(ty.haar_unitary(9, rng))
    a = ty.trace_distances(c, 500, 1)
    b = ty.trace_distances(rotated, 500, 2)
    assert sps.ks_2samp(a, b).pvalue > 0.01


def test_haar_unitary_is_unitary(rng):
    u = ty.haar_unitary(6, rng)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(6), atol=1e-12)


def test_projector_convergence_slope():
    c = ty.SubspaceConstraint.random(2, 4, 8, stats.stream(0, 9))
    sizes, means, slope = ty.projector_convergence(c, [100, 300, 1000, 3000], 1, repetitions=6)
    assert list(sizes) == [100, 300, 1000, 3000]
    assert means[0] > means[-1]
    assert -0.65 <= slope <= -0.35
