
import numpy as np
import pytest
from hypothesis import given, strategies as st

from dmrlab import bohm, stats
from dmrlab.dynamics import LindbladSpec, Propagator, propagate_lindblad
from dmrlab.errors import EquivarianceError, NodeError, StepSizeError, ValidationError
from dmrlab.hilbert import (LatticeSpace, PureState, build_hamiltonian, diagonal_distribution,
                            gaussian_packet, mix_density, plane_wave, pure_to_density)

from conftest import random_density, random_state


def derivative_operator(space, particle):
    m, a = space.points, space.spacing
    shift = np.roll(np.eye(m), 1, axis=1)
    d1 = (shift - shift.T) / (2 * a)
    ops = [np.eye(m)] * space.particles
    ops[particle] = d1
    out = np.ones((1, 1))
    for op in ops:
        out = np.kron(out, op)
    return out


def eq5_velocity_on_grid(w):
    """Im[grad_q W(q, q')]_{q'=q} / W(q, q) by full matrix products."""
    sp = w.space
    diag = np.real(np.diagonal(w.entries))
    return np.stack([np.imag(np.diagonal(derivative_operator(sp, i) @ w.entries)) / diag / sp.masses[i]
                     for i in range(sp.particles)], axis=1)


@given(st.integers(0, 2 ** 32 - 1))
def test_pure_reduction_identity(seed):
    sp = LatticeSpace(2, 5, 0.4, masses=(1.0, 3.0))
    psi = random_state(sp, np.random.default_rng(seed))
    q = sp.coordinates
    np.testing.assert_allclose(bohm.velocity_field_density(pure_to_density(psi), q),
                               bohm.velocity_field_pure(psi, q), atol=1e-10, rtol=0)


def test_density_velocity_matches_matrix_oracle(pair, rng):
    w = random_density(pair, rng)
    np.testing.assert_allclose(bohm.velocity_field_density(w, pair.coordinates), eq5_velocity_on_grid(w),
                               atol=1e-10, rtol=1e-10)


def test_off_grid_velocity_is_ratio_of_linear_interpolants(ring, rng):
    w = random_density(ring, rng)
    flux = bohm.grid_flux_density(w.entries, ring)
    x = 3.3 * ring.spacing
    lam = 0.3
    cur = (1 - lam) * flux[3, 0] + lam * flux[4, 0]
    den = (1 - lam) * flux[3, 1] + lam * flux[4, 1]
    assert bohm.velocity_field_density(w, np.array([[x]]))[0, 0] == pytest.approx(cur / den, rel=1e-12)


def test_plane_wave_velocity():
    m, n = 2.0, 32
    sp = LatticeSpace(1, n, 2 * np.pi / n * 2, masses=(m,))
    k = 3.0
    v = bohm.velocity_field_pure(plane_wave(sp, k), sp.coordinates)
    a = sp.spacing
    np.testing.assert_allclose(v, np.sin(k * a) / (m * a), atol=1e-12)
    # continuum value hbar k / m up to O((ka)^2)
    assert abs(v[0, 0] - k / m) / (k / m) < (k * a) ** 2 / 6 * 1.01


def test_symmetric_plane_wave_mixture_is_at_rest(ring):
    k = 2 * np.pi / ring.length
    w = mix_density([(0.5, plane_wave(ring, k)), (0.5, plane_wave(ring, -k))])
    np.testing.assert_allclose(bohm.velocity_field_density(w, ring.coordinates), 0.0, atol=1e-12)


def test_free_packet_trajectory_matches_continuum_solution():
    # continuum Bohm trajectory of a spreading Gaussian: x(t) = c + (x0 - c) s(t)/s(0)
    sp = LatticeSpace(1, 256, 0.05)
    c, s0 = sp.length / 2, 1.0
    psi = gaussian_packet(sp, c, s0)
    guide = bohm.PureGuide(psi, Propagator(build_hamiltonian(sp)))
    ens = bohm.TrajectoryEnsemble(sp, np.array([[c + s0], [c - 0.5 * s0]]), [0, 1], 0)
    out = bohm.integrate_ensemble(ens, guide, 1.0, 0.01)
    st_ = s0 * np.sqrt(1 + (1.0 / (2 * s0 ** 2)) ** 2)
    np.testing.assert_allclose(out.positions[:, 0], [c + st_, c - 0.5 * st_], atol=2e-3)


def node_state():
    sp = LatticeSpace(1, 16, 0.5)
    return sp, PureState.from_function(sp, lambda x: np.sin(2 * np.pi * x / sp.length) + 0j)


def test_node_raises():
    sp, psi = node_state()
    with pytest.raises(NodeError):
        bohm.velocity_field_pure(psi, np.array([[0.1]]))
    assert np.isfinite(bohm.velocity_field_pure(psi, np.array([[2.0]]))).all()


def test_node_trajectories_are_flagged_and_frozen():
    sp, psi = node_state()
    guide = bohm.PureGuide(psi, Propagator(build_hamiltonian(sp)))
    pos = np.array([[0.1], [2.0], [4.1], [6.0]])
    ens = bohm.TrajectoryEnsemble(sp, pos, np.arange(4), 0)
    with pytest.warns(RuntimeWarning):
        out = bohm.integrate_ensemble(ens, guide, 0.2, 0.05)
    np.testing.assert_array_equal(out.flagged, [True, False, True, False])
    np.testing.assert_allclose(out.positions[out.flagged], pos[[0, 2]])
    with pytest.raises(EquivarianceError):
        bohm.integrate_ensemble(ens, guide, 0.2, 0.05, strict=True)


def test_courant_guard():
    sp = LatticeSpace(1, 32, 0.2)
    psi = gaussian_packet(sp, 3.2, 0.6, 5.0)
    guide = bohm.PureGuide(psi, Propagator(build_hamiltonian(sp)))
    ens = bohm.sample_initial(psi, 50, 1)
    with pytest.raises(StepSizeError):
        bohm.integrate_ensemble(ens, guide, 1.0, 0.5)


def test_sampling_follows_diagonal(pair, rng):
    w = random_density(pair, rng)
    ens = bohm.sample_initial(w, 20000, 5)
    assert bohm.equivariance_check(ens, w) < 0.03
    assert np.all((ens.positions >= 0) & (ens.positions < pair.length))


def test_streams_make_trajectories_reproducible_and_thread_invariant():
    sp = LatticeSpace(1, 32, 0.25)
    w = mix_density([(0.5, gaussian_packet(sp, 3.0, 0.5, 1.0)), (0.5, gaussian_packet(sp, 5.0, 0.5, -1.0))])
    guide = bohm.DensityGuide(w, Propagator(build_hamiltonian(sp)))
    a = bohm.integrate_ensemble(bohm.sample_initial(w, 400, 9), guide, 0.5, 0.01)
    b = bohm.integrate_ensemble(bohm.sample_initial(w, 400, 9), guide, 0.5, 0.01, threads=3)
    assert a.positions.tobytes() == b.positions.tobytes()
    # a trajectory's start depends only on (seed, index)
    tail = bohm.sample_initial(w, 10, 9, first_index=390)
    np.testing.assert_array_equal(tail.positions, bohm.sample_initial(w, 400, 9).positions[390:])


def test_density_guide_distribution_tracks_von_neumann(pair, rng):
    w = random_density(pair, rng, rank=2)
    prop = Propagator(build_hamiltonian(pair))
    guide = bohm.DensityGuide(w, prop)
    ref = prop.evolve_matrix(w.matrix, 0.8)
    np.testing.assert_allclose(guide.distribution(0.8), np.real(np.diagonal(ref)), atol=1e-12)


def test_lindblad_guide_distribution(ring, rng):
    w = random_density(ring, rng)
    h = build_hamiltonian(ring)
    spec = LindbladSpec.dephasing(ring.grid - ring.length / 2, 0.5)
    guide = bohm.LindbladGuide(w, h, spec, 0.002, 0.2)
    ref = propagate_lindblad(w, h, spec, 0.002, 100)
    np.testing.assert_allclose(guide.distribution(0.2), diagonal_distribution(ref), atol=1e-12)
    with pytest.raises(ValidationError):
        guide.field(0.5)


def test_equivariance_of_mixed_guidance():
    sp = LatticeSpace(1, 48, 0.25)
    w = mix_density([(0.7, gaussian_packet(sp, 4.0, 0.7, 1.0)), (0.3, gaussian_packet(sp, 8.0, 0.7, -2.0))])
    guide = bohm.DensityGuide(w, Propagator(build_hamiltonian(sp)))
    ens = bohm.integrate_ensemble(bohm.sample_initial(w, 20000, 2), guide, 1.5, 0.01)
    # one-sample noise floor at 32 bins and n = 2e4 is about 0.016
    assert bohm.equivariance_check(ens, guide.distribution(1.5)) < 0.03


def test_checked_equivalence_requires_consistent_decomposition(ring):
    k = 2 * np.pi / ring.length
    a, b = plane_wave(ring, k), plane_wave(ring, -k)
    w = mix_density([(0.5, a), (0.5, b)])
    prop = Propagator(build_hamiltonian(ring))
    with pytest.raises(ValidationError):
        bohm.checked_equivalence(w, [(0.9, a), (0.1, b)], prop, [0.1], 10, 0, 0.05)


def test_equivalence_report_on_small_mixture():
    sp = LatticeSpace(1, 32, 0.25)
    dec = [(0.5, gaussian_packet(sp, 3.0, 0.5, 1.0)), (0.5, gaussian_packet(sp, 5.0, 0.5, -1.0))]
    rep = bohm.checked_equivalence(mix_density(dec), dec, Propagator(build_hamiltonian(sp)),
                                      [0.3, 0.6], 4000, 3, 0.01)
    assert rep.max_tv() < 0.08 and min(rep.ks_pvalue) > 0.001
    assert sum(rep.branch_counts) == 4000


def test_histogram_helpers():
    sp = LatticeSpace(2, 8, 1.0)
    assert stats.default_bins(sp) == 4
    p = np.full(sp.dim, 1 / sp.dim)
    np.testing.assert_allclose(stats.binned_distribution(sp, p, 4), 1 / 16)
    assert stats.total_variation([1, 0], [0, 1]) == 1.0
