import numpy as np
import pytest
from hypothesis import given, strategies as st

from dmrlab.errors import PositivityError, ResourceError, ValidationError
from dmrlab.hilbert import (DensityMatrix, LatticeSpace, PureState, build_hamiltonian,
                            diagonal_distribution, expectation, gaussian_packet, mix_density,
                            plane_wave, product_state, pure_to_density, purity,
                            spectral_derivative, trace_distance)

from conftest import random_density, random_state


def test_space_layout_is_c_order():
    sp = LatticeSpace(3, 4, 0.5)
    assert sp.dim == 64 and sp.shape == (4, 4, 4)
    assert sp.flat_index(np.array([[1, 2, 3]]))[0] == 1 * 16 + 2 * 4 + 3
    np.testing.assert_allclose(sp.coordinates[27], [0.5, 1.0, 1.5])
    assert sp.length == pytest.approx(2.0)
    assert sp.measure == pytest.approx(0.125)


def test_space_validation():
    with pytest.raises(ValidationError):
        LatticeSpace(0, 8)
    with pytest.raises(ValidationError):
        LatticeSpace(1, 1)
    with pytest.raises(ValidationError):
        LatticeSpace(1, 8, -1.0)
    with pytest.raises(ValidationError):
        LatticeSpace(2, 8, masses=(1.0,))
    with pytest.raises(ValidationError):
        LatticeSpace(2, 8, couplings=((0, 0, 1.0),))


def test_dense_guard():
    with pytest.raises(ResourceError):
        LatticeSpace(3, 20).require_dense()


def test_neighbor_and_wrap():
    sp = LatticeSpace(2, 5, 1.0)
    nb = sp.neighbor(1, 1)
    assert nb[sp.flat_index(np.array([[2, 4]]))[0]] == sp.flat_index(np.array([[2, 0]]))[0]
    np.testing.assert_allclose(sp.wrap(np.array([[5.5, -0.5]])), [[0.5, 4.5]])
    np.testing.assert_array_equal(sp.cell_of(np.array([[4.6, 0.4]])), [[0, 0]])


def test_pure_state_normalisation(ring):
    with pytest.raises(ValidationError):
        PureState(np.ones(ring.dim), ring)
    psi = PureState.from_values(np.ones(ring.dim), ring)
    assert np.sum(psi.probabilities) == pytest.approx(1.0, abs=1e-14)
    assert np.linalg.norm(psi.vector) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValidationError):
        PureState.from_values(np.zeros(ring.dim), ring)


def test_density_validation(ring, rng):
    with pytest.raises(ValidationError):
        DensityMatrix(np.eye(ring.dim), ring)
    m = rng.standard_normal((ring.dim, ring.dim))
    m = m / (np.trace(m) * ring.measure)
    with pytest.raises(ValidationError):
        DensityMatrix(m, ring)
    bad = np.diag(np.r_[1.5, -0.5, np.zeros(ring.dim - 2)])
    w = DensityMatrix.from_matrix(bad, ring)
    with pytest.raises(PositivityError):
        w.validate()
    with pytest.raises(PositivityError):
        diagonal_distribution(w)


def test_hamiltonian_hermitian_and_potential(pair):
    h = build_hamiltonian(pair, lambda x, y: 0.3 * (x - y) ** 2)
    np.testing.assert_allclose(h.matrix, h.matrix.conj().T, atol=1e-14)
    with pytest.raises(ValidationError):
        build_hamiltonian(pair, np.ones(3))


def test_free_spectrum_matches_lattice_dispersion():
    # eigenvalues of -1/(2m) times the three-point Laplacian on a ring
    m, a, n = 2.0, 0.3, 12
    sp = LatticeSpace(1, n, a, masses=(m,))
    ev = np.linalg.eigvalsh(build_hamiltonian(sp).matrix)
    k = 2 * np.pi * np.arange(n) / (n * a)
    expected = np.sort((1 - np.cos(k * a)) / (m * a ** 2))
    np.testing.assert_allclose(ev, expected, atol=1e-12)


def test_spectral_derivative_is_exact_on_band_limited_functions():
    n, a = 16, 0.4
    x = np.arange(n) * a
    L = n * a
    f = np.sin(2 * np.pi * 3 * x / L) + 0.5 * np.cos(2 * np.pi * 5 * x / L)
    df = (2 * np.pi * 3 / L) * np.cos(2 * np.pi * 3 * x / L) - 0.5 * (2 * np.pi * 5 / L) * np.sin(2 * np.pi * 5 * x / L)
    np.testing.assert_allclose(spectral_derivative(n, a) @ f, df, atol=1e-12)


def test_coupling_translates_pointer_rigidly():
    # plane wave k in particle 0 moves particle 1 with speed g * sin(ka)/a
    sp = LatticeSpace(2, 16, 2 * np.pi / 16, masses=(1.0, 1e6), couplings=((0, 1, 1.0),))
    one = sp.sub([0])
    k = 1.0
    ready = gaussian_packet(one, np.pi, 0.6)
    psi = product_state(sp, [plane_wave(one, k), ready])
    from dmrlab.dynamics import Propagator
    prop = Propagator(build_hamiltonian(sp))
    t = 0.5
    out = prop.evolve_vectors(psi.vector, t).reshape(16, 16)
    pointer = np.sum(np.abs(out) ** 2, axis=0)
    shift = np.sin(k * sp.spacing) / sp.spacing * t
    ref = gaussian_packet(one, np.pi + shift, 0.6)
    # shifted Gaussian evaluated in Fourier space (band-limited translation)
    spec = np.fft.fft(ready.vector) * np.exp(-1j * np.fft.fftfreq(16, sp.spacing) * 2 * np.pi * shift)
    np.testing.assert_allclose(pointer, np.abs(np.fft.ifft(spec)) ** 2, atol=1e-6)
    assert np.sum(pointer * sp.grid) == pytest.approx(np.sum(ref.probabilities * sp.grid), abs=1e-3)


def test_mix_density_rules(ring, rng):
    a, b = random_state(ring, rng), random_state(ring, rng)
    w = mix_density([(0.25, a), (0.75, b)])
    ref = 0.25 * pure_to_density(a).matrix + 0.75 * pure_to_density(b).matrix
    np.testing.assert_allclose(w.matrix, ref, atol=1e-14)
    with pytest.raises(ValidationError):
        mix_density([(0.5, a), (0.6, b)])
    with pytest.raises(ValidationError):
        mix_density([(1.2, a), (-0.2, b)])


def test_trace_distance_and_purity(ring, rng):
    p0 = plane_wave(ring, 0.0)
    p1 = plane_wave(ring, 2 * np.pi / ring.length)
    assert trace_distance(p0, p1) == pytest.approx(1.0, abs=1e-12)
    assert trace_distance(p0, p0) == pytest.approx(0.0, abs=1e-12)
    half = mix_density([(0.5, p0), (0.5, p1)])
    assert purity(half) == pytest.approx(0.5, abs=1e-12)
    assert trace_distance(half, p0) == pytest.approx(0.5, abs=1e-12)
    w = random_density(ring, rng)
    assert purity(w) <= 1 + 1e-12


def test_plane_wave_commensurability(ring):
    with pytest.raises(ValidationError):
        plane_wave(ring, 1.234)
    np.testing.assert_allclose(plane_wave(ring, 0.0).probabilities, 1 / ring.points)


def test_gaussian_packet_width():
    sp = LatticeSpace(1, 128, 0.1)
    g = gaussian_packet(sp, 6.4, 0.5, 3.0)
    p = g.probabilities
    mean = np.sum(p * sp.grid)
    assert mean == pytest.approx(6.4, abs=1e-9)
    assert np.sqrt(np.sum(p * (sp.grid - mean) ** 2)) == pytest.approx(0.5, rel=1e-6)


def test_product_state_factorises(pair, rng):
    one = pair.sub([0])
    a, b = random_state(one, rng), random_state(pair.sub([1]), rng)
    psi = product_state(pair, [a, b])
    np.testing.assert_allclose(psi.vector, np.kron(a.vector, b.vector), atol=1e-14)


def test_expectation_agrees_between_representations(pair, rng):
    psi = random_state(pair, rng)
    op = rng.standard_normal((pair.dim, pair.dim))
    assert expectation(psi, op) == pytest.approx(expectation(pure_to_density(psi), op), abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1))
def test_diagonal_distribution_sums_to_one(seed):
    sp = LatticeSpace(2, 4, 0.3)
    w = random_density(sp, np.random.default_rng(seed))
    p = diagonal_distribution(w)
    assert abs(p.sum() - 1) < 1e-12 and p.min() >= 0
    psi = random_state(sp, np.random.default_rng(seed))
    np.testing.assert_allclose(diagonal_distribution(pure_to_density(psi)), diagonal_distribution(psi), atol=1e-14)
