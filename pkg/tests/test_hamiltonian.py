import itertools

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from nvsim.errors import ContractViolationError, InvalidParameterError
from nvsim.hamiltonian import (
    TETRAHEDRAL_AXES,
    NVParameters,
    SpinOperator,
    basis_labels,
    body_frame,
    build_hamiltonian,
    bulk_orientations,
    count_resolved_dips,
    eigensolve,
    gyromagnetic_ratios,
    make_parameters,
    odmr_spectrum,
    powder_spectrum,
    spin_operators,
    transitions_for,
)

AXIS = tuple(TETRAHEDRAL_AXES[0])


def aligned(b_tesla, **kw):
    return NVParameters(b_field=tuple(b_tesla * np.asarray(AXIS)), **kw)


def test_spin_operators_obey_commutation():
    o = spin_operators()
    assert np.allclose(o.sx @ o.sy - o.sy @ o.sx, 1j * o.sz)
    assert np.allclose(o.ix @ o.iy - o.iy @ o.ix, 1j * o.iz)
    # electron and nuclear operators commute
    assert np.allclose(o.sx @ o.iz, o.iz @ o.sx)
    assert np.allclose(o.sx @ o.sx + o.sy @ o.sy + o.sz @ o.sz, 2.0 * np.eye(9))


def test_hamiltonian_is_hermitian_with_expected_trace():
    p = NVParameters(b_field=(1e-3, -2e-3, 5e-3), e_strain=3e6)
    h = build_hamiltonian(p).entries
    assert np.max(np.abs(h - h.conj().T)) == 0.0
    # only D S_z^2 and P I_z^2 carry trace
    assert np.trace(h).real == pytest.approx(6 * (p.d_gs + p.p_quad), rel=1e-12)


def test_trace_is_independent_of_field_direction():
    b = np.array([1e-3, -2e-3, 5e-3])
    base = build_hamiltonian(NVParameters(b_field=tuple(b), e_strain=3e6)).trace()
    for rot in Rotation.random(20, random_state=4).as_matrix():
        p = NVParameters(b_field=tuple(rot @ b), e_strain=3e6)
        assert build_hamiltonian(p).trace() == pytest.approx(base, rel=1e-12)


def test_zero_field_energies_match_diagonal_closed_form():
    p = NVParameters(a_perp=0.0)
    levels = eigensolve(build_hamiltonian(p))
    for energy, (ms, mi) in zip(levels.eigenvalues, levels.labels):
        expected = p.d_gs * ms**2 + p.p_quad * mi**2 + p.a_par * ms * mi
        assert energy == pytest.approx(expected, abs=1e-3)
    assert sorted(levels.labels) == sorted(basis_labels())


def test_eigensolve_orthonormal_and_reconstructs():
    p = NVParameters(b_field=(2e-3, 1e-3, -4e-3), e_strain=1e6)
    h = build_hamiltonian(p)
    levels = eigensolve(h)
    v = levels.eigenvectors
    assert np.allclose(v.conj().T @ v, np.eye(9), atol=1e-12)
    scale = np.max(np.abs(h.entries))
    assert np.max(np.abs(levels.reconstruct() - h.entries)) < 1e-9 * scale
    assert np.all(np.diff(levels.eigenvalues) >= 0)


def test_non_hermitian_input_is_a_contract_violation():
    m = np.zeros((9, 9), dtype=complex)
    m[0, 1] = 1.0
    with pytest.raises(ContractViolationError):
        SpinOperator(m)
    with pytest.raises(ContractViolationError):
        eigensolve(m)


def test_degenerate_levels_get_distinct_product_labels():
    # zero field: |+1, m_I> and |-1, -m_I> share energies
    levels = eigensolve(build_hamiltonian(NVParameters()))
    assert sorted(levels.labels) == sorted(basis_labels())
    again = eigensolve(build_hamiltonian(NVParameters()))
    assert levels.labels == again.labels


def test_invalid_parameters_raise():
    with pytest.raises(InvalidParameterError):
        make_parameters(d_gs=-1.0)
    with pytest.raises(InvalidParameterError):
        make_parameters(nv_axis=(1.0, 1.0, 0.0))
    with pytest.raises(InvalidParameterError):
        make_parameters(b_field=(float("nan"), 0.0, 0.0))


def test_zero_field_lines_sit_at_zero_field_splitting():
    p = NVParameters().without_hyperfine()
    table = transitions_for(p)
    assert len(table) == 6
    assert np.allclose(table.frequencies, p.d_gs, atol=1e-3)
    assert np.allclose(table.amplitudes, 0.5, atol=1e-12)


def test_aligned_field_zeeman_lines():
    b = 0.01
    p = aligned(b).without_hyperfine()
    gamma_e, _ = gyromagnetic_ratios(p)
    assert gamma_e == pytest.approx(28.03e9, rel=1e-3)
    table = transitions_for(p)
    assert table.find((0, 0), (1, 0)).frequency == pytest.approx(p.d_gs + gamma_e * b, rel=1e-12)
    assert table.find((0, 0), (-1, 0)).frequency == pytest.approx(p.d_gs - gamma_e * b, rel=1e-12)


def test_hyperfine_triplet_spacing_matches_a_par():
    p = aligned(0.01)
    table = transitions_for(p)
    lines = [table.find((0, mi), (-1, mi)).frequency for mi in (1, 0, -1)]
    spacing = np.diff(sorted(lines))
    assert np.allclose(spacing, p.a_par, atol=2e4)


def test_body_frame_is_a_rotation_onto_the_axis():
    for axis in TETRAHEDRAL_AXES:
        r = body_frame(axis)
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.allclose(r[2], axis)
        assert np.linalg.det(r) == pytest.approx(1.0)


def test_spectrum_values_stay_within_contrast_band():
    p = aligned(2e-3)
    f = np.linspace(2.80e9, 2.94e9, 1401)
    spec = odmr_spectrum(bulk_orientations(p), f, linewidth=1e6, contrast=0.1)
    assert spec.values.max() <= 1.0
    assert spec.values.min() >= 0.9


def test_spectrum_returns_to_unity_far_from_every_line():
    p = aligned(2e-3)
    width = 1e6
    spec = odmr_spectrum(bulk_orientations(p), [2.87e9], linewidth=width, contrast=0.1)
    lo, hi = min(spec.centers) - 100 * width, max(spec.centers) + 100 * width
    far = odmr_spectrum(bulk_orientations(p), [lo, lo - 1e9, hi, hi + 1e9], linewidth=width, contrast=0.1)
    assert np.all(far.values <= 1.0)
    assert np.all(1.0 - far.values < 0.1 * 2.5e-5)


def test_spectrum_rejects_bad_inputs():
    f = np.linspace(2.8e9, 2.9e9, 11)
    with pytest.raises(InvalidParameterError):
        odmr_spectrum([NVParameters()], f, linewidth=0.0, contrast=0.1)
    with pytest.raises(InvalidParameterError):
        odmr_spectrum([NVParameters()], f, linewidth=1e6, contrast=1.5)
    with pytest.raises(InvalidParameterError):
        odmr_spectrum([], f, linewidth=1e6, contrast=0.1)


def test_bulk_field_along_100_gives_two_clusters():
    b = 10e-4  # 10 G
    p = NVParameters(b_field=(b, 0.0, 0.0)).without_hyperfine()
    f = np.linspace(2.80e9, 2.94e9, 701)
    spec = odmr_spectrum(bulk_orientations(p), f, linewidth=1e6, contrast=0.1)
    assert len(count_resolved_dips(spec)) == 2


def test_100_field_lines_do_not_depend_on_axis_order():
    p = NVParameters(b_field=(10e-4, 0.0, 0.0))
    per_axis = [transitions_for(p.with_axis(a)).frequencies for a in TETRAHEDRAL_AXES]
    # [100] makes the same angle with every NV axis
    for f in per_axis[1:]:
        np.testing.assert_allclose(f, per_axis[0], rtol=0, atol=1e-3)
    reference = np.sort(np.concatenate(per_axis))
    for order in itertools.permutations(range(4)):
        axes = TETRAHEDRAL_AXES[list(order)]
        lines = np.sort(np.concatenate([transitions_for(p.with_axis(a)).frequencies for a in axes]))
        np.testing.assert_allclose(lines, reference, rtol=0, atol=1e-3)


def test_bulk_generic_field_gives_eight_dips():
    direction = np.array([1.0, 2.0, 4.0]) / np.sqrt(21.0)
    p = NVParameters(b_field=tuple(10e-4 * direction)).without_hyperfine()
    f = np.linspace(2.80e9, 2.94e9, 701)
    spec = odmr_spectrum(bulk_orientations(p), f, linewidth=1e6, contrast=0.1)
    assert len(count_resolved_dips(spec)) == 8


def test_zero_field_strain_doublet_aligned_and_powder():
    e = 5e6
    p = NVParameters(e_strain=e).without_hyperfine()
    f = np.linspace(2.85e9, 2.89e9, 4001)  # 10 kHz grid
    expected = [p.d_gs - e, p.d_gs + e]

    aligned_dips = count_resolved_dips(odmr_spectrum([p], f, linewidth=1e6, contrast=0.1))
    assert len(aligned_dips) == 2
    assert np.allclose(aligned_dips, expected, atol=1e4)

    powder_dips = count_resolved_dips(powder_spectrum(p, f, n_samples=10_000, rng_seed=1))
    assert len(powder_dips) == 2
    assert np.allclose(powder_dips, expected, atol=1e4)


def test_count_resolved_dips_merges_close_minima():
    p = NVParameters(e_strain=0.4e6).without_hyperfine()
    f = np.linspace(2.86e9, 2.88e9, 2001)
    spec = odmr_spectrum([p], f, linewidth=0.2e6, contrast=0.1)
    assert len(count_resolved_dips(spec)) == 2
    assert len(count_resolved_dips(spec, min_separation=2e6)) == 1


def test_powder_spectrum_is_seeded():
    p = NVParameters(b_field=(0.0, 0.0, 2e-3)).without_hyperfine()
    f = np.linspace(2.80e9, 2.94e9, 201)
    a = powder_spectrum(p, f, n_samples=200, rng_seed=3)
    b = powder_spectrum(p, f, n_samples=200, rng_seed=3)
    assert np.array_equal(a.values, b.values)
