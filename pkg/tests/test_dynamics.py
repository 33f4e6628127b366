import numpy as np
import pytest
from scipy.linalg import expm

from conftest import dense_liouvillian, from_bitmask_order, lowering_ops, to_bitmask_order
from superrad.couplings import build_matrices
from superrad.dynamics import (
    Drive,
    TimeGrid,
    dicke_peak,
    dicke_reference,
    dicke_setup,
    evolve_driven,
    evolve_master,
    evolve_master_truncated,
    make_setup,
)
from superrad.errors import BasisCoverageError, InvalidArgumentError
from superrad.geometry import build_chain, build_ring
from superrad.kernels import available_backends
from superrad.observables import emission_rate
from superrad.states import SpinBasis, coherent_spin_state, fully_inverted, ground


def _oracle(arr, basis, rho0, times, drive_h=None, tau=0.0):
    m = build_matrices(arr)
    L0 = dense_liouvillian(np.array(m.J), np.array(m.Gamma))
    Ld = dense_liouvillian(np.array(m.J), np.array(m.Gamma), drive_h) if drive_h is not None else L0
    dim = 1 << arr.n_atoms
    v0 = to_bitmask_order(basis, rho0).ravel(order="F")
    out = []
    for t in times:
        if t <= tau:
            v = expm(Ld * t) @ v0
        else:
            v = expm(L0 * (t - tau)) @ (expm(Ld * tau) @ v0)
        out.append(from_bitmask_order(basis, v.reshape(dim, dim, order="F")))
    return out


def test_single_atom_decays_exponentially():
    setup = make_setup(build_chain(1, 1.0))
    t = np.linspace(0, 5, 11)
    res = evolve_master(fully_inverted(setup.basis), setup, TimeGrid(t))
    np.testing.assert_allclose(res.n_exc, np.exp(-t), atol=1e-9)
    np.testing.assert_allclose(res.rate, np.exp(-t), atol=1e-9)


@pytest.mark.parametrize("mode", ["sector", "full"])
@pytest.mark.parametrize("arr", [build_chain(3, 0.2), build_ring(3, 0.6)])
def test_master_equation_matches_dense_oracle(arr, mode):
    setup = make_setup(arr)
    psi = coherent_spin_state(0.7, [0.2, 0.0, 1.0], arr, setup.basis)
    t = [0.0, 0.3, 1.1]
    res = evolve_master(psi, setup, TimeGrid(t), mode=mode, keep_states=True)
    ref = _oracle(arr, setup.basis, psi.to_density().matrix, t)
    for st, r in zip(res.states, ref):
        if mode == "full":
            np.testing.assert_allclose(st.matrix, r, atol=1e-9)
        else:
            # sector mode keeps only the number-conserving blocks
            b = setup.basis
            for h in range(b.n_sectors):
                sl = b.sector_slice(h)
                np.testing.assert_allclose(st.matrix[sl, sl], r[sl, sl], atol=1e-9)


def test_generator_equivalence_site_vs_jump():
    arr = build_chain(4, 0.35)
    setup = make_setup(arr)
    psi = coherent_spin_state(0.4, [0, 0, 1], arr, setup.basis)
    g = TimeGrid(np.linspace(0, 2, 5))
    a = evolve_master(psi, setup, g, mode="full", keep_states=True)
    b = evolve_master(psi, setup, g, generator="jump", keep_states=True)
    for x, y in zip(a.states, b.states):
        assert np.max(np.abs(x.matrix - y.matrix)) < 1e-8


def test_trace_and_monotone_excitation():
    setup = make_setup(build_chain(6, 0.25))
    res = evolve_master(fully_inverted(setup.basis), setup, TimeGrid(np.linspace(0, 6, 61)))
    assert np.max(np.abs(res.trace - 1.0)) < 1e-6
    assert np.all(np.diff(res.n_exc) <= 1e-10)
    assert res.rate[0] == pytest.approx(6.0, abs=1e-10)


def test_truncated_blocks_equal_full_blocks():
    # kept shells never receive population from dropped ones
    arr = build_chain(6, 0.15)
    full = make_setup(arr)
    trunc = make_setup(arr, max_holes=2)
    g = TimeGrid(np.linspace(0, 0.4, 5))
    a = evolve_master(fully_inverted(full.basis), full, g, keep_states=True)
    b = evolve_master_truncated(fully_inverted(trunc.basis), trunc, g, keep_states=True)
    d = trunc.basis.dim
    for x, y in zip(a.states, b.states):
        np.testing.assert_allclose(y.matrix, x.matrix[:d, :d], atol=1e-10)
    assert np.all(np.diff(b.trace) <= 1e-12)
    np.testing.assert_allclose(b.norm_deficit, 1.0 - b.trace, atol=1e-15)


def test_truncated_deficit_flag():
    arr = build_chain(5, 0.2)
    setup = make_setup(arr, max_holes=1)
    res = evolve_master_truncated(fully_inverted(setup.basis), setup, TimeGrid([0.0, 1.0]))
    assert res.deficit_exceeded and res.norm_deficit[-1] > 0.05


def test_stiff_short_distance_uses_exact_propagation():
    arr = build_chain(2, 0.001)
    setup = make_setup(arr)
    t = [0.0, 0.5, 1.0]
    res = evolve_master(fully_inverted(setup.basis), setup, TimeGrid(t), keep_states=True)
    assert res.diagnostics["method"] == "expm"
    ref = _oracle(arr, setup.basis, fully_inverted(setup.basis).to_density().matrix, t)
    for st, r in zip(res.states, ref):
        np.testing.assert_allclose(np.diag(st.matrix).real, np.diag(r).real, atol=1e-8)


def test_driven_evolution_matches_oracle():
    arr = build_chain(3, 0.4)
    k = (0.0, 0.0, 1.0)
    omega, tau = 1.7, 0.6
    setup = make_setup(arr, drive=Drive(omega, k, tau))
    t = [0.0, 0.3, 0.6, 1.5]
    out = evolve_driven(ground(setup.basis), setup, TimeGrid(t))
    s = lowering_ops(3)
    ph = np.exp(2j * np.pi * arr.positions @ np.array(k))
    raise_sum = sum(ph[j] * s[j].T for j in range(3))
    hd = 0.5 * omega * (raise_sum + raise_sum.conj().T)
    ref = _oracle(arr, setup.basis, ground(setup.basis).to_density().matrix, t, hd, tau)
    for st, r in zip(out.series.states, ref):
        np.testing.assert_allclose(st.matrix, r, atol=1e-8)
    np.testing.assert_allclose(out.state_at_tau.matrix, ref[2], atol=1e-8)
    with pytest.raises(InvalidArgumentError):
        evolve_master(ground(setup.basis), setup, TimeGrid(t), mode="sector")


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled extension not built")
def test_backends_give_same_dynamics():
    arr = build_chain(5, 0.3)
    g = TimeGrid(np.linspace(0, 1, 6))
    r = [evolve_master(fully_inverted(SpinBasis(5)), make_setup(arr, backend=b), g).rate
         for b in available_backends()]
    np.testing.assert_allclose(r[0], r[1], atol=1e-11)


def test_rate_matches_jump_form():
    arr = build_chain(4, 0.3)
    setup = make_setup(arr)
    res = evolve_master(fully_inverted(setup.basis), setup, TimeGrid([0.0, 0.5]), keep_states=True)
    assert emission_rate(res.states[1], setup.jump_basis) == pytest.approx(res.rate[1], abs=1e-12)


def test_caps_and_basis_checks():
    with pytest.raises(InvalidArgumentError):
        evolve_master(fully_inverted(SpinBasis(15)), make_setup(build_chain(15, 0.3)),
                      TimeGrid([0.0, 1.0]))
    s = make_setup(build_chain(4, 0.3), max_holes=1)
    with pytest.raises(BasisCoverageError):
        evolve_master(fully_inverted(s.basis), s, TimeGrid([0.0, 1.0]))


def test_dicke_ladder_oracle():
    t = np.linspace(0, 3, 13)
    dk = dicke_reference(2, t)
    np.testing.assert_allclose(dk.rate, 2 * np.exp(-2 * t) * (1 + 2 * t), atol=1e-12)
    setup = dicke_setup(3)
    res = evolve_master(fully_inverted(setup.basis), setup, TimeGrid(t))
    np.testing.assert_allclose(res.rate, dicke_reference(3, t).rate, atol=1e-7)
    tp, rp = dicke_peak(6)
    assert tp > 0 and rp > 6
    t_fine = np.linspace(tp - 1e-3, tp + 1e-3, 5)
    assert np.all(dicke_reference(6, t_fine).rate <= rp + 1e-9)


def test_time_grid_validation():
    with pytest.raises(InvalidArgumentError):
        TimeGrid([0.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        TimeGrid([1.0, 2.0], t_start=1.5)
    assert TimeGrid.linspace(2.0, 5).samples[-1] == 2.0
