import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from spinsqueeze.errors import NumericalFailure
from spinsqueeze.optimal_curves import MuSweep, compute_curve, ground_state_of
from spinsqueeze.spin_core import Spin, StateVector, build_operators, coherent_state, jx_eigenstate, moments, random_state
from spinsqueeze.squeezing_dynamics import (
    TRAJECTORY_HEADER,
    HamiltonianSpec,
    compare_to_frontier,
    ehrenfest_slope_check,
    energy,
    evolve,
    final_fidelity,
    min_transverse_variance,
    one_axis_trajectory,
)


def ramp(T, chi=1.0, omega=-1.0):
    return HamiltonianSpec("adiabatic_ramp", omega=omega, chi=chi, ramp_time=T)


def _scan(ax, ay, mx, my, phis):
    c, s = np.cos(phis), np.sin(phis)
    var = (
        c * c * np.vdot(ax, ax).real + s * s * np.vdot(ay, ay).real + 2 * c * s * np.vdot(ax, ay).real
        - (c * mx + s * my) ** 2
    )
    i = int(np.argmin(var))
    return var[i], phis[i]


def phi_grid_min(state, n=10_000):
    """Brute-force scan of Var(cos(phi) Jx + sin(phi) Jy): a coarse grid, then a fine one around its best."""
    ops = build_operators(state.spin)
    a = state.amplitudes
    ax, ay = ops.jx.entries @ a, ops.jy.entries @ a
    mx, my = np.vdot(a, ax).real, np.vdot(a, ay).real
    step = np.pi / n
    _, phi0 = _scan(ax, ay, mx, my, np.linspace(-np.pi / 2, np.pi / 2, n, endpoint=False))
    return _scan(ax, ay, mx, my, np.linspace(phi0 - step, phi0 + step, n))


class TestSpec:
    def test_kinds_normalised(self):
        assert HamiltonianSpec("one-axis").kind == "one_axis"
        assert HamiltonianSpec("adiabatic", omega=-1, chi=1, ramp_time=5).kind == "adiabatic_ramp"

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="three_axis"),
            dict(kind="adiabatic_ramp", omega=1.0, chi=1.0, ramp_time=1.0),
            dict(kind="adiabatic_ramp", omega=-1.0, chi=1.0),
            dict(kind="adiabatic_ramp", omega=-1.0, chi=lambda t: 1.0 + t, ramp_time=1.0),
            dict(kind="adiabatic_ramp", omega=-1.0, chi=lambda t: math.sin(10 * t), ramp_time=1.0),
            dict(kind="one_axis", chi=lambda t: t),
            dict(kind="one_axis", chi=math.inf),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            HamiltonianSpec(**kwargs)

    def test_linear_ramp(self):
        spec = ramp(10.0, chi=2.0)
        assert spec.chi_at(0) == 0 and spec.chi_at(5) == 1.0 and spec.chi_at(20) == 2.0
        assert spec.final_mu() == -0.5


def test_initial_sample_is_coherent():
    tr = one_axis_trajectory(Spin(20), 0.1, 11)
    m = tr.moments[0]
    assert m.var_jx == pytest.approx(5.0) and m.mean_jz == pytest.approx(10.0)
    assert tr.min_transverse_variance[0] == pytest.approx(5.0)
    assert tr.optimal_angle[0] == 0.0


def test_one_axis_squeezes_slightly():
    tr = evolve(coherent_state(Spin(20)), HamiltonianSpec("one_axis", chi=1.0), [0.0, 0.05])
    v, mz = tr.min_transverse_variance[1], tr.moments[1].mean_jz
    assert v < 5.0 and 9.5 < mz < 10.0


@pytest.mark.parametrize("kind,omega", [("one_axis", 0.0), ("one_axis", 0.7), ("two_axis", 0.0), ("two_axis", -0.3)])
def test_constant_h_matches_brute_force(kind, omega, rng):
    spin = Spin(6)
    spec = HamiltonianSpec(kind, omega=omega, chi=0.9)
    psi0 = random_state(spin, rng)
    times = [0.0, 0.3, 1.1, 2.0]
    tr = evolve(psi0, spec, times)
    h = spec.matrix(spin)
    for t, st_ in zip(times, tr.states):
        ref = expm(-1j * h * t) @ psi0.amplitudes
        assert np.allclose(st_.amplitudes, ref, atol=1e-10)


def test_ramp_matches_fine_brute_force():
    spin = Spin(4)
    spec = ramp(6.0)
    times = [0.0, 2.0, 6.0]
    tr = evolve(coherent_state(spin), spec, times)
    psi = coherent_state(spin).amplitudes.astype(complex)
    n = 12000
    h = 6.0 / n
    refs = [psi.copy()]
    for i in range(n):
        psi = expm(-1j * h * spec.matrix(spin, (i + 0.5) * h)) @ psi  # midpoint rule, error ~h^2
        if i + 1 == n // 3:
            refs.append(psi.copy())
    refs.append(psi)
    for st_, ref in zip(tr.states, refs):
        assert abs(np.vdot(ref, st_.amplitudes)) ** 2 == pytest.approx(1.0, abs=1e-7)
    assert tr.accuracy < 1e-8


def test_step_control_failure():
    with pytest.raises(NumericalFailure) as info:
        evolve(coherent_state(Spin(4)), ramp(5.0), [0.0, 5.0], tol=1e-30, max_halvings=2)
    assert info.value.residual > 0


def test_times_validated():
    spec = HamiltonianSpec("one_axis")
    with pytest.raises(ValueError):
        evolve(coherent_state(Spin(2)), spec, [0.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        evolve(coherent_state(Spin(2)), spec, [-1.0, 0.0])


def test_min_transverse_variance_examples():
    v, ang = min_transverse_variance(coherent_state(Spin(7)))
    assert v == pytest.approx(1.75) and ang == 0.0
    v, ang = min_transverse_variance(jx_eigenstate(Spin(1), 0.5))
    assert v == pytest.approx(0.0, abs=1e-15) and ang == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("chi_t", [0.01, 0.05, 0.2])
def test_min_transverse_variance_matches_phi_grid(chi_t):
    state = evolve(coherent_state(Spin(20)), HamiltonianSpec("one_axis"), [chi_t]).states[0]
    v, ang = min_transverse_variance(state)
    ref_v, ref_ang = phi_grid_min(state)
    assert v == pytest.approx(ref_v, abs=1e-8)
    assert abs(v - ref_v) <= 1e-8 and v <= ref_v + 1e-12
    assert abs(ang - ref_ang) < 1e-3


@given(seed=st.integers(0, 2**31), two_j=st.sampled_from([1, 3, 8]))
def test_min_transverse_variance_is_a_minimum(seed, two_j):
    state = random_state(Spin(two_j), np.random.default_rng(seed))
    v, ang = min_transverse_variance(state)
    m = moments(state)
    assert v <= min(m.var_jx, m.var_jy) + 1e-12
    ref_v, _ = phi_grid_min(state, n=720)
    assert v <= ref_v + 1e-12 and ref_v - v < 1e-3 * max(1.0, ref_v)


@pytest.mark.parametrize("kind", ["one_axis", "two_axis"])
def test_unitarity_and_energy(kind, rng):
    spin = Spin(9)
    spec = HamiltonianSpec(kind, omega=0.4, chi=1.3)
    psi0 = random_state(spin, rng)
    tr = evolve(psi0, spec, np.linspace(0, 5, 41))
    assert np.max(np.abs(tr.norms - 1)) < 1e-9
    e = [energy(spec, s) for s in tr.states]
    assert np.ptp(e) < 1e-9


def test_ramp_unitarity():
    tr = evolve(coherent_state(Spin(6)), ramp(20.0), np.linspace(0, 20, 11))
    assert np.max(np.abs(tr.norms - 1)) < 1e-9


@given(t=st.floats(0.0, 0.6))
def test_frontier_dominance_one_axis(t):
    spin = Spin(10)
    tr = one_axis_trajectory(spin, max(t, 1e-6), 2)
    rows = compare_to_frontier(tr, _table(10))
    assert all(r.excess >= -1e-7 for r in rows)


def test_frontier_dominance_two_axis_half_integer():
    spin = Spin(9)
    tr = evolve(coherent_state(spin), HamiltonianSpec("two_axis"), np.linspace(0, 0.6, 61))
    rows = compare_to_frontier(tr, _table(9))
    assert all(r.excess >= -1e-7 for r in rows)
    assert {r.source for r in rows} <= {"envelope", "analytic"}
    # squeezed axis stays at 45 degrees
    assert np.allclose(np.abs(tr.optimal_angle[1:20]), np.pi / 4, atol=1e-9)


_TABLES = {}


def _table(two_j):
    if two_j not in _TABLES:
        _TABLES[two_j] = compute_curve(Spin(two_j), MuSweep(lo=1e-3, hi=1e3, per_decade=40))
    return _TABLES[two_j]


def test_one_axis_near_optimum_at_large_x():
    tr = one_axis_trajectory(Spin(20), 0.3, 301)
    rows = [r for r in compare_to_frontier(tr, _table(20)) if r.x >= 0.95]
    assert len(rows) > 20
    assert max(r.scaled_variance / r.envelope - 1 for r in rows) < 0.2


@pytest.mark.parametrize("two_j", [4, 8])
def test_adiabatic_tracking_and_slowing(two_j):
    fids = []
    for T in (25.0, 50.0, 100.0, 200.0):
        spec = ramp(T)
        tr = evolve(coherent_state(Spin(two_j)), spec, np.linspace(0, T, 5))
        fids.append(final_fidelity(spec, tr))
    assert fids[-1] >= 0.999
    assert all(b >= a - 1e-12 for a, b in zip(fids, fids[1:]))
    target, _ = ground_state_of(-1.0, Spin(two_j))
    assert tr.states[-1].fidelity(target) == pytest.approx(fids[-1])


def test_ehrenfest_slow_ramp():
    spec = ramp(200.0)
    tr = evolve(coherent_state(Spin(4)), spec, np.linspace(0, 200, 2001))
    rep = ehrenfest_slope_check(spec, tr)
    assert rep.adiabatic and rep.resolved and rep.passed
    assert rep.max_deviation < 1e-2
    assert rep.points_checked > 1000


def test_ehrenfest_tolerance_shrinks_with_time():
    devs = []
    for T in (50.0, 200.0):
        spec = ramp(T)
        tr = evolve(coherent_state(Spin(4)), spec, np.linspace(0, T, int(10 * T) + 1))
        rep = ehrenfest_slope_check(spec, tr)
        assert rep.passed
        devs.append(rep.max_deviation)
    assert devs[1] < devs[0] / 2


def test_ehrenfest_flat_chi_segment():
    T = 10.0
    spec = HamiltonianSpec("adiabatic_ramp", omega=-1.0, chi=lambda t: max(0.0, t - 5.0) / 5.0, ramp_time=T)
    tr = evolve(coherent_state(Spin(4)), spec, np.linspace(0, T, 201))
    rep = ehrenfest_slope_check(spec, tr)
    assert rep.max_jz_rate_without_twist < 1e-12


def test_ehrenfest_flags_quench():
    spec = HamiltonianSpec("adiabatic_ramp", omega=-1.0, chi=lambda t: 0.0 if t == 0 else 5.0, ramp_time=1.0)
    tr = evolve(coherent_state(Spin(4)), spec, np.linspace(0, 1, 101))
    rep = ehrenfest_slope_check(spec, tr)
    assert not rep.adiabatic and math.isnan(rep.max_deviation) and not rep.passed


def test_ehrenfest_flags_coarse_sampling():
    spec = ramp(200.0)
    tr = evolve(coherent_state(Spin(4)), spec, np.linspace(0, 200, 201))
    rep = ehrenfest_slope_check(spec, tr)
    assert not rep.resolved and not rep.passed


def test_trajectory_csv():
    tr = one_axis_trajectory(Spin(4), 0.1, 3)
    text = tr.csv_text(["a = 1"])
    lines = text.splitlines()
    assert lines[0] == "# a = 1"
    assert lines[1] == ",".join(TRAJECTORY_HEADER)
    assert len(lines) == 5
    assert [float(v) for v in lines[2].split(",")][3] == 2.0
