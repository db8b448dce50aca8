import numpy as np
import pytest
from scipy.optimize import brentq, minimize_scalar

from spinsqueeze.errors import DomainError
from spinsqueeze.optimal_curves import analytic_bound, curve_point, exact_value, ground_state_of
from spinsqueeze.spin_core import Spin, StateVector, build_operators, random_state
from spinsqueeze.variational_search import (
    AnnealSchedule,
    branch_gain,
    locate_bifurcation,
    minimize_at_x,
    minimize_restarts,
    reference_bifurcation_x,
    restart_seeds,
    variational_minimize,
)


def recomputed_functional(result):
    ops = build_operators(result.state.spin)
    a = result.state.amplitudes
    mean_jz = np.vdot(a, ops.jz.entries @ a).real
    mean_jx = np.vdot(a, ops.jx.entries @ a).real
    var = np.vdot(a, ops.jx2.entries @ a).real - mean_jx**2
    return result.mu * mean_jz + var


def dual_value(spin, mu):
    """min over s of s^2 + lowest eigenvalue of mu Jz + Jx^2 - 2 s Jx."""
    ops = build_operators(spin)
    h = mu * ops.jz.entries + ops.jx2.entries
    jx = ops.jx.entries

    def g(s):
        return s * s + np.linalg.eigvalsh(h - 2 * s * jx)[0]

    grid = np.linspace(0, spin.j, 201)
    s0 = grid[np.argmin([g(s) for s in grid])]
    lo, hi = max(s0 - spin.j / 200, 0), min(s0 + spin.j / 200, spin.j)
    return minimize_scalar(g, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}).fun


def check_invariants(r):
    spin = r.state.spin
    assert abs(r.functional_value - recomputed_functional(r)) < 1e-10
    assert abs(r.functional_value - (r.mu * r.x * spin.j + r.f * spin.j)) < 1e-10
    assert r.f <= 0.5 + 1e-9
    assert r.f >= analytic_bound(spin, min(abs(r.x), 1.0)) - 1e-9


def test_exact_seed_accepts_nothing():
    spin = Spin(4)
    ground, e0 = ground_state_of(-0.6, spin)
    r = variational_minimize(spin, -0.6, ground, seed=3)
    assert r.accepted == 0
    assert r.functional_value == pytest.approx(e0, abs=1e-13)
    check_invariants(r)


@pytest.mark.parametrize("accelerate", [True, False])
def test_trace_strictly_decreasing(accelerate, rng):
    spin = Spin(3)
    seed_state = random_state(spin, rng, real=True)
    sched = AnnealSchedule(final_scale=1e-6) if not accelerate else None
    r = variational_minimize(spin, -0.5, seed_state, sched, seed=1, accelerate=accelerate, record_trace=True)
    tr = np.array(r.trace)
    # first entry is the seed's value, then one per accepted move
    assert tr.size == r.accepted + 1 and r.accepted > 0
    assert np.all(np.diff(tr) < 0)
    assert tr[-1] == pytest.approx(r.functional_value, abs=1e-12)
    check_invariants(r)


@pytest.mark.parametrize("mu", [-0.3, -1.0, -4.0])
def test_integer_spin_matches_diagonalisation(mu, rng):
    spin = Spin(2)
    _, e0 = ground_state_of(mu, spin)
    r = variational_minimize(spin, mu, random_state(spin, rng, real=True), seed=2)
    point = curve_point(spin, mu)
    assert r.functional_value == pytest.approx(e0, abs=1e-9)
    assert r.f == pytest.approx(point.f, abs=1e-6)


def test_pure_monte_carlo_matches_diagonalisation(rng):
    spin = Spin(2)
    _, e0 = ground_state_of(-0.7, spin)
    r = variational_minimize(spin, -0.7, random_state(spin, rng, real=True), seed=5, accelerate=False)
    assert r.converged
    assert r.functional_value == pytest.approx(e0, abs=1e-7)


def test_iteration_cap_reports_not_converged(rng):
    spin = Spin(5)
    sched = AnnealSchedule(max_iterations=50)
    r = variational_minimize(spin, -0.5, random_state(spin, rng, real=True), sched, seed=0, accelerate=False)
    assert not r.converged and r.iterations <= 50


def test_determinism(rng):
    spin = Spin(5)
    s0 = random_state(spin, rng, real=True)
    a = variational_minimize(spin, -0.4, s0, seed=11)
    b = variational_minimize(spin, -0.4, s0, seed=11)
    assert np.array_equal(a.state.amplitudes, b.state.amplitudes)
    assert a.functional_value == b.functional_value


def test_complex_mode_agrees(rng):
    spin = Spin(3)
    s0 = random_state(spin, rng, real=True)
    real = variational_minimize(spin, -0.3, s0, seed=4)
    cplx = variational_minimize(spin, -0.3, s0, seed=4, complex_amplitudes=True)
    assert cplx.functional_value == pytest.approx(real.functional_value, abs=1e-6)


def test_rejects_bad_seed():
    with pytest.raises(TypeError):
        variational_minimize(Spin(3), -0.5, np.ones(4) / 2, seed=0)
    with pytest.raises(ValueError):
        variational_minimize(Spin(3), -0.5, StateVector(Spin(2), [1, 0, 0]), seed=0)


@pytest.mark.parametrize("two_j,mu", [(3, -0.3), (5, -0.2), (7, -0.3), (11, -0.1)])
def test_broken_branch_matches_dual_oracle(two_j, mu):
    spin = Spin(two_j)
    results = minimize_restarts(spin, mu, seed=0)
    best = min(r.functional_value for r in results)
    assert best == pytest.approx(dual_value(spin, mu), abs=1e-9)


def test_restart_seeds_break_symmetry():
    spin = Spin(5)
    ground, plus, minus = restart_seeds(spin, -0.3)
    ops = build_operators(spin)
    mx = [np.vdot(s.amplitudes, ops.jx.entries @ s.amplitudes).real for s in (ground, plus, minus)]
    assert abs(mx[0]) < 1e-12 and mx[1] > 0 and mx[2] == pytest.approx(-mx[1])


def test_branch_symmetry_below_bifurcation():
    spin = Spin(3)
    gain, x_sym, (plus, minus) = branch_gain(spin, -0.3)
    assert gain > 1e-6
    assert plus.f == pytest.approx(minus.f, abs=1e-5)
    assert plus.mean_jx == pytest.approx(-minus.mean_jx, abs=1e-5)
    assert abs(plus.mean_jx) > 0.1


def test_spin_half_relation():
    r = minimize_at_x(Spin(1), 0.5, seed=0)
    assert abs(r.x - 0.5) < 1e-4
    assert r.f * 0.5 == pytest.approx((r.x * 0.5) ** 2, abs=1e-8)
    r = minimize_at_x(Spin(1), 0.3, seed=0)
    assert r.f == pytest.approx(0.045, abs=1e-4)
    check_invariants(r)


def test_minimize_at_x_above_bifurcation_is_symmetric():
    spin = Spin(3)
    r = minimize_at_x(spin, 0.95, seed=0)
    assert abs(r.mean_jx) < 1e-4
    assert r.f == pytest.approx(exact_value(spin, r.x), abs=1e-7)


def test_minimize_at_x_below_bifurcation_breaks_symmetry():
    # the symmetric branch of J=3/2 spans x in (2/3, 1], so compare inside it
    spin = Spin(3)
    r = minimize_at_x(spin, 0.75, seed=0)
    assert abs(r.mean_jx) > 0.1
    t = brentq(lambda t: curve_point(spin, -np.exp(t)).x - r.x, -20, 3)
    f_sym = curve_point(spin, -np.exp(t)).f
    assert r.f < f_sym - 1e-6
    check_invariants(r)
    low = minimize_at_x(spin, 0.5, seed=0)
    assert abs(low.mean_jx) > 0.1
    check_invariants(low)


@pytest.mark.parametrize("two_j", [2, 4])
def test_integer_spin_agreement_across_x(two_j):
    spin = Spin(two_j)
    for x in np.arange(1, 10) / 10:
        r = minimize_at_x(spin, x, seed=0)
        assert r.f == pytest.approx(exact_value(spin, r.x), abs=1e-5)


def test_small_x_limit():
    r = minimize_at_x(Spin(3), 0.02, seed=0)
    assert r.f < 0.01
    assert abs(r.mean_jx) == pytest.approx(0.5, abs=0.02)


def test_minimize_at_x_domain():
    with pytest.raises(DomainError):
        minimize_at_x(Spin(3), 1.2)


def test_locate_bifurcation_spin_half():
    rep = locate_bifurcation(Spin(1))
    assert rep.x_critical == 1.0 and not rep.warning


def test_locate_bifurcation_j32():
    rep = locate_bifurcation(Spin(3))
    assert 1.5 * rep.x_critical == pytest.approx(1.32, abs=0.02)
    assert rep.bracket[1] - rep.bracket[0] <= 1e-3
    assert rep.bracket[0] <= reference_bifurcation_x(Spin(3)) + 1e-3
    lo_x = [abs(mjx) for x, mjx in rep.branch_samples if x < rep.bracket[0] - 0.01]
    assert lo_x and min(lo_x) > 1e-3


@pytest.mark.parametrize("two_j", [5, 7, 11, 21, 99])
def test_locate_bifurcation_interval(two_j):
    rep = locate_bifurcation(Spin(two_j))
    assert 0.83 < rep.x_critical < 0.88
    assert rep.x_critical == pytest.approx(reference_bifurcation_x(Spin(two_j)), abs=5e-3)


def test_locate_bifurcation_rejects_integer_spin():
    with pytest.raises(DomainError):
        locate_bifurcation(Spin(4))
