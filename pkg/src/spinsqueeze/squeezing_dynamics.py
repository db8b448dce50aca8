"""Unitary evolution of a collective spin under twisting Hamiltonians.

Three Hamiltonian families are supported:

* one-axis twisting ``omega*Jz + chi*Jx^2``,
* two-axis twisting ``omega*Jz + chi*(Jx^2 - Jy^2)``,
* an adiabatic ramp ``omega*Jz + chi(t)*Jx^2`` with ``omega < 0`` and
  ``chi`` rising slowly from zero.

Time-independent cases are propagated exactly through one diagonalisation.
Ramps use a fourth-order Magnus integrator whose step is halved until the
reported moments stop moving.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, NumericalFailure
from .optimal_curves import CurveTable, analytic_bound, ground_state_of, lower_envelope_eval
from .spin_core import Spin, SpinMoments, StateVector, build_operators, coherent_state, moments

KINDS = ("one_axis", "two_axis", "adiabatic_ramp")
TRAJECTORY_HEADER = (
    "t", "mean_jx", "mean_jy", "mean_jz", "var_jx", "var_jy", "var_jz",
    "min_transverse_var", "optimal_angle",
)
STEP_TOL = 1e-8
NORM_DRIFT_TOL = 1e-9
ADIABATIC_FIDELITY = 0.99
MAX_PHASE_PER_SAMPLE = 0.5


@dataclass(frozen=True)
class HamiltonianSpec:
    """Coefficients of H(t) = omega*Jz + chi(t)*K with K = Jx^2 or Jx^2 - Jy^2.

    ``chi`` is a number for the constant families. For ``adiabatic_ramp`` a
    number means the linear ramp ``chi * t / ramp_time`` (held after
    ``ramp_time``); a callable is used as given.
    """

    kind: str
    omega: float = 0.0
    chi: float | Callable[[float], float] = 1.0
    ramp_time: float | None = None

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        if kind in ("adiabatic", "ramp"):
            kind = "adiabatic_ramp"
        if kind not in KINDS:
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if not math.isfinite(self.omega):
            raise ValueError("omega must be finite")
        if kind != "adiabatic_ramp":
            if callable(self.chi):
                raise ValueError(f"{kind} takes a constant chi; use adiabatic_ramp for chi(t)")
            if not math.isfinite(self.chi):
                raise ValueError("chi must be finite")
            return
        if not self.omega < 0:
            raise ValueError(f"adiabatic_ramp needs omega < 0, got {self.omega}")
        if self.ramp_time is None or not self.ramp_time > 0:
            raise ValueError("adiabatic_ramp needs a positive ramp_time")
        if not callable(self.chi) and not (math.isfinite(self.chi) and self.chi > 0):
            raise ValueError("the final chi of a linear ramp must be positive and finite")
        if self.chi_at(0.0) != 0.0:
            raise ValueError(f"chi(0) must be 0, got {self.chi_at(0.0)}")
        samples = [self.chi_at(t) for t in np.linspace(0.0, self.ramp_time, 257)]
        if any(b < a for a, b in zip(samples, samples[1:])):
            raise ValueError("chi(t) must be nondecreasing over the ramp")

    @property
    def is_constant(self) -> bool:
        return self.kind != "adiabatic_ramp"

    def chi_at(self, t: float) -> float:
        if callable(self.chi):
            return float(self.chi(t))
        if self.kind != "adiabatic_ramp":
            return float(self.chi)
        return float(self.chi) * min(max(t, 0.0), self.ramp_time) / self.ramp_time

    def final_mu(self) -> float:
        """omega / chi at the end of the ramp, the target ground-state multiplier."""
        return self.omega / self.chi_at(self.ramp_time)

    def twisting_operator(self, spin: Spin) -> np.ndarray:
        ops = build_operators(spin)
        k = ops.jx2.entries.astype(complex)
        if self.kind == "two_axis":
            jy = ops.jy.entries
            k = k - jy @ jy
        return k

    def matrix(self, spin: Spin, t: float = 0.0) -> np.ndarray:
        ops = build_operators(spin)
        return self.omega * ops.jz.entries + self.chi_at(t) * self.twisting_operator(spin)


@dataclass(frozen=True)
class Trajectory:
    spin: Spin
    times: np.ndarray
    moments: tuple
    min_transverse_variance: np.ndarray
    optimal_angle: np.ndarray
    norms: np.ndarray
    states: tuple = field(repr=False, default=())
    step: float | None = None
    accuracy: float | None = None

    def __len__(self):
        return len(self.times)

    @property
    def x(self) -> np.ndarray:
        return np.array([m.mean_jz for m in self.moments]) / self.spin.j

    @property
    def scaled_min_variance(self) -> np.ndarray:
        return self.min_transverse_variance / self.spin.j

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name == "min_transverse_var":
            return self.min_transverse_variance
        if name == "optimal_angle":
            return self.optimal_angle
        return np.array([getattr(m, name) for m in self.moments])

    def rows(self):
        cols = [self.column(name) for name in TRAJECTORY_HEADER]
        return list(zip(*cols))

    def csv_text(self, header_lines: Sequence[str] = ()) -> str:
        lines = [f"# {h}" for h in header_lines]
        lines.append(",".join(TRAJECTORY_HEADER))
        for row in self.rows():
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def min_transverse_variance(state: StateVector) -> tuple[float, float]:
    """Smallest Var(cos(phi) Jx + sin(phi) Jy) over phi, and the minimising phi.

    The angle is folded into (-pi/2, pi/2]; an isotropic covariance reports 0.
    """
    ops = build_operators(state.spin)
    a = state.amplitudes
    xa = ops.jx.entries @ a
    ya = ops.jy.entries @ a
    mx = float(np.vdot(a, xa).real)
    my = float(np.vdot(a, ya).real)
    vx = float(np.vdot(xa, xa).real) - mx * mx
    vy = float(np.vdot(ya, ya).real) - my * my
    cxy = float(np.vdot(xa, ya).real) - mx * my  # Re<JxJy> is the symmetrised product
    half_diff = 0.5 * (vx - vy)
    radius = math.hypot(half_diff, cxy)
    var = max(0.5 * (vx + vy) - radius, 0.0)
    if radius <= 1e-12 * max(1.0, vx + vy):
        return var, 0.0
    angle = 0.5 * math.atan2(cxy, half_diff) + 0.5 * math.pi
    if angle > 0.5 * math.pi:
        angle -= math.pi
    return var, angle


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float).reshape(-1)
    if t.size == 0:
        raise ValueError("need at least one time")
    if not np.all(np.isfinite(t)) or t[0] < 0:
        raise ValueError("times must be finite and non-negative")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    return t


def _sample(spin: Spin, amps_list, times, step=None, accuracy=None) -> Trajectory:
    states, moms, mins, angles, norms = [], [], [], [], []
    for amps in amps_list:
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > NORM_DRIFT_TOL:
            raise NumericalFailure(f"norm drifted to {norm!r} during propagation", residual=abs(norm - 1.0))
        st = StateVector(spin, amps, tol=3 * NORM_DRIFT_TOL)
        v, ang = min_transverse_variance(st)
        states.append(st)
        moms.append(moments_loose(st))
        mins.append(v)
        angles.append(ang)
        norms.append(norm)
    return Trajectory(
        spin, times, tuple(moms), np.array(mins), np.array(angles), np.array(norms),
        tuple(states), step, accuracy,
    )


def moments_loose(state: StateVector) -> SpinMoments:
    """Moments of a state whose norm may carry propagation round-off."""
    amps = state.amplitudes / np.linalg.norm(state.amplitudes)
    return moments(StateVector(state.spin, amps))


def _evolve_constant(initial: StateVector, spec: HamiltonianSpec, times: np.ndarray) -> Trajectory:
    w, v = np.linalg.eigh(spec.matrix(initial.spin))
    c0 = v.conj().T @ initial.amplitudes
    amps = [v @ (np.exp(-1j * w * t) * c0) for t in times]
    return _sample(initial.spin, amps, times)


_GAUSS = 0.5 - math.sqrt(3) / 6
_COMM = math.sqrt(3) / 12


def _magnus_run(spin, spec, psi0, times, h_target):
    """Propagate with fourth-order Magnus steps no longer than ``h_target``."""
    jz = build_operators(spin).jz.entries
    k = spec.twisting_operator(spin)
    comm_zk = jz @ k - k @ jz
    psi = psi0.astype(complex)
    out = []
    t_now = 0.0
    for t_out in times:
        span = t_out - t_now
        n = max(1, math.ceil(span / h_target - 1e-12)) if span > 0 else 0
        h = span / n if n else 0.0
        for _ in range(n):
            c1 = spec.chi_at(t_now + _GAUSS * h)
            c2 = spec.chi_at(t_now + (1 - _GAUSS) * h)
            # H1 = omega Jz + c1 K, H2 = omega Jz + c2 K; [H2, H1] = omega (c2 - c1) [K, Jz]
            mean_h = spec.omega * jz + 0.5 * (c1 + c2) * k
            omega_mat = -1j * h * mean_h + _COMM * h * h * spec.omega * (c2 - c1) * comm_zk
            psi = expm(omega_mat) @ psi
            t_now += h
        t_now = t_out
        out.append(psi.copy())
    return out


def _moment_vector(spin, amps):
    st = StateVector.normalized(spin, amps)
    m = moments(st)
    v, _ = min_transverse_variance(st)
    return np.array([m.mean_jx, m.mean_jy, m.mean_jz, m.var_jx, m.var_jy, m.var_jz, v])


def _evolve_ramp(initial, spec, times, tol, initial_step, max_halvings):
    spin = initial.spin
    h = initial_step
    prev = _magnus_run(spin, spec, initial.amplitudes, times, h)
    prev_m = np.array([_moment_vector(spin, a) for a in prev])
    change = math.inf
    for _ in range(max_halvings):
        h *= 0.5
        cur = _magnus_run(spin, spec, initial.amplitudes, times, h)
        cur_m = np.array([_moment_vector(spin, a) for a in cur])
        change = float(np.max(np.abs(cur_m - prev_m)))
        if change < tol:
            return _sample(spin, cur, times, step=h, accuracy=change)
        prev, prev_m = cur, cur_m
    raise NumericalFailure(
        f"step control did not reach {tol:g} after {max_halvings} halvings "
        f"(step {h:g}, last change {change:.3g})",
        residual=change,
    )


def evolve(
    initial: StateVector,
    spec: HamiltonianSpec,
    times,
    *,
    tol: float = STEP_TOL,
    initial_step: float = 0.1,
    max_halvings: int = 12,
) -> Trajectory:
    """Evolve ``initial`` (taken at t = 0) and sample it at ``times``.

    For ramps the step is halved until halving once more changes every
    reported moment by less than ``tol``; otherwise NumericalFailure carries
    the last change as its residual.
    """
    if abs(float(np.vdot(initial.amplitudes, initial.amplitudes).real) - 1.0) > 1e-12:
        raise ValueError("initial state must be normalised")
    t = _check_times(times)
    if spec.is_constant:
        return _evolve_constant(initial, spec, t)
    return _evolve_ramp(initial, spec, t, tol, initial_step, max_halvings)


def energy(spec: HamiltonianSpec, state: StateVector, t: float = 0.0) -> float:
    a = state.amplitudes
    return float(np.vdot(a, spec.matrix(state.spin, t) @ a).real)


def instantaneous_ground(spec: HamiltonianSpec, spin: Spin, t: float) -> StateVector:
    """Ground state of omega*Jz + chi(t)*Jx^2 for omega < 0."""
    chi = spec.chi_at(t)
    if chi <= 0:
        return coherent_state(spin)
    return ground_state_of(spec.omega / chi, spin)[0]


def final_fidelity(spec: HamiltonianSpec, trajectory: Trajectory) -> float:
    """Overlap of the last sample with the ground state at mu = omega/chi(T)."""
    target = instantaneous_ground(spec, trajectory.spin, spec.ramp_time)
    return trajectory.states[-1].fidelity(target)


@dataclass(frozen=True)
class EhrenfestReport:
    """Outcome of comparing d<Jx^2>/dt against -(omega/chi) d<Jz>/dt.

    ``max_deviation`` is the largest relative deviation of the rate ratio
    from -omega/chi over the checked samples; it is nan when the run was
    flagged non-adiabatic and no ratio was asserted. ``resolved`` is false
    when the sample spacing is too coarse to follow the small oscillation
    at the excitation gap, in which case finite differences alias.
    """

    adiabatic: bool
    resolved: bool
    min_ground_fidelity: float
    max_deviation: float
    tolerance: float
    points_checked: int
    max_jz_rate_without_twist: float

    @property
    def passed(self) -> bool:
        return self.adiabatic and self.resolved and self.max_deviation <= self.tolerance


def ehrenfest_slope_check(
    spec: HamiltonianSpec,
    trajectory: Trajectory,
    *,
    tolerance: float | None = None,
    rate_floor: float = 0.1,
) -> EhrenfestReport:
    """Check the adiabatic rate relation along a densely sampled ramp.

    Near instantaneous ground states omega d<Jz> + chi d<Jx^2> = 0, so the
    rate ratio is -omega/chi. Rates come from central differences; samples
    whose |d<Jz>/dt| is below ``rate_floor`` times the maximum are skipped as
    ill-conditioned. The default tolerance is 2/T, which tightens as the
    ramp slows; resolving the check needs samples spaced well below the
    inverse excitation gap.
    """
    if spec.kind != "adiabatic_ramp":
        raise ValueError("ehrenfest_slope_check needs an adiabatic_ramp spec")
    if len(trajectory) < 3:
        raise ValueError("need at least three samples to differentiate")
    if not trajectory.states:
        raise ValueError("trajectory was recorded without states")
    t = trajectory.times
    tol = 2.0 / spec.ramp_time if tolerance is None else tolerance
    chi = np.array([spec.chi_at(ti) for ti in t])
    jz = trajectory.column("mean_jz")
    jx2 = trajectory.column("var_jx") + trajectory.column("mean_jx") ** 2
    d_jz = np.gradient(jz, t)
    d_jx2 = np.gradient(jx2, t)

    # samples whose difference stencil lies entirely inside a chi = 0 stretch
    zero = chi == 0
    flat = zero.copy()
    flat[1:] &= zero[:-1]
    flat[:-1] &= zero[1:]
    jz_drift = float(np.max(np.abs(d_jz[flat]))) if np.any(flat) else 0.0

    fids = [
        st.fidelity(instantaneous_ground(spec, trajectory.spin, ti))
        for st, ti in zip(trajectory.states, t)
    ]
    min_fid = float(min(fids))
    resolved = float(np.max(np.diff(t))) * _max_gap(spec, trajectory.spin) <= MAX_PHASE_PER_SAMPLE
    if min_fid < ADIABATIC_FIDELITY:
        return EhrenfestReport(False, resolved, min_fid, math.nan, tol, 0, jz_drift)

    interior = np.zeros(t.size, dtype=bool)
    interior[1:-1] = True
    scale = float(np.max(np.abs(d_jz[interior]))) if t.size > 2 else 0.0
    use = interior & (chi > 0) & (np.abs(d_jz) >= rate_floor * scale) & (scale > 0)
    if not np.any(use):
        return EhrenfestReport(True, resolved, min_fid, 0.0, tol, 0, jz_drift)
    expected = -spec.omega / chi[use]
    ratio = d_jx2[use] / d_jz[use]
    dev = float(np.max(np.abs(ratio / expected - 1.0)))
    return EhrenfestReport(True, resolved, min_fid, dev, tol, int(use.sum()), jz_drift)


def _max_gap(spec: HamiltonianSpec, spin: Spin, n_probe: int = 17) -> float:
    """Largest gap above the ground state within its parity block over the ramp."""
    best = 0.0
    for t in np.linspace(0.0, spec.ramp_time, n_probe):
        block = spec.matrix(spin, t).real[::2, ::2]
        if block.shape[0] < 2:
            continue
        w = np.linalg.eigvalsh(block)
        best = max(best, float(w[1] - w[0]))
    return best


@dataclass(frozen=True)
class FrontierRow:
    t: float
    x: float
    scaled_variance: float
    envelope: float
    source: str

    @property
    def excess(self) -> float:
        return self.scaled_variance - self.envelope


def compare_to_frontier(trajectory: Trajectory, table: CurveTable | None) -> list:
    """Pair each sample's (x, min transverse variance / J) with a certified bound.

    The tangent envelope of ``table`` is used inside its validity interval and
    the analytic bound elsewhere (or when no table is given).
    """
    if table is not None and table.spin != trajectory.spin:
        raise ValueError("curve table and trajectory refer to different spins")
    rows = []
    for t, x, v in zip(trajectory.times, trajectory.x, trajectory.scaled_min_variance):
        xa = min(abs(float(x)), 1.0)
        try:
            if table is None:
                raise DomainError("no table")
            bound, src = float(lower_envelope_eval(table, xa)), "envelope"
        except DomainError:
            bound, src = float(analytic_bound(trajectory.spin, xa)), "analytic"
        rows.append(FrontierRow(float(t), float(x), float(v), bound, src))
    return rows


def one_axis_trajectory(spin: Spin, chi_t_max: float, n_samples: int = 201, chi: float = 1.0) -> Trajectory:
    """One-axis twisting of |Jz = J> sampled uniformly up to chi*t = chi_t_max."""
    spec = HamiltonianSpec("one_axis", omega=0.0, chi=chi)
    times = np.linspace(0.0, chi_t_max / chi, n_samples)
    return evolve(coherent_state(spin), spec, times)
