"""Monte Carlo minimisation of mu<Jz> + Var(Jx) over pure states.

For half-integer J the minimiser of Var(Jx) at fixed <Jz> is not an
eigenvector of a linear operator, so it is found by greedy random descent:
perturb one amplitude, keep the move only if the functional drops, and shrink
the perturbation scale after a run of rejections.

An optional accelerator runs before the random descent. It uses the identity
Var(Jx) = min_s <(Jx - s)^2>: with s fixed to the current <Jx>, the ground
state of ``mu*Jz + Jx^2 - 2s*Jx`` can only lower the functional, so iterating
(plus Aitken extrapolation of s) is a monotone descent that converges much
faster than random moves near the bifurcation, where the landscape is flat.
Every accelerator step passes the same strict-decrease test as a random move.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eig_banded
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, NumericalFailure
from .optimal_curves import ground_state_of, symmetric_bifurcation
from .spin_core import Spin, StateVector, build_operators, jx_band, rotation_about_y

DEFAULT_TILT = 0.05
GAIN_THRESHOLD = 1e-6


@dataclass(frozen=True)
class AnnealSchedule:
    initial_scale: float = 0.05
    shrink: float = 0.9
    patience: int = 100
    final_scale: float = 1e-9
    max_iterations: int = 2_000_000
    max_accelerator_steps: int = 5000


@dataclass(frozen=True)
class VariationalResult:
    state: StateVector
    mu: float
    x: float
    f: float
    mean_jx: float
    functional_value: float
    iterations: int
    accepted: int
    converged: bool
    trace: tuple | None = None


@dataclass(frozen=True)
class BifurcationReport:
    spin: Spin
    x_critical: float
    bracket: tuple
    mu_bracket: tuple
    branch_samples: tuple
    warning: bool = False
    probes: int = 0


class _Functional:
    """Running sums for mu<Jz> + <Jx^2> - <Jx>^2 on an unnormalised vector."""

    def __init__(self, spin: Spin, mu: float):
        self.spin = spin
        self.mu = float(mu)
        self.m = spin.m_values().tolist()
        b = jx_band(spin)
        self.b = b.tolist()
        q = np.zeros(spin.dim)
        q[1:] += b**2
        q[:-1] += b**2
        self.q = q.tolist()
        self.off2 = (b[:-1] * b[1:]).tolist()
        self._b_arr = b
        self._q_arr = q
        self._off2_arr = b[:-1] * b[1:]
        self._m_arr = spin.m_values()

    def sums(self, a: np.ndarray):
        p = (a.conj() * a).real
        n = float(p.sum())
        z = float(self._m_arr @ p)
        cross1 = (a[:-1].conj() * a[1:]).real
        x = float(2 * self._b_arr @ cross1)
        cross2 = (a[:-2].conj() * a[2:]).real
        q = float(self._q_arr @ p + 2 * self._off2_arr @ cross2)
        return n, z, x, q

    def value(self, n, z, x, q):
        xn = x / n
        return self.mu * z / n + q / n - xn * xn

    def scale(self, n, z, x, q):
        return (abs(self.mu * z) + abs(q)) / n + (x / n) ** 2 + 1.0

    def evaluate(self, a: np.ndarray) -> float:
        return self.value(*self.sums(a))

    def mean_jx(self, a: np.ndarray) -> float:
        n, _, x, _ = self.sums(a)
        return x / n

    def shifted_ground(self, s: float) -> np.ndarray:
        """Ground state of mu*Jz + Jx^2 - 2 s Jx (real, bandwidth 2)."""
        d = self.spin.dim
        band = np.zeros((3, d))
        band[0] = self.mu * self._m_arr + self._q_arr
        band[1, :-1] = -2.0 * s * self._b_arr
        band[2, :-2] = self._off2_arr
        if d == 1:
            return np.ones(1)
        _, v = eig_banded(band, lower=True, select="i", select_range=(0, 0))
        return v[:, 0]


def _rng_for(seed: int, *labels) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF]
    for lab in labels:
        if isinstance(lab, float):
            words.extend(struct.unpack("<II", struct.pack("<d", lab)))
        else:
            words.append(int(lab) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


def _line_search(fun: _Functional, s: float, step: float, value: float, thr: float):
    """Expand s + 2**k * step while F(psi(s)) keeps falling, then polish.

    Returns (a, value) of the best point found, or None without a decrease.
    """
    def f(t):
        return fun.evaluate(fun.shifted_ground(t))

    prev, best_t, best_v = s, None, value
    k = 1.0
    hi = s + step
    while k < 1e8:
        hi = s + k * step
        if abs(hi) > fun.spin.j:
            hi = math.copysign(fun.spin.j, hi)
            break
        v = f(hi)
        if not v < best_v - thr:
            break
        if best_t is not None:
            prev = best_t
        best_t, best_v = hi, v
        k *= 2.0
    if best_t is None:
        return None
    res = minimize_scalar(
        f, bounds=tuple(sorted((prev, hi))), method="bounded",
        options={"xatol": 1e-12 * (1 + abs(best_t))},
    )
    t = res.x if res.fun < best_v else best_t
    cand = fun.shifted_ground(t)
    return cand, fun.evaluate(cand)


def _accelerate(fun: _Functional, a: np.ndarray, value: float, max_steps: int, trace):
    """Self-consistent descent on s = <Jx>; returns (a, value, accepted).

    Each plain step replaces the state by the ground state of
    mu*Jz + Jx^2 - 2 s Jx, which never raises the functional. Near a
    bifurcation those steps crawl, so each is followed by an expanding line
    search along the same direction in s. Only strict decreases are kept.
    """
    accepted = 0
    s = fun.mean_jx(a)
    for _ in range(max_steps):
        thr = 4e-15 * fun.scale(*fun.sums(a))
        cand = fun.shifted_ground(s)
        cv = fun.evaluate(cand)
        if not cv < value - thr:
            break
        a, value = cand, cv
        accepted += 1
        if trace is not None:
            trace.append(value)
        s_new = fun.mean_jx(a)
        step = s_new - s
        if step != 0:
            found = _line_search(fun, s_new, step, value, thr)
            if found is not None:
                a, value = found
                accepted += 1
                if trace is not None:
                    trace.append(value)
                s_new = fun.mean_jx(a)
        if abs(s_new - s) <= 1e-15 * (1 + abs(s)):
            break
        s = s_new
    return a, value, accepted


def variational_minimize(
    spin: Spin,
    mu: float,
    seed_state: StateVector,
    schedule: AnnealSchedule | None = None,
    *,
    seed: int,
    complex_amplitudes: bool = False,
    accelerate: bool = True,
    record_trace: bool = False,
) -> VariationalResult:
    """Greedy stochastic descent of mu<Jz> + Var(Jx) from ``seed_state``.

    A proposal perturbs one randomly chosen amplitude by ``scale * U(-1, 1)``
    (real or imaginary part in complex mode). Proposals are accepted only on a
    strict decrease that exceeds floating-point noise. The scale shrinks by
    ``schedule.shrink`` after ``schedule.patience`` consecutive rejections and
    the run is converged once it falls below ``schedule.final_scale``. Hitting
    ``max_iterations`` first returns ``converged=False``.
    """
    schedule = schedule or AnnealSchedule()
    if not isinstance(seed_state, StateVector):
        raise TypeError("seed_state must be a normalised StateVector")
    if seed_state.spin != spin:
        raise ValueError("seed state belongs to a different spin")
    fun = _Functional(spin, mu)
    rng = _rng_for(seed, 0x5EED, float(mu))
    if complex_amplitudes:
        a = np.array(seed_state.amplitudes, dtype=complex)
    else:
        imag = np.max(np.abs(seed_state.amplitudes.imag), initial=0.0)
        if imag > 1e-12:
            raise ValueError("real-amplitude mode needs a real seed state; pass complex_amplitudes=True")
        a = seed_state.amplitudes.real.copy()

    trace = [] if record_trace else None
    value = fun.evaluate(a)
    if trace is not None:
        trace.append(value)
    accepted = 0
    if accelerate:
        a, value, accepted = _accelerate(fun, a, value, schedule.max_accelerator_steps, trace)
        if complex_amplitudes:
            a = a.astype(complex)

    d = spin.dim
    amps = a.tolist()
    m, b, qd, off2 = fun.m, fun.b, fun.q, fun.off2
    mu_f = fun.mu
    n, z, x, q = fun.sums(a)
    scale = schedule.initial_scale
    rejections = 0
    iterations = 0
    converged = False
    batch = 4096
    since_sync = 0
    while iterations < schedule.max_iterations:
        ks = rng.integers(0, d, size=batch).tolist()
        us = rng.uniform(-1.0, 1.0, size=batch).tolist()
        parts = rng.integers(0, 2, size=batch).tolist() if complex_amplitudes else None
        thr = 4e-15 * fun.scale(n, z, x, q)
        for i in range(batch):
            if scale < schedule.final_scale:
                converged = True
                break
            if iterations >= schedule.max_iterations:
                break
            iterations += 1
            k = ks[i]
            delta = scale * us[i]
            if parts is not None and parts[i]:
                delta = 1j * delta
            ak = amps[k]
            nk = ak + delta
            dn = abs(nk) ** 2 - abs(ak) ** 2
            nb = 0.0
            if k > 0:
                nb += b[k - 1] * amps[k - 1]
            if k < d - 1:
                nb += b[k] * amps[k + 1]
            no = 0.0
            if k > 1:
                no += off2[k - 2] * amps[k - 2]
            if k < d - 2:
                no += off2[k] * amps[k + 2]
            if parts is None:
                dx = 2.0 * delta * nb
                dq = qd[k] * dn + 2.0 * delta * no
            else:
                dc = delta.conjugate() if isinstance(delta, complex) else delta
                dx = 2.0 * (dc * nb).real
                dq = qd[k] * dn + 2.0 * (dc * no).real
            n2 = n + dn
            z2 = z + m[k] * dn
            x2 = x + dx
            q2 = q + dq
            xn = x2 / n2
            v2 = mu_f * z2 / n2 + q2 / n2 - xn * xn
            if v2 < value - thr:
                amps[k] = nk
                n, z, x, q, value = n2, z2, x2, q2, v2
                accepted += 1
                rejections = 0
                since_sync += 1
                if trace is not None:
                    trace.append(value)
                if since_sync >= 512:
                    arr = np.array(amps)
                    n, z, x, q = fun.sums(arr)
                    value = fun.value(n, z, x, q)
                    since_sync = 0
            else:
                rejections += 1
                if rejections >= schedule.patience:
                    scale *= schedule.shrink
                    rejections = 0
        if converged or scale < schedule.final_scale:
            converged = True
            break

    final = np.array(amps)
    final = final / np.linalg.norm(final)
    state = StateVector(spin, final)
    return _result(spin, mu, state, iterations, accepted, converged, trace)


def _result(spin, mu, state, iterations, accepted, converged, trace) -> VariationalResult:
    ops = build_operators(spin)
    a = state.amplitudes
    jz = float(np.vdot(a, ops.jz.entries @ a).real)
    jxa = ops.jx.entries @ a
    mean_jx = float(np.vdot(a, jxa).real)
    var_jx = max(float(np.vdot(jxa, jxa).real) - mean_jx**2, 0.0)
    j = spin.j
    return VariationalResult(
        state=state,
        mu=float(mu),
        x=jz / j,
        f=var_jx / j,
        mean_jx=mean_jx,
        functional_value=float(mu) * jz + var_jx,
        iterations=iterations,
        accepted=accepted,
        converged=converged,
        trace=tuple(trace) if trace is not None else None,
    )


def restart_seeds(spin: Spin, mu: float, tilt: float = DEFAULT_TILT) -> tuple:
    """Diagonalisation ground state and its +-tilted copies (rotation about y).

    The angle is ``tilt / J`` so the seeds carry <Jx> of roughly ``tilt * x``
    at every spin. Larger offsets can overshoot the nearest broken minimum
    and settle in a higher one.
    """
    ground, _ = ground_state_of(mu, spin)
    out = [ground]
    for sign in (1.0, -1.0):
        amps = rotation_about_y(spin, sign * tilt / spin.j) @ ground.amplitudes
        out.append(StateVector.normalized(spin, amps))
    return tuple(out)


def minimize_restarts(
    spin: Spin,
    mu: float,
    *,
    seed: int = 0,
    schedule: AnnealSchedule | None = None,
    tilt: float = DEFAULT_TILT,
    complex_amplitudes: bool = False,
    accelerate: bool = True,
) -> tuple:
    """Results from the three restart seeds, in seed order (ground, +tilt, -tilt)."""
    out = []
    for r, s0 in enumerate(restart_seeds(spin, mu, tilt)):
        out.append(
            variational_minimize(
                spin,
                mu,
                s0,
                schedule,
                seed=seed * 7919 + r,
                complex_amplitudes=complex_amplitudes,
                accelerate=accelerate,
            )
        )
    return tuple(out)


def _best(results) -> VariationalResult:
    # deterministic tie-break: lower functional, then seed order
    best = results[0]
    for r in results[1:]:
        if r.functional_value < best.functional_value - 1e-13 * max(1.0, abs(best.functional_value)):
            best = r
    return best


def minimize_at_x(
    spin: Spin,
    x_target: float,
    *,
    seed: int = 0,
    schedule: AnnealSchedule | None = None,
    tilt: float = DEFAULT_TILT,
    complex_amplitudes: bool = False,
    accelerate: bool = True,
    x_tol: float = 1e-4,
) -> VariationalResult:
    """Minimum-variance state with <Jz>/J = x_target, by root-finding on mu."""
    x_target = float(x_target)
    if not 0.0 <= x_target < 1.0:
        raise DomainError(f"x_target must lie in [0, 1), got {x_target!r}")
    cache = {}

    def best_at(mu):
        mu = float(mu)
        if mu not in cache:
            cache[mu] = _best(
                minimize_restarts(
                    spin,
                    mu,
                    seed=seed,
                    schedule=schedule,
                    tilt=tilt,
                    complex_amplitudes=complex_amplitudes,
                    accelerate=accelerate,
                )
            )
        return cache[mu]

    def g(mu):
        return best_at(mu).x - x_target

    if g(0.0) >= 0:
        return best_at(0.0)
    lo = -1.0
    while g(lo) < 0:
        lo *= 2.0
        if lo < -1e7:
            raise NumericalFailure(f"cannot bracket x={x_target!r} for J={spin}")
    try:
        brentq(g, lo, 0.0, xtol=1e-13, rtol=1e-12, maxiter=200)
    except (ValueError, RuntimeError) as exc:
        raise NumericalFailure(f"root-find on mu failed for x={x_target!r}: {exc}") from exc
    best = min(cache.values(), key=lambda r: abs(r.x - x_target))
    if abs(best.x - x_target) > x_tol:
        raise NumericalFailure(
            f"closest variational x to {x_target!r} is {best.x!r} (J={spin})",
            residual=abs(best.x - x_target),
        )
    return best


def branch_gain(
    spin: Spin,
    mu: float,
    *,
    seed: int = 0,
    schedule: AnnealSchedule | None = None,
    tilt: float = DEFAULT_TILT,
):
    """Functional drop of the symmetry-broken seeds below the symmetric state.

    Returns (gain, x_symmetric, (plus_result, minus_result)).
    """
    ground, e0 = ground_state_of(mu, spin)
    ops = build_operators(spin)
    a = ground.amplitudes
    x_sym = float(np.vdot(a, ops.jz.entries @ a).real) / spin.j
    results = minimize_restarts(spin, mu, seed=seed, schedule=schedule, tilt=tilt)[1:]
    gain = e0 - min(r.functional_value for r in results)
    return gain, x_sym, results


def locate_bifurcation(
    spin: Spin,
    *,
    seed: int = 0,
    schedule: AnnealSchedule | None = None,
    threshold: float = GAIN_THRESHOLD,
    x_width: float = 1e-3,
    tilt: float = DEFAULT_TILT,
) -> BifurcationReport:
    """Bisect on mu for the point where broken branches beat the symmetric one.

    A probe counts as broken when the best tilted restart lowers
    mu<Jz> + Var(Jx) below the symmetric ground energy by more than
    ``threshold``. The bracket is reported in the symmetric branch's x and is
    narrowed until it is at most ``x_width`` wide.
    """
    if spin.is_integer_spin():
        raise DomainError("the bifurcation exists only for half-integer spins")
    samples = []
    probes = 0

    def probe(mu):
        nonlocal probes
        probes += 1
        gain, x_sym, results = branch_gain(spin, mu, seed=seed, schedule=schedule, tilt=tilt)
        for r in results:
            samples.append((r.x, r.mean_jx))
        return gain > threshold, x_sym

    mu_stable = -2.0
    while True:
        broken, x_stable = probe(mu_stable)
        if not broken and x_stable >= 0.95:
            break
        mu_stable *= 2.0
        if mu_stable < -1e6:
            raise NumericalFailure(f"no stable symmetric region found for J={spin}")
    mu_broken = mu_stable
    x_broken = x_stable
    found = False
    while abs(mu_broken) > 1e-6:
        mu_broken /= 2.0
        broken, x_broken = probe(mu_broken)
        if broken:
            found = True
            break
        mu_stable, x_stable = mu_broken, x_broken
    if not found:
        return BifurcationReport(
            spin, x_critical=math.nan, bracket=(0.0, 1.0), mu_bracket=(mu_stable, 0.0),
            branch_samples=tuple(samples), warning=True, probes=probes,
        )
    while x_stable - x_broken > x_width and abs(mu_stable - mu_broken) > 1e-12:
        mid = -math.sqrt(mu_stable * mu_broken)
        broken, x_mid = probe(mid)
        if broken:
            mu_broken, x_broken = mid, x_mid
        else:
            mu_stable, x_stable = mid, x_mid
    return BifurcationReport(
        spin,
        x_critical=0.5 * (x_broken + x_stable),
        bracket=(x_broken, x_stable),
        mu_bracket=(mu_stable, mu_broken),
        branch_samples=tuple(samples),
        warning=False,
        probes=probes,
    )


def reference_bifurcation_x(spin: Spin) -> float:
    """Critical x from the linear-stability criterion of the symmetric branch."""
    return symmetric_bifurcation(spin)[1]
