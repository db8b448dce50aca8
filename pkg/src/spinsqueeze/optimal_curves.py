"""Optimal squeezing frontier F_J(x) = min Var(Jx)/J at fixed x = <Jz>/J.

Points on the frontier are ground states of ``mu*Jz + Jx^2`` for mu <= 0. In
the Jz basis that operator only couples m to m and m +- 2, so it splits into
two symmetric tridiagonal blocks (even and odd basis index) that are solved
independently. The slope of the frontier at the point produced by ``mu`` is
``-mu``; tangents at tabulated points therefore give a lower bound on F_J
between grid points whenever F_J is convex.

For half-integer J the symmetric ground state stops being the minimiser below
a critical x. The critical point is where the symmetric solution becomes
linearly unstable against mixing in the opposite parity block; tables for
half-integer spins only cover x at or above it.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal, solveh_banded
from scipy.optimize import brentq

from ._version import __version__
from .errors import DomainError, NumericalFailure, VerificationError
from .spin_core import Spin, StateVector, jx_band

CSV_HEADER = ("two_j", "mu", "x", "f", "slope")
SYMMETRY_TOL = 1e-8
RESIDUAL_TOL = 1e-10
X_TOL = 1e-6
# t = log(-mu) search window for bracketing
_T_MIN, _T_MAX = math.log(1e-12), math.log(1e12)


@dataclass(frozen=True)
class CurvePoint:
    mu: float
    x: float
    f: float
    slope: float
    ground_energy: float


@dataclass(frozen=True)
class MuSweep:
    """Logarithmic sweep of -mu over [lo, hi]."""

    lo: float = 1e-4
    hi: float = 1e4
    per_decade: int = 50
    n_points: int | None = None

    def mus(self) -> np.ndarray:
        if self.n_points is not None:
            n = self.n_points
        else:
            n = int(round(self.per_decade * math.log10(self.hi / self.lo))) + 1
        return -np.logspace(math.log10(self.lo), math.log10(self.hi), n)

    def key(self) -> str:
        return f"mu-sweep:{self.lo!r}:{self.hi!r}:{self.per_decade}:{self.n_points}"


@dataclass(frozen=True)
class XTargets:
    """Refine mu by bisection until each requested x is hit within ``tol``."""

    values: tuple
    tol: float = X_TOL

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def key(self) -> str:
        return "x-targets:" + ",".join(repr(v) for v in self.values) + f":{self.tol!r}"


# --- banded representation -------------------------------------------------


@functools.lru_cache(maxsize=256)
def _jx2_band(spin: Spin):
    b = jx_band(spin)
    d = spin.dim
    q = np.zeros(d)
    q[1:] += b**2
    q[:-1] += b**2
    off2 = b[:-1] * b[1:]  # couples index i with i + 2
    q.setflags(write=False)
    off2.setflags(write=False)
    return b, q, off2


def _block(spin: Spin, mu: float, parity: int):
    _, q, off2 = _jx2_band(spin)
    idx = np.arange(parity, spin.dim, 2)
    diag = mu * spin.m_values()[idx] + q[idx]
    off = off2[idx[:-1]]
    return idx, diag, off


def _lowest_tridiagonal(diag: np.ndarray, off: np.ndarray):
    if diag.size == 1:
        return float(diag[0]), np.ones(1)
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    return float(w[0]), v[:, 0]


def _apply_h(spin: Spin, mu: float, vec: np.ndarray) -> np.ndarray:
    _, q, off2 = _jx2_band(spin)
    out = (mu * spin.m_values() + q) * vec
    out[:-2] += off2 * vec[2:]
    out[2:] += off2 * vec[:-2]
    return out


def _apply_jx(spin: Spin, vec: np.ndarray) -> np.ndarray:
    b, _, _ = _jx2_band(spin)
    out = np.zeros_like(vec)
    out[:-1] += b * vec[1:]
    out[1:] += b * vec[:-1]
    return out


def _ground(spin: Spin, mu: float):
    """Lowest eigenpair of mu*Jz + Jx^2 as (energy, real vector, parity)."""
    best = None
    for parity in (0, 1):
        idx, diag, off = _block(spin, mu, parity)
        if idx.size == 0:
            continue
        e, v = _lowest_tridiagonal(diag, off)
        # ties go to the block holding m = J
        if best is None or e < best[0] - 1e-14 * max(1.0, abs(e)):
            best = (e, idx, v, parity)
    e, idx, v, parity = best
    vec = np.zeros(spin.dim)
    vec[idx] = v
    k = int(np.argmax(np.abs(vec)))
    vec *= np.sign(vec[k])
    vec /= np.linalg.norm(vec)
    _, q, off2 = _jx2_band(spin)
    scale = max(1.0, abs(mu) * spin.j + float(q.max()) + 2 * float(off2.max(initial=0.0)))
    residual = float(np.linalg.norm(_apply_h(spin, mu, vec) - e * vec))
    if not np.isfinite(residual) or residual > RESIDUAL_TOL * scale:
        raise NumericalFailure(
            f"ground state of mu*Jz + Jx^2 (J={spin}, mu={mu!r}) has residual {residual:.3g}",
            residual=residual,
        )
    return e, vec, parity


def ground_state_of(mu: float, spin: Spin) -> tuple[StateVector, float]:
    """Lowest eigenvector of ``mu*Jz + Jx^2`` and its eigenvalue."""
    if not np.isfinite(mu):
        raise DomainError(f"mu must be finite, got {mu!r}")
    e, vec, _ = _ground(spin, float(mu))
    return StateVector(spin, vec), e


def curve_point(spin: Spin, mu: float) -> CurvePoint:
    """Frontier point generated by ``mu``; checks <Jx> = <Jy> = 0."""
    e, vec, _ = _ground(spin, float(mu))
    j = spin.j
    jx_vec = _apply_jx(spin, vec)
    mean_jx = float(vec @ jx_vec)
    # <Jy> of a real vector vanishes identically
    if abs(mean_jx) > SYMMETRY_TOL:
        raise VerificationError(
            f"ground state at mu={mu!r} has <Jx>={mean_jx:.3g}; symmetric solution broken"
        )
    x = float(vec @ (spin.m_values() * vec)) / j
    f = float(jx_vec @ jx_vec) / j
    return CurvePoint(mu=float(mu), x=x, f=f, slope=-float(mu) + 0.0, ground_energy=e)


def coherent_point(spin: Spin) -> CurvePoint:
    return CurvePoint(mu=-math.inf, x=1.0, f=0.5, slope=math.inf, ground_energy=-math.inf)


# --- half-integer validity ---------------------------------------------------


def stability_index(spin: Spin, mu: float) -> float:
    """Second-order response of the symmetric ground state to Jx mixing.

    Returns ``4 <psi|Jx (H' - E0)^-1 Jx|psi>`` where H' is the block of
    ``mu*Jz + Jx^2`` opposite in parity to the ground state. A value above 1
    means the symmetric state is a saddle of mu<Jz> + Var(Jx), so a
    symmetry-broken state with lower Var(Jx) exists.
    """
    e0, vec, parity = _ground(spin, float(mu))
    phi = _apply_jx(spin, vec)
    idx, diag, off = _block(spin, float(mu), 1 - parity)
    if idx.size == 0:
        return 0.0
    rhs = phi[idx]
    if not np.any(rhs):
        return 0.0
    if idx.size == 1:
        gap = float(diag[0] - e0)
        return math.inf if gap <= 0 else float(4 * rhs[0] ** 2 / gap)
    ab = np.zeros((2, idx.size))
    ab[0, 1:] = off
    ab[1] = diag - e0
    try:
        y = solveh_banded(ab, rhs)
    except LinAlgError:
        return math.inf
    return float(4 * rhs @ y)


@functools.lru_cache(maxsize=256)
def symmetric_bifurcation(spin: Spin) -> tuple[float, float]:
    """(mu_c, x_c) where the symmetric branch loses optimality.

    Integer spins never bifurcate: returns (0.0, 0.0), the end of the branch.
    """
    if spin.is_integer_spin():
        return 0.0, 0.0

    def g(t):
        return math.log(stability_index(spin, -math.exp(t)))

    lo, hi = math.log(1e-8), math.log(1e6)
    if not (g(lo) > 0 > g(hi)):
        raise NumericalFailure(f"could not bracket the bifurcation for J={spin}")
    t = brentq(g, lo, hi, xtol=1e-13, rtol=1e-14, maxiter=500)
    mu_c = -math.exp(t)
    return mu_c, curve_point(spin, mu_c).x


def validity_edge(spin: Spin) -> float:
    """Smallest |x| at which the diagonalisation curve equals F_J."""
    return symmetric_bifurcation(spin)[1]


# --- curve tables -----------------------------------------------------------


@dataclass(frozen=True)
class CurveTable:
    spin: Spin
    points: tuple
    x_min: float
    bifurcation_x: float | None = None
    grid_key: str = ""
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def _arr(self, name):
        if name not in self._arrays:
            self._arrays[name] = np.array([getattr(p, name) for p in self.points], dtype=float)
        return self._arrays[name]

    @property
    def xs(self) -> np.ndarray:
        return self._arr("x")

    @property
    def fs(self) -> np.ndarray:
        return self._arr("f")

    @property
    def slopes(self) -> np.ndarray:
        return self._arr("slope")

    @property
    def mus(self) -> np.ndarray:
        return self._arr("mu")

    def __len__(self):
        return len(self.points)

    def second_differences(self) -> np.ndarray:
        """Second divided differences of f over consecutive triples."""
        x, f = self.xs, self.fs
        if x.size < 3:
            return np.zeros(0)
        d1 = np.diff(f) / np.diff(x)
        return 2 * np.diff(d1) / (x[2:] - x[:-2])


def _collapse(points: list) -> tuple:
    pts = sorted(points, key=lambda p: (p.x, p.f))
    out = []
    for p in pts:
        if out and p.x - out[-1].x <= 1e-13:
            if p.f < out[-1].f:
                out[-1] = p
            continue
        out.append(p)
    return tuple(out)


def mu_for_x(spin: Spin, x_target: float, tol: float = X_TOL) -> CurvePoint:
    """Bisect on mu until the ground state has x within ``tol`` of the target."""
    x_target = float(x_target)
    x_min = validity_edge(spin)
    if spin.two_j == 1:
        if x_target < 1.0:
            raise DomainError("for J=1/2 the diagonalisation curve is valid only at x = 1")
    if not (x_min - tol <= x_target <= 1.0):
        raise DomainError(f"x = {x_target!r} outside the valid interval [{x_min!r}, 1] for J={spin}")
    if x_target >= 1.0:
        return coherent_point(spin)
    if spin.is_integer_spin() and x_target <= tol:
        return curve_point(spin, 0.0)
    if not spin.is_integer_spin() and x_target <= x_min + tol:
        return curve_point(spin, symmetric_bifurcation(spin)[0])

    cache = {}

    def point(t):
        if t not in cache:
            cache[t] = curve_point(spin, -math.exp(t))
        return cache[t]

    def g(t):
        return point(t).x - x_target

    lo = math.log(-symmetric_bifurcation(spin)[0]) if not spin.is_integer_spin() else -8.0
    hi = 2.0
    while g(lo) > 0:
        if spin.is_integer_spin() and lo > _T_MIN:
            lo -= 4.0
        else:
            raise NumericalFailure(f"cannot bracket x={x_target!r} from below for J={spin}")
    while g(hi) < 0:
        hi += 2.0
        if hi > _T_MAX:
            raise NumericalFailure(f"cannot bracket x={x_target!r} from above for J={spin}")
    brentq(g, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
    best = min((point(s) for s in cache), key=lambda p: abs(p.x - x_target))
    if abs(best.x - x_target) > tol:
        raise NumericalFailure(
            f"mu refinement for x={x_target!r} (J={spin}) stalled at x={best.x!r}",
            residual=abs(best.x - x_target),
        )
    return best


def compute_curve(spin: Spin, grid: MuSweep | XTargets | None = None) -> CurveTable:
    """Tabulate the frontier over a mu sweep or at requested x values.

    Integer spins are valid on [0, 1]. Half-integer spins are tabulated only
    from the bifurcation up; J = 1/2 degenerates to the coherent point.
    """
    grid = MuSweep() if grid is None else grid
    if spin.two_j == 1:
        return CurveTable(spin, (coherent_point(spin),), x_min=1.0, bifurcation_x=1.0, grid_key=grid.key())

    mu_c, x_c = symmetric_bifurcation(spin)
    points = []
    if isinstance(grid, XTargets):
        for x in grid.values:
            points.append(mu_for_x(spin, abs(x), grid.tol))
    else:
        for mu in grid.mus():
            if mu <= mu_c:
                points.append(curve_point(spin, float(mu)))
        points.append(curve_point(spin, mu_c))
        points.append(coherent_point(spin))
    bif = None if spin.is_integer_spin() else x_c
    return CurveTable(spin, _collapse(points), x_min=x_c, bifurcation_x=bif, grid_key=grid.key())


def analytic_bound(spin: Spin, x):
    """Closed-form lower bound on Var(Jx)/J from Heisenberg plus the Casimir.

    Evaluated as (z^2 / 2) / (a + sqrt((a - z)(a + z))) with a = J(J+1) - z^2
    and z = x*J, which is the same quantity without the cancellation near
    x = 1. With d = J - z the factors are a - z = d(2J - d + 1) and
    a + z = (2J - d)(d + 1), so nothing is subtracted from a nearby number.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1 + 1e-12):
        raise DomainError(f"|x| must be <= 1, got {x!r}")
    j = spin.j
    xa = np.minimum(np.abs(xa), 1.0)
    z = xa * j
    d = (1.0 - xa) * j
    a = d * (2 * j - d) + j
    rad = d * (2 * j - d + 1) * (2 * j - d) * (d + 1)
    denom = a + np.sqrt(rad)
    val = 0.5 * z * z / denom / j
    return float(val) if np.ndim(val) == 0 else val


def lower_envelope_eval(table: CurveTable, x):
    """max_i [f_i + slope_i (|x| - x_i)], clamped at 0.

    A certified lower bound on F_J over the table's validity interval for any
    grid, since every tangent of a convex function lies below it.
    """
    xa = np.abs(np.asarray(x, dtype=float))
    if np.any(xa > 1 + 1e-12) or np.any(xa < table.x_min - 1e-12):
        raise DomainError(
            f"x = {x!r} outside the valid interval [{table.x_min!r}, 1] (in |x|) for J={table.spin}"
        )
    xs, fs, ss = table.xs, table.fs, table.slopes
    finite = np.isfinite(ss)
    flat = xa.reshape(-1)
    out = np.empty(flat.size)
    for n, xv in enumerate(flat):
        vals = fs[finite] + ss[finite] * (xv - xs[finite])
        best = vals.max() if vals.size else -math.inf
        exact = fs[~finite][xs[~finite] == xv]
        if exact.size:
            best = max(best, exact.max())
        out[n] = max(best, 0.0)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(xa.shape)


def exact_value(spin: Spin, x: float, tol: float = 1e-10) -> float:
    """F_J at a single x, inside the validity interval, by mu refinement."""
    return mu_for_x(spin, abs(x), tol).f


# --- persistence -------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def curve_csv_text(table: CurveTable, header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(f"# x_min = {_fmt(table.x_min)}\n")
    if table.bifurcation_x is not None:
        buf.write(f"# bifurcation_x = {_fmt(table.bifurcation_x)}\n")
    buf.write(f"# grid = {table.grid_key}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in table.points:
        w.writerow([table.spin.two_j, _fmt(p.mu), _fmt(p.x), _fmt(p.f), _fmt(p.slope)])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_curve_csv(table: CurveTable, path, header_lines: Sequence[str] = ()) -> None:
    atomic_write_text(path, curve_csv_text(table, header_lines))


def read_curve_csv(path) -> CurveTable:
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            elif line.strip():
                body.append(line)
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    two_j = None
    for r in reader:
        two_j = int(r["two_j"])
        mu, x, f, slope = (float(r[k]) for k in ("mu", "x", "f", "slope"))
        rows.append(CurvePoint(mu=mu, x=x, f=f, slope=slope, ground_energy=math.nan))
    if two_j is None:
        raise ValueError(f"{path}: empty curve table")
    bif = meta.get("bifurcation_x")
    return CurveTable(
        Spin(two_j),
        tuple(rows),
        x_min=float(meta.get("x_min", "0.0")),
        bifurcation_x=float(bif) if bif is not None else None,
        grid_key=meta.get("grid", ""),
    )


class CurveCache:
    """On-disk curve tables, one CSV per (two_j, grid, code version).

    Concurrent writers are safe because files are replaced atomically; a
    reader either sees a complete table or none.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else None
        self._memory = {}

    def path_for(self, spin: Spin, grid) -> Path:
        digest = hashlib.sha256(f"{grid.key()}|{__version__}".encode()).hexdigest()[:16]
        return self.directory / f"curve_{spin.two_j}_{digest}.csv"

    def get(self, spin: Spin, grid=None) -> CurveTable:
        grid = MuSweep() if grid is None else grid
        key = (spin.two_j, grid.key())
        if key in self._memory:
            return self._memory[key]
        table = None
        if self.directory is not None:
            path = self.path_for(spin, grid)
            if path.exists():
                table = read_curve_csv(path)
        if table is None:
            table = compute_curve(spin, grid)
            if self.directory is not None:
                # round-trip through text so warm and cold runs see identical floats
                write_curve_csv(table, self.path_for(spin, grid))
                table = read_curve_csv(self.path_for(spin, grid))
        self._memory[key] = table
        return table
