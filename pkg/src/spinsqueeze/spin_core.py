"""Angular-momentum operators in the |J, m> basis and moments of pure states.

The basis is ordered m = J, J-1, ..., -J throughout the package, so index 0 is
the fully polarised state |Jz = J>.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from .errors import NormalizationError, UndefinedSqueezingError

NORM_TOL = 1e-12
STRUCTURE_TOL = 1e-12
MOMENT_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Spin:
    """Spin quantum number stored as the integer 2J."""

    two_j: int

    def __post_init__(self):
        if isinstance(self.two_j, bool) or int(self.two_j) != self.two_j:
            raise ValueError(f"two_j must be an integer, got {self.two_j!r}")
        object.__setattr__(self, "two_j", int(self.two_j))
        if self.two_j < 1:
            raise ValueError(f"two_j must be >= 1 (J >= 1/2), got {self.two_j}")

    @classmethod
    def parse(cls, text) -> Spin:
        """Accept ``"3/2"``, ``"1.5"``, ``"2"`` or a number and return the spin."""
        value = Fraction(str(text).strip())
        if (2 * value).denominator != 1:
            raise ValueError(f"{text!r} is not an integer or half-integer spin")
        return cls(int(2 * value))

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def dim(self) -> int:
        return self.two_j + 1

    def is_integer_spin(self) -> bool:
        return self.two_j % 2 == 0

    def m_values(self) -> np.ndarray:
        return self.j - np.arange(self.dim, dtype=float)

    def __str__(self):
        return str(self.two_j // 2) if self.two_j % 2 == 0 else f"{self.two_j}/2"


class StateVector:
    """Normalised pure state over the |J, m> basis (m descending)."""

    __slots__ = ("spin", "amplitudes")

    def __init__(self, spin: Spin, amplitudes, tol: float = NORM_TOL):
        amps = np.array(amplitudes, dtype=complex).reshape(-1)
        if amps.size != spin.dim:
            raise ValueError(f"expected {spin.dim} amplitudes for J={spin}, got {amps.size}")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > tol:
            raise NormalizationError(f"state norm^2 = {norm2!r} differs from 1 by more than {tol:g}")
        amps.setflags(write=False)
        object.__setattr__(self, "spin", spin)
        object.__setattr__(self, "amplitudes", amps)

    def __setattr__(self, name, value):
        raise AttributeError("StateVector is immutable")

    @classmethod
    def normalized(cls, spin: Spin, amplitudes) -> StateVector:
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise NormalizationError("cannot normalise the zero vector")
        return cls(spin, amps / norm)

    def real_amplitudes(self) -> np.ndarray:
        return self.amplitudes.real.copy()

    def overlap(self, other: StateVector) -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: StateVector) -> float:
        return abs(self.overlap(other)) ** 2

    def __repr__(self):
        return f"StateVector(spin={self.spin}, amplitudes={self.amplitudes!r})"


@dataclass(frozen=True)
class OperatorMatrix:
    spin: Spin
    entries: np.ndarray
    hermitian: bool = True

    def __post_init__(self):
        d = self.spin.dim
        if self.entries.shape != (d, d):
            raise ValueError(f"operator must be {d}x{d}, got {self.entries.shape}")
        if self.hermitian and np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0) > STRUCTURE_TOL:
            raise ValueError("operator flagged hermitian is not hermitian")
        self.entries.setflags(write=False)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return self.entries @ other.entries
        return self.entries @ other

    def expectation(self, state: StateVector) -> complex:
        a = state.amplitudes
        return complex(np.vdot(a, self.entries @ a))


class SpinOperators(NamedTuple):
    jx: OperatorMatrix
    jy: OperatorMatrix
    jz: OperatorMatrix
    jx2: OperatorMatrix


@dataclass(frozen=True)
class SpinMoments:
    mean_jx: float
    mean_jy: float
    mean_jz: float
    var_jx: float
    var_jy: float
    var_jz: float


@dataclass(frozen=True)
class HeisenbergReport:
    """Cyclic products var_a * var_b - mean_c**2 / 4 for (a, b, c) in xyz order."""

    products: dict
    violated: tuple
    saturated: tuple

    @property
    def ok(self) -> bool:
        return not self.violated


def raising_elements(spin: Spin) -> np.ndarray:
    """<m+1|J+|m> for the basis pairs (index i, index i+1), i = 0..d-2."""
    j = spin.j
    m_lower = spin.m_values()[1:]
    return np.sqrt(j * (j + 1) - m_lower * (m_lower + 1))


def jx_band(spin: Spin) -> np.ndarray:
    """Super-diagonal of Jx; its diagonal is identically zero."""
    return 0.5 * raising_elements(spin)


@functools.lru_cache(maxsize=64)
def build_operators(spin: Spin) -> SpinOperators:
    """Jx, Jy, Jz and Jx^2 as dense matrices built from ladder elements."""
    jplus = np.diag(raising_elements(spin), 1)
    jminus = jplus.T
    jx = 0.5 * (jplus + jminus)
    jy = (jplus - jminus) / 2j
    jz = np.diag(spin.m_values())
    return SpinOperators(
        OperatorMatrix(spin, jx),
        OperatorMatrix(spin, jy),
        OperatorMatrix(spin, jz.astype(float)),
        OperatorMatrix(spin, jx @ jx),
    )


def _real_expectation(op: np.ndarray, a: np.ndarray, what: str) -> float:
    value = np.vdot(a, op @ a)
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise ValueError(f"<{what}> has imaginary part {value.imag:g}; operator not hermitian?")
    return float(value.real)


def moments(state: StateVector) -> SpinMoments:
    a = state.amplitudes
    norm2 = float(np.vdot(a, a).real)
    if abs(norm2 - 1.0) > NORM_TOL:
        raise NormalizationError(f"state norm^2 = {norm2!r}")
    ops = build_operators(state.spin)
    means = []
    variances = []
    for name, op in zip("xyz", (ops.jx, ops.jy, ops.jz)):
        mat = op.entries
        v = mat @ a
        mean = _real_expectation(mat, a, f"J{name}")
        second = float(np.vdot(v, v).real)  # <A^2> = |A psi|^2 for hermitian A
        means.append(mean)
        variances.append(max(second - mean * mean, 0.0))
    return SpinMoments(*means, *variances)


def squeezing_parameter(m: SpinMoments, spin: Spin) -> float:
    """Wineland parameter sqrt(2J) * dJx / |<Jz>|."""
    if m.mean_jz == 0:
        raise UndefinedSqueezingError("squeezing parameter undefined for <Jz> = 0")
    return float(np.sqrt(spin.two_j) * np.sqrt(m.var_jx) / abs(m.mean_jz))


def check_heisenberg(m: SpinMoments, tol: float = MOMENT_TOL) -> HeisenbergReport:
    products = {
        "xy": m.var_jx * m.var_jy - m.mean_jz**2 / 4,
        "yz": m.var_jy * m.var_jz - m.mean_jx**2 / 4,
        "zx": m.var_jz * m.var_jx - m.mean_jy**2 / 4,
    }
    violated = tuple(k for k, p in products.items() if p < -tol)
    saturated = tuple(k for k, p in products.items() if abs(p) <= tol)
    return HeisenbergReport(products, violated, saturated)


# --- state constructors -----------------------------------------------------


def basis_state(spin: Spin, m) -> StateVector:
    """|Jz = m>; ``m`` may be a float or a Fraction."""
    idx = int(round(spin.j - float(m)))
    if not 0 <= idx < spin.dim or abs((spin.j - float(m)) - idx) > 1e-12:
        raise ValueError(f"m={m} is not a valid projection for J={spin}")
    amps = np.zeros(spin.dim, dtype=complex)
    amps[idx] = 1.0
    return StateVector(spin, amps)


def coherent_state(spin: Spin) -> StateVector:
    """The fully polarised state |Jz = J>."""
    return basis_state(spin, spin.j)


def jx_eigenstate(spin: Spin, m) -> StateVector:
    """|Jx = m>, with the phase fixed so the largest component is real positive."""
    ops = build_operators(spin)
    w, v = np.linalg.eigh(ops.jx.entries)
    idx = int(np.argmin(np.abs(w - float(m))))
    if abs(w[idx] - float(m)) > 1e-8:
        raise ValueError(f"{m} is not an eigenvalue of Jx for J={spin}")
    vec = v[:, idx]
    k = int(np.argmax(np.abs(vec)))
    vec = vec * np.sign(vec[k])
    return StateVector.normalized(spin, vec)


def rotation_about_y(spin: Spin, angle: float) -> np.ndarray:
    """exp(-i angle Jy); real because -i Jy = -(J+ - J-)/2 is real."""
    jplus = np.diag(raising_elements(spin), 1)
    generator = -0.5 * (jplus - jplus.T)
    return expm(angle * generator)


def rotate_about_y(state: StateVector, angle: float) -> StateVector:
    amps = rotation_about_y(state.spin, angle) @ state.amplitudes
    return StateVector.normalized(state.spin, amps)


def random_state(spin: Spin, rng: np.random.Generator, real: bool = False) -> StateVector:
    """Haar-random pure state (complex Gaussian amplitudes)."""
    amps = rng.standard_normal(spin.dim)
    if not real:
        amps = amps + 1j * rng.standard_normal(spin.dim)
    return StateVector.normalized(spin, amps)
