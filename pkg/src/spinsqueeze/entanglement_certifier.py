"""Entanglement depth from collective spin moments.

For N particles of spin J the scaled point is x = <Jz>/(NJ), v = Var(Jx)/(NJ).
Any state built from groups of at most k entangled particles obeys
v >= F_{kJ}(x), so v below a certified lower bound on F_{kJ} proves that some
group holds more than k particles.
"""

from __future__ import annotations

import functools
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

from .errors import DomainError, InvalidRecordError, RegimeError
from .optimal_curves import CurveCache, XTargets, analytic_bound, lower_envelope_eval, validity_edge
from .spin_core import Spin

DIMENSION_CAP = 20001
MODES = ("auto", "exact", "analytic")
TARGET_TOL = 1e-9
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class MeasurementRecord:
    num_particles: int
    spin: Spin
    mean_jz: float
    var_jx: float
    se_mean_jz: float | None = None
    se_var_jx: float | None = None

    def __post_init__(self):
        n = self.num_particles
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise InvalidRecordError(f"num_particles must be a positive integer, got {n!r}", "num_particles")
        for name in ("mean_jz", "var_jx"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                raise InvalidRecordError(f"{name} must be a finite number, got {val!r}", name)
        if self.var_jx < 0:
            raise InvalidRecordError(f"var_jx must be >= 0, got {self.var_jx!r}", "var_jx")
        if abs(self.mean_jz) > n * self.spin.j * (1 + 1e-12):
            raise InvalidRecordError(
                f"|mean_jz| = {abs(self.mean_jz)!r} exceeds N*J = {n * self.spin.j!r}", "mean_jz"
            )
        for name in ("se_mean_jz", "se_var_jx"):
            val = getattr(self, name)
            if val is None:
                continue
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val) or val < 0:
                raise InvalidRecordError(f"{name} must be a non-negative number, got {val!r}", name)

    @classmethod
    def from_mapping(cls, data: Mapping) -> MeasurementRecord:
        if not isinstance(data, Mapping):
            raise InvalidRecordError(f"record must be a mapping, got {type(data).__name__}")
        for key in ("num_particles", "two_j", "mean_jz", "var_jx"):
            if key not in data:
                raise InvalidRecordError(f"missing required field {key!r}", key)
        unknown = set(data) - {"num_particles", "two_j", "mean_jz", "var_jx", "se_mean_jz", "se_var_jx"}
        if unknown:
            raise InvalidRecordError(f"unknown field(s) {sorted(unknown)}", sorted(unknown)[0])
        two_j = data["two_j"]
        if isinstance(two_j, bool) or not isinstance(two_j, int) or two_j < 1:
            raise InvalidRecordError(f"two_j must be a positive integer, got {two_j!r}", "two_j")
        return cls(
            num_particles=data["num_particles"],
            spin=Spin(two_j),
            mean_jz=data["mean_jz"],
            var_jx=data["var_jx"],
            se_mean_jz=data.get("se_mean_jz"),
            se_var_jx=data.get("se_var_jx"),
        )

    def to_mapping(self) -> dict:
        out = {
            "num_particles": self.num_particles,
            "two_j": self.spin.two_j,
            "mean_jz": self.mean_jz,
            "var_jx": self.var_jx,
        }
        if self.se_mean_jz is not None:
            out["se_mean_jz"] = self.se_mean_jz
        if self.se_var_jx is not None:
            out["se_var_jx"] = self.se_var_jx
        return out

    @property
    def scale(self) -> float:
        return self.num_particles * self.spin.j

    @property
    def x(self) -> float:
        return min(abs(self.mean_jz) / self.scale, 1.0)

    @property
    def v(self) -> float:
        return self.var_jx / self.scale

    @property
    def has_errors(self) -> bool:
        return bool(self.se_mean_jz) or bool(self.se_var_jx)


@dataclass(frozen=True)
class MarginPolicy:
    """Conservative handling of statistical errors.

    A k-test passes only if v + z*se_v + absolute stays below the bound
    evaluated at x - z*se_x (the bound grows with x, so both shifts work
    against certification).
    """

    z: float = 3.0
    absolute: float = 0.0

    def __post_init__(self):
        if not (self.z >= 0 and self.absolute >= 0):
            raise ValueError("margin policy needs z >= 0 and absolute >= 0")


class LowerBound:
    """Certified lower bounds on F_J(x), choosing the method per spin.

    * J = 1/2: the exact closed form x^2/2.
    * dimension 2J+1 above ``dimension_cap``: the analytic bound.
    * half-integer J below the validity edge: the analytic bound, since the
      diagonalisation curve is not a lower bound there.
    * otherwise: the tangent envelope of a curve table refined at x.
    """

    def __init__(self, dimension_cap: int = DIMENSION_CAP, cache: CurveCache | None = None):
        self.dimension_cap = dimension_cap
        self.cache = cache if cache is not None else CurveCache()
        self._eval = functools.lru_cache(maxsize=4096)(self._evaluate)

    def method_for(self, spin: Spin, x: float, mode: str = "auto") -> str:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "analytic":
            return "analytic"
        if spin.two_j == 1:
            return "closed_form"
        if mode == "auto" and spin.dim > self.dimension_cap:
            return "analytic"
        if not spin.is_integer_spin() and x < validity_edge(spin):
            if mode == "exact":
                raise RegimeError(
                    f"the exact curve for J={spin} is not a lower bound below x = {validity_edge(spin):.6f}; "
                    "use analytic mode"
                )
            return "analytic"
        return "envelope"

    def __call__(self, spin: Spin, x: float, mode: str = "auto") -> tuple[float, str]:
        """(bound on F_J(|x|), method name)."""
        if not abs(x) <= 1 + 1e-12:
            raise DomainError(f"|x| must be <= 1, got {x!r}")
        xa = min(abs(float(x)), 1.0)
        method = self.method_for(spin, xa, mode)
        return self._eval(spin, xa, method), method

    def _evaluate(self, spin: Spin, x: float, method: str) -> float:
        if method == "analytic":
            return float(analytic_bound(spin, x))
        if method == "closed_form":
            return 0.5 * x * x
        if x >= 1.0:
            return 0.5
        table = self.cache.get(spin, XTargets((x,), TARGET_TOL))
        return float(lower_envelope_eval(table, max(x, table.x_min)))


_DEFAULT_BOUND = LowerBound()


def separability_bound(spin: Spin, num_particles: int, x: float, mode: str = "exact",
                       provider: LowerBound | None = None) -> float:
    """N*J*L(x): the smallest Var(Jx) a separable N-particle state can reach."""
    if mode not in ("exact", "analytic"):
        raise ValueError(f"mode must be 'exact' or 'analytic', got {mode!r}")
    provider = provider or _DEFAULT_BOUND
    value, _ = provider(spin, x, mode)
    return num_particles * spin.j * value


@dataclass(frozen=True)
class KTest:
    k: int
    bound: float
    method: str
    margin: float
    adjusted_margin: float

    @property
    def raw_pass(self) -> bool:
        return self.margin > 0

    @property
    def passed(self) -> bool:
        return self.adjusted_margin > 0


@dataclass(frozen=True)
class DepthCertificate:
    """Outcome of the grouped-bound scan.

    ``certified_depth`` is one more than the largest k whose test passes after
    the margin policy; ``raw_depth`` ignores statistical errors. Both are at
    least 1 and at most ``max_k + 1`` (and never above N). ``margin`` in each
    per-k entry is bound minus v, so positive margins certify.
    """

    certified_depth: int
    raw_depth: int
    x: float
    v: float
    tests: tuple
    mode: str
    policy: MarginPolicy | None
    linear_scan: bool = False
    notes: tuple = field(default=())

    def to_mapping(self) -> dict:
        return {
            "certified_depth": self.certified_depth,
            "raw_depth": self.raw_depth,
            "x": self.x,
            "v": self.v,
            "mode": self.mode,
            "margin_policy": None if self.policy is None else {"z": self.policy.z, "absolute": self.policy.absolute},
            "linear_scan": self.linear_scan,
            "per_k": [
                {"k": t.k, "bound": t.bound, "method": t.method, "margin": t.margin,
                 "adjusted_margin": t.adjusted_margin}
                for t in self.tests
            ],
        }


class _Tester:
    def __init__(self, record, policy, mode, provider):
        self.record = record
        self.mode = mode
        self.provider = provider
        self.x = record.x
        self.v = record.v
        if policy is None:
            self.x_adj, self.v_adj = self.x, self.v
        else:
            se_x = (record.se_mean_jz or 0.0) / record.scale
            se_v = (record.se_var_jx or 0.0) / record.scale
            self.x_adj = max(self.x - policy.z * se_x, 0.0)
            self.v_adj = self.v + policy.z * se_v + policy.absolute
        self.done = {}

    def __call__(self, k: int) -> KTest:
        if k not in self.done:
            spin = Spin(k * self.record.spin.two_j)
            bound, method = self.provider(spin, self.x, self.mode)
            if self.x_adj == self.x and self.v_adj == self.v:
                adjusted = bound - self.v
            else:
                b_adj, _ = self.provider(spin, self.x_adj, self.mode)
                adjusted = b_adj - self.v_adj
            self.done[k] = KTest(k, bound, method, bound - self.v, adjusted)
        return self.done[k]


def _largest_passing(ks: list, test, key) -> tuple[int, bool]:
    """Largest index-position in ``ks`` whose test passes, assuming monotone bounds.

    Exponential stepping finds a failing probe, bisection closes the gap.
    Bounds at all probes are checked to be non-increasing in k; a violation
    triggers a full linear scan. Returns (largest passing k or 0, scanned).
    """
    if not ks:
        return 0, False
    probes = []

    def probe(i):
        t = test(ks[i])
        probes.append((ks[i], t.bound))
        return key(t)

    if not probe(0):
        lo, hi = -1, 0
    else:
        lo, step = 0, 1
        hi = None
        while True:
            nxt = lo + step
            if nxt >= len(ks):
                nxt = len(ks) - 1
                if nxt == lo:
                    break
                if probe(nxt):
                    lo = nxt
                else:
                    hi = nxt
                break
            if probe(nxt):
                lo, step = nxt, step * 2
            else:
                hi = nxt
                break
        if hi is not None:
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if probe(mid):
                    lo = mid
                else:
                    hi = mid
    probes.sort()
    monotone = all(b2 <= b1 + MONOTONE_SLACK for (_, b1), (_, b2) in zip(probes, probes[1:]))
    if monotone:
        return (ks[lo] if lo >= 0 else 0), False
    best = 0
    for k in ks:
        if key(test(k)):
            best = k
    return best, True


def certify_depth(
    record: MeasurementRecord,
    max_k: int | None = None,
    policy: MarginPolicy | None = None,
    *,
    mode: str = "auto",
    provider: LowerBound | None = None,
) -> DepthCertificate:
    """Certified entanglement depth of ``record``.

    Groups need not divide N: assuming every group has the maximal size k
    gives the weakest bound, so each test stays sound. For half-integer J the
    odd and even k are searched separately because they may use different
    bound methods; within each class the bounds decrease with k.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    n = record.num_particles
    max_k = n if max_k is None else max_k
    if isinstance(max_k, bool) or not isinstance(max_k, int) or not 1 <= max_k <= n:
        raise ValueError(f"max_k must be an integer in [1, N={n}], got {max_k!r}")
    if record.has_errors and policy is None:
        raise InvalidRecordError(
            "record carries standard errors; pass an explicit MarginPolicy", "margin_policy"
        )
    tester = _Tester(record, policy, mode, provider or _DEFAULT_BOUND)
    if record.spin.is_integer_spin():
        classes = [list(range(1, max_k + 1))]
    else:
        classes = [list(range(1, max_k + 1, 2)), list(range(2, max_k + 1, 2))]

    results = {}
    scanned = False
    for label, key in (("adjusted", lambda t: t.passed), ("raw", lambda t: t.raw_pass)):
        best = 0
        for ks in classes:
            k, lin = _largest_passing(ks, tester, key)
            best = max(best, k)
            scanned = scanned or lin
        results[label] = min(best + 1, n)
    notes = []
    if results["raw"] == n or results["adjusted"] == n:
        notes.append("depth capped at N")
    return DepthCertificate(
        certified_depth=results["adjusted"],
        raw_depth=results["raw"],
        x=record.x,
        v=record.v,
        tests=tuple(tester.done[k] for k in sorted(tester.done)),
        mode=mode,
        policy=policy,
        linear_scan=scanned,
        notes=tuple(notes),
    )


def is_entangled(
    record: MeasurementRecord,
    policy: MarginPolicy | None = None,
    *,
    mode: str = "auto",
    provider: LowerBound | None = None,
) -> tuple[bool, float]:
    """Whether the k = 1 test fails for every separable state, with v - L_J(x).

    The returned margin is negative when entanglement is detected (opposite
    sign to the per-k margins of a certificate).
    """
    if record.has_errors and policy is None:
        raise InvalidRecordError(
            "record carries standard errors; pass an explicit MarginPolicy", "margin_policy"
        )
    test = _Tester(record, policy, mode, provider or _DEFAULT_BOUND)(1)
    return test.passed, record.v - test.bound
