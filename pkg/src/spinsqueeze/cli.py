"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 numerical failure. Every output
begins with a ``#`` metadata block (version, command, config hash and, unless
``--no-timestamp``, a UTC timestamp); everything after it is a deterministic
function of the configuration.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from ._version import __version__
from .entanglement_certifier import LowerBound, MarginPolicy, MeasurementRecord, certify_depth
from .errors import NumericalFailure, SpinSqueezeError
from .optimal_curves import (
    CSV_HEADER,
    CurveCache,
    MuSweep,
    XTargets,
    atomic_write_text,
    curve_csv_text,
)
from .spin_core import Spin, SpinMoments, coherent_state, squeezing_parameter
from .squeezing_dynamics import HamiltonianSpec, compare_to_frontier, evolve, final_fidelity
from .variational_search import AnnealSchedule, locate_bifurcation, minimize_at_x, reference_bifurcation_x

CACHE_ENV = "SPINSQUEEZE_CACHE"
# arguments that do not influence the computed content
_NOT_HASHED = {"output", "cache_dir", "no_timestamp", "compare_frontier", "branch_output", "func", "input"}


class InputError(SpinSqueezeError, ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class CommandConfig:
    subcommand: str
    two_j: int | None
    params: dict
    output: str | None = None
    cache_dir: str | None = None
    timestamp: bool = True
    extra_paths: dict = field(default_factory=dict)

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> CommandConfig:
        raw = vars(ns)
        params = {k: v for k, v in raw.items() if k not in _NOT_HASHED and k not in ("command", "two_j", "spin")}
        cache_dir = raw.get("cache_dir") or os.environ.get(CACHE_ENV) or None
        extras = {k: raw[k] for k in ("compare_frontier", "branch_output", "input") if raw.get(k)}
        return cls(
            subcommand=ns.command,
            two_j=_resolve_two_j(ns),
            params=params,
            output=raw.get("output"),
            cache_dir=cache_dir,
            timestamp=not raw.get("no_timestamp", False),
            extra_paths=extras,
        )

    def digest(self) -> str:
        payload = {"subcommand": self.subcommand, "two_j": self.two_j, "params": self.params}
        if "input" in self.extra_paths:
            with open(self.extra_paths["input"], "rb") as fh:
                payload["input_sha256"] = hashlib.sha256(fh.read()).hexdigest()
        text = json.dumps(payload, sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def metadata(self) -> list:
        lines = [f"spinsqueeze {__version__}", f"command = {self.subcommand}", f"config_hash = {self.digest()}"]
        if self.timestamp:
            now = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0)
            lines.append(f"timestamp = {now.isoformat()}")
        return lines


def _resolve_two_j(ns) -> int | None:
    two_j = getattr(ns, "two_j", None)
    text = getattr(ns, "spin", None)
    if text is not None:
        try:
            parsed = Spin.parse(text).two_j
        except (ValueError, ZeroDivisionError) as exc:
            raise InputError(f"--spin: {exc}") from None
        if two_j is not None and two_j != parsed:
            raise InputError(f"--two-j {two_j} and --spin {text} disagree")
        two_j = parsed
    if two_j is not None and two_j < 1:
        raise InputError(f"--two-j must be >= 1, got {two_j}")
    return two_j


def _spin(cfg: CommandConfig) -> Spin:
    if cfg.two_j is None:
        raise InputError("a spin is required: pass --two-j N or --spin J")
    return Spin(cfg.two_j)


def _comment_block(lines) -> str:
    return "".join(f"# {line}\n" for line in lines)


def _emit(cfg: CommandConfig, text: str, stdout) -> None:
    if cfg.output and cfg.output != "-":
        atomic_write_text(cfg.output, text)
    else:
        stdout.write(text)


def _yaml(data) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False)


def _num(v):
    """Plain Python float/int for YAML, with nan kept as a string."""
    if isinstance(v, (bool, int)):
        return v
    v = float(v)
    return "nan" if math.isnan(v) else v


# --- subcommands -------------------------------------------------------------


def run_curve(cfg: CommandConfig, stdout, stderr) -> int:
    spin = _spin(cfg)
    p = cfg.params
    if p["x"]:
        for x in p["x"]:
            if not 0 <= x <= 1:
                raise InputError(f"--x values must lie in [0, 1], got {x}")
        grid = XTargets(tuple(p["x"]))
    else:
        if not (0 < p["mu_min"] < p["mu_max"]):
            raise InputError("need 0 < --mu-min < --mu-max")
        grid = MuSweep(lo=p["mu_min"], hi=p["mu_max"], per_decade=p["per_decade"], n_points=p["points"])
    cache = CurveCache(cfg.cache_dir)
    table = cache.get(spin, grid)
    if spin.two_j == 1 and not p["variational"]:
        stderr.write(
            "notice: for J=1/2 the diagonalisation curve degenerates to the coherent point x=1; "
            "run with --variational for the branch below it\n"
        )
    text = curve_csv_text(table, cfg.metadata())
    if p["variational"] and not spin.is_integer_spin():
        text = _with_variational_rows(text, spin, table, p)
    _emit(cfg, text, stdout)
    return 0


def _with_variational_rows(text: str, spin: Spin, table, p) -> str:
    """Append upper-bound branch points left of the bifurcation with a source column."""
    x_c = table.x_min
    n = p["variational_points"]
    xs = [x_c * (i + 1) / (n + 1) for i in range(n)]
    schedule = AnnealSchedule()
    extra = []
    for x in xs:
        r = minimize_at_x(spin, x, schedule=schedule, seed=p["seed"])
        extra.append((spin.two_j, r.mu, r.x, r.f, math.nan))
    lines = text.splitlines()
    out = []
    header = ",".join(CSV_HEADER)
    for line in lines:
        if line == header:
            out.append("# rows with source=variational are upper bounds, not certification-grade")
            out.append(header + ",source")
        elif line.startswith("#"):
            out.append(line)
        else:
            out.append(line + ",diagonalization")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in extra:
        w.writerow([row[0]] + [repr(float(v)) for v in row[1:]] + ["variational"])
    return "\n".join(out) + "\n" + buf.getvalue()


def run_bound(cfg: CommandConfig, stdout, stderr) -> int:
    spin = _spin(cfg)
    p = cfg.params
    x = p["x"]
    if not abs(x) <= 1:
        raise InputError(f"--x must satisfy |x| <= 1, got {x}")
    provider = LowerBound(cache=CurveCache(cfg.cache_dir))
    modes = ("exact", "analytic") if p["mode"] == "both" else (p["mode"],)
    out = {"two_j": spin.two_j, "x": x, "num_particles": p["num_particles"], "bounds": []}
    for mode in modes:
        value, method = provider(spin, x, mode)
        out["bounds"].append({
            "mode": mode,
            "method": method,
            "scaled": _num(value),
            "variance": _num(p["num_particles"] * spin.j * value),
        })
    _emit(cfg, _comment_block(cfg.metadata()) + _yaml(out), stdout)
    return 0


def run_xi(cfg: CommandConfig, stdout, stderr) -> int:
    spin = _spin(cfg)
    p = cfg.params
    if p["var_jx"] < 0:
        raise InputError(f"--var-jx must be >= 0, got {p['var_jx']}")
    if abs(p["mean_jz"]) > spin.j:
        raise InputError(f"|--mean-jz| must be <= J = {spin.j}, got {p['mean_jz']}")
    m = SpinMoments(0.0, 0.0, p["mean_jz"], p["var_jx"], 0.0, 0.0)
    xi = squeezing_parameter(m, spin)
    out = {"two_j": spin.two_j, "var_jx": p["var_jx"], "mean_jz": p["mean_jz"], "xi": _num(xi)}
    _emit(cfg, _comment_block(cfg.metadata()) + _yaml(out), stdout)
    return 0


def run_bifurcation(cfg: CommandConfig, stdout, stderr) -> int:
    spin = _spin(cfg)
    p = cfg.params
    if spin.is_integer_spin():
        raise InputError(f"J={spin} is an integer spin; the bifurcation exists only for half-integer J")
    report = locate_bifurcation(spin, seed=p["seed"], x_width=p["x_width"])
    out = {
        "two_j": spin.two_j,
        "x_critical": _num(report.x_critical),
        "mean_jz_critical": _num(report.x_critical * spin.j),
        "bracket": [_num(b) for b in report.bracket],
        "mu_bracket": [_num(b) for b in report.mu_bracket],
        "stability_reference_x": _num(reference_bifurcation_x(spin)),
        "probes": report.probes,
        "warning": report.warning,
    }
    _emit(cfg, _comment_block(cfg.metadata()) + _yaml(out), stdout)
    branch = cfg.extra_paths.get("branch_output")
    if branch:
        buf = io.StringIO()
        buf.write(_comment_block(cfg.metadata()))
        buf.write("x,mean_jx\n")
        for x, mjx in report.branch_samples:
            buf.write(f"{float(x)!r},{float(mjx)!r}\n")
        atomic_write_text(branch, buf.getvalue())
    return 0


def run_dynamics(cfg: CommandConfig, stdout, stderr) -> int:
    spin = _spin(cfg)
    p = cfg.params
    kind = p["kind"].replace("-", "_")
    if p["samples"] < 2:
        raise InputError("--samples must be >= 2")
    if kind in ("adiabatic", "adiabatic_ramp"):
        if p["T"] is None:
            raise InputError("--T (ramp duration) is required for --kind adiabatic")
        omega = -1.0 if p["omega"] is None else p["omega"]
        spec = HamiltonianSpec("adiabatic_ramp", omega=omega, chi=p["chi"], ramp_time=p["T"])
        tmax = p["T"] if p["tmax"] is None else p["tmax"]
    else:
        spec = HamiltonianSpec(kind, omega=p["omega"] or 0.0, chi=p["chi"])
        tmax = 1.0 if p["tmax"] is None else p["tmax"]
    if not tmax > 0:
        raise InputError("--tmax must be positive")
    times = np.linspace(0.0, tmax, p["samples"])
    traj = evolve(coherent_state(spin), spec, times)
    text = traj.csv_text(cfg.metadata())
    if spec.kind == "adiabatic_ramp":
        footer = [
            f"target_mu = {spec.final_mu()!r}",
            f"final_fidelity = {final_fidelity(spec, traj)!r}",
            f"step = {traj.step!r}",
            f"step_control_change = {traj.accuracy!r}",
        ]
        text += _comment_block(footer)
    _emit(cfg, text, stdout)
    frontier_path = cfg.extra_paths.get("compare_frontier")
    if frontier_path:
        table = None if spin.two_j == 1 else CurveCache(cfg.cache_dir).get(spin, MuSweep())
        rows = compare_to_frontier(traj, table)
        buf = io.StringIO()
        buf.write(_comment_block(cfg.metadata()))
        buf.write("t,x,scaled_min_var,lower_bound,excess,bound_source\n")
        for r in rows:
            buf.write(f"{r.t!r},{r.x!r},{r.scaled_variance!r},{r.envelope!r},{r.excess!r},{r.source}\n")
        atomic_write_text(frontier_path, buf.getvalue())
    return 0


def _load_records(path: str) -> list:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not valid structured text: {exc}") from None
    items = data if isinstance(data, list) else [data]
    if not items:
        raise InputError(f"{path}: no records")
    records = []
    for i, item in enumerate(items):
        try:
            records.append(MeasurementRecord.from_mapping(item))
        except SpinSqueezeError as exc:
            where = f"record {i}" + (f", field {exc.field!r}" if getattr(exc, "field", None) else "")
            raise InputError(f"{path}: {where}: {exc}") from None
    return records


def run_certify(cfg: CommandConfig, stdout, stderr) -> int:
    p = cfg.params
    records = _load_records(cfg.extra_paths["input"])
    policy = None
    if p["margin_z"] is not None or p["margin_abs"] is not None:
        policy = MarginPolicy(z=3.0 if p["margin_z"] is None else p["margin_z"], absolute=p["margin_abs"] or 0.0)
    provider = LowerBound(dimension_cap=p["dimension_cap"], cache=CurveCache(cfg.cache_dir))
    certs = []
    for i, rec in enumerate(records):
        if rec.has_errors and policy is None:
            raise InputError(f"record {i} carries standard errors; pass --margin-z (and optionally --margin-abs)")
        max_k = rec.num_particles if p["max_k"] is None else min(p["max_k"], rec.num_particles)
        cert = certify_depth(rec, max_k=max_k, policy=policy, mode=p["mode"], provider=provider)
        entry = {"record": rec.to_mapping()}
        entry.update(_plain(cert.to_mapping()))
        certs.append(entry)
    body = certs[0] if len(certs) == 1 else certs
    _emit(cfg, _comment_block(cfg.metadata()) + _yaml(body), stdout)
    return 0


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


# --- parser --------------------------------------------------------------------


def _common(sub, spin=True):
    if spin:
        sub.add_argument("--two-j", type=int, help="twice the spin quantum number")
        sub.add_argument("--spin", help="spin as a fraction, e.g. 3/2 (normalised to --two-j)")
    sub.add_argument("-o", "--output", help="output file (default: stdout)")
    sub.add_argument("--cache-dir", help=f"curve cache directory (default: ${CACHE_ENV})")
    sub.add_argument("--no-timestamp", action="store_true", help="omit the timestamp line")
    sub.add_argument("--seed", type=int, default=0, help="generator seed for stochastic steps")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spinsqueeze", description="Optimal spin squeezing curves, dynamics and entanglement depth.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = subs.add_parser("curve", help="tabulate the optimal squeezing curve F_J")
    _common(c)
    c.add_argument("--points", type=int, help="number of mu values (overrides --per-decade)")
    c.add_argument("--per-decade", type=int, default=50)
    c.add_argument("--mu-min", type=float, default=1e-4, help="smallest |mu| in the sweep")
    c.add_argument("--mu-max", type=float, default=1e4, help="largest |mu| in the sweep")
    c.add_argument("--x", type=float, nargs="+", help="refine at these x values instead of sweeping")
    c.add_argument("--variational", action="store_true", help="append variational points left of the bifurcation")
    c.add_argument("--variational-points", type=int, default=9)
    c.set_defaults(func=run_curve)

    b = subs.add_parser("bound", help="certified lower bound on Var(Jx)")
    _common(b)
    b.add_argument("--x", type=float, required=True, help="<Jz>/(NJ)")
    b.add_argument("--mode", choices=("exact", "analytic", "both"), default="exact")
    b.add_argument("--num-particles", type=int, default=1)
    b.set_defaults(func=run_bound)

    f = subs.add_parser("bifurcation", help="locate the symmetry-breaking point for half-integer J")
    _common(f)
    f.add_argument("--x-width", type=float, default=1e-3)
    f.add_argument("--branch-output", help="also write the sampled branch points here")
    f.set_defaults(func=run_bifurcation)

    d = subs.add_parser("dynamics", help="evolve |Jz=J> under a twisting Hamiltonian")
    _common(d)
    d.add_argument("--kind", choices=("one-axis", "two-axis", "adiabatic"), required=True)
    d.add_argument("--chi", type=float, default=1.0, help="twisting strength (final value for ramps)")
    d.add_argument("--omega", type=float, help="Jz coefficient (default 0, or -1 for ramps)")
    d.add_argument("--tmax", type=float, help="final time (default 1, or T for ramps)")
    d.add_argument("--T", type=float, help="ramp duration")
    d.add_argument("--samples", type=int, default=201)
    d.add_argument("--compare-frontier", help="write (x, scaled variance, lower bound) rows here")
    d.set_defaults(func=run_dynamics)

    r = subs.add_parser("certify", help="entanglement depth from measured moments")
    _common(r, spin=False)
    r.add_argument("--input", required=True, help="record file: one object or a list")
    r.add_argument("--max-k", type=int)
    r.add_argument("--mode", choices=("auto", "analytic"), default="auto")
    r.add_argument("--margin-z", type=float, help="standard errors subtracted from each violation")
    r.add_argument("--margin-abs", type=float, help="extra absolute margin on the scaled variance")
    r.add_argument("--dimension-cap", type=int, default=20001)
    r.set_defaults(func=run_certify)

    x = subs.add_parser("xi", help="squeezing parameter sqrt(2J) dJx / |<Jz>|")
    _common(x)
    x.add_argument("--var-jx", type=float, required=True)
    x.add_argument("--mean-jz", type=float, required=True)
    x.set_defaults(func=run_xi)
    return parser


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = CommandConfig.from_namespace(ns)
        return ns.func(cfg, stdout, stderr)
    except NumericalFailure as exc:
        stderr.write(f"numerical failure: {exc}\n")
        return 2
    except (ValueError, OSError) as exc:
        stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
