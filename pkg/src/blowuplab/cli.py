"""Command-line front end: presets, INI configuration, run directories and verification."""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from . import lyapunov as ly
from . import pde_solver as ps
from . import selfsim_solver as ss
from . import stability as sb
from . import steady_states as sst
from .model_core import (CoordinateKind, DomainError, Params, Profile, RadialField,
                         ResolutionError, rational_b0, validate_initial_data)

log_ = logging.getLogger("blowuplab")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_VERSION = 1
MANIFEST_KEYS = {"version", "run_id", "command", "params", "config", "input_hash", "outcome",
                 "events"}
DEFAULT_OUT = "blowuplab_runs"


class UsageError(Exception):
    """Invalid command line or configuration."""


@dataclasses.dataclass(frozen=True)
class ExperimentPreset:
    name: str
    description: str
    initial: dict
    params: dict
    expected_checks: tuple
    sections: dict = dataclasses.field(default_factory=dict)
    flagged_invalid: bool = False


PRESETS = {
    "corollary-2-2": ExperimentPreset(
        "corollary-2-2", "b0 = 1 in d = 3 at half the critical theta, continued in (eta, tau)",
        {"kind": "constant", "value": "1.0"}, {"d": "3", "theta_ratio": "0.5"}, (4, 5, 6, 7, 11),
        {"run": {"rescaled": "true", "tau_max": "34"}, "solver": {"grid_size": "2048"},
         "rescaled": {"T_rel_bracket": "2e-5"}}),
    "rational-family": ExperimentPreset(
        "rational-family", "b0 = K1 + K2/(r^d + K3) with K1 + K2/(1 + K3) = 1",
        {"kind": "rational", "K1": "0.5", "K2": "1.0", "K3": "1.0"},
        {"d": "3", "theta_ratio": "0.5"}, (4, 7)),
}


# ---------------------------------------------------------------------------
# configuration

def _coerce(value: str, default, where: str):
    try:
        if isinstance(default, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float) or default is None:
            return float(value)
        return value
    except ValueError:
        raise UsageError(f"{where}: cannot parse {value!r}") from None


def _dc_from(cls, section: dict, name: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in section.items():
        if k not in fields:
            raise UsageError(f"[{name}] unknown key {k!r}; known: {', '.join(sorted(fields))}")
        default = fields[k].default
        kw[k] = _coerce(v, default, f"[{name}] {k}")
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"[{name}] {e}") from None


def load_config(path: str | None, preset: str | None) -> dict:
    """Sections as plain dicts: preset values first, then the file."""
    cfg = {"params": {}, "initial": {}, "solver": {}, "rescaled": {}, "run": {}, "steady": {},
           "spectrum": {}, "lyapunov": {}}
    if preset:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
        p = PRESETS[preset]
        cfg["params"].update(p.params)
        cfg["initial"].update(p.initial)
        for k, v in p.sections.items():
            cfg[k].update(v)
    if path:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as e:
            raise UsageError(f"cannot read config {path}: {e}") from None
        if not cp.sections():
            raise UsageError(f"config {path} is empty; required: [params] d, and an [initial] "
                             f"section with kind = constant | rational | file")
        for s in cp.sections():
            if s not in cfg:
                raise UsageError(f"unknown section [{s}]; known: {', '.join(cfg)}")
            cfg[s].update(cp[s])
    return cfg


def make_params(section: dict, args) -> Params:
    d = int(section.get("d", 3)) if args.d is None else args.d
    theta = args.theta if args.theta is not None else section.get("theta")
    try:
        if theta is not None:
            return Params.make(d, theta=float(theta))
        return Params.make(d, theta_ratio=float(section.get("theta_ratio", 0.5)))
    except (DomainError, ValueError) as e:
        raise UsageError(f"[params] {e}") from None


def make_initial(section: dict, cfg: ps.SolverConfig, params: Params):
    """Initial data on the solver grid, plus a copy on a uniform grid for validation.

    The solver grid clusters quadratically-and-more toward r = 0, where
    difference quotients of smooth data drown in roundoff, so the
    hypotheses are checked on an even grid instead.
    """
    kind = section.get("kind")
    if kind is None:
        raise UsageError("[initial] kind is required (constant | rational | file)")
    r = ps.make_grid(cfg)
    u = np.linspace(0.0, 1.0, 2001)
    if kind == "constant":
        v = _coerce(section.get("value", "1.0"), 1.0, "[initial] value")
        f = lambda x: np.full(x.size, v)
    elif kind == "rational":
        try:
            K = [float(section[k]) for k in ("K1", "K2", "K3")]
        except KeyError as e:
            raise UsageError(f"[initial] rational data needs {e.args[0]}") from None
        f = lambda x: rational_b0(x, *K, params.d)
    elif kind == "file":
        path = section.get("path")
        if not path:
            raise UsageError("[initial] file data needs path")
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1)
        except OSError as e:
            raise UsageError(f"[initial] {e}") from None
        u = data[:, 0]
        f = lambda x: np.interp(x, data[:, 0], data[:, 1])
    else:
        raise UsageError(f"[initial] unknown kind {kind!r}")
    return (RadialField(r, f(r), CoordinateKind.PHYSICAL_R),
            RadialField(u, f(u), CoordinateKind.PHYSICAL_R))


# ---------------------------------------------------------------------------
# persistence

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if dataclasses.is_dataclass(x):
        return _jsonable(dataclasses.asdict(x))
    if hasattr(x, "value") and not isinstance(x, (int, float, str)):
        return x.value
    return x


def input_hash(command: str, params: Params, config: dict) -> str:
    blob = json.dumps({"command": command, "params": params.as_dict(), "config": config},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def out_root(args) -> Path:
    return Path(args.out or os.environ.get("BLOWUPLAB_OUT") or DEFAULT_OUT)


def new_run(args, command: str, params: Params, config: dict):
    h = input_hash(command, params, config)
    run_id = f"{command}-{h[:12]}"
    d = out_root(args) / run_id
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"version": MANIFEST_VERSION, "run_id": run_id, "command": command,
                "params": params.as_dict(), "config": config, "input_hash": h, "outcome": {},
                "events": []}
    return d, manifest


def write_manifest(run_dir: Path, manifest: dict):
    with open(run_dir / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)


def read_manifest(path) -> dict:
    with open(path) as fh:
        m = json.load(fh)
    extra = set(m) - MANIFEST_KEYS
    missing = MANIFEST_KEYS - set(m)
    if extra or missing:
        raise UsageError(f"manifest keys mismatch: unknown {sorted(extra)}, missing {sorted(missing)}")
    if m["version"] != MANIFEST_VERSION:
        raise UsageError(f"unsupported manifest version {m['version']}")
    return m


# ---------------------------------------------------------------------------
# subcommands

def _progress(msg):
    log_.info("%s", msg)


def _rescaled_continuation(b0, T, params, cfg_sections, run_dir, manifest):
    rcfg = _dc_from(ss.RescaledConfig, cfg_sections["rescaled"], "rescaled")
    tau_max = _coerce(cfg_sections["run"].get("tau_max", "34"), 34.0, "[run] tau_max")
    states, omega = ss.run_rescaled(b0, T, tau_max, rcfg, params, progress=_progress)
    write_csv(run_dir / "rescaled.csv", ["tau", "eta", "B"],
              ((s.tau, e, v) for s in states for e, v in zip(s.B.grid, s.B.values)))
    series, viol = ss.zero_number_series(states, Profile.singular(params))
    write_csv(run_dir / "zero_number.csv", ["tau", "Z"], series)
    manifest["outcome"].update({
        "T_rescaled": omega.T_used, "omega_s1_member": omega.s1_member,
        "omega_intersections": omega.intersections_with_singular,
        "final_tau": states[-1].tau,
        "sup_distance_to_phi1": ss.sup_distance_to(states[-1], Profile.one(params), rcfg.window_C),
        "zero_number_increases": len(viol)})
    manifest["events"].extend(omega.events)
    return states, omega


def cmd_simulate(args, cfg_sections) -> int:
    params = make_params(cfg_sections["params"], args)
    scfg = _dc_from(ps.SolverConfig, cfg_sections["solver"], "solver")
    b0, b0_check = make_initial(cfg_sections["initial"], scfg, params)
    run_dir, manifest = new_run(args, "simulate", params, cfg_sections)
    rep = validate_initial_data(b0_check, params)
    manifest["outcome"]["initial_data"] = {"inic": rep.satisfies_inic,
                                           "inicon0": rep.satisfies_inicon0,
                                           "btpositive": rep.satisfies_btpositive,
                                           "worst_violation": rep.worst_violation,
                                           "worst_check": rep.worst_check}
    flagged = args.preset in PRESETS and PRESETS[args.preset].flagged_invalid
    if not rep.all_ok and not flagged:
        manifest["events"].append({"kind": "initial_data", "message":
                                   f"{rep.worst_check} violated by {rep.worst_violation:.3g}"})
    try:
        traj, est, trace = ps.run_to_blowup(b0, scfg, params)
    except ps.DivergenceError as e:
        manifest["events"].append({"kind": "divergence", "message": str(e)})
        write_manifest(run_dir, manifest)
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    write_csv(run_dir / "snapshots.csv", ["t", "r", "b"],
              ((s.t, r, b) for s in traj for r, b in zip(s.b.grid, s.b.values)))
    write_csv(run_dir / "trace.csv", ["t", "b0"], trace)
    names = sorted({k for s in traj for k in s.invariant_flags})
    write_csv(run_dir / "monitor.csv", ["t"] + names,
              ([s.t] + [int(s.invariant_flags.get(k, True)) for k in names] for s in traj))
    manifest["outcome"].update({"T": est.T, "blowup_detected": est.detected,
                                "sandwich_min": est.sandwich_min, "sandwich_max": est.sandwich_max,
                                "monitors": ps.all_monitors_ok(traj)})
    code = EXIT_OK
    if est.detected and str(cfg_sections["run"].get("rescaled", "false")).lower() == "true":
        try:
            _rescaled_continuation(b0, est.T, params, cfg_sections, run_dir, manifest)
        except ss.RescaledDivergence as e:
            manifest["events"].append({"kind": "divergence", "message": str(e)})
            code = EXIT_NUMERIC
    elif not est.detected:
        manifest["events"].append({"kind": "no_blowup", "message": "threshold not reached"})
    write_manifest(run_dir, manifest)
    print(run_dir)
    return code


def cmd_rescaled(args, cfg_sections) -> int:
    params = make_params(cfg_sections["params"], args)
    scfg = _dc_from(ps.SolverConfig, cfg_sections["solver"], "solver")
    if not cfg_sections["initial"]:
        cfg_sections["initial"] = {"kind": "constant", "value": "1.0"}
    b0, _ = make_initial(cfg_sections["initial"], scfg, params)
    run_dir, manifest = new_run(args, "rescaled", params, cfg_sections)
    T = cfg_sections["run"].get("T")
    if T is None:
        _, est, _ = ps.run_to_blowup(b0, scfg, params, monitor=False)
        if not est.detected:
            raise ps.DivergenceError("no blow-up detected; cannot seed T")
        T = est.T
    manifest["outcome"]["T_seed"] = float(T)
    _rescaled_continuation(b0, float(T), params, cfg_sections, run_dir, manifest)
    write_manifest(run_dir, manifest)
    print(run_dir)
    return EXIT_OK


def cmd_steady(args, cfg_sections) -> int:
    params = make_params(cfg_sections["params"], args)
    try:
        params.require_family_range()
    except DomainError as e:
        raise UsageError(str(e)) from None
    kmax = args.kmax or int(cfg_sections["steady"].get("kmax", 1))
    default_hi = 40.0 * params.d if kmax == 1 else 1e6
    hi = float(cfg_sections["steady"].get("bracket_hi", default_hi))
    run_dir, manifest = new_run(args, "steady", params, dict(cfg_sections, kmax=kmax))
    fam = sst.find_family(kmax, params, bracket_hi=hi)
    rows = []
    for m in fam.members:
        rows.append((m.k, m.a0, m.asymptotic_C, len(m.crossings), m.a0_bracket[0], m.a0_bracket[1]))
        g = m.profile.table
        write_csv(run_dir / f"profile_{m.k}.csv", ["eta", "phi"], zip(g.grid, g.values))
    write_csv(run_dir / "family.csv", ["k", "a0", "C", "crossings", "a0_lo", "a0_hi"], rows)
    manifest["outcome"].update({"members": len(fam.members), "partial": fam.partial,
                                "a0": [m.a0 for m in fam.members],
                                "crossings": [len(m.crossings) for m in fam.members]})
    write_manifest(run_dir, manifest)
    for r in rows:
        print(" ".join(_fmt(x) for x in r[:4]))
    print(run_dir)
    return EXIT_OK


def _spectrum_profile(name: str, params: Params):
    if name == "star":
        return Profile.star(params), None
    if name == "one":
        return Profile.one(params), None
    if name.startswith("family:"):
        k = int(name.split(":", 1)[1])
        hi = 40.0 * params.d if k == 1 else 1e6
        fam = sst.find_family(k, params, bracket_hi=hi)
        if len(fam.members) < k:
            raise UsageError(f"family member {k} not found below a0 = {hi:g}")
        return fam.members[k - 1].profile, k
    raise UsageError(f"unknown profile {name!r}; use star, one or family:k")


def cmd_spectrum(args, cfg_sections) -> int:
    params = make_params(cfg_sections["params"], args)
    sec = dict(cfg_sections["spectrum"])
    name = sec.pop("profile", "one")
    name = args.profile or name
    grid = _dc_from(sb.Discretization, sec, "spectrum")
    run_dir, manifest = new_run(args, "spectrum", params, dict(cfg_sections, profile=name))
    prof, k = _spectrum_profile(name, params)
    try:
        sp = sb.eigen_profile(prof, params, grid)
    except ResolutionError as e:
        print(f"resolution error: {e}; try eta_max = {1.5 * grid.eta_max:g}", file=sys.stderr)
        return EXIT_NUMERIC
    write_csv(run_dir / "spectrum.csv", ["index", "lambda", "unstable"],
              ((i, lam, int(lam > sb.UNSTABLE_TOL)) for i, lam in enumerate(sp.eigenvalues)))
    out = {"eigenvalues": list(sp.eigenvalues), "unstable_count": sp.unstable_count,
           "refined_leading": sp.refined_leading}
    if name == "star":
        out["exact"] = [str(sb.eigen_star(n, params)[0]) for n in range(len(sp.eigenvalues))]
    if k is not None:
        out["mode_count_ok"] = sp.unstable_count >= k
    manifest["outcome"].update(out)
    write_manifest(run_dir, manifest)
    for i, lam in enumerate(sp.eigenvalues):
        print(i, _fmt(lam))
    print(run_dir)
    return EXIT_OK


def cmd_lyapunov(args, cfg_sections) -> int:
    params = make_params(cfg_sections["params"], args)
    sec = dict(cfg_sections["lyapunov"])
    n = int(sec.pop("samples", 500))
    seed = int(sec.pop("seed", 0))
    cfg = _dc_from(ly.LyapunovConfig, sec, "lyapunov")
    run_dir, manifest = new_run(args, "lyapunov", params, cfg_sections)
    E, V, W, regions = ly.residual_sample(n, params, cfg, seed=seed)
    r1, r2, _ = ly.pde_residuals(E, V, W, params, cfg)
    rho, _, _ = ly.rho_array(E, V, W, params, cfg)
    upper = ly.rho_upper(E, params.d)
    write_csv(run_dir / "residuals.csv", ["eta", "v", "w", "region", "rho", "rho_upper", "r1", "r2"],
              zip(E, V, W, [g.value for g in regions], rho, upper, r1, r2))
    manifest["outcome"].update({"max_residual": float(max(r1.max(), r2.max())),
                                "rho_positive": bool(np.all(rho > 0)),
                                "rho_upper_ok": bool(np.all(rho <= upper * (1 + 1e-9)))})
    write_manifest(run_dir, manifest)
    print(run_dir)
    ok = manifest["outcome"]["max_residual"] < 1e-4 and manifest["outcome"]["rho_positive"]
    return EXIT_OK if ok and manifest["outcome"]["rho_upper_ok"] else EXIT_VERIFY


def cmd_verify(args, cfg_sections) -> int:
    suite = args.suite or "all"
    if suite not in acceptance.SUITES:
        raise UsageError(f"unknown suite {suite!r}; available: {', '.join(acceptance.SUITES)}")
    d = args.d or 3
    results = acceptance.run_suite(suite, acceptance.Context(d))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_presets(args, cfg_sections) -> int:
    for p in PRESETS.values():
        print(f"{p.name}: {p.description}; params {p.params}; initial {p.initial}; "
              f"checks {list(p.expected_checks)}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "rescaled": cmd_rescaled, "steady": cmd_steady,
            "spectrum": cmd_spectrum, "lyapunov": cmd_lyapunov, "verify": cmd_verify,
            "presets": cmd_presets}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blowuplab", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--preset", metavar="NAME")
    common.add_argument("--d", type=int)
    common.add_argument("--theta", type=float)
    common.add_argument("--kmax", type=int)
    common.add_argument("--suite", metavar="ID")
    common.add_argument("--threads", type=int)
    common.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "spectrum":
            p.add_argument("--profile", help="star, one or family:k")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("usage error: --threads must be positive", file=sys.stderr)
            return EXIT_USAGE
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        cfg = load_config(args.config, args.preset)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ps.DivergenceError, ss.RescaledDivergence, ResolutionError,
            ly.ClassificationFailure) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
