"""Command-line driver: ``nlmm {reduce,simulate,compare,verify}``.

Configuration is an INI file; see ``configs/example.ini`` for every key.
"""

import argparse
import configparser
import csv
import os
import re
import sys
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import verify
from .core import EmptyBasisError, NlmmOptions, nlmm_basis
from .fhn import FhnParams, build_fhn, paper_generator, relative_l1_error, test_input
from .galerkin import reduce_nonlinear
from .integrate import IntegrationError, simulate
from .linalg import RankWarning
from .linear import ShiftSpec, krylov_basis, read_matrix, sylvester_residual, write_matrix
from .pod import load_snapshots, pod_basis, snapshot_matrix
from .systems import CollocationGrid, LinearGenerator, Method, ReducedBasis, ZeroGenerator

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL = 0, 1, 2

_KEYS = {
    "run": {"seed"},
    "system": {"model", "ell", "length", "epsilon", "b", "gamma", "g"},
    "reduction": {"method", "r_defl", "sv_tol", "newton_tol", "newton_max_iter",
                  "orthogonalize_inline", "initial_guess_policy", "line_search",
                  "max_halvings", "threads", "snapshots", "stride"},
    "generator": {"kind", "sigma", "r_dir", "x0"},
    "grid": {"t0", "t1", "k"},
    "krylov": {"shifts", "shift_min", "shift_max", "shift_count"},
    "simulation": {"h", "t", "input", "input_value", "basis"},
    "compare": {"methods", "r_defl", "per_channel"},
}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    path: str
    parser: configparser.ConfigParser
    lines: dict

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def get(self, section, key, conv=str, default=None):
        if not self.has(section, key):
            return default
        raw = self.parser.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise self.error(section, key, f"invalid value {raw!r}: {exc}") from None

    def error(self, section, key, msg):
        line = self.lines.get((section, key))
        where = f"{self.path}:{line}" if line else self.path
        return ConfigError(f"{where}: [{section}] {key}: {msg}")

    def section(self, name):
        return dict(self.parser.items(name)) if self.parser.has_section(name) else {}

    def generator_sections(self):
        return [s for s in self.parser.sections() if s == "generator" or s.startswith("generator.")]


def _key_lines(text):
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([^#;=\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def load_config(path):
    """Parse and structurally validate a config file.

    Raises
    ------
    ConfigError
        With ``path:line`` diagnostics.
    """
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: key outside of any [section]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno}: cannot parse {line.strip()!r} "
                          "(expected 'key = value')") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        msg = getattr(exc, "message", str(exc)).splitlines()[0]
        raise ConfigError(f"{path}:{lineno or '?'}: {msg}") from None
    cfg = Config(path, parser, _key_lines(text))
    for section in parser.sections():
        base = section.split(".")[0]
        if base not in _KEYS:
            raise ConfigError(f"{path}:{_section_line(text, section)}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _KEYS[base]:
                raise cfg.error(section, key, "unknown key")
    return cfg


def _section_line(text, section):
    for no, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return no
    return "?"


def _floats(s):
    return [float(v) for v in s.replace(",", " ").split()]


def _int_or_none(s):
    s = s.strip()
    return None if s.lower() in ("", "none") else int(s)


def resolve_seed(cli_seed, cfg=None):
    """``--seed`` wins, then ``NLMM_SEED``, then ``[run] seed``, then 0."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get("NLMM_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"NLMM_SEED: not an integer: {env!r}") from None
    if cfg is not None:
        return cfg.get("run", "seed", int, 0)
    return 0


# -- building blocks -----------------------------------------------------------

def build_model(cfg):
    model = cfg.get("system", "model", str, "fhn").strip().lower()
    if model != "fhn":
        raise cfg.error("system", "model", f"unknown model {model!r} (only 'fhn')")
    try:
        params = FhnParams.from_mapping(cfg.section("system"))
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [system] {exc}") from None
    return build_fhn(params), params


def build_generators(cfg):
    gens = []
    sections = cfg.generator_sections() or []
    for sec in sections:
        kind = cfg.get(sec, "kind", str, "paper").strip().lower()
        if kind == "paper":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                gens.append(paper_generator())
        elif kind == "linear":
            gens.append(LinearGenerator(cfg.get(sec, "sigma", float, 0.0),
                                        cfg.get(sec, "r_dir", _floats, [1.0, 0.0]),
                                        cfg.get(sec, "x0", float, 1.0)))
        elif kind == "zero":
            gens.append(ZeroGenerator(cfg.get(sec, "r_dir", _floats, [1.0, 0.0]),
                                      cfg.get(sec, "x0", float, 1.0)))
        else:
            raise cfg.error(sec, "kind", f"unknown generator kind {kind!r}")
    if not gens:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            gens.append(paper_generator())
    return gens


def build_grid(cfg):
    K = cfg.get("grid", "k", int, 41)
    if K < 1:
        raise cfg.error("grid", "k", "need at least one collocation point")
    return CollocationGrid.uniform(cfg.get("grid", "t0", float, 0.0),
                                   cfg.get("grid", "t1", float, 5.0), K)


def build_shifts(cfg):
    if cfg.has("krylov", "shifts"):
        return ShiftSpec(cfg.get("krylov", "shifts", _floats))
    lo = cfg.get("krylov", "shift_min", float, 0.1)
    hi = cfg.get("krylov", "shift_max", float, 100.0)
    count = cfg.get("krylov", "shift_count", int, 6)
    if not 0 < lo < hi or count < 1:
        raise cfg.error("krylov", "shift_min", "need 0 < shift_min < shift_max and shift_count >= 1")
    return ShiftSpec(np.logspace(np.log10(lo), np.log10(hi), count))


def input_signal(cfg):
    kind = cfg.get("simulation", "input", str, "test_input").strip().lower()
    if kind == "test_input":
        return test_input
    if kind == "constant":
        val = np.asarray(cfg.get("simulation", "input_value", _floats, [0.0, 1.0]))
        return lambda t: val
    raise cfg.error("simulation", "input", f"unknown input {kind!r} (test_input or constant)")


def sim_settings(cfg):
    h = cfg.get("simulation", "h", float, 0.01)
    T = cfg.get("simulation", "t", float, 5.0)
    if not (h > 0 and T >= h):
        raise cfg.error("simulation", "h", "need 0 < h <= T")
    return h, T


def nlmm_options(cfg, threads=None, r_defl=None):
    sec = cfg.section("reduction")
    sec = {k: v for k, v in sec.items() if k not in ("method", "snapshots", "stride")}
    if r_defl is not None:
        sec["r_defl"] = r_defl
        sec.pop("sv_tol", None)
    if threads is not None:
        sec["threads"] = threads
    try:
        return NlmmOptions.from_mapping(sec)
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [reduction] {exc}") from None


@dataclass
class BasisResult:
    basis: ReducedBasis
    report: str
    partial: bool = False


def build_basis(cfg, method, sys, r_defl=None, threads=None):
    """Construct a basis for `method` on `sys` from the config."""
    if r_defl is None:
        r_defl = cfg.get("reduction", "r_defl", _int_or_none)
    sv_tol = None if r_defl is not None else cfg.get("reduction", "sv_tol", float)
    if r_defl is not None and r_defl >= sys.n:
        V = np.eye(sys.n)
        return BasisResult(ReducedBasis(V, method), f"method {method.value}\nidentity basis n={sys.n}\n")

    if method is Method.NLMM:
        opts = nlmm_options(cfg, threads, r_defl)
        basis, rep = nlmm_basis(sys, build_generators(cfg), build_grid(cfg), opts)
        text = f"method NLMM\nn {sys.n}\nr {basis.r}\nmax_iterations {rep.max_iterations}\n"
        return BasisResult(basis, text + rep.to_text(), partial=bool(rep.failed))

    if method is Method.POD:
        stride = cfg.get("reduction", "stride", int, 1)
        path = cfg.get("reduction", "snapshots")
        if path:
            X = load_snapshots(os.path.join(os.path.dirname(cfg.path), path), stride)
            source = f"snapshots {path}"
        else:
            h, T = sim_settings(cfg)
            traj = simulate(sys, input_signal(cfg), np.zeros(sys.n), h, T)
            X = snapshot_matrix(traj, stride)
            source = f"training simulation h={h:g} T={T:g}"
        basis = pod_basis(X, r_defl, sv_tol)
        sv = " ".join(f"{s:.17g}" for s in basis.singular_values[:basis.r])
        text = (f"method POD\nn {sys.n}\nr {basis.r}\n{source}\nsnapshot_count {X.shape[1]}\n"
                f"singular_values {sv}\n")
        return BasisResult(basis, text)

    lin = sys.linearization
    if lin is None:
        raise ConfigError("Krylov reduction needs a model with a linearization")
    spec = build_shifts(cfg)
    basis = krylov_basis(lin, spec)
    res = sylvester_residual(lin, basis, spec)
    shifts = " ".join(f"{s.real:.17g}" for s in spec.shifts)
    text = (f"method KRYLOV\nn {sys.n}\nr {basis.r}\nshifts {shifts}\n"
            f"sylvester_residual {res:.3e}\n")
    return BasisResult(basis, text)


def _method(cfg, name=None):
    raw = name if name is not None else cfg.get("reduction", "method", str, "NLMM")
    try:
        return Method(raw.strip().upper())
    except ValueError:
        raise cfg.error("reduction", "method", f"unknown method {raw!r} (NLMM, POD, KRYLOV)") from None


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


# -- subcommands ---------------------------------------------------------------

def cmd_reduce(args):
    cfg = load_config(args.config)
    sys_, _ = build_model(cfg)
    method = _method(cfg)
    out = _outdir(args.out)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankWarning)
        res = build_basis(cfg, method, sys_, threads=args.threads)
    text = res.report + "".join(f"warning {w.message}\n" for w in caught)
    write_matrix(os.path.join(out, "basis.txt"), res.basis.V)
    with open(os.path.join(out, "report.txt"), "w", newline="\n") as fh:
        fh.write(text)
    print(f"{method.value}: basis {res.basis.n}x{res.basis.r} written to {out}")
    if res.partial:
        print("some columns failed and were dropped; see report.txt", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_simulate(args):
    cfg = load_config(args.config)
    sys_, _ = build_model(cfg)
    h, T = sim_settings(cfg)
    out = _outdir(args.out)
    basis_path = args.basis or cfg.get("simulation", "basis")
    if basis_path:
        V = read_matrix(basis_path)
        rom = reduce_nonlinear(sys_, V)
        traj = simulate(rom, input_signal(cfg), np.zeros(rom.n), h, T)
        traj.to_csv(os.path.join(out, "rom_outputs.csv"))
        print(f"ROM (r={rom.n}) simulated, {traj.steps} steps")
    else:
        traj = simulate(sys_, input_signal(cfg), np.zeros(sys_.n), h, T)
        traj.to_csv(os.path.join(out, "fom_outputs.csv"))
        traj.to_csv(os.path.join(out, "fom_states.csv"), kind="states")
        print(f"FOM (n={sys_.n}) simulated, {traj.steps} steps")
    return EXIT_OK


def cmd_compare(args):
    cfg = load_config(args.config)
    sys_, _ = build_model(cfg)
    h, T = sim_settings(cfg)
    u = input_signal(cfg)
    out = _outdir(args.out)
    methods = [_method(cfg, m) for m in cfg.get("compare", "methods", str, "POD, NLMM").split(",")
               if m.strip()]
    r_defl = cfg.get("compare", "r_defl", int) or cfg.get("reduction", "r_defl", _int_or_none)
    per_channel = cfg.get("compare", "per_channel", lambda s: s.strip().lower() in ("1", "true", "yes"),
                          False)

    fom = simulate(sys_, u, np.zeros(sys_.n), h, T)
    fom.to_csv(os.path.join(out, "fom_outputs.csv"))
    rows, status = [], EXIT_OK
    for method in methods:
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RankWarning)
                res = build_basis(cfg, method, sys_, r_defl=r_defl, threads=args.threads)
            t_red = time.perf_counter() - t0
            rom = reduce_nonlinear(sys_, res.basis)
            t0 = time.perf_counter()
            traj = simulate(rom, u, np.zeros(rom.n), h, T)
            t_sim = time.perf_counter() - t0
            err = relative_l1_error(fom, traj, per_channel=per_channel)
            traj.to_csv(os.path.join(out, f"rom_{method.value.lower()}_outputs.csv"))
            rows.append((method.value, res.basis.r, err, "ok"))
            print(f"{method.value:7s} r={res.basis.r:4d} rel_l1_error={err:.3e} "
                  f"red_time={t_red:.2f}s sim_time={t_sim:.2f}s")
        except (IntegrationError, EmptyBasisError, np.linalg.LinAlgError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            rows.append((method.value, r_defl if r_defl is not None else "", float("nan"), "failed"))
            print(f"{method.value}: failed: {exc}", file=sys.stderr)
            status = EXIT_PARTIAL
    with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "r_defl", "rel_l1_error", "status"])
        for m, r, e, s in rows:
            w.writerow([m, r, f"{e:.17g}", s])
    return status


def cmd_verify(args):
    seed = resolve_seed(args.seed)
    results = verify.run_all(seed=seed, perturb=args.perturb)
    name_w = max(len(r.name) for r in results)
    print(f"{'property':{name_w}s}  {'status':6s}  {'value':>10s}  {'tol':>8s}  {'time':>6s}")
    for r in results:
        line = (f"{r.name:{name_w}s}  {'PASS' if r.passed else 'FAIL':6s}  "
                f"{r.value:10.3e}  {r.tol:8.1e}  {r.seconds:5.2f}s")
        if args.verbose and r.detail:
            line += f"  {r.detail}"
        print(line)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failing property: {failed[0].name}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(results)} properties passed")
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="nlmm", description="Nonlinear moment matching toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="INI configuration file")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: $NLMM_SEED, then [run] seed, then 0)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for NLMM columns")

    common(sub.add_parser("reduce", help="build a projection basis"))
    sp = sub.add_parser("simulate", help="simulate the FOM, or a ROM with --basis")
    common(sp)
    sp.add_argument("--basis", default=None, help="basis file from `reduce`")
    common(sub.add_parser("compare", help="compare ROMs against the FOM"))
    sp = sub.add_parser("verify", help="run the property suites")
    common(sp, config=False)
    sp.add_argument("--perturb", type=float, default=0.0,
                    help="corrupt the steady-state basis by this amount (negative control)")
    sp.add_argument("--verbose", "-v", action="store_true")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_FAIL
    handler = {"reduce": cmd_reduce, "simulate": cmd_simulate,
               "compare": cmd_compare, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (IntegrationError, EmptyBasisError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
