"""Config-driven batch runs: ``trajfisher <command> --config run.ini``.

Config files are INI text. ``[run]`` holds the probe and channel; each command
reads its own section. Every output file starts with the canonical config as
``#``-prefixed lines, so stripping the prefix gives a config that reproduces
the file byte for byte.
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__, channels, estimate, mcsim, qecmon
from .channels import ChannelSpec, Kind
from .errors import ConfigInvalid, TrajFisherError

COMMANDS = ("analytic", "simulate", "rates", "qec", "estimate")
SEED_ENV = "TRAJFISHER_SEED"
CONFIG_MARK = "# --- config ---"


@dataclass(frozen=True)
class RunConfig:
    command: str
    channel: str
    parameter: str
    rho_uu: float
    rho_ud_abs: float
    rho_ud_phase: float
    omega: float
    gamma: float
    T: tuple
    seed: int
    format: str = "csv"
    output: str | None = None
    n_samples: int = 100000
    gT: tuple = ()
    delta: tuple = ()
    enumerate: bool = True
    nu: int = 10000
    replicates: int = 200
    scheme: str = "mqt"
    grid_points: int = estimate.DEFAULT_GRID

    @property
    def rho0(self) -> np.ndarray:
        return np.asarray(channels.initial_state(self.rho_uu, self.rho_ud_abs, self.rho_ud_phase))

    @property
    def spec(self) -> ChannelSpec:
        return ChannelSpec(Kind(self.channel), self.omega, self.gamma)


# accepted keys per section
_RUN_KEYS = ("channel", "parameter", "rho_uu", "rho_ud_abs", "rho_ud_phase", "omega", "gamma", "T", "seed", "format", "output")
_SECTION_KEYS = {
    "analytic": (),
    "simulate": ("n_samples",),
    "rates": ("gT",),
    "qec": ("delta", "enumerate"),
    "estimate": ("nu", "replicates", "scheme", "grid_points"),
}


def _line_numbers(text: str) -> dict:
    """(section, key) -> 1-based line number, for error messages."""
    where, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = i
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            where[(section, m.group(1).strip().lower())] = i
    return where


def _floats(raw: str) -> tuple:
    return tuple(float(x) for x in raw.replace(",", " ").split())


def validate_config(text: str, command: str | None = None, seed: int | None = None) -> RunConfig:
    """Parse, default and physically check a config. Raises ConfigInvalid listing every problem."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid([f"unreadable config: {exc}"]) from None
    lines = _line_numbers(text)
    problems = []

    def loc(section, key):
        n = lines.get((section, key)) or lines.get((section, None))
        return f"line {n}: " if n else ""

    def err(section, key, msg):
        problems.append(f"{loc(section, key)}[{section}] {key}: {msg}")

    if not cp.has_section("run"):
        raise ConfigInvalid(["missing [run] section"])
    run = cp["run"]
    cmd = command or run.get("command")
    if cmd not in COMMANDS:
        raise ConfigInvalid([f"command must be one of {COMMANDS}, got {cmd!r}"])
    if run.get("command") and command and run.get("command") != command:
        err("run", "command", f"config is for {run.get('command')!r} but {command!r} was requested")
    known = set(_RUN_KEYS) | {"command"}
    for key in run:
        if key not in {k.lower() for k in known}:
            err("run", key, "unknown key")
    for section in cp.sections():
        if section != "run" and section not in _SECTION_KEYS:
            problems.append(f"{loc(section, None)}unknown section [{section}]")
        elif section in _SECTION_KEYS:
            for key in cp[section]:
                if key not in {k.lower() for k in _SECTION_KEYS[section]}:
                    err(section, key, "unknown key")

    vals = {"command": cmd}

    def get(section, key, conv, default=None, required=False):
        raw = cp.get(section, key, fallback=None) if cp.has_section(section) else None
        if raw is None:
            if required:
                err(section, key, "required")
            return default
        try:
            return conv(raw.strip())
        except (ValueError, TypeError):
            err(section, key, f"cannot parse {raw.strip()!r}")
            return default

    vals["channel"] = get("run", "channel", str.lower, required=cmd != "qec", default="flip")
    if vals["channel"] not in {k.value for k in Kind}:
        err("run", "channel", f"must be one of {[k.value for k in Kind]}, got {vals['channel']!r}")
    vals["parameter"] = get("run", "parameter", str.lower, default="omega", required=cmd in ("analytic", "simulate", "rates", "estimate"))
    if vals["parameter"] not in channels.PARAMETERS:
        err("run", "parameter", f"must be one of {channels.PARAMETERS}, got {vals['parameter']!r}")
    uu = get("run", "rho_uu", float, default=0.5)
    vals["rho_uu"] = uu
    ud = get("run", "rho_ud_abs", float)
    vals["rho_ud_phase"] = get("run", "rho_ud_phase", float, default=0.0)
    if uu is not None and not 0 <= uu <= 1:
        err("run", "rho_uu", f"must lie in [0, 1], got {uu!r}")
    elif uu is not None:
        bound = uu * (1 - uu)
        if ud is None:
            ud = math.sqrt(bound)
        elif ud < 0:
            err("run", "rho_ud_abs", f"must be >= 0, got {ud!r}")
        elif ud * ud > bound + 1e-12:
            err("run", "rho_ud_abs", f"|rho_ud|^2 = {ud * ud!r} exceeds rho_uu*rho_dd = {bound!r}; the state would not be positive")
    vals["rho_ud_abs"] = ud
    vals["omega"] = get("run", "omega", float, default=0.0)
    vals["gamma"] = get("run", "gamma", float, required=True, default=1.0)
    if vals["gamma"] is not None and not vals["gamma"] >= 0:
        err("run", "gamma", f"must be >= 0, got {vals['gamma']!r}")
    vals["T"] = get("run", "T", _floats, required=cmd != "rates", default=(1.0,))
    if vals["T"] is not None and (not vals["T"] or any(not t > 0 for t in vals["T"])):
        err("run", "T", "needs one or more positive values")
    cfg_seed = get("run", "seed", int)
    if seed is None:
        seed = cfg_seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            problems.append(f"environment {SEED_ENV}={os.environ[SEED_ENV]!r} is not an integer")
    seed = 0 if seed is None else seed
    if not 0 <= seed < 2**64:
        err("run", "seed", f"must lie in [0, 2^64), got {seed}")
    vals["seed"] = seed
    vals["output"] = get("run", "output", str)
    vals["format"] = get("run", "format", str.lower, default="csv")
    if vals["format"] not in ("csv", "json"):
        err("run", "format", f"must be csv or json, got {vals['format']!r}")

    def positive_int(section, key, default):
        v = get(section, key, int, default=default)
        if v is not None and v < 1:
            err(section, key, f"must be a positive integer, got {v}")
        return v

    if cmd == "simulate":
        vals["n_samples"] = positive_int("simulate", "n_samples", 100000)
    if cmd == "rates":
        vals["gT"] = get("rates", "gT", _floats, required=True, default=())
        if vals["gT"] and any(not x > 0 for x in vals["gT"]):
            err("rates", "gT", "values must be positive")
        if vals["gamma"] is not None and vals["gamma"] <= 0:
            err("run", "gamma", "rates need gamma > 0")
    if cmd == "qec":
        vals["delta"] = get("qec", "delta", _floats, required=True, default=())
        vals["enumerate"] = get("qec", "enumerate", lambda s: {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}[s.lower()], default=True)
        for d in vals["delta"] or ():
            for T in vals["T"] or ():
                n = T / d if d > 0 else 0
                if d <= 0 or abs(n - round(n)) > 1e-9 * max(1, n) or round(n) < 1:
                    err("qec", "delta", f"T/delta must be a positive integer (T={T!r}, delta={d!r})")
        if vals["gamma"] is not None and vals["gamma"] <= 0:
            err("run", "gamma", "qec needs gamma > 0")
    if cmd == "estimate":
        vals["nu"] = positive_int("estimate", "nu", 10000)
        vals["replicates"] = positive_int("estimate", "replicates", 200)
        vals["scheme"] = get("estimate", "scheme", str.lower, default="mqt")
        if vals["scheme"] not in ("mqt", "conventional"):
            err("estimate", "scheme", f"must be mqt or conventional, got {vals['scheme']!r}")
        vals["grid_points"] = get("estimate", "grid_points", int, default=estimate.DEFAULT_GRID)
        if vals["grid_points"] is not None and vals["grid_points"] < estimate.MIN_GRID:
            err("estimate", "grid_points", f"must be >= {estimate.MIN_GRID}")
    if cmd in ("analytic", "simulate", "estimate") and vals["parameter"] == "gamma":
        if vals["gamma"] is not None and vals["gamma"] <= 0:
            err("run", "gamma", "estimating gamma needs gamma > 0")
    if problems:
        raise ConfigInvalid(problems)
    return RunConfig(**{k: v for k, v in vals.items() if v is not None})


def canonical_config(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg`` (output path excluded)."""
    num = lambda x: repr(float(x))
    lst = lambda xs: ", ".join(num(x) for x in xs)
    out = io.StringIO()
    out.write("[run]\n")
    out.write(f"command = {cfg.command}\nchannel = {cfg.channel}\nparameter = {cfg.parameter}\n")
    out.write(f"rho_uu = {num(cfg.rho_uu)}\nrho_ud_abs = {num(cfg.rho_ud_abs)}\nrho_ud_phase = {num(cfg.rho_ud_phase)}\n")
    out.write(f"omega = {num(cfg.omega)}\ngamma = {num(cfg.gamma)}\nT = {lst(cfg.T)}\nseed = {cfg.seed}\nformat = {cfg.format}\n")
    extra = {
        "analytic": {},
        "simulate": {"n_samples": cfg.n_samples},
        "rates": {"gT": lst(cfg.gT)},
        "qec": {"delta": lst(cfg.delta), "enumerate": str(cfg.enumerate).lower()},
        "estimate": {"nu": cfg.nu, "replicates": cfg.replicates, "scheme": cfg.scheme, "grid_points": cfg.grid_points},
    }[cfg.command]
    if extra:
        out.write(f"\n[{cfg.command}]\n")
        for k, v in extra.items():
            out.write(f"{k} = {v}\n")
    return out.getvalue()


# ------------------------------------------------------------------ tables


@dataclass
class ResultTable:
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values for {len(self.columns)} columns")
        self.rows.append([float(v) for v in values])

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# trajfisher {self.metadata['version']}\n")
        out.write(f"# command = {self.metadata['command']}\n")
        out.write(f"# seed = {self.metadata['seed']}\n")
        out.write(CONFIG_MARK + "\n")
        for line in self.metadata["config"].splitlines():
            out.write(f"# {line}".rstrip() + "\n")
        out.write(",".join(self.columns) + "\n")
        for row in self.rows:
            out.write(",".join("%.17g" % v for v in row) + "\n")
        return out.getvalue()

    def to_json(self) -> str:
        clean = [[v if math.isfinite(v) else None for v in row] for row in self.rows]
        return json.dumps({"metadata": self.metadata, "columns": self.columns, "rows": clean}, indent=1) + "\n"


def config_from_output(text: str) -> str:
    """Recover the config echoed at the top of a CSV or JSON output."""
    if text.lstrip().startswith("{"):
        return json.loads(text)["metadata"]["config"]
    lines = text.splitlines()
    start = lines.index(CONFIG_MARK) + 1
    body = []
    for line in lines[start:]:
        if not line.startswith("#"):
            break
        body.append(line[2:] if line.startswith("# ") else line[1:])
    return "\n".join(body) + "\n"


# ---------------------------------------------------------------- commands


def _analytic(cfg: RunConfig, workers: int) -> ResultTable:
    t = ResultTable(["T", "jumpless_qfi", "jump_qfi", "cfi", "avg_traj_qfi", "total", "conventional_qfi",
                     "conventional_qfi_exact", "valid"])
    for T in sorted(cfg.T):
        r = channels.table1_row(cfg.spec, cfg.parameter, cfg.rho0, T)
        t.add(T, r.jumpless_qfi, r.jump_qfi, r.cfi, r.avg_traj_qfi, r.total, r.conventional_qfi,
              r.conventional_qfi_exact, r.valid)
    return t


def _simulate(cfg: RunConfig, workers: int) -> ResultTable:
    t = ResultTable(["T", "n_samples", "cfi_mc", "cfi_se", "cfi", "avg_traj_qfi_mc", "avg_traj_qfi_se", "avg_traj_qfi",
                     "total_mc", "total_se", "total", "conventional_qfi_exact", "valid"])
    for T in sorted(cfg.T):
        mc = mcsim.mc_breakdown(cfg.spec, cfg.parameter, cfg.rho0, T, cfg.n_samples, cfg.seed, workers)
        r = channels.table1_row(cfg.spec, cfg.parameter, cfg.rho0, T)
        t.add(T, cfg.n_samples, mc.cfi_timings.mean, mc.cfi_timings.std_error, r.cfi, mc.avg_traj_qfi.mean,
              mc.avg_traj_qfi.std_error, r.avg_traj_qfi, mc.total.mean, mc.total.std_error, r.total,
              r.conventional_qfi_exact, r.valid)
    return t


def _rates(cfg: RunConfig, workers: int) -> ResultTable:
    t = ResultTable(["gT", "T", "mqt_rate", "conventional_rate", "ratio", "mqt_long_time", "conventional_long_time",
                     "mqt_opt_rho_uu", "conventional_opt_rho_uu"])
    opt = lambda rho: math.nan if rho is None else float(np.real(np.asarray(rho)[0, 0]))
    for gT in sorted(cfg.gT):
        T = gT / cfg.gamma
        m, m_rho = channels.extraction_rate(cfg.spec, cfg.parameter, "mqt", T)
        c, c_rho = channels.extraction_rate(cfg.spec, cfg.parameter, "conventional", T)
        t.add(gT, T, m, c, m / c, channels.long_time_rate(cfg.spec, cfg.parameter, "mqt", T),
              channels.long_time_rate(cfg.spec, cfg.parameter, "conventional", T), opt(m_rho), opt(c_rho))
    return t


def _qec(cfg: RunConfig, workers: int) -> ResultTable:
    t = ResultTable(["T", "delta", "N", "zeta", "cfi_gamma", "cfi_gamma_ideal", "qfi_omega", "qfi_omega_ideal",
                     "qfi_omega_valid", "qfi_omega_enumerated"])
    flip = ChannelSpec(Kind.SPIN_FLIP, cfg.omega, cfg.gamma)
    for T in sorted(cfg.T):
        ideal = channels.table1_row(flip, "omega", cfg.rho0, T).total
        for d in sorted(cfg.delta, reverse=True):
            N = round(T / d)
            fd = qecmon.finite_delta_qfi_omega(cfg.rho0, cfg.gamma, T, d, cfg.omega)
            enum = math.nan
            if cfg.enumerate and N <= qecmon.ENUMERATION_MAX_N:
                enum = qecmon.enumerate_syndrome_sequences(cfg.rho0, d, N, cfg.omega, cfg.gamma, "omega").total
            t.add(T, d, N, cfg.gamma * d / 4, qecmon.finite_delta_cfi_gamma(cfg.gamma, T, d), T / (4 * cfg.gamma),
                  fd.value, ideal, fd.valid, enum)
    return t


def _estimate(cfg: RunConfig, workers: int) -> ResultTable:
    t = ResultTable(["T", "nu", "replicates", "theta_star", "fisher_info", "bound", "conventional_bound", "mle_mean",
                     "mle_std", "ratio", "bayes_mean", "bayes_width"])
    for T in sorted(cfg.T):
        model = estimate.MonitoringModel(Kind(cfg.channel), cfg.parameter, cfg.rho0, T, cfg.omega, cfg.gamma, cfg.scheme)
        r = estimate.crb_harness(model, cfg.nu, cfg.replicates, cfg.seed, workers, cfg.grid_points)
        t.add(T, cfg.nu, cfg.replicates, r.theta_star, r.fisher_info, r.bound, r.conventional_bound, r.mle_mean,
              r.mle_std, r.ratio, r.bayes_mean, r.bayes_width)
    return t


_RUNNERS = {"analytic": _analytic, "simulate": _simulate, "rates": _rates, "qec": _qec, "estimate": _estimate}


def run(cfg: RunConfig, workers: int = 1) -> ResultTable:
    table = _RUNNERS[cfg.command](cfg, workers)
    table.metadata = {"version": __version__, "command": cfg.command, "seed": cfg.seed, "config": canonical_config(cfg)}
    return table


def render(table: ResultTable, fmt: str) -> str:
    return table.to_json() if fmt == "json" else table.to_csv()


def write_atomic(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".trajfisher-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajfisher", description="Fisher information from monitored qubit trajectories.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--seed", type=int, default=None, help=f"overrides the config seed (default: config, then ${SEED_ENV}, then 0)")
    p.add_argument("--workers", type=int, default=1, help="worker processes; never changes the output")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default=None, help="overrides the config format")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"trajfisher: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("trajfisher: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = validate_config(text, args.command, args.seed)
        if args.format:
            cfg = RunConfig(**{f.name: getattr(cfg, f.name) for f in fields(cfg)} | {"format": args.format})
        out = render(run(cfg, args.workers), cfg.format)
    except ConfigInvalid as exc:
        for problem in exc.problems:
            print(f"trajfisher: {problem}", file=sys.stderr)
        return 2
    except TrajFisherError as exc:
        print(f"trajfisher: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    path = args.out or cfg.output
    if path:
        write_atomic(path, out)
    else:
        sys.stdout.write(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
