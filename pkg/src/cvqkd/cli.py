"""Command-line front end.

Commands: ``eval``, ``threshold``, ``sweep``, ``simulate`` and ``verify``.
Options may also come from a ``--config`` file of ``key=value`` lines; flags
given on the command line win. Exit status: 0 success, 1 domain error,
2 usage error, 3 verification violation.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .keyrate import (
    EPS_TOL,
    RATE_TOL,
    KeyRateParams,
    ThresholdSettings,
    asymptotic_key_rate,
    secret_key_rate,
    sweep_thresholds,
)
from .protocols import PROTOCOLS, ChannelParams, Direction, Protocol
from .simulation import DEFAULT_CHUNK, estimate_covariance, key_rate_from_samples, simulate_protocol, write_batch_csv
from .verification import (
    RandomStateSpec,
    check_gaussification_invariance,
    check_holevo_inequality,
    check_super_additivity,
)

CSV_SCHEMA = 1
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2, 3
SUITES = ("holevo", "super-additivity", "gaussification")
# default draws per suite: holevo, correlated and product super-additivity, gaussification
SUITE_TRIALS = {"holevo": 500, "super-additivity": 200, "product": 50, "gaussification": 100}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@dataclass(frozen=True)
class RunConfig:
    """A parsed command and its options (after config-file merging)."""

    command: str
    options: dict = field(default_factory=dict)

    def echo(self) -> str:
        # output location and worker count do not affect results
        items = " ".join(
            f"{k}={_show(v)}" for k, v in sorted(self.options.items()) if k not in ("output", "jobs")
        )
        return f"{self.command} {items}".strip()


def _show(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_show(x) for x in v)
    if isinstance(v, Protocol):
        return v.name
    if isinstance(v, Direction):
        return v.value
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# argument types


def _protocols(text: str) -> list[Protocol]:
    if text.strip().lower() == "all":
        return list(PROTOCOLS)
    try:
        return [Protocol.from_name(t) for t in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _protocol(text: str) -> Protocol:
    found = _protocols(text)
    if len(found) != 1:
        raise argparse.ArgumentTypeError("expected a single protocol")
    return found[0]


def _directions(text: str) -> list[Direction]:
    try:
        return [Direction.parse(t.strip()) for t in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _direction(text: str) -> Direction:
    found = _directions(text)
    if len(found) != 1:
        raise argparse.ArgumentTypeError("expected a single direction")
    return found[0]


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` with an inclusive stop, rounded to 10 decimals."""
    try:
        start, stop, step = (float(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be start:stop:step, got {text!r}") from None
    if not step > 0 or stop < start:
        raise argparse.ArgumentTypeError("grid needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(count)]


# ---------------------------------------------------------------------------
# parser and config file


def _add_tolerances(p):
    p.add_argument("--eps-tol", type=float, default=EPS_TOL, help="bisection tolerance on eps")
    p.add_argument("--rate-tol", type=float, default=RATE_TOL, help="ladder convergence tolerance on K")
    p.add_argument("--ladder-max", type=float, default=1e8, help="largest variance on the ladder")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--output", "-o", default=None, help="CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cvqkd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cvqkd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", default=None, help="file of key=value defaults")
        p.add_argument("--beta", type=float, default=1.0, help="reconciliation efficiency")

    p = sub.add_parser("eval", help="key rate at one operating point")
    common(p)
    p.add_argument("--protocol", type=_protocol, required=True)
    p.add_argument("--direction", type=_direction, default=Direction.RR)
    p.add_argument("--T", type=float, required=True, dest="T")
    p.add_argument("--eps", type=float, default=0.0)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--V", type=float, dest="V")
    group.add_argument("--asymptotic", action="store_true", help="infinite-modulation limit")

    p = sub.add_parser("threshold", help="tolerable excess noise (long-format CSV)")
    common(p)
    p.add_argument("--protocol", type=_protocols, default=list(PROTOCOLS))
    p.add_argument("--direction", type=_directions, default=[Direction.DR, Direction.RR])
    p.add_argument("--T", type=_floats, required=True, dest="T")
    _add_tolerances(p)

    p = sub.add_parser("sweep", help="tolerable excess noise on a grid (wide CSV)")
    common(p)
    p.add_argument("--grid", type=parse_grid, default=parse_grid("0.01:1.0:0.01"))
    p.add_argument("--protocol", type=_protocols, default=list(PROTOCOLS))
    p.add_argument("--direction", type=_directions, default=[Direction.DR, Direction.RR])
    _add_tolerances(p)

    p = sub.add_parser("simulate", help="Monte-Carlo data, estimated covariance and rate")
    common(p)
    p.add_argument("--protocol", type=_protocol, required=True)
    p.add_argument("--direction", type=_direction, default=Direction.RR)
    p.add_argument("--T", type=float, required=True, dest="T")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--V", type=float, required=True, dest="V")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK)
    p.add_argument("--fraction", type=float, default=1.0, help="share of rounds used for estimation")
    p.add_argument("--output", "-o", default=None, help="batch CSV path (not written if omitted)")

    p = sub.add_parser("verify", help="randomized entropic-inequality suites")
    p.add_argument("--config", default=None, help="file of key=value defaults")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--trials", type=int, default=None, help="draws per suite (default: suite sizes)")
    p.add_argument("--nu-max", type=float, default=5.0)
    p.add_argument("--suite", type=lambda s: s.split(","), default=list(SUITES))
    return parser


def read_config(path: str | Path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for number, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{number}: expected key=value, got {raw!r}")
        out[key.strip().lstrip("-")] = value.strip()
    return out


def _config_argv(config: dict[str, str], parser: argparse.ArgumentParser) -> list[str]:
    """Translate config entries into flags understood by ``parser``."""
    flags = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                flags[opt[2:]] = action
    argv = []
    for key, value in config.items():
        name = key.replace("_", "-")
        action = flags.get(name) or flags.get(key)
        if action is None or name in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        opt = f"--{name}" if f"--{name}" in action.option_strings else f"--{key}"
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"config key {key!r} expects a boolean, got {value!r}")
        else:
            argv += [opt, value]
    return argv


def _split_config(argv: list[str]) -> tuple[str | None, list[str]]:
    """Pull ``--config PATH`` (or ``--config=PATH``) out of ``argv``."""
    rest, path, k = [], None, 0
    while k < len(argv):
        arg = argv[k]
        if arg == "--config":
            if k + 1 >= len(argv):
                raise UsageError("--config needs a file path")
            path, k = argv[k + 1], k + 2
            continue
        if arg.startswith("--config="):
            path = arg.split("=", 1)[1]
        else:
            rest.append(arg)
        k += 1
    return path, rest


def parse_args(argv: Sequence[str]) -> RunConfig:
    parser = build_parser()
    path, argv = _split_config(list(argv))
    if path is not None:
        commands = parser._subparsers._group_actions[0].choices
        cmd_pos = next((k for k, a in enumerate(argv) if a in commands), None)
        if cmd_pos is None:
            raise UsageError("--config needs a command")
        try:
            config = read_config(path)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        # config entries go first so that command-line flags override them
        extra = _config_argv(config, commands[argv[cmd_pos]])
        argv = argv[: cmd_pos + 1] + extra + argv[cmd_pos + 1 :]
    args = parser.parse_args(argv)
    options = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    return RunConfig(args.command, options)


# ---------------------------------------------------------------------------
# commands


def _threshold_settings(o: dict) -> ThresholdSettings:
    if not o["ladder_max"] >= 100:
        raise ValueError("ladder-max must be >= 100")
    ladder = tuple(10.0**k for k in range(2, int(math.floor(math.log10(o["ladder_max"]) + 1e-9)) + 1))
    if o["eps_tol"] <= 0 or o["rate_tol"] <= 0:
        raise ValueError("tolerances must be positive")
    if o["jobs"] < 1:
        raise ValueError("jobs must be >= 1")
    return ThresholdSettings(eps_tol=o["eps_tol"], rate_tol=o["rate_tol"], ladder=ladder)


def _header(cfg: RunConfig, kind: str) -> list[str]:
    return [f"# cvqkd {__version__} {kind} schema={CSV_SCHEMA}", f"# config: {cfg.echo()}"]


def _emit(lines: list[str], output: str | None, out):
    text = "\n".join(lines) + "\n"
    if output:
        Path(output).write_text(text)
    else:
        out.write(text)


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_eval(cfg: RunConfig, out) -> int:
    o = cfg.options
    channel = ChannelParams(o["T"], o["eps"])
    if o["asymptotic"]:
        res = asymptotic_key_rate(o["protocol"], o["direction"], channel, o["beta"])
    else:
        res = secret_key_rate(KeyRateParams(o["protocol"], o["direction"], o["V"], channel, o["beta"]))
    out.write(
        f"protocol={o['protocol'].name} direction={o['direction'].value} T={o['T']!r} eps={o['eps']!r} "
        f"V={res.V_used!r} beta={res.beta!r}\n"
        f"I_ab={res.I_ab!r}\nchi_E={res.chi_E!r}\nK={res.K!r}\nconverged={res.converged}\n"
    )
    return EXIT_OK


def cmd_threshold(cfg: RunConfig, out) -> int:
    o = cfg.options
    settings = _threshold_settings(o)
    grid = sorted(set(o["T"]))
    results = sweep_thresholds(grid, o["protocol"], o["direction"], o["beta"], settings, o["jobs"])
    lines = _header(cfg, "threshold")
    lines.append("T,protocol,direction,beta,eps_max,converged,error")
    for r in results:
        error = (r.error or "").replace(",", ";")
        lines.append(
            f"{_fmt(r.T)},{r.protocol.name},{r.direction.value},{_fmt(r.beta)},{_fmt(r.eps_max)},{r.converged},{error}"
        )
    _emit(lines, o["output"], out)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out) -> int:
    o = cfg.options
    settings = _threshold_settings(o)
    protocols, directions = o["protocol"], o["direction"]
    results = sweep_thresholds(o["grid"], protocols, directions, o["beta"], settings, o["jobs"])
    columns = [f"{p.name}_{d.value}" for p in protocols for d in directions]
    lines = _header(cfg, "sweep")
    flagged = [r for r in results if not r.converged or r.error]
    for r in flagged:
        why = r.error or "rate ladder not converged"
        lines.append(f"# flagged: T={_fmt(r.T)} {r.protocol.name}_{r.direction.value}: {why}")
    lines.append(",".join(["T"] + columns))
    width = len(columns)
    for k, T in enumerate(o["grid"]):
        row = results[k * width:(k + 1) * width]
        lines.append(",".join([_fmt(T)] + [_fmt(r.eps_max) for r in row]))
    _emit(lines, o["output"], out)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out) -> int:
    o = cfg.options
    channel = ChannelParams(o["T"], o["eps"])
    batch = simulate_protocol(o["protocol"], channel, o["V"], o["n"], o["seed"], o["chunk_size"])
    if o["output"]:
        write_batch_csv(batch, o["output"])
    est = estimate_covariance(batch, fraction=o["fraction"])
    res = key_rate_from_samples(batch, direction=o["direction"], beta=o["beta"], fraction=o["fraction"])
    exact = secret_key_rate(KeyRateParams(o["protocol"], o["direction"], o["V"], channel, o["beta"]))
    out.write(f"rounds used for estimation: {est.n_used}\nestimated covariance:\n")
    for row in est.gamma:
        out.write("  " + " ".join(f"{v: .6f}" for v in row) + "\n")
    out.write(
        f"estimated I_ab={res.I_ab!r} chi_E={res.chi_E!r} K={res.K!r}\n"
        f"analytic  I_ab={exact.I_ab!r} chi_E={exact.chi_E!r} K={exact.K!r}\n"
    )
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out) -> int:
    o = cfg.options
    unknown = [s for s in o["suite"] if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; choose from {', '.join(SUITES)}")
    if o["trials"] is not None and o["trials"] < 1:
        raise ValueError("trials must be >= 1")

    def trials(name):
        if o["trials"] is None:
            return SUITE_TRIALS[name]
        return max(1, o["trials"] // 4) if name == "product" else o["trials"]

    seed, nu_max = o["seed"], o["nu_max"]
    reports = []
    if "holevo" in o["suite"]:
        reports.append(check_holevo_inequality(trials("holevo"), RandomStateSpec(2, nu_max, seed)))
    if "super-additivity" in o["suite"]:
        spec4 = RandomStateSpec(4, nu_max, seed)
        reports.append(check_super_additivity(trials("super-additivity"), spec4))
        reports.append(check_super_additivity(trials("product"), spec4, product=True))
    if "gaussification" in o["suite"]:
        reports.append(check_gaussification_invariance(trials("gaussification"), RandomStateSpec(2, nu_max, seed)))
    for r in reports:
        out.write(r.text() + "\n")
    ok = all(r.passed for r in reports)
    summary = {"seed": seed, "passed": ok, "reports": [r.summary() for r in reports]}
    out.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_VIOLATION


COMMANDS = {
    "eval": cmd_eval,
    "threshold": cmd_threshold,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        cfg = parse_args(argv)
        return COMMANDS[cfg.command](cfg, out)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (ValueError, ArithmeticError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
