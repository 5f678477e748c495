"""Command line interface: ``dashline <subcommand> [flags]``.

Subcommands: ``coeffs``, ``spectrum``, ``orbit``, ``simulate``, ``melnikov``.

Every subcommand accepts ``--config FILE`` (flat ``key=value`` lines whose
keys are the long flag names); flags given on the command line override
values from the file.  When ``--out`` names a file, the fully resolved
configuration is written next to it as ``<out>.config``; feeding that
file back with ``--config`` reproduces the output bit for bit.

Exit codes: 0 success, 2 usage error (unknown flag, bad value),
3 malformed range, 4 unwritable output path, 5 numerical failure.
Failures print one JSON line ``{"error": kind, "code": n, "message": ...}``
on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .coefficients import CoefficientTable, WaveConfig, as_mode, model_coefficient, pair_coefficient
from .numerics import EigenSolverError, NonFiniteError
from .output import (RangeError, atomic_write_text, check_writable, config_hash, config_text,
                     csv_text, json_text, parse_range, parse_values, read_config)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RANGE = 3
EXIT_IO = 4
EXIT_NUMERIC = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_wave(p):
    p.add_argument("--khat", default="-3,-2", help="class representative k̂ as 'a,b'")
    p.add_argument("--p", default="1,1", help="base mode p as 'a,b'")


def _add_out(p):
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--config", default=None, help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dashline", description="Dashed-line truncation of 2D Euler: "
                     "coefficients, spectra, heteroclinic orbits, Melnikov functions.")
    parser.add_argument("--version", action="version", version=f"dashline {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("coeffs", help="coefficient table (CSV)")
    _add_wave(c)
    c.add_argument("--range", default="-10:15", help="n_min:n_max (inclusive)")
    _add_out(c)

    s = sub.add_parser("spectrum", help="homotopy eigenvalue sweep (CSV)")
    _add_wave(s)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--eps", default="0:1:0.05", help="eps grid start:stop:step or list")
    s.add_argument("--window", default="-50:55", help="mode window n_min:n_max")
    s.add_argument("--convention", choices=("model", "raw"), default="model")
    s.add_argument("--workers", type=int, default=None, help="thread cap (default DASHLINE_THREADS)")
    _add_out(s)

    o = sub.add_parser("orbit", help="sample the closed-form heteroclinic orbit (CSV)")
    o.add_argument("--gamma", type=float, default=1.0)
    o.add_argument("--theta0", type=float, default=0.0)
    o.add_argument("--tau0", type=float, default=0.0)
    o.add_argument("--branch", choices=("+", "-"), default="+")
    o.add_argument("--t", default="-40:40:0.01", help="time grid start:stop:step")
    _add_out(o)

    m = sub.add_parser("simulate", help="RK4 trajectory of the dashed model (CSV)")
    _add_wave(m)
    m.add_argument("--gamma", type=float, default=1.0)
    m.add_argument("--eps", type=float, default=0.0)
    m.add_argument("--window", default="-10:15")
    m.add_argument("--dt", type=float, default=1e-3)
    m.add_argument("--steps", type=int, default=1000)
    m.add_argument("--ic", default="orbit:theta0=0,tau0=0",
                   help="'orbit:theta0=..,tau0=..[,branch=-]', 'fixed' or "
                        "'perturbed:amp=1e-3,seed=0'")
    m.add_argument("--t0", type=float, default=0.0, help="start time (orbit phase reference)")
    m.add_argument("--record-every", type=int, default=1)
    _add_out(m)

    g = sub.add_parser("melnikov", help="Melnikov functions of order 1-3 (JSON or CSV)")
    g.add_argument("--order", type=int, choices=(1, 2, 3), default=1)
    g.add_argument("--theta0", default="0", help="value, list a,b or range a:b:s")
    g.add_argument("--tau0", default="0", help="value, list or range")
    g.add_argument("--gamma", default="1", help="value, list or range")
    g.add_argument("--branch", default="+", help="'+', '-' or '+,-'")
    g.add_argument("--dt", type=float, default=None, help="finest step (default by order)")
    g.add_argument("--tau-max", type=float, default=32.0)
    g.add_argument("--refine", type=int, default=3, help="number of dt halvings ending at --dt")
    g.add_argument("--t-extension", choices=("auto", "on", "off"), default="auto")
    g.add_argument("--gauge", choices=("section", "none"), default="section")
    g.add_argument("--stabilize-tau", default="15", help="tail projection threshold or 'none'")
    g.add_argument("--format", choices=("auto", "json", "csv"), default="auto")
    g.add_argument("--workers", type=int, default=None, help="process cap (default DASHLINE_THREADS)")
    _add_out(g)
    return parser


_NEGATIVE_VALUE = re.compile(r"^-[0-9.]")


def _normalize_argv(argv: Sequence[str]) -> List[str]:
    """Glue values that start with '-' (e.g. ``--range -10:15``) to their flag."""
    out: List[str] = []
    for tok in argv:
        if (out and _NEGATIVE_VALUE.match(tok) and out[-1].startswith("--")
                and "=" not in out[-1]):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def _config_argv(path: str) -> List[str]:
    try:
        entries = read_config(path)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return [f"--{k.replace('_', '-')}={v}" for k, v in entries.items()]


def _resolve(argv: Sequence[str]):
    parser = build_parser()
    argv = _normalize_argv(list(argv))
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing subcommand (coeffs, spectrum, orbit, simulate, melnikov)")
    if getattr(args, "config", None):
        file_args = _config_argv(args.config)
        sub_idx = argv.index(args.command)
        merged = argv[:sub_idx + 1] + file_args + argv[sub_idx + 1:]
        args = parser.parse_args(merged)
    return args


def _resolved_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("command", "config")}


def _emit(args, text: str) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    atomic_write_text(args.out, text)
    atomic_write_text(args.out + ".config", config_text(args.command, _resolved_dict(args)))


def _digest(args) -> str:
    return config_hash(args.command, _resolved_dict(args))


def _wave(args) -> WaveConfig:
    try:
        return WaveConfig(khat=as_mode(args.khat), p=as_mode(args.p))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad wave vectors: {exc}") from None


def _window(text: str):
    vals = parse_range(text, integer=True)
    return vals[0], vals[-1]


# ---------------------------------------------------------------------------
# subcommands

def cmd_coeffs(args) -> str:
    lo, hi = _window(args.range)
    table = CoefficientTable.build(_wave(args), lo, hi)
    rows = [(n, str(model_coefficient(table, n)), float(model_coefficient(table, n)))
            for n in range(lo, hi + 1)]
    pairs = [(n - 1, n, str(pair_coefficient(table, n - 1, n)), float(pair_coefficient(table, n - 1, n)))
             for n in range(lo + 1, hi + 1)]
    return csv_text(["n", "A_n", "A_n_float"], rows, _digest(args),
                    blocks=[("pair coefficients A_{n-1,n}", ["m", "n", "A_mn", "A_mn_float"], pairs)])


def cmd_spectrum(args) -> str:
    from .coefficients import CoefficientTable as _T
    from .spectra import homotopy_sweep

    lo, hi = _window(args.window)
    eps = parse_values(args.eps)
    for e in eps:
        if not 0.0 <= e <= 1.0:
            raise UsageError(f"eps values must lie in [0, 1], got {e!r}")
    table = _T.build(_wave(args), lo - 1, hi + 1)
    sweep = homotopy_sweep(table, (lo, hi), args.gamma, eps, args.convention, args.workers)
    return csv_text(["eps", "re", "im", "band_class"], sweep.rows(), _digest(args),
                    comments=[f"window={lo}:{hi} gamma={args.gamma!r} convention={args.convention}"])


def cmd_orbit(args) -> str:
    from .orbit import (OrbitParams, block_rhs, orbit_invariants, orbit_point,
                        orbit_time_derivative)

    t = np.array(parse_range(args.t))
    params = OrbitParams(args.gamma, args.theta0, args.tau0, 1 if args.branch == "+" else -1)
    pt = orbit_point(params, t)
    i, u, j, v = orbit_invariants(pt, params.table)
    blk = pt.block()
    resid = np.max(np.abs(orbit_time_derivative(params, t) - block_rhs(params, blk)), axis=-1)
    cols = [t, pt.tau, pt.omega_p] + [blk[:, k] for k in range(6)] + [i, u, j, v, resid]
    header = ["t", "tau", "omega_p"] + [f"omega_{k}" for k in range(6)] + ["I", "U", "J", "V", "residual"]
    ends = params.endpoints()
    return csv_text(header, zip(*cols), _digest(args),
                    comments=[f"kappa={params.kappa!r} beta={params.beta!r} alpha={params.alpha!r}",
                              f"omega_p(t=-inf)={ends['t=-inf']!r} omega_p(t=+inf)={ends['t=+inf']!r}"])


def _initial_state(args, window, config):
    from .model import ModelState
    from .orbit import OrbitParams, orbit_block

    spec = args.ic.strip()
    kind, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, (x.strip() for x in rest.split(","))):
        if "=" not in item:
            raise UsageError(f"bad --ic option {item!r}")
        k, v = item.split("=", 1)
        opts[k.strip()] = v.strip()
    try:
        if kind == "fixed":
            return ModelState.zeros(window, args.gamma)
        if kind == "perturbed":
            rng = np.random.default_rng(int(opts.get("seed", 0)))
            amp = float(opts.get("amp", 1e-3))
            y = np.zeros(config.size + 1)
            y[-1] = args.gamma
            y[:-1] = amp * rng.standard_normal(config.size)
            return ModelState.from_vector(window, y)
        if kind == "orbit":
            if not (window[0] <= 0 and window[1] >= 5):
                raise UsageError("orbit initial condition needs a window containing 0..5")
            branch = -1 if opts.get("branch", "+") == "-" else 1
            params = OrbitParams(args.gamma, float(opts.get("theta0", 0)),
                                 float(opts.get("tau0", 0)), branch)
            blk = orbit_block(params, args.t0)
            return ModelState.from_mapping(window, {n: float(blk[n]) for n in range(6)}, float(blk[6]))
    except ValueError as exc:
        raise UsageError(f"bad --ic: {exc}") from None
    raise UsageError(f"unknown --ic kind {kind!r}")


def cmd_simulate(args) -> str:
    from .model import ModelConfig, integrate

    window = _window(args.window)
    if not 0.0 <= args.eps <= 1.0:
        raise UsageError("eps must lie in [0, 1]")
    table = CoefficientTable.build(_wave(args), min(window[0], -10) - 1, max(window[1], 15) + 1)
    config = ModelConfig(table, args.eps, window)
    state0 = _initial_state(args, window, config)
    traj = integrate(state0, config, args.dt, args.steps, t0=args.t0, record_every=args.record_every)
    header = ["t", "omega_p"] + [f"omega_{n}" for n in range(window[0], window[1] + 1)] + ["H_tilde", "J2_tilde"]
    st = traj.states
    rows = (
        (traj.t[i], st[i, -1], *st[i, :-1], traj.energy[i], traj.enstrophy[i])
        for i in range(len(traj.t))
    )
    dh, dj = traj.relative_drift()
    return csv_text(header, rows, _digest(args),
                    comments=[f"relative_drift H_tilde={dh!r} J2_tilde={dj!r}"])


def _melnikov_job(job):
    from .melnikov import melnikov
    from .orbit import OrbitParams

    (order, gamma, theta0, tau0, branch, dt, tau_max, refine, t_ext, gauge, stab) = job
    params = OrbitParams(gamma, theta0, tau0, branch)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = melnikov(order, params, dt=dt, tau_max=tau_max, refine=refine, t_extension=t_ext,
                       gauge=gauge, stabilize_tau=stab)
    return rep


def _branches(text: str):
    out = []
    for b in text.split(","):
        b = b.strip()
        if b not in ("+", "-"):
            raise UsageError(f"branch must be '+' or '-', got {b!r}")
        out.append(1 if b == "+" else -1)
    return out


def cmd_melnikov(args) -> str:
    from .spectra import worker_count

    stab = args.stabilize_tau.strip().lower()
    try:
        stab_v = None if stab in ("none", "off") else float(stab)
    except ValueError:
        raise UsageError(f"--stabilize-tau must be a number or 'none', got {args.stabilize_tau!r}") from None
    t_ext = {"auto": None, "on": True, "off": False}[args.t_extension]
    if args.dt is not None and not (args.dt > 0 and math.isfinite(args.dt)):
        raise UsageError("--dt must be positive")
    if not args.tau_max > 0:
        raise UsageError("--tau-max must be positive")
    jobs = [(args.order, g, th, ta, br, args.dt, args.tau_max, args.refine, t_ext,
             args.gauge == "section", stab_v)
            for g in parse_values(args.gamma) for th in parse_values(args.theta0)
            for ta in parse_values(args.tau0) for br in _branches(args.branch)]
    if any(j[1] == 0 for j in jobs):
        raise UsageError("gamma must be nonzero")
    n = min(worker_count(args.workers), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            reports = list(pool.map(_melnikov_job, jobs))
    else:
        reports = [_melnikov_job(j) for j in jobs]

    fmt = args.format
    if fmt == "auto":
        fmt = "csv" if (args.out or "").lower().endswith(".csv") else "json"
    digest = _digest(args)
    if fmt == "json":
        doc = {"tool": f"dashline {__version__}", "config_sha256": digest,
               "config": {k: v for k, v in _resolved_dict(args).items() if k != "out"}}
        if len(reports) == 1:
            doc["report"] = reports[0].to_dict()
        else:
            doc["reports"] = [r.to_dict() for r in reports]
        return json_text(doc)
    header = ["theta0", "tau0", "gamma", "branch", "t", "tau", "integrand_U", "integrand_V",
              "partial_U", "partial_V"]
    comments = []
    rows = []
    for r in reports:
        p = r.params
        comments.append(f"order={r.order} theta0={p['theta0']!r} tau0={p['tau0']!r} gamma={p['gamma']!r} "
                        f"branch={p['branch']} M_U={r.M_U!r} M_V={r.M_V!r} L1_U={r.L1_U!r} L1_V={r.L1_V!r}")
        rows.extend((p["theta0"], p["tau0"], p["gamma"], p["branch"], *row) for row in r.profile_rows())
    return csv_text(header, rows, digest, comments=comments)


COMMANDS = {"coeffs": cmd_coeffs, "spectrum": cmd_spectrum, "orbit": cmd_orbit,
            "simulate": cmd_simulate, "melnikov": cmd_melnikov}


def _fail(kind: str, code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": message}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _resolve(argv)
        if args.out is not None:
            check_writable(args.out)
        text = COMMANDS[args.command](args)
        _emit(args, text)
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    except RangeError as exc:
        return _fail("range", EXIT_RANGE, str(exc))
    except OSError as exc:
        return _fail("io", EXIT_IO, str(exc))
    except (NonFiniteError, EigenSolverError, ArithmeticError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        return _fail("numerical", EXIT_NUMERIC, str(exc))
    except RuntimeError as exc:
        # sweep / crosscheck failures wrap numerical causes
        return _fail("numerical", EXIT_NUMERIC, str(exc))
    except ValueError as exc:
        return _fail("usage", EXIT_USAGE, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
