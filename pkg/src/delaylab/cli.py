"""Command-line entry point.

Every command reads a system spec, writes JSON (and CSV tables where the
data is dense) into ``--out`` and exits with 0 on success, 2 when a
validation finding blocks or fails the analysis and 1 on hard errors.
Floats are written with 17 significant digits, so equal inputs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys as _sys
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .chains import (
    Reduction,
    approximate_chain_control_set,
    chain_from_dict,
    verify_chain,
)
from .hyperbolic import EntireSolutionRequest, entire_solution
from .integrator import solve
from .lift import LiftedState, ProjectivePoint, equator_distance, hyperbolic_subbundle_sample
from .spectral import check_hyperbolic, compute_spectrum, hyperbolic_split
from .system import ControlSignal, DelaySystem, M2State, load_system, random_bang_bang, validate_system

__all__ = ["COMMANDS", "RunConfig", "Blocked", "run", "emit_plot_data", "dumps_json", "main"]

COMMANDS = ("validate", "simulate", "spectrum", "split", "entire", "chainset", "chain-verify", "lift")


class Blocked(Exception):
    """A validation finding prevents the requested analysis (exit code 2)."""


class CliError(Exception):
    """Bad arguments or inputs (exit code 1)."""


@dataclass(frozen=True)
class RunConfig:
    """Parsed command line. Defaults are the documented per-command defaults."""

    command: str
    system_path: str
    output_path: str
    seed: int = 0
    horizon: float = 5.0
    step: float | None = None
    sigma: float = -3.0
    n_collocation: int = 32
    tolerance: float = 1e-8
    depth: int = 5
    tau: float = 1.0
    region: float = 1.0
    reduced_dim: int | None = None
    n_controls: int = 8
    control: dict | None = None
    initial: list | None = None
    chain_path: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise CliError(f"unknown command {self.command!r}")
        positive = {"horizon": self.horizon, "tolerance": self.tolerance, "tau": self.tau, "region": self.region}
        for k, v in positive.items():
            if not v > 0:
                raise CliError(f"parameter {k} must be positive, got {v}")
        if self.step is not None and not self.step > 0:
            raise CliError("parameter step must be positive")
        if self.n_collocation < 8:
            raise CliError("parameter n_collocation must be at least 8")
        if self.depth < 0 or self.n_controls < 1:
            raise CliError("parameters depth >= 0 and n_controls >= 1 are required")
        if not 0 <= self.seed < 2**64:
            raise CliError("seed must be an unsigned 64-bit integer")

    def echo(self) -> dict:
        """Parameters that determine the results; the output directory is left out
        so that runs into different directories can be compared byte for byte."""
        d = asdict(self)
        d.pop("output_path")
        return d


# ---------------------------------------------------------------- serialization


def _fmt(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _write(obj, out: list, indent: int):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.append(f"{pad}  {json.dumps(k)}: ")
            _write(v, out, indent + 1)
            out.append(",\n" if i + 1 < len(obj) else "\n")
        out.append(pad + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
        elif all(not isinstance(v, (dict, list)) for v in obj):
            out.append("[" + ", ".join(_scalar(v) for v in obj) + "]")
        else:
            out.append("[\n")
            for i, v in enumerate(obj):
                out.append(pad + "  ")
                _write(v, out, indent + 1)
                out.append(",\n" if i + 1 < len(obj) else "\n")
            out.append(pad + "]")
    else:
        out.append(_scalar(obj))


def _scalar(v) -> str:
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return _fmt(v)
    return json.dumps(v, ensure_ascii=False)


def dumps_json(obj) -> str:
    """Deterministic JSON: insertion-ordered keys, 17 significant digits, LF endings."""
    out: list[str] = []
    _write(_plain(obj), out, 0)
    return "".join(out) + "\n"


def _header(cfg: RunConfig) -> str:
    return f"# delaylab {__version__} config={json.dumps(_plain(cfg.echo()), sort_keys=True)}\n"


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_csv(path: str, cfg: RunConfig, columns: list[str], rows) -> None:
    lines = [_header(cfg), ",".join(columns) + "\n"]
    for row in rows:
        lines.append(",".join(_fmt(float(v)) for v in row) + "\n")
    _write_text(path, "".join(lines))


def _artifact(cfg: RunConfig, result: dict) -> dict:
    return {"delaylab_version": __version__, "config": cfg.echo(), "result": result}


# ---------------------------------------------------------------- plot data


def emit_plot_data(result: dict, kind: str, out_dir: str, cfg: RunConfig) -> str:
    """Write a plain CSV table for one result kind; returns the path."""
    if kind == "trajectory":
        n = len(result["x"][0]) if result["x"] else 0
        path = os.path.join(out_dir, "trajectory.csv")
        _write_csv(path, cfg, ["t"] + [f"x{i}" for i in range(n)], ([t, *x] for t, x in zip(result["t"], result["x"])))
    elif kind == "spectrum":
        path = os.path.join(out_dir, "spectrum.csv")
        _write_csv(path, cfg, ["re", "im"], ([r["re"], r["im"]] for r in result["roots"]))
    elif kind == "chainset":
        path = os.path.join(out_dir, "chainset.csv")
        d = len(result["lo"])
        cols = [f"lower{i}" for i in range(d)] + [f"upper{i}" for i in range(d)]
        _write_csv(path, cfg, cols, ([*b["lower"], *b["upper"]] for b in result["boxes"]))
    elif kind == "equator":
        path = os.path.join(out_dir, "equator.csv")
        _write_csv(path, cfg, ["t", "equator_distance"], zip(result["ray_t"], result["ray_equator_distance"]))
    elif kind == "segment":
        path = os.path.join(out_dir, "entire.csv")
        seg = result["state"]["segment"]
        theta = np.linspace(-result["h"], 0.0, len(seg))
        _write_csv(path, cfg, ["theta"] + [f"x{i}" for i in range(len(seg[0]))], ([t, *v] for t, v in zip(theta, seg)))
    else:
        raise ValueError(f"unknown plot data kind {kind!r}")
    return path


# ---------------------------------------------------------------- commands


def _control(cfg: RunConfig, sys: DelaySystem) -> ControlSignal:
    if cfg.control is None:
        return ControlSignal.zero(sys.m)
    u = ControlSignal.from_dict(cfg.control)
    if u.m != sys.m:
        raise CliError(f"control has dimension {u.m}, the system has m = {sys.m}")
    return u


def _initial(cfg: RunConfig, sys: DelaySystem) -> M2State:
    if cfg.initial is None:
        return sys.zero_state()
    v = np.asarray(cfg.initial, dtype=float).ravel()
    if v.size != sys.n:
        raise CliError(f"initial value needs {sys.n} entries")
    return M2State.constant(v, sys.h, sys.n_seg)


def _require_injective(sys: DelaySystem):
    f = validate_system(sys).get("injectivity")
    if not f.passed:
        raise Blocked(f"A_p is singular ({f.detail}); this analysis needs an invertible A_p")


def _split(sys: DelaySystem, cfg: RunConfig):
    spec = compute_spectrum(sys, cfg.sigma, cfg.n_collocation)
    verdict = check_hyperbolic(spec)
    if verdict != "hyperbolic":
        raise Blocked(f"the spectrum is {verdict}; a hyperbolic splitting is required")
    return spec, hyperbolic_split(sys, spec, seed=cfg.seed % 2**32)


def _cmd_validate(sys, cfg):
    rep = validate_system(sys)
    return rep.to_dict(), [], 0 if rep.ok else 2


def _cmd_simulate(sys, cfg):
    tr = solve(sys, _initial(cfg, sys), _control(cfg, sys), cfg.horizon, cfg.step)
    res = {"t": tr.times.tolist(), "x": tr.x.tolist(), "final": tr.final.to_dict(), "midpoint_residual": tr.midpoint_residual()}
    summary = {"final": res["final"], "midpoint_residual": res["midpoint_residual"], "steps": len(tr.x) - 1}
    return summary, [("trajectory", res)], 0


def _cmd_spectrum(sys, cfg):
    spec = compute_spectrum(sys, cfg.sigma, cfg.n_collocation)
    res = {
        "sigma": cfg.sigma,
        "n_collocation": cfg.n_collocation,
        "verdict": check_hyperbolic(spec),
        "roots": spec.to_list(),
        "diagnostics": spec.diagnostics,
    }
    return res, [("spectrum", res)], 0


def _cmd_split(sys, cfg):
    _, split = _split(sys, cfg)
    return split.to_dict(), [], 0


def _cmd_entire(sys, cfg):
    _require_injective(sys)
    _, split = _split(sys, cfg)
    e = entire_solution(sys, split, _control(cfg, sys), 0.0, EntireSolutionRequest(cfg.tolerance, step=cfg.step))
    res = {"h": sys.h, "dim_plus": split.dim_plus, "state": e.to_dict(), "norm": e.norm()}
    return res, [("segment", res)], 0


def _sample_controls(sys: DelaySystem, cfg: RunConfig, t_start: float, t_end: float) -> list[ControlSignal]:
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.tau / 4
    out = [ControlSignal.constant(v, t_start, t_end, dt) for v in sys.omega_vertices]
    if sys.zero_in_omega:
        out.append(ControlSignal.constant(np.zeros(sys.m), t_start, t_end, dt))
    out += [random_bang_bang(sys, rng, t_start, t_end, dt, cfg.tau) for _ in range(cfg.n_controls)]
    return out


def _cmd_chainset(sys, cfg):
    _require_injective(sys)
    if not sys.zero_in_omega:
        raise Blocked("0 is not in Omega; the chain control set construction needs it")
    d = cfg.reduced_dim if cfg.reduced_dim is not None else sys.n + 1
    red = Reduction(sys.n, d, sys.h, sys.n_seg)
    lo, hi = -cfg.region * np.ones(d), cfg.region * np.ones(d)
    cover = approximate_chain_control_set(sys, red, (lo, hi), cfg.depth, cfg.tau, _sample_controls(sys, cfg, 0.0, cfg.tau), cfg.step)
    res = cover.to_dict()
    res["head_projection"] = cover.projection_intervals(0)
    return res, [("chainset", res)], 0


def _cmd_chain_verify(sys, cfg):
    if cfg.chain_path is None:
        raise CliError("chain-verify needs --chain")
    with open(cfg.chain_path, encoding="utf-8") as fh:
        chain = chain_from_dict(json.load(fh), sys.h)
    rep = verify_chain(sys, chain, cfg.step)
    return rep.to_dict(), [], 0 if rep.valid else 2


def _cmd_lift(sys, cfg):
    _require_injective(sys)
    _, split = _split(sys, cfg)
    T = 60.0
    controls = _sample_controls(sys, cfg, -T, T)
    sample = hyperbolic_subbundle_sample(sys, split, controls, EntireSolutionRequest(cfg.tolerance, step=cfg.step))
    y0 = M2State.constant(np.ones(sys.n), sys.h, sys.n_seg)
    y0 = y0 * (1.0 / y0.norm())
    ts = np.unique(np.round(np.geomspace(1.0, 1e4, 41)))
    eq = [equator_distance(ProjectivePoint.of(LiftedState(t * y0, 1.0))) for t in ts]
    res = {**sample.to_dict(), "ray_t": ts.tolist(), "ray_equator_distance": eq}
    return res, [("equator", res)], 0


_DISPATCH = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "spectrum": _cmd_spectrum,
    "split": _cmd_split,
    "entire": _cmd_entire,
    "chainset": _cmd_chainset,
    "chain-verify": _cmd_chain_verify,
    "lift": _cmd_lift,
}


def _out_name(command: str) -> str:
    return command.replace("-", "_") + ".json"


def run(cfg: RunConfig) -> int:
    """Execute one command; artifacts go to ``cfg.output_path``. Returns the exit code."""
    if not os.path.isfile(cfg.system_path):
        raise CliError(f"system spec {cfg.system_path!r} not found")
    if cfg.chain_path is not None and not os.path.isfile(cfg.chain_path):
        raise CliError(f"chain file {cfg.chain_path!r} not found")
    os.makedirs(cfg.output_path, exist_ok=True)
    try:
        sys = load_system(cfg.system_path)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read system spec: {exc}") from exc
    path = os.path.join(cfg.output_path, _out_name(cfg.command))
    try:
        result, plots, code = _DISPATCH[cfg.command](sys, cfg)
    except Blocked as exc:
        _write_text(path, dumps_json(_artifact(cfg, {"blocked": str(exc)})))
        return 2
    _write_text(path, dumps_json(_artifact(cfg, result)))
    for kind, data in plots:
        emit_plot_data(data, kind, cfg.output_path, cfg)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid JSON argument {text!r}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="delaylab", description="Analysis of linear delay control systems.")
    p.add_argument("--version", action="version", version=f"delaylab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--system", required=True, help="system spec (JSON)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=0, help="seed for all random sampling")
        s.add_argument("--step", type=float, default=None, help="integrator step (divides h / n_seg)")
        if name == "simulate":
            s.add_argument("--horizon", type=float, default=5.0)
            s.add_argument("--control", type=_json_arg, default=None, help="control descriptor (JSON)")
            s.add_argument("--initial", type=_json_arg, default=None, help="constant initial value (JSON list)")
        if name in ("spectrum", "split", "entire", "lift"):
            s.add_argument("--sigma", type=float, default=-3.0)
            s.add_argument("--n-collocation", type=int, default=32)
        if name in ("entire", "lift"):
            s.add_argument("--tolerance", type=float, default=1e-8)
        if name == "entire":
            s.add_argument("--control", type=_json_arg, default=None, help="control descriptor (JSON)")
        if name == "chainset":
            s.add_argument("--depth", type=int, default=5)
            s.add_argument("--tau", type=float, default=1.0)
            s.add_argument("--region", type=float, default=1.0, help="half width of the reduced box")
            s.add_argument("--reduced-dim", type=int, default=None)
        if name in ("chainset", "lift"):
            s.add_argument("--n-controls", type=int, default=8)
        if name == "chain-verify":
            s.add_argument("--chain", required=True)
    return p


def config_from_args(argv) -> RunConfig:
    ns = vars(build_parser().parse_args(argv))
    kw = {
        "command": ns.pop("command"),
        "system_path": ns.pop("system"),
        "output_path": ns.pop("out"),
        "chain_path": ns.pop("chain", None),
    }
    for k, v in ns.items():
        kw[k] = v
    return RunConfig(**kw)


def main(argv=None) -> int:
    try:
        cfg = config_from_args(argv)
        return run(cfg)
    except (CliError, ValueError, NotImplementedError, FloatingPointError, OSError) as exc:
        print(f"delaylab: error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
