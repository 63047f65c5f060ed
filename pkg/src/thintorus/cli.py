"""Command-line experiment runner.

Every run writes one CSV file: a ``# config=`` line echoing the full
configuration as JSON, a ``# build=`` line, a ``# schema=<command>/<version>``
line, the CSV header and data rows, then a ``# accounting=`` trailer with
wall-clock time.  Data rows depend only on the configuration and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import asymptotics as asy
from . import excursion_lab as exl
from . import mixing_meter as mm
from . import potential_theory as pt
from . import walk_engine as we
from .lattice import TorusSpec, build_torus, cycle

COMMANDS = ("cover", "r3", "gff", "resistance", "psi", "ldp", "excursions", "scan", "exact-tv")

SCHEMAS = {
    "cover": ("cover/1", ["trial", "start", "cover_time", "last_vertex", "status"]),
    "r3": ("r3/1", ["quantity", "radius", "value", "stderr"]),
    "gff": ("gff/1", ["n", "h", "edges", "samples", "mean_max", "mean_max_se", "ding_estimate", "ding_se"]),
    "resistance": ("resistance/1", ["u", "v", "distance", "r_eff"]),
    "psi": ("psi/1", ["phi", "psi_closed", "psi_variational", "rho_star", "branch"]),
    "ldp": ("ldp/1", ["p", "pN", "kappa", "z", "w", "rate", "stderr", "predicted_rate", "theta", "chernoff_log_bound", "log_probability", "chernoff_violated"]),
    "excursions": ("excursions/1", ["trial", "count", "typical", "relative_error"]),
    "scan": ("scan/1", ["a", "n", "h", "phi", "s", "s_lazy", "lower_bound", "lower_se", "certificate", "certificate_log2", "psi_prediction", "seed"]),
    "exact-tv": ("exact-tv/1", ["t", "tv", "tv_events"]),
}


class UsageError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    n: list[int] = field(default_factory=lambda: [16])
    a: list[float] | None = None
    h: int | None = None
    s_grid: list[float] = field(default_factory=lambda: [1.0])
    phi_grid: list[float] | None = None
    L: int = 2
    eta: float = 0.1
    M: float = 2.0
    trials: int = 100
    seed: int = 0
    workers: int = 1
    lazy: bool = False
    p: float = 0.02
    pN: float = 50.0
    kappa: float = 1.0
    z: float = 0.3
    w: float = 1.0
    horizon: int = 200
    out: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"command: unknown command {self.command!r}")
        if self.trials < 1:
            raise UsageError("trials: must be positive")
        if self.workers < 1:
            raise UsageError("workers: must be positive")

    def single_n(self) -> int:
        if len(self.n) != 1:
            raise UsageError(f"n: {self.command} takes a single value")
        return int(self.n[0])

    def torus_spec(self) -> TorusSpec:
        n = self.single_n()
        if self.h is not None:
            return TorusSpec(n, self.h)
        if self.a is None or len(self.a) != 1:
            raise UsageError("h: give --h or a single --a")
        return TorusSpec(n, mm.scan_height(self.a[0], n))

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d


# ---------------------------------------------------------------- parsing


def _ints(text: str) -> list[int]:
    return [int(float(x)) for x in str(text).split(",") if x]


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x]


def parse_grid(text: str) -> list[float]:
    """'start:stop:step' (stop included) or a comma list."""
    if ":" not in text:
        return _floats(text)
    parts = [float(x) for x in text.split(":")]
    if len(parts) != 3 or parts[2] <= 0:
        raise UsageError(f"grid: expected start:stop:step, got {text!r}")
    start, stop, step = parts
    if stop < start:
        raise UsageError(f"grid: stop below start in {text!r}")
    k = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + i * step, 12) for i in range(k + 1)]


_CONVERTERS = {
    "n": lambda v: _ints(v) if isinstance(v, str) else [int(x) for x in np.atleast_1d(v)],
    "a": lambda v: _floats(v) if isinstance(v, str) else [float(x) for x in np.atleast_1d(v)],
    "s_grid": lambda v: parse_grid(v) if isinstance(v, str) else [float(x) for x in v],
    "phi_grid": lambda v: parse_grid(v) if isinstance(v, str) else [float(x) for x in v],
    "trials": lambda v: int(float(v)),
    "seed": int,
    "workers": int,
    "L": int,
    "h": int,
    "horizon": int,
}


def _coerce(key: str, value):
    conv = _CONVERTERS.get(key)
    try:
        return conv(value) if conv else value
    except (TypeError, ValueError) as e:
        raise UsageError(f"{key}: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thintorus", description="Random walk, cover and lamplighter-mixing experiments on thin tori.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON file with configuration fields; flags override it")
    ap.add_argument("--n", help="side length (comma list for scan)")
    ap.add_argument("--a", help="height parameter a, h = max(3, floor(a ln n)) (comma list for scan)")
    ap.add_argument("--h", help="torus height, overrides --a")
    ap.add_argument("--s-grid", dest="s_grid", help="time parameters, start:stop:step or comma list")
    ap.add_argument("--phi-grid", dest="phi_grid", help="phi values, start:stop:step or comma list")
    ap.add_argument("--L")
    ap.add_argument("--eta", type=float)
    ap.add_argument("--M", type=float)
    ap.add_argument("--trials", help="trial or sample count (1e6 notation accepted)")
    ap.add_argument("--seed")
    ap.add_argument("--workers", help="worker processes (default: available CPUs)")
    ap.add_argument("--lazy", dest="lazy", action="store_true", default=None)
    ap.add_argument("--no-lazy", dest="lazy", action="store_false")
    ap.add_argument("--p", type=float)
    ap.add_argument("--pN", dest="pN", type=float)
    ap.add_argument("--kappa", type=float)
    ap.add_argument("--z", type=float)
    ap.add_argument("--w", type=float)
    ap.add_argument("--horizon")
    ap.add_argument("--out", help="output CSV path (default stdout)")
    return ap


def load_config(argv=None) -> ExperimentConfig:
    args = vars(build_parser().parse_args(argv))
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict = {}
    path = args.pop("config")
    if path:
        with open(path) as fh:
            data = json.load(fh)
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"{unknown[0]}: unknown config field")
        values.update(data)
    for k, v in args.items():
        if v is not None:
            values[k] = v
    if "workers" not in values:
        values["workers"] = os.cpu_count() or 1
    values = {k: _coerce(k, v) for k, v in values.items()}
    try:
        return ExperimentConfig(**values)
    except TypeError as e:
        raise UsageError(str(e)) from e


# ---------------------------------------------------------------- commands


def _cover_trial(args):
    graph, lazy, budget, trial, rng = args
    start = int(rng.integers(graph.num_vertices))
    try:
        res = we.run_until_cover(graph, start, lazy, rng, budget)
        return (trial, start, res.cover_time, res.last_vertex, "ok")
    except we.StepBudgetExceeded:
        return (trial, start, "", "", "budget_exhausted")


class _CoverJob:
    def __init__(self, graph, lazy, budget):
        self.graph, self.lazy, self.budget = graph, lazy, budget

    def __call__(self, trial, rng):
        return _cover_trial((self.graph, self.lazy, self.budget, trial, rng))


def run_cover(cfg: ExperimentConfig):
    graph = build_torus(cfg.torus_spec())
    job = _CoverJob(graph, cfg.lazy, we.default_budget(graph, cfg.lazy))
    return we.run_trials(job, cfg.seed, "cover", cfg.trials, cfg.workers)


def run_r3(cfg: ExperimentConfig):
    est = we.estimate_q_r3(we.trial_rng(cfg.seed, "r3", 0), cfg.trials)
    rows = [("q", "inf", est.q, est.stderr), ("r3", "inf", est.r3, est.r3_stderr)]
    rows += [("q", r, q, se) for r, q, se in zip(est.radii, est.q_by_radius, est.se_by_radius)]
    rows += [("flag", "", f, "") for f in est.flags]
    return rows


def run_gff(cfg: ExperimentConfig):
    spec = cfg.torus_spec()
    system = pt.PotentialSystem(build_torus(spec))
    est = pt.ding_cover_estimate(system, cfg.trials, we.trial_rng(cfg.seed, "gff", 0))
    return [(spec.n, spec.h, system.graph.num_edges, est.samples, est.mean_max, est.mean_max_se, est.estimate, est.stderr)]


def run_resistance(cfg: ExperimentConfig):
    spec = cfg.torus_spec()
    g = build_torus(spec)
    system = pt.PotentialSystem(g)
    rows = []
    for d in range(1, spec.n // 2 + 1):
        v = g.index((d, 0, 0))
        rows.append((0, v, d, pt.effective_resistance(system, 0, v)))
    return rows


def run_psi(cfg: ExperimentConfig):
    grid = cfg.phi_grid or [1.0]
    rows = []
    for phi in grid:
        s, rho = asy.psi_variational(phi)
        rows.append((phi, asy.psi_closed(phi), s, rho, asy.psi_branch(phi)))
    return rows


def run_ldp(cfg: ExperimentConfig):
    spec = asy.RateSpec(cfg.p, cfg.kappa * cfg.p, cfg.z, cfg.w, cfg.pN / cfg.p)
    est = asy.ldp_estimate(spec, cfg.trials, we.trial_rng(cfg.seed, "ldp", 0), mode="tilted")
    predicted = -((cfg.w - math.sqrt(cfg.kappa) * cfg.z) ** 2)
    return [(cfg.p, cfg.pN, cfg.kappa, cfg.z, cfg.w, est.rate, est.stderr, predicted, est.theta, est.chernoff_log_bound, est.log_probability, int(est.chernoff_violated))]


def run_excursions(cfg: ExperimentConfig):
    n = cfg.single_n()
    res = exl.planar_excursion_counts(n, cfg.s_grid[0], cfg.trials, cfg.seed, ratio=cfg.M)
    return [(t, int(c), res.typical, (c - res.typical) / res.typical) for t, c in enumerate(res.counts)]


def run_scan(cfg: ExperimentConfig):
    if not cfg.a:
        raise UsageError("a: scan needs --a")
    res = mm.cutoff_scan(cfg.a, cfg.n, cfg.s_grid, cfg.trials, cfg.seed)
    return [tuple(asdict(r).values()) for r in res.rows]


def run_exact_tv(cfg: ExperimentConfig):
    curve, _ = mm.exact_tv_curve(cycle(cfg.single_n()), cfg.horizon)
    return list(zip(curve.times.tolist(), curve.tv.tolist(), curve.tv_events.tolist()))


RUNNERS = {
    "cover": run_cover,
    "r3": run_r3,
    "gff": run_gff,
    "resistance": run_resistance,
    "psi": run_psi,
    "ldp": run_ldp,
    "excursions": run_excursions,
    "scan": run_scan,
    "exact-tv": run_exact_tv,
}


# ---------------------------------------------------------------- output


def build_id() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        v = version("artifact")
    except PackageNotFoundError:
        v = "unknown"
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(__file__)).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"artifact-{v}" + (f"+{rev}" if rev else "")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class ResultEnvelope:
    config: dict
    build: str
    schema: str
    columns: list[str]
    rows: list[tuple]
    elapsed_s: float
    flagged: int = 0

    def render(self) -> str:
        buf = io.StringIO()
        buf.write("# config=" + json.dumps(self.config, sort_keys=True) + "\n")
        buf.write(f"# build={self.build}\n")
        buf.write(f"# schema={self.schema}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        buf.write("# accounting=" + json.dumps({"elapsed_s": round(self.elapsed_s, 3), "rows": len(self.rows), "flagged": self.flagged}) + "\n")
        return buf.getvalue()


def run(cfg: ExperimentConfig) -> ResultEnvelope:
    t0 = time.perf_counter()
    rows = RUNNERS[cfg.command](cfg)
    schema, cols = SCHEMAS[cfg.command]
    flagged = sum(1 for r in rows if "budget_exhausted" in r or (len(r) and r[0] == "flag"))
    return ResultEnvelope(cfg.echo(), build_id(), schema, cols, rows, time.perf_counter() - t0, flagged)


def data_rows(text: str) -> list[str]:
    """Non-comment lines of a rendered envelope (header plus data)."""
    return [line for line in text.splitlines() if not line.startswith("#")]


def main(argv=None) -> int:
    try:
        cfg = load_config(argv)
        env = run(cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    text = env.render()
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 1 if env.flagged and cfg.command == "cover" else 0


if __name__ == "__main__":
    sys.exit(main())
