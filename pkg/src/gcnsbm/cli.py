"""Command-line front end.

Subcommands: se, bo, sim, sweep, rates, cstar, plot.  Every grid command
writes one table row per grid point (per repetition for ``sim``) with all
inputs, the metrics, convergence diagnostics and a ``failure`` column; the
exit status is 1 when any point failed and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bayes_optimal as bo
from . import closed_form as cf
from . import plotting
from . import simulator as sim
from . import state_evolution as se
from .config import COMMANDS, ConfigError, load_config, parse_grid
from .core import DataParams, GcnParams, Loss, Model, ParameterError, sample_mc
from .presets import get_preset

SCHEMA = "gcnsbm-table v1"
OUT_DIR_ENV = "GCNSBM_OUT_DIR"
AXIS_NAMES = ("loss", "r", "lambda", "rho", "alpha", "mu", "c")
DATA_AXES = ("lambda", "rho", "alpha", "mu")
INPUT_COLUMNS = ("model", "alpha", "lambda", "mu", "rho", "rho_test", "loss", "r", "c")
METRIC_COLUMNS = ("e_train", "e_test", "acc_train", "acc_test")

log = logging.getLogger("gcnsbm")


class UsageError(ParameterError):
    pass


@dataclass
class RunSpec:
    command: str
    data: DataParams
    gcn: GcnParams
    axes: list = field(default_factory=list)
    out: str = None
    fmt: str = "csv"
    seed: int = 0
    mc_count: int = 1_000_000
    tol: float = 1e-8
    max_iter: int = 200
    n: int = 10_000
    d: float = 30.0
    reps: int = 10
    mode: str = "bernoulli"
    workers: int = 1
    preset: str = None
    regime: str = "finite"
    features: str = None
    epsilon: float = 0.0
    label_column: int = None
    tables: dict = field(default_factory=dict)
    x: str = None
    logy: bool = False
    plot: str = None
    explicit_axes: tuple = ()

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"command: unknown command {self.command!r}")
        for name, values in self.axes:
            if name not in AXIS_NAMES:
                raise UsageError(f"axes: unknown parameter {name!r}; expected one of {', '.join(AXIS_NAMES)}")
            if not values:
                raise UsageError(f"axes: empty grid for {name!r}")
        if self.fmt not in ("csv", "json"):
            raise UsageError(f"format: expected csv or json, got {self.fmt!r}")
        if self.workers < 1:
            raise UsageError("workers: must be at least 1")


# argument parsing ---------------------------------------------------------

FLAG_KEYS = {
    "model": "model", "alpha": "alpha", "lam": "lambda", "mu": "mu", "rho": "rho", "rho_test": "rho_test",
    "d": "d", "loss": "loss", "r": "r", "c": "c", "n": "n", "reps": "reps", "seed": "seed",
    "mc_count": "mc_count", "tol": "tol", "max_iter": "max_iter", "workers": "workers", "mode": "mode",
    "out": "out", "format": "format", "preset": "preset", "regime": "regime", "plot": "plot",
    "c_grid": "c_grid", "r_grid": "r_grid", "lambda_grid": "lambda_grid", "rho_grid": "rho_grid",
    "alpha_grid": "alpha_grid", "mu_grid": "mu_grid", "loss_list": "loss_list",
    "se_table": "se_table", "sim_table": "sim_table", "bo_table": "bo_table", "x": "x", "logy": "logy",
    "features": "features", "epsilon": "epsilon", "label_column": "label_column",
}


def _shared_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("parameters")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--preset", help="figure preset, e.g. fig1-top")
    g.add_argument("--model", help="csbm or glm_sbm")
    g.add_argument("--alpha", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--mu", type=float)
    g.add_argument("--rho", type=float)
    g.add_argument("--rho-test", type=float)
    g.add_argument("--d", type=float, help="average degree (simulation)")
    g.add_argument("--loss", help="quadratic, logistic or hinge")
    g.add_argument("--r", type=float, help="l2 regularization")
    g.add_argument("--c", type=float, help="self-loop strength")
    for name in ("c", "r", "lambda", "rho", "alpha", "mu"):
        g.add_argument(f"--{name}-grid", type=parse_grid, help="start:stop:step, log:start:stop:count or a,b,c")
    g.add_argument("--loss-list", help="comma-separated losses")
    g.add_argument("--seed", type=int)
    g.add_argument("--mc-count", type=int)
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iter", type=int)
    g.add_argument("--workers", type=int, help="worker threads (default: available cores)")
    g.add_argument("--n", type=int, help="number of nodes (simulation)")
    g.add_argument("--reps", type=int, help="number of seeds (simulation)")
    g.add_argument("--mode", help="bernoulli or gaussian_equivalent")
    g.add_argument("--regime", help="lambda regime for cstar: small, large or finite")
    g.add_argument("--features", help="CSV feature matrix (one node per row)")
    g.add_argument("--epsilon", type=float, help="noise added to ingested features")
    g.add_argument("--label-column", type=int, help="0-based label column in the feature CSV")
    o = p.add_argument_group("output")
    o.add_argument("--out", help=f"table path (default: ${OUT_DIR_ENV} or the current directory)")
    o.add_argument("--format", choices=("csv", "json"))
    o.add_argument("--plot", help="figure path (.svg or .png)")
    o.add_argument("--se-table")
    o.add_argument("--sim-table")
    o.add_argument("--bo-table")
    o.add_argument("--x", help="x axis for plot")
    o.add_argument("--logy", action="store_const", const=True)
    o.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="gcnsbm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    shared = _shared_flags()
    helps = {
        "se": "solve the state evolution over a grid",
        "bo": "Bayes-optimal accuracy over a grid",
        "sim": "train the GCN on sampled graphs",
        "sweep": "theory, Bayes-optimal and (with --reps > 0) simulation tables plus a figure",
        "rates": "asymptotic learning rates",
        "cstar": "optimal self-loop strength",
        "plot": "render saved tables",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[shared], help=helps[name])
    return parser


def spec_from_args(args) -> RunSpec:
    values = {}
    if args.config:
        values.update(load_config(args.config, args.command))
    for attr, key in FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    return build_spec(args.command, values)


def build_spec(command, values: dict) -> RunSpec:
    values = dict(values)
    preset = values.get("preset")
    panel = None
    if preset:
        p = get_preset(preset)
        if len(p.panels) > 1 and command not in ("plot", "sweep"):
            raise UsageError(f"preset: {preset} has several panels; use sweep or plot")
        panel = p.panels[0]
    base = panel.data if panel else DataParams()
    try:
        data = DataParams(
            model=values.get("model", base.model), alpha=values.get("alpha", base.alpha),
            lam=values.get("lambda", base.lam), mu=values.get("mu", base.mu),
            rho=values.get("rho", base.rho), rho_test=values.get("rho_test"),
            d=values.get("d", panel.d if panel else base.d))
        gcn = GcnParams(values.get("loss", "quadratic"), values.get("r", 1.0), values.get("c", 0.0))
    except ParameterError as exc:
        raise UsageError(f"parameters: {exc}") from None

    axes = []
    grid_source = {}
    if panel:
        grid_source = dict(panel.sim if command == "sim" else panel.theory)
    if "loss_list" in values:
        grid_source["loss"] = [s.strip() for s in str(values["loss_list"]).split(",") if s.strip()]
    for name in ("c", "r", "lambda", "rho", "alpha", "mu"):
        if f"{name}_grid" in values:
            grid_source[name] = list(values[f"{name}_grid"])
    explicit = tuple(n for n in ("c", "r", "lambda", "rho", "alpha", "mu") if f"{n}_grid" in values)
    if "loss_list" in values:
        explicit += ("loss",)
    for name in AXIS_NAMES:
        if name in grid_source:
            axes.append((name, list(grid_source[name])))

    fmt = values.get("format")
    out = values.get("out")
    if fmt is None:
        fmt = "json" if out and str(out).endswith(".json") else "csv"
    workers = values.get("workers") or (os.cpu_count() or 1)
    tables = {k: values[f"{k}_table"] for k in ("se", "sim", "bo") if f"{k}_table" in values}
    return RunSpec(
        command=command, data=data, gcn=gcn, axes=axes, out=out, fmt=fmt,
        seed=values.get("seed", 0), mc_count=values.get("mc_count", 1_000_000),
        tol=values.get("tol", 1e-8), max_iter=values.get("max_iter", 200),
        n=values.get("n", panel.n if panel else 10_000), d=data.d,
        reps=values.get("reps", panel.reps if panel else 10),
        mode=values.get("mode", "bernoulli"), workers=workers, preset=preset,
        regime=values.get("regime", "finite"), features=values.get("features"),
        epsilon=values.get("epsilon", 0.0), label_column=values.get("label_column"),
        tables=tables, x=values.get("x", panel.x if panel else None),
        logy=values.get("logy", panel.logy if panel else False), plot=values.get("plot"),
        explicit_axes=explicit)


# grids --------------------------------------------------------------------

def grid_points(spec: RunSpec, names=AXIS_NAMES):
    axes = [(n, v) for n, v in spec.axes if n in names]
    keys = [n for n, _ in axes]
    for combo in itertools.product(*(v for _, v in axes)):
        yield dict(zip(keys, combo))


def point_params(spec: RunSpec, point):
    kw = {}
    for name in DATA_AXES:
        if name in point:
            kw["lam" if name == "lambda" else name] = float(point[name])
    dp = spec.data.with_(**kw)
    c = point.get("c", spec.gcn.c)
    if c == "cstar":
        c = cf.c_star(dp, "finite")
    gp = GcnParams(point.get("loss", spec.gcn.loss), float(point.get("r", spec.gcn.r)), float(c))
    return dp, gp


def input_columns(dp: DataParams, gp: GcnParams = None):
    row = {"model": dp.model.value, "alpha": float(dp.alpha), "lambda": float(dp.lam), "mu": float(dp.mu),
           "rho": float(dp.rho), "rho_test": float(dp.rho_test)}
    if gp is not None:
        row.update(loss=gp.loss.value, r=float(gp.r), c=float(gp.c))
    return row


def _map(spec, fn, items):
    if spec.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# commands -----------------------------------------------------------------

def run_se(spec: RunSpec):
    mc = sample_mc(spec.mc_count, spec.seed)
    cfg = se.SolveConfig(mc_count=spec.mc_count, seed=spec.seed, tol=spec.tol, max_iter=spec.max_iter)
    points = list(grid_points(spec)) or [{}]

    def one(point):
        row = {}
        try:
            dp, gp = point_params(spec, point)
            row.update(input_columns(dp, gp))
            pred = se.predict(dp, gp, cfg, mc)
            fp = pred.fixed_point
            row.update(pred.metrics.as_dict())
            row.update(acc_test_mc_se=pred.acc_test_se, iterations=fp.iterations, residual=fp.residual,
                       converged=fp.converged, flags=";".join(fp.flags),
                       failure="" if fp.converged else "not converged")
        except Exception as exc:  # recorded per grid point
            row.update({k: point.get(k, "") for k in point})
            row["failure"] = f"{type(exc).__name__}: {exc}"
        return row

    return _map(spec, one, points)


def run_bo(spec: RunSpec):
    points = list(grid_points(spec, DATA_AXES)) or [{}]

    def one(point):
        row = {}
        try:
            dp, _ = point_params(spec, point)
            row.update(input_columns(dp))
            state = bo.bo_solve(dp)
            err = bo.bo_error_csbm(state) if dp.model is Model.CSBM else bo.bo_error_glmsbm(state)
            flags = getattr(state, "flags", ())
            row.update(acc_bo=1.0 - err, err_bo=err, m_y=state.m_y, m_u=state.m_u,
                       iterations=state.iterations, converged=state.converged, flags=";".join(flags),
                       failure="" if state.converged else "not converged")
        except Exception as exc:
            row.update({k: point.get(k, "") for k in point})
            row["failure"] = f"{type(exc).__name__}: {exc}"
        return row

    return _map(spec, one, points)


def run_sim(spec: RunSpec):
    points = list(grid_points(spec)) or [{}]
    features = labels = None
    if spec.features:
        features, labels = sim.ingest_features(spec.features, spec.epsilon, spec.seed,
                                               label_column=spec.label_column if spec.label_column is not None else 0)
    n = spec.n if features is None else features.shape[0]
    mode = sim.AdjacencyMode.parse(spec.mode)
    tc = sim.TrainConfig()

    # one dataset per (graph parameters, seed); the train split follows rho
    def graph_key(point):
        return tuple((k, point[k]) for k in ("lambda", "alpha", "mu") if k in point)

    groups = {}
    for i, point in enumerate(points):
        groups.setdefault(graph_key(point), []).append(i)
    seeds = [spec.seed + k for k in range(spec.reps)]
    jobs = [(key, s) for key in groups for s in seeds]

    def job(args):
        key, s = args
        out = {}
        try:
            dp0, _ = point_params(spec, dict(key))
            ds = sim.gen_dataset(dp0, n, mode, s, features, labels)
        except Exception as exc:
            return {i: exc for i in groups[key]}
        for i in groups[key]:
            try:
                dp, gp = point_params(spec, points[i])
                same_split = dp.rho == dp0.rho and dp.rho_test == dp0.rho_test
                dsi = ds if same_split else sim.remask(ds, dp.rho, dp.rho_test)
                w = sim.train_gcn(dsi, gp, tc)
                out[i] = sim.evaluate(dsi, w, gp)
            except Exception as exc:
                out[i] = exc
        return out

    results = dict(zip(jobs, _map(spec, job, jobs)))
    rows = []
    for i, point in enumerate(points):
        key = graph_key(point)
        try:
            dp, gp = point_params(spec, point)
            inputs = input_columns(dp, gp)
        except Exception as exc:
            inputs = dict(point)
            rows.append(dict(inputs, rep="mean", failure=f"{type(exc).__name__}: {exc}"))
            continue
        inputs.update(n=n, d=dp.d, mode=mode.value)
        per_seed = []
        failures = []
        for s in seeds:
            res = results[(key, s)][i]
            if isinstance(res, Exception):
                failures.append(f"seed {s}: {type(res).__name__}: {res}")
                rows.append(dict(inputs, rep=s, failure=f"{type(res).__name__}: {res}"))
            else:
                per_seed.append((s, res))
                rows.append(dict(inputs, rep=s, **res.as_dict(), failure=""))
        mean_row = dict(inputs, rep="mean", failure="; ".join(failures))
        if per_seed:
            summary = sim.summarize(per_seed)
            mean_row.update(summary.mean)
            mean_row.update({f"{k}_sem": v for k, v in summary.sem.items()})
        rows.append(mean_row)
    return rows


def run_rates(spec: RunSpec):
    dp = spec.data
    row = input_columns(dp)
    row.update(tau_inf=cf.rate_inf(dp), tau_bo_inf=cf.RATE_BAYES_OPTIMAL, tau_finite=cf.tau_finite(dp),
               failure="")
    return [row]


def run_cstar(spec: RunSpec):
    points = list(grid_points(spec, DATA_AXES)) or [{}]

    def one(point):
        row = {}
        try:
            dp, _ = point_params(spec, point)
            row.update(input_columns(dp))
            row.update(regime=spec.regime, c_star=cf.c_star(dp, spec.regime), failure="")
        except Exception as exc:
            row.update({k: point.get(k, "") for k in point})
            row["failure"] = f"{type(exc).__name__}: {exc}"
        return row

    return _map(spec, one, points)


# tables -------------------------------------------------------------------

def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating, np.integer)):
        return repr(v.item())
    return str(v)


def write_table(path, rows, command, fmt="csv"):
    columns = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    front = [c for c in INPUT_COLUMNS if c in columns]
    columns = front + [c for c in columns if c not in front and c != "failure"] + ["failure"]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump({"schema": SCHEMA, "command": command, "columns": columns,
                       "rows": [{k: row.get(k, "") for k in columns} for row in rows]},
                      fh, indent=1, default=_cell)
            fh.write("\n")
        return
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA} command={command}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(k, "")) for k in columns])


def read_table(path):
    if str(path).endswith(".json"):
        with open(path) as fh:
            data = json.load(fh)
        return [{k: str(v) for k, v in row.items()} for row in data["rows"]]
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# gcnsbm-table"):
            raise UsageError(f"{path}: missing schema header line")
        if not first.startswith(f"# {SCHEMA}"):
            raise UsageError(f"{path}: unsupported schema {first.strip()!r}")
        return list(csv.DictReader(fh))


def default_out(spec: RunSpec, suffix=""):
    base = os.environ.get(OUT_DIR_ENV, ".")
    stem = spec.command + (f"-{spec.preset}" if spec.preset else "") + suffix
    return os.path.join(base, f"{stem}.{spec.fmt}")


def _failed(rows):
    return any(row.get("failure") for row in rows)


def _panels_for_plot(spec: RunSpec, tables):
    if spec.preset:
        panels = get_preset(spec.preset).panels
    else:
        panels = [None]
    out = []
    for k, panel in enumerate(panels):
        def pick(rows):
            if panel is None or len(panels) == 1:
                return rows
            return [r for r in rows if r.get("model") == panel.data.model.value
                    and float(r.get("alpha", "nan")) == panel.data.alpha]
        out.append({
            "title": panel.title if panel else "",
            "x": spec.x or (panel.x if panel else "c"),
            "kind": panel.kind if panel else "accuracy",
            "logy": spec.logy or (panel.logy if panel else False),
            "theory": pick(tables.get("se", [])), "sim": pick(tables.get("sim", [])),
            "bo": pick(tables.get("bo", [])),
        })
    return out


def run(spec: RunSpec) -> int:
    """Execute ``spec``; returns the process exit status."""
    cmd = spec.command
    if cmd == "plot":
        tables = {k: read_table(p) for k, p in spec.tables.items()}
        if not tables:
            raise UsageError("plot: give at least one of --se-table, --sim-table, --bo-table")
        path = spec.plot or spec.out or default_out(spec).rsplit(".", 1)[0] + ".svg"
        plotting.render(path, _panels_for_plot(spec, tables))
        print(path)
        return 0
    if cmd == "sweep":
        return run_sweep(spec)
    runner = {"se": run_se, "bo": run_bo, "sim": run_sim, "rates": run_rates, "cstar": run_cstar}[cmd]
    rows = runner(spec)
    path = spec.out or default_out(spec)
    write_table(path, rows, cmd, spec.fmt)
    if cmd == "rates":
        row = rows[0]
        print(f"tau_inf = {row['tau_inf']:.6g}")
        print(f"tau_BO_inf = {row['tau_bo_inf']:.6g}")
    elif cmd == "cstar" and len(rows) == 1 and not rows[0]["failure"]:
        print(f"c_star = {rows[0]['c_star']:.8g}")
    print(path)
    if _failed(rows):
        log.error("%d grid point(s) failed; see the failure column of %s",
                  sum(1 for r in rows if r.get("failure")), path)
        return 1
    return 0


def run_sweep(spec: RunSpec) -> int:
    preset = get_preset(spec.preset) if spec.preset else None
    panels = preset.panels if preset else [None]
    status = 0
    tables = {"se": [], "bo": [], "sim": []}
    for k, panel in enumerate(panels):
        sub = spec
        if panel is not None:
            sub = _spec_for_panel(spec, panel, "se")
        if sub.axes and (panel is None or panel.theory):
            tables["se"] += run_se(sub)
            tables["bo"] += run_bo(sub)
        if spec.reps > 0 and (panel is None or panel.sim):
            ssub = _spec_for_panel(spec, panel, "sim") if panel is not None else spec
            tables["sim"] += run_sim(ssub)
    stem = spec.out.rsplit(".", 1)[0] if spec.out else default_out(spec).rsplit(".", 1)[0]
    written = {}
    for name, rows in tables.items():
        if rows:
            path = f"{stem}-{name}.{spec.fmt}"
            write_table(path, rows, name, spec.fmt)
            written[name] = path
            print(path)
            if _failed(rows):
                status = 1
    fig = spec.plot or f"{stem}.svg"
    plotting.render(fig, _panels_for_plot(spec, {k: read_table(p) for k, p in written.items()}))
    print(fig)
    return status


def _spec_for_panel(spec: RunSpec, panel, which):
    grid = panel.sim if which == "sim" else panel.theory
    # explicit grid flags still win over the preset
    flagged = dict((n, v) for n, v in spec.axes if n in spec.explicit_axes)
    axes = [(n, flagged.get(n, list(grid.get(n, [])))) for n in AXIS_NAMES if n in grid or n in flagged]
    return RunSpec(**{**spec.__dict__, "axes": axes, "data": panel.data.with_(d=panel.d),
                      "command": which})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
        return run(spec)
    except (UsageError, ConfigError, ParameterError, OSError) as exc:
        print(f"gcnsbm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
