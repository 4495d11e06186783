"""Static figures from saved tables: theory lines, simulation dots, Bayes-optimal dotted line.

Rendering is deterministic (fixed SVG hash salt, no timestamps) so the same
tables always give byte-identical files.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "svg.hashsalt": "gcnsbm",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
}
SERIES_KEYS = ("model", "loss", "r", "c", "lambda", "rho", "alpha", "mu")


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return v


def _series(rows, x, keys):
    groups = OrderedDict()
    for row in rows:
        key = tuple((k, row[k]) for k in keys if k in row and k != x)
        groups.setdefault(key, []).append(row)
    return groups


def _label(key):
    return ", ".join(f"{k}={v}" for k, v in key)


def _varying(rows, x):
    keys = []
    for k in SERIES_KEYS:
        if k == x or not rows or k not in rows[0]:
            continue
        if len({r[k] for r in rows}) > 1:
            keys.append(k)
    return keys


def _y(row, kind, column="acc_test"):
    v = _num(row.get(column))
    if v is None or v == "" or (isinstance(v, float) and math.isnan(v)):
        return None
    return 1.0 - v if kind == "error" else v


def cstar_points(rows, group_key="lambda"):
    """(lambda, argmax_c acc_test) pairs from a table over (lambda, c)."""
    best = OrderedDict()
    for row in rows:
        acc = _num(row.get("acc_test"))
        if not isinstance(acc, float) or math.isnan(acc):
            continue
        lam = _num(row[group_key])
        if lam not in best or acc > best[lam][1]:
            best[lam] = (_num(row["c"]), acc)
    return [(lam, c) for lam, (c, _) in best.items()]


def render(path, panels, fmt=None):
    """Draw one axis per panel.

    ``panels`` is a list of dicts with keys ``title``, ``x``, ``kind``,
    ``logy`` and the row lists ``theory``, ``sim``, ``bo`` (each may be empty).
    """
    fmt = fmt or str(path).rsplit(".", 1)[-1].lower()
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(panels), 1, figsize=(6.0, 3.6 * len(panels)), squeeze=False)
        for ax, panel in zip(axes[:, 0], panels):
            _draw_panel(ax, panel)
        fig.tight_layout()
        kwargs = {"metadata": {"Date": None}} if fmt == "svg" else {}
        if fmt == "png":
            kwargs = {"metadata": {"Software": None}, "dpi": 120}
        fig.savefig(path, format=fmt, **kwargs)
        plt.close(fig)


def _draw_panel(ax, panel):
    x, kind = panel["x"], panel.get("kind", "accuracy")
    theory, sim, bo = panel.get("theory", []), panel.get("sim", []), panel.get("bo", [])
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    if kind == "cstar":
        for i, (name, rows) in enumerate((("theory", theory), ("simulation", sim))):
            pts = cstar_points(rows)
            if pts:
                xs, cs = zip(*pts)
                style = "-" if name == "theory" else "o"
                ax.plot(xs, cs, style, color=colors[i], label=f"c* ({name})")
        if theory:
            lams = sorted({_num(r["lambda"]) for r in theory})
            ax.plot(lams, [1 / v for v in lams], ":", color="k", label="1/lambda")
        ax.set_xlabel("lambda")
        ax.set_ylabel("c*")
    else:
        keys = _varying(theory + sim, x)
        series = list(_series(theory, x, keys).items())
        sim_series = _series([r for r in sim if r.get("rep") == "mean"], x, keys)
        index = {key: i for i, (key, _) in enumerate(series)}
        for key in sim_series:
            index.setdefault(key, len(index))
        for key, rows in series:
            pts = sorted((_num(r[x]), _y(r, kind)) for r in rows if _y(r, kind) is not None)
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, "-", color=colors[index[key] % len(colors)], label=_label(key))
        for key, rows in sim_series.items():
            pts = sorted((_num(r[x]), _y(r, kind), _num(r.get("acc_test_sem", 0.0))) for r in rows
                         if _y(r, kind) is not None)
            if pts:
                xs, ys, es = zip(*pts)
                es = [0.0 if not isinstance(e, float) or math.isnan(e) else e for e in es]
                lab = None if key in dict(series) else _label(key)
                ax.errorbar(xs, ys, yerr=es, fmt="o", ms=3, capsize=2,
                            color=colors[index[key] % len(colors)], label=lab)
        if bo:
            pts = sorted((_num(r.get(x, float("nan"))), _y(r, kind, "acc_bo")) for r in bo)
            pts = [p for p in pts if p[1] is not None]
            if len({p[0] for p in pts}) > 1:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, ":", color="k", label="Bayes-optimal")
            elif pts:
                ax.axhline(pts[0][1], ls=":", color="k", label="Bayes-optimal")
        ax.set_xlabel(x)
        ax.set_ylabel("1 - Acc_test" if kind == "error" else "Acc_test")
        if panel.get("logy"):
            ax.set_yscale("log")
    ax.set_title(panel.get("title", ""))
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=6, loc="best")
