"""Parameter sets of the figures, one preset per panel group.

Each panel lists the grid axes used for theory curves (``theory``) and for
finite-size simulations (``sim``); ``c = "cstar"`` means the self-loop is set
to the large-regularization optimum at every point.  Grids the captions do
not state are chosen to cover the plotted ranges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DataParams, ParameterError

LOSSES = ("quadratic", "logistic", "hinge")
C_FINE = [round(v, 10) for v in np.arange(0.0, 2.0001, 0.1)]
C_SIM = [0.0, 0.5, 1.0, 1.5, 2.0]
R_FIG1 = [0.01, 1.0, 100.0]


@dataclass(frozen=True)
class Panel:
    title: str
    data: DataParams
    x: str
    theory: dict
    sim: dict = field(default_factory=dict)
    n: int = 10_000
    d: float = 30.0
    reps: int = 10
    logy: bool = False
    kind: str = "accuracy"  # "accuracy", "error" (1 - Acc, log scale) or "cstar"


@dataclass(frozen=True)
class Preset:
    name: str
    panels: tuple
    needs_features: bool = False


def _search_panel(title, dp):
    axes = {"loss": list(LOSSES), "r": R_FIG1, "c": C_FINE}
    sim = {"loss": list(LOSSES), "r": R_FIG1, "c": C_SIM}
    return Panel(title, dp, "c", axes, sim)


def _rate_panel(title, dp, losses=("quadratic",), rs=(1e3,), lam=None):
    lam = lam if lam is not None else [round(v, 10) for v in np.arange(0.5, 5.0001, 0.5)]
    return Panel(title, dp, "lambda", {"loss": list(losses), "r": list(rs), "lambda": lam, "c": ["cstar"]},
                 {}, logy=True, kind="error")


CSBM = "csbm"
GLM = "glm_sbm"

PRESETS = {
    "fig1-top": Preset("fig1-top", (_search_panel(
        "CSBM, alpha=4, rho=0.1, lambda=0.5, mu=1",
        DataParams(CSBM, alpha=4, lam=0.5, mu=1, rho=0.1)),)),
    "fig1-bottom": Preset("fig1-bottom", (_search_panel(
        "CSBM, alpha=4, rho=0.1, lambda=1.5, mu=3",
        DataParams(CSBM, alpha=4, lam=1.5, mu=3, rho=0.1)),)),
    "fig2-top": Preset("fig2-top", (_search_panel(
        "GLM-SBM, alpha=4, rho=0.1, lambda=0.5",
        DataParams(GLM, alpha=4, lam=0.5, rho=0.1)),)),
    "fig2-bottom": Preset("fig2-bottom", (_search_panel(
        "GLM-SBM, alpha=4, rho=0.1, lambda=1.5",
        DataParams(GLM, alpha=4, lam=1.5, rho=0.1)),)),
    "fig3-left": Preset("fig3-left", (_rate_panel(
        "CSBM, alpha=4, mu=3, r=1e3, rho=0.1", DataParams(CSBM, alpha=4, mu=3, rho=0.1)),)),
    "fig3-right": Preset("fig3-right", (_rate_panel(
        "GLM-SBM, alpha=4, r=1e3, rho=0.1", DataParams(GLM, alpha=4, rho=0.1)),)),
    "fig4-left": Preset("fig4-left", (Panel(
        "CSBM, alpha=4, mu=3, r=1e3, rho=0.1", DataParams(CSBM, alpha=4, mu=3, rho=0.1), "lambda",
        {"loss": ["quadratic"], "r": [1e3], "lambda": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0], "c": C_FINE},
        {"loss": ["quadratic"], "r": [1e3], "lambda": [0.5, 1.0, 2.0, 3.0, 4.0], "c": C_FINE},
        kind="cstar"),)),
    "fig4-right": Preset("fig4-right", (Panel(
        "fashion-SBM, r=1e3, rho=0.1", DataParams(CSBM, alpha=12000 / 784, rho=0.1), "lambda",
        {}, {"loss": ["quadratic"], "r": [1e3], "lambda": [0.5, 1.0, 2.0, 3.0, 4.0], "c": C_FINE},
        n=12000, kind="cstar"),), needs_features=True),
    "fig5": Preset("fig5", (
        _search_panel("CSBM, alpha=0.7, rho=0.1, lambda=1.5, mu=3",
                      DataParams(CSBM, alpha=0.7, lam=1.5, mu=3, rho=0.1)),
        _search_panel("GLM-SBM, alpha=0.7, rho=0.1, lambda=1",
                      DataParams(GLM, alpha=0.7, lam=1.0, rho=0.1)))),
    "fig6": Preset("fig6", (
        _search_panel("CSBM, alpha=2, rho=0.1, lambda=0.7, mu=1",
                      DataParams(CSBM, alpha=2, lam=0.7, mu=1, rho=0.1)),
        _search_panel("GLM-SBM, alpha=2, rho=0.1, lambda=1",
                      DataParams(GLM, alpha=2, lam=1.0, rho=0.1)))),
    "fig7": Preset("fig7", (_rate_panel(
        "GLM-SBM, alpha=4, rho=0.1", DataParams(GLM, alpha=4, rho=0.1),
        losses=("quadratic", "logistic"), rs=(0.1, 1.0, 10.0, 1e3),
        lam=[0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),)),
    "fig8": Preset("fig8", (Panel(
        "GLM-SBM, alpha=2, lambda=1, quadratic loss", DataParams(GLM, alpha=2, lam=1.0, rho=0.1), "rho",
        {"loss": ["quadratic"], "r": [1e-2, 1.0], "c": [1.0],
         "rho": [round(v, 10) for v in np.arange(0.1, 0.9001, 0.05)]},
        {"loss": ["quadratic"], "r": [1e-6, 1e-2, 1.0], "c": [1.0],
         "rho": [0.2, 0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.7, 0.8]},
        d=5000.0, kind="error", logy=False),)),
}


def get_preset(name) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
