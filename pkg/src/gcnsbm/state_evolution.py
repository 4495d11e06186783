"""Fixed-point solver for the order parameters of the trained GCN.

Expectations over the scalar Gaussians (xi, zeta, chi) are Monte-Carlo
averages over one sample set that is kept fixed across iterations, so the
iteration can converge exactly.  Expectations over the label y are taken by
enumerating y = +1 and y = -1 with their exact probabilities, and the weight
channel is Gaussian (l2 regularization) so its averages are closed form.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .core import (
    DataParams, GcnParams, Metrics, Model, McSampleSet, NumericalError, OrderParams,
    ParameterError, loss_eval, sample_mc,
)
from .potentials import DegeneratePotentialError, out_channel

log = logging.getLogger(__name__)

CHUNK = 1 << 16
QHAT_FLOOR = 1e-14

_N_STATS = 15
(S_Y_S, S_S2, S_XI_S, S_Y_SRES, S_SRES2, S_CHI_S, S_Y_HRES, S_HRES2, S_ZETA_H,
 S_G_Y_S, S_ETRAIN, S_ETEST, S_ACCTRAIN, S_ACCTEST, S_WEIGHT) = range(_N_STATS)


class SingularIterationError(NumericalError):
    """An update produced a non-finite value."""


class DegenerateOverlapError(NumericalError):
    """eta_w = alpha m_w^2 / Q_w reached 1 in the GLM-SBM system."""


@dataclass(frozen=True)
class SolveConfig:
    mc_count: int = 1_000_000
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 200
    damping: float = 0.0
    init: object = "default"
    workers: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterError("tol must be positive")
        if self.mc_count < 1000:
            raise ParameterError("mc_count must be at least 1000")
        if not 0.0 <= self.damping < 1.0:
            raise ParameterError("damping must lie in [0, 1)")


@dataclass(frozen=True)
class FixedPoint:
    theta: OrderParams
    iterations: int
    residual: float
    converged: bool
    flags: tuple = field(default=())


def default_init(dp: DataParams = None, gp: GcnParams = None) -> OrderParams:
    # positive overlaps keep the iteration off the uninformative symmetric point
    return OrderParams(m_w=0.1, m_sigma=0.1, Q_w=1.0, Q_sigma=1.0, V_w=1.0, V_sigma=1.0,
                       mhat_w=0.1, mhat_sigma=0.1, Qhat_w=1.0, Qhat_sigma=1.0,
                       Vhat_w=1.0, Vhat_sigma=1.0)


def random_init(seed: int) -> OrderParams:
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.05, 0.5, 4)
    q = rng.uniform(0.5, 2.0, 8)
    return OrderParams(m_w=m[0], m_sigma=m[1], Q_w=q[0], Q_sigma=q[1], V_w=q[2], V_sigma=q[3],
                       mhat_w=m[2], mhat_sigma=m[3], Qhat_w=q[4], Qhat_sigma=q[5],
                       Vhat_w=q[6], Vhat_sigma=q[7])


def large_r_init(dp: DataParams, gp: GcnParams) -> OrderParams:
    from .closed_form import large_r_stats
    return large_r_stats(dp, gp).as_order_params()


def resolve_init(init, dp, gp) -> OrderParams:
    if isinstance(init, OrderParams):
        return init
    if init in (None, "default"):
        return default_init(dp, gp)
    if init == "large_r":
        return large_r_init(dp, gp)
    if isinstance(init, str) and init.startswith("random"):
        _, _, s = init.partition(":")
        return random_init(int(s or 0))
    raise ParameterError(f"unknown init preset {init!r}")


# label law ---------------------------------------------------------------

def glm_eta(theta: OrderParams, alpha: float) -> float:
    if theta.Q_w <= 0:
        raise DegenerateOverlapError("Q_w must be positive in the GLM-SBM system")
    return alpha * theta.m_w ** 2 / theta.Q_w


def glm_label_prob(theta: OrderParams, alpha: float, chi):
    """P(y = +1 | chi) for the GLM-SBM effective output channel."""
    eta = glm_eta(theta, alpha)
    if eta >= 1.0:
        raise DegenerateOverlapError(f"eta_w = {eta:.6g} >= 1 (Q_w must exceed alpha m_w^2)")
    scale = math.sqrt(2.0 * (theta.Q_w / alpha - theta.m_w ** 2))
    return 0.5 * (1.0 + special.erf(theta.m_w * np.asarray(chi) / scale))


def glm_g(theta: OrderParams, alpha: float, chi):
    eta = glm_eta(theta, alpha)
    if eta >= 1.0:
        raise DegenerateOverlapError(f"eta_w = {eta:.6g} >= 1")
    chi = np.asarray(chi)
    return np.exp(-eta * chi ** 2 / (2.0 * (1.0 - eta))) / math.sqrt(2.0 * math.pi * (1.0 - eta) / alpha)


# per-chunk statistics ----------------------------------------------------

def _chunk_stats(theta, dp, gp, xi, zeta, chi):
    rho = dp.rho
    c, lam = gp.c, dp.lam
    mu = dp.mu if dp.model is Model.CSBM else 0.0
    glm = dp.model is Model.GLM_SBM
    if glm:
        p_plus = glm_label_prob(theta, dp.alpha, chi)
        g = glm_g(theta, dp.alpha, chi)
    out = np.zeros(_N_STATS)
    for y in (1.0, -1.0):
        if glm:
            p = p_plus if y > 0 else 1.0 - p_plus
        else:
            p = 0.5
        h1, s1, a, b = out_channel(theta, y, xi, zeta, chi, c, lam, mu, gp.loss, 1)
        h0, s0, _, _ = out_channel(theta, y, xi, zeta, chi, c, lam, mu, gp.loss, 0)
        Ps = rho * s1 + (1 - rho) * s0
        # residual of sigma about its prior mean, and of h about its prior mean
        sres1, sres0 = s1 - b, s0 - b
        hres1, hres0 = h1 - c * s1 - a, h0 - c * s0 - a
        out[S_Y_S] += np.sum(p * y * Ps)
        out[S_S2] += np.sum(p * (rho * s1 ** 2 + (1 - rho) * s0 ** 2))
        out[S_XI_S] += np.sum(p * xi * Ps)
        out[S_Y_SRES] += np.sum(p * y * (Ps - math.sqrt(mu) * y * theta.m_w))
        out[S_SRES2] += np.sum(p * (rho * sres1 ** 2 + (1 - rho) * sres0 ** 2))
        out[S_CHI_S] += np.sum(p * chi * Ps)
        out[S_Y_HRES] += np.sum(p * y * (rho * (h1 - c * s1) + (1 - rho) * (h0 - c * s0) - lam * y * theta.m_sigma))
        out[S_HRES2] += np.sum(p * (rho * hres1 ** 2 + (1 - rho) * hres0 ** 2))
        out[S_ZETA_H] += np.sum(p * zeta * (rho * (h1 - c * s1) + (1 - rho) * (h0 - c * s0)))
        if glm:
            out[S_G_Y_S] += np.sum(y * g * Ps)
        out[S_ETRAIN] += np.sum(p * loss_eval(gp.loss, y * h1))
        out[S_ETEST] += np.sum(p * loss_eval(gp.loss, y * h0))
        out[S_ACCTRAIN] += np.sum(p * (np.where(h1 >= 0, 1.0, -1.0) == y))
        out[S_ACCTEST] += np.sum(p * (np.where(h0 >= 0, 1.0, -1.0) == y))
    out[S_WEIGHT] = xi.shape[0]
    return out


def _mc_stats(theta, mc: McSampleSet, dp, gp, workers=1):
    chunks = list(mc.chunks(CHUNK))
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ch: _chunk_stats(theta, dp, gp, *ch), chunks))
    else:
        parts = [_chunk_stats(theta, dp, gp, *ch) for ch in chunks]
    # fixed sequential reduction order, independent of the worker count
    total = np.zeros(_N_STATS)
    for part in parts:
        total = total + part
    return total / mc.count


def _check(name, value):
    if not np.isfinite(value):
        raise SingularIterationError(f"non-finite update in the {name} equation")
    return float(value)


def _update(theta: OrderParams, stats, dp: DataParams, gp: GcnParams, flags: set):
    alpha, r = dp.alpha, gp.r
    mu = dp.mu if dp.model is Model.CSBM else 0.0

    curv = r + theta.Vhat_w
    if curv <= 0:
        raise SingularIterationError(f"r + Vhat_w = {curv} is not positive (V_w equation)")
    m_w = _check("m_w", theta.mhat_w / (alpha * curv))
    Q_w = _check("Q_w", (theta.Qhat_w + theta.mhat_w ** 2) / (alpha * curv ** 2))
    V_w = _check("V_w", 1.0 / (alpha * curv))

    qhs = theta.Qhat_sigma
    if qhs < QHAT_FLOOR:
        flags.add("Qhat_sigma_floored")
        qhs = QHAT_FLOOR
    m_s = _check("m_sigma", stats[S_Y_S])
    Q_s = _check("Q_sigma", stats[S_S2])
    V_s = _check("V_sigma", stats[S_XI_S] / math.sqrt(qhs))

    Vw, Vs = theta.V_w, theta.V_sigma
    if Vw <= 0 or Vs <= 0:
        raise SingularIterationError(f"V_w={Vw}, V_sigma={Vs} must be positive (hat equations)")
    qw = theta.Q_w
    if qw < QHAT_FLOOR:
        flags.add("Q_w_floored")
        qw = QHAT_FLOOR
    qs = theta.Q_sigma
    if qs < QHAT_FLOOR:
        flags.add("Q_sigma_floored")
        qs = QHAT_FLOOR
    if dp.model is Model.CSBM:
        mhat_w = math.sqrt(mu) / Vw * stats[S_Y_SRES]
        Vhat_w = (1.0 - stats[S_CHI_S] / math.sqrt(qw)) / Vw
    else:
        mhat_w = stats[S_G_Y_S] / Vw
        inner = stats[S_CHI_S] - theta.m_w / math.sqrt(qw) * stats[S_G_Y_S]
        Vhat_w = (1.0 - inner / math.sqrt(qw)) / Vw
    mhat_w = _check("mhat_w", mhat_w)
    Vhat_w = _check("Vhat_w", Vhat_w)
    Qhat_w = _check("Qhat_w", stats[S_SRES2] / Vw ** 2)
    mhat_s = _check("mhat_sigma", dp.lam / Vs * stats[S_Y_HRES])
    Qhat_s = _check("Qhat_sigma", stats[S_HRES2] / Vs ** 2)
    Vhat_s = _check("Vhat_sigma", (1.0 - stats[S_ZETA_H] / math.sqrt(qs)) / Vs)
    return OrderParams(m_w, m_s, Q_w, Q_s, V_w, V_s, mhat_w, mhat_s, Qhat_w, Qhat_s, Vhat_w, Vhat_s)


def _iterate(theta, mc, dp, gp, flags, workers=1):
    try:
        stats = _mc_stats(theta, mc, dp, gp, workers)
    except DegeneratePotentialError as exc:
        raise SingularIterationError(str(exc)) from exc
    return _update(theta, stats, dp, gp, flags)


def iterate_csbm(theta: OrderParams, mc: McSampleSet, dp: DataParams, gp: GcnParams, workers=1) -> OrderParams:
    """One parallel update of all twelve CSBM equations."""
    if dp.model is not Model.CSBM:
        raise ParameterError("iterate_csbm requires a CSBM DataParams")
    return _iterate(theta, mc, dp, gp, set(), workers)


def iterate_glmsbm(theta: OrderParams, mc: McSampleSet, dp: DataParams, gp: GcnParams, workers=1) -> OrderParams:
    """One parallel update of the GLM-SBM system (output potential at mu = 0)."""
    if dp.model is not Model.GLM_SBM:
        raise ParameterError("iterate_glmsbm requires a GLM-SBM DataParams")
    glm_eta(theta, dp.alpha)
    if glm_eta(theta, dp.alpha) >= 1.0:
        raise DegenerateOverlapError("eta_w >= 1")
    return _iterate(theta, mc, dp, gp, set(), workers)


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = np.maximum(np.abs(new), np.abs(old))
    diff = np.abs(new - old)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(diff == 0, 0.0, diff / scale)
    return float(np.max(rel))


def solve(dp: DataParams, gp: GcnParams, cfg: SolveConfig = SolveConfig(), mc: McSampleSet = None) -> FixedPoint:
    """Iterate the model's update from ``cfg.init`` until the Theta block settles.

    The residual is the sup-norm of the relative change of the six Theta
    parameters between two iterations.
    """
    if mc is None:
        mc = sample_mc(cfg.mc_count, cfg.seed)
    theta = resolve_init(cfg.init, dp, gp)
    flags = set()
    residual = math.inf
    for it in range(1, cfg.max_iter + 1):
        new = _iterate(theta, mc, dp, gp, flags, cfg.workers)
        if cfg.damping:
            new = OrderParams.from_array((1 - cfg.damping) * new.as_array() + cfg.damping * theta.as_array())
        residual = relative_change(new.theta_block(), theta.theta_block())
        theta = new
        if residual <= cfg.tol:
            return FixedPoint(theta, it, residual, True, tuple(sorted(flags)))
    log.warning("state evolution did not converge after %d iterations (residual %.3g)", cfg.max_iter, residual)
    return FixedPoint(theta, cfg.max_iter, residual, False, tuple(sorted(flags)))


def observables(fp: FixedPoint, mc: McSampleSet, dp: DataParams, gp: GcnParams, workers=1) -> Metrics:
    """Train/test errors and accuracies at a fixed point."""
    stats = _mc_stats(fp.theta, mc, dp, gp, workers)
    return Metrics(e_train=float(stats[S_ETRAIN]), e_test=float(stats[S_ETEST]),
                   acc_train=float(stats[S_ACCTRAIN]), acc_test=float(stats[S_ACCTEST]))


@dataclass(frozen=True)
class Prediction:
    fixed_point: FixedPoint
    metrics: Metrics
    mc_count: int

    @property
    def acc_test_se(self) -> float:
        a = self.metrics.acc_test
        return math.sqrt(max(a * (1 - a), 0.0) / self.mc_count)


def predict(dp: DataParams, gp: GcnParams, cfg: SolveConfig = SolveConfig(), mc: McSampleSet = None) -> Prediction:
    """Solve the fixed point and evaluate the metrics on the same samples."""
    if mc is None:
        mc = sample_mc(cfg.mc_count, cfg.seed)
    fp = solve(dp, gp, cfg, mc)
    return Prediction(fp, observables(fp, mc, dp, gp, cfg.workers), mc.count)
