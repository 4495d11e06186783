"""Shared types, losses and sampling for the GCN / attributed-SBM toolkit."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

SQRT2 = math.sqrt(2.0)


class ParameterError(ValueError):
    """Invalid model or learner parameters."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


class Model(str, enum.Enum):
    CSBM = "csbm"
    GLM_SBM = "glm_sbm"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        if key in ("glmsbm", "glm"):
            key = "glm_sbm"
        try:
            return cls(key)
        except ValueError:
            raise ParameterError(f"unknown model {value!r}; expected csbm or glm_sbm") from None


class Loss(str, enum.Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    HINGE = "hinge"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"square": "quadratic", "ridge": "quadratic", "svm": "hinge"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ParameterError(f"unknown loss {value!r}") from None


@dataclass(frozen=True)
class DataParams:
    """Generative-model parameters.

    ``alpha`` is N/M, ``lam`` the graph snr, ``mu`` the feature snr (CSBM
    only), ``rho`` the train fraction, ``rho_test`` the test fraction
    (defaults to ``1 - rho``) and ``d`` the average degree used by the
    finite-size simulator.
    """

    model: Model = Model.CSBM
    alpha: float = 4.0
    lam: float = 1.0
    mu: float = 0.0
    rho: float = 0.1
    rho_test: float | None = None
    d: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "model", Model.parse(self.model))
        if self.model is Model.GLM_SBM and self.mu != 0.0:
            object.__setattr__(self, "mu", 0.0)
        if self.rho_test is None:
            object.__setattr__(self, "rho_test", 1.0 - self.rho)
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.rho <= 1.0:
            raise ParameterError(f"rho must lie in (0, 1], got {self.rho}")
        if self.rho_test < 0 or self.rho + self.rho_test > 1.0 + 1e-12:
            raise ParameterError(f"rho + rho_test must not exceed 1 (rho={self.rho}, rho_test={self.rho_test})")
        if self.mu < 0:
            raise ParameterError(f"mu must be nonnegative, got {self.mu}")
        if not self.d > 0:
            raise ParameterError(f"d must be positive, got {self.d}")

    def with_(self, **kw) -> DataParams:
        if "rho" in kw and "rho_test" not in kw:
            kw["rho_test"] = None
        return replace(self, **kw)


@dataclass(frozen=True)
class GcnParams:
    loss: Loss = Loss.QUADRATIC
    r: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss.parse(self.loss))
        if not self.r > 0:
            raise ParameterError(f"regularization r must be positive, got {self.r}")

    def with_(self, **kw) -> GcnParams:
        return replace(self, **kw)


ORDER_FIELDS = (
    "m_w", "m_sigma", "Q_w", "Q_sigma", "V_w", "V_sigma",
    "mhat_w", "mhat_sigma", "Qhat_w", "Qhat_sigma", "Vhat_w", "Vhat_sigma",
)


@dataclass(frozen=True)
class OrderParams:
    m_w: float
    m_sigma: float
    Q_w: float
    Q_sigma: float
    V_w: float
    V_sigma: float
    mhat_w: float
    mhat_sigma: float
    Qhat_w: float
    Qhat_sigma: float
    Vhat_w: float
    Vhat_sigma: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in ORDER_FIELDS])

    def theta_block(self) -> np.ndarray:
        return self.as_array()[:6]

    @classmethod
    def from_array(cls, values) -> OrderParams:
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ORDER_FIELDS}

    def with_(self, **kw) -> OrderParams:
        return replace(self, **kw)

    def is_admissible(self) -> bool:
        return (self.Q_w >= 0 and self.Q_sigma >= 0 and self.V_w > 0 and self.V_sigma > 0
                and self.Qhat_w >= 0 and self.Qhat_sigma >= 0)


@dataclass(frozen=True)
class Metrics:
    e_train: float
    e_test: float
    acc_train: float
    acc_test: float

    def as_dict(self) -> dict:
        return {"e_train": self.e_train, "e_test": self.e_test,
                "acc_train": self.acc_train, "acc_test": self.acc_test}


# losses -------------------------------------------------------------------

def loss_eval(loss, x):
    """Evaluate the scalar loss l(x) elementwise."""
    loss = Loss.parse(loss)
    x = np.asarray(x, dtype=float)
    if loss is Loss.QUADRATIC:
        out = 0.5 * (1.0 - x) ** 2
    elif loss is Loss.LOGISTIC:
        out = np.logaddexp(0.0, -x)
    else:
        out = np.maximum(0.0, 1.0 - x)
    return out if out.ndim else float(out)


def loss_grad(loss, x):
    """Derivative l'(x); for hinge the left derivative at the kink."""
    loss = Loss.parse(loss)
    x = np.asarray(x, dtype=float)
    if loss is Loss.QUADRATIC:
        return x - 1.0
    if loss is Loss.LOGISTIC:
        return -special.expit(-x)
    return np.where(x < 1.0, -1.0, 0.0)


def sign(x):
    """Sign with the convention sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def erf(x):
    return special.erf(x)


def snr_total(p: DataParams) -> float:
    """Total signal-to-noise ratio; the detectability threshold sits at 1."""
    if p.model is Model.CSBM:
        return p.lam ** 2 + p.mu ** 2 / p.alpha
    return p.lam ** 2 * (1.0 + 4.0 * p.alpha / math.pi ** 2)


def effective_feature_snr(p: DataParams) -> float:
    """mu for the CSBM, 2*alpha/pi for the GLM-SBM."""
    if p.model is Model.CSBM:
        return p.mu
    return 2.0 * p.alpha / math.pi


# Monte-Carlo samples ------------------------------------------------------

def make_rng(seed) -> np.random.Generator:
    """Philox-4x64 counter-based generator; streams are platform independent."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True, eq=False)
class McSampleSet:
    """Standard Gaussian triples (xi, zeta, chi) plus a uniform label stream.

    The set is drawn once per solve and reused by every fixed-point iteration.
    """

    xi: np.ndarray
    zeta: np.ndarray
    chi: np.ndarray
    uniform: np.ndarray
    seed: int
    count: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "count", int(self.xi.shape[0]))
        for arr in (self.xi, self.zeta, self.chi, self.uniform):
            arr.setflags(write=False)

    def chunks(self, size):
        for start in range(0, self.count, size):
            sl = slice(start, start + size)
            yield self.xi[sl], self.zeta[sl], self.chi[sl]


def sample_mc(count: int, seed: int) -> McSampleSet:
    if count < 1:
        raise ParameterError("count must be at least 1")
    rng = make_rng(seed)
    gauss = rng.standard_normal((3, count))
    uniform = rng.random(count)
    return McSampleSet(np.ascontiguousarray(gauss[0]), np.ascontiguousarray(gauss[1]),
                       np.ascontiguousarray(gauss[2]), uniform, int(seed))
