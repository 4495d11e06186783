"""Finite-size instances of the CSBM and the GLM-SBM and ERM training of the GCN.

The GCN output is h = (1/n) (A_tilde + c sqrt(n) I) X w with the rescaled
adjacency A_tilde = (A - d/n) / sqrt(d/n (1 - d/n)).  The product A_tilde X
does not depend on c, w or the masks, so it is computed once per dataset
(block by block, the adjacency itself is stored as bytes) and every training
run only touches the n x m matrix

    Z = (A_tilde X) / n + (c / sqrt(n)) X,     h = Z w.

Training minimizes the objective scaled as

    L(w) = (1/(rho n)) sum_{i in R} l(y_i h_i) + (r/(rho n)) |w|^2 / 2

and certifies the result by the sup-norm of its gradient.  Since the
regularizer is l2, w lies in the span of the training rows of Z and the
Newton systems are solved in whichever of the two spaces is smaller.
"""

from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .core import (DataParams, GcnParams, Loss, Metrics, Model, NumericalError, ParameterError,
                   loss_eval, make_rng, sign)

ROW_BLOCK = 512
HUBER_WIDTH = 1e-4


class TrainingError(NumericalError):
    """ERM did not reach the requested gradient certificate."""

    def __init__(self, message, grad_norm):
        super().__init__(f"{message} (gradient sup-norm {grad_norm:.3g})")
        self.grad_norm = grad_norm


class IngestionError(ValueError):
    """A feature file could not be parsed or normalized."""


class AdjacencyMode(str, enum.Enum):
    BERNOULLI = "bernoulli"
    GAUSSIAN_EQUIVALENT = "gaussian_equivalent"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        if key in ("gaussian", "ge", "gaussianequivalent"):
            key = "gaussian_equivalent"
        try:
            return cls(key)
        except ValueError:
            raise ParameterError(f"unknown adjacency mode {value!r}") from None


class StepRule(str, enum.Enum):
    EXACT_RIDGE = "exact_ridge"
    FIRST_ORDER = "first_order"


@dataclass(frozen=True)
class TrainConfig:
    grad_tol: float = 1e-10
    max_steps: int = 200
    step_rule: StepRule = StepRule.FIRST_ORDER
    warm_steps: int = 100

    def __post_init__(self):
        object.__setattr__(self, "step_rule", StepRule(self.step_rule))
        if not self.grad_tol > 0:
            raise ParameterError("grad_tol must be positive")
        if self.max_steps < 1:
            raise ParameterError("max_steps must be at least 1")


@dataclass(eq=False)
class Dataset:
    n: int
    m_dim: int
    adjacency: np.ndarray
    adjacency_mode: AdjacencyMode
    features: np.ndarray
    labels: np.ndarray
    hidden_u: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray
    seed: int
    d: float
    model: Model = Model.CSBM
    symmetrize: bool = False
    _ax: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if np.intersect1d(self.train_mask, self.test_mask).size:
            raise ParameterError("train and test masks overlap")

    @property
    def adjacency_x(self) -> np.ndarray:
        """A_tilde X, computed on first use and cached."""
        if self._ax is None:
            self._ax = apply_rescaled(self, self.features)
        return self._ax

    def design(self, c) -> np.ndarray:
        """Z with h = Z w for every node."""
        return self.adjacency_x / self.n + (c / math.sqrt(self.n)) * self.features


def edge_probabilities(d, lam, n):
    """(p_in, p_out): connection probabilities for equal and opposite labels."""
    base = d / n
    shift = lam / math.sqrt(n) * math.sqrt(base * (1 - base))
    p_in, p_out = base + shift, base - shift
    if not (0 <= p_out <= 1 and 0 <= p_in <= 1):
        raise ParameterError(f"Bernoulli edge probability outside [0, 1] for d={d}, lambda={lam}, n={n}")
    return p_in, p_out


def glm_labels(features, hidden_u):
    return sign(features @ hidden_u / math.sqrt(features.shape[0]))


def mask_indices(n, rho, rho_test, rng):
    perm = rng.permutation(n)
    n_train = int(math.floor(rho * n + 1e-9))
    n_test = int(math.floor(rho_test * n + 1e-9))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_test])


def gen_dataset(dp: DataParams, n: int, mode=AdjacencyMode.BERNOULLI, seed: int = 0,
                features=None, labels=None) -> Dataset:
    """Draw one instance; ``features``/``labels`` replace the synthetic ones if given."""
    mode = AdjacencyMode.parse(mode)
    if n < 100:
        raise ParameterError("n must be at least 100")
    if mode is AdjacencyMode.BERNOULLI:
        p_in, p_out = edge_probabilities(dp.d, dp.lam, n)
    rng = make_rng(seed)
    m_dim = max(1, int(round(n / dp.alpha))) if features is None else features.shape[1]
    u = rng.standard_normal(m_dim)
    if features is not None:
        if labels is None:
            raise ParameterError("external features need labels")
        X = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=float)
        if X.shape[0] != n or y.shape != (n,):
            raise ParameterError("features/labels do not match n")
    elif dp.model is Model.CSBM:
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        X = math.sqrt(dp.mu / n) * np.outer(y, u) + rng.standard_normal((n, m_dim))
    else:
        X = rng.standard_normal((n, m_dim))
        y = glm_labels(X, u)

    if mode is AdjacencyMode.BERNOULLI:
        A = np.empty((n, n), dtype=np.uint8)
        plus = y > 0
        for start in range(0, n, ROW_BLOCK):
            blk = slice(start, start + ROW_BLOCK)
            same = plus[blk, None] == plus[None, :]
            prob = np.where(same, p_in, p_out)
            A[blk] = rng.random(prob.shape) < prob
    else:
        A = np.empty((n, n), dtype=np.float32)
        for start in range(0, n, ROW_BLOCK):
            blk = slice(start, start + ROW_BLOCK)
            noise = rng.standard_normal((A[blk].shape[0], n))
            A[blk] = dp.lam / math.sqrt(n) * np.outer(y[blk], y) + noise
    train, test = mask_indices(n, dp.rho, dp.rho_test, rng)
    return Dataset(n, m_dim, A, mode, X, y, u, train, test, int(seed), float(dp.d), dp.model)


def remask(ds: Dataset, rho, rho_test=None, seed=None) -> Dataset:
    """Same graph and features, new train/test split (keeps the cached A_tilde X)."""
    rho_test = 1.0 - rho if rho_test is None else rho_test
    if not 0 < rho <= 1 or rho + rho_test > 1 + 1e-12:
        raise ParameterError("invalid train/test fractions")
    rng = make_rng(ds.seed + 0x5EED if seed is None else seed)
    train, test = mask_indices(ds.n, rho, rho_test, rng)
    return replace(ds, train_mask=train, test_mask=test)


def symmetrized(ds: Dataset) -> Dataset:
    """Dataset whose graph operator is (A_tilde + A_tilde^T)/sqrt(2)."""
    return replace(ds, symmetrize=True, _ax=None)


def apply_rescaled(ds: Dataset, V) -> np.ndarray:
    """A_tilde @ V, row block by row block, in a fixed summation order."""
    V = np.asarray(V, dtype=float)
    vec = V.ndim == 1
    V2 = V[:, None] if vec else V
    n = ds.n
    out = np.zeros((n, V2.shape[1]))
    outT = np.zeros_like(out) if ds.symmetrize else None
    if ds.adjacency_mode is AdjacencyMode.BERNOULLI:
        p = ds.d / n
        scale = 1.0 / math.sqrt(p * (1 - p))
        col = V2.sum(axis=0)
        for start in range(0, n, ROW_BLOCK):
            blk = slice(start, start + ROW_BLOCK)
            Ab = ds.adjacency[blk].astype(float)
            out[blk] = scale * (Ab @ V2 - p * col)
            if outT is not None:
                outT += scale * (Ab.T @ V2[blk] - p * V2[blk].sum(axis=0))
    else:
        for start in range(0, n, ROW_BLOCK):
            blk = slice(start, start + ROW_BLOCK)
            Ab = ds.adjacency[blk].astype(float)
            out[blk] = Ab @ V2
            if outT is not None:
                outT += Ab.T @ V2[blk]
    if outT is not None:
        out = (out + outT) / math.sqrt(2.0)
    return out[:, 0] if vec else out


def gcn_forward(ds: Dataset, w, c) -> np.ndarray:
    """h = (1/n)(A_tilde + c sqrt(n) I) X w, as two mat-vecs."""
    w = np.asarray(w, dtype=float)
    if w.shape != (ds.m_dim,):
        raise ParameterError(f"w has shape {w.shape}, expected ({ds.m_dim},)")
    xw = ds.features @ w
    return apply_rescaled(ds, xw) / ds.n + (c / math.sqrt(ds.n)) * xw


# training -----------------------------------------------------------------

def _curvature(loss, z):
    if loss is Loss.QUADRATIC:
        return np.ones_like(z)
    if loss is Loss.LOGISTIC:
        p = 1.0 / (1.0 + np.exp(-np.abs(z)))
        return p * (1 - p)
    # Huber-smoothed hinge
    return np.where((z < 1.0) & (z > 1.0 - HUBER_WIDTH), 1.0 / HUBER_WIDTH, 0.0)


def _smooth_loss(loss, z):
    if loss is Loss.HINGE:
        t = 1.0 - z
        return np.where(t <= 0, 0.0, np.where(t < HUBER_WIDTH, t * t / (2 * HUBER_WIDTH), t - HUBER_WIDTH / 2))
    return loss_eval(loss, z)


def _smooth_grad(loss, z):
    if loss is Loss.HINGE:
        t = 1.0 - z
        return -np.clip(t / HUBER_WIDTH, 0.0, 1.0)
    if loss is Loss.QUADRATIC:
        return z - 1.0
    return -1.0 / (1.0 + np.exp(z))


class _Problem:
    """sum_i l(y_i z_i w) + r |w|^2 / 2 on the training rows."""

    def __init__(self, Z, y, r, loss, scale):
        self.Z, self.y, self.r, self.loss, self.scale = Z, y, r, loss, scale

    def value(self, w):
        return float(np.sum(_smooth_loss(self.loss, self.y * (self.Z @ w))) + 0.5 * self.r * w @ w)

    def grad(self, w):
        return self.Z.T @ (self.y * _smooth_grad(self.loss, self.y * (self.Z @ w))) + self.r * w

    def certificate(self, w):
        return float(np.max(np.abs(self.grad(w)))) / self.scale


def _newton_direction(Z, D, r, g):
    """Solve (Z^T D Z + r I) s = g in the smaller of the primal/kernel spaces."""
    k, m = Z.shape
    if m <= k:
        H = Z.T @ (D[:, None] * Z)
        H[np.diag_indices(m)] += r
        return linalg.solve(H, g, assume_a="pos")
    sq = np.sqrt(D)
    Zs = sq[:, None] * Z
    G = Zs @ Zs.T
    G[np.diag_indices(k)] += r
    inner = linalg.solve(G, Zs @ g, assume_a="pos")
    return (g - Zs.T @ inner) / r


def _accelerated(prob: _Problem, w, steps):
    """Nesterov gradient descent with backtracking and adaptive restart."""
    L = 1.0 + prob.r
    v, t = w.copy(), 1.0
    f_w = prob.value(w)
    for _ in range(steps):
        g = prob.grad(v)
        f_v = prob.value(v)
        while True:
            cand = v - g / L
            if prob.value(cand) <= f_v - 0.5 * (g @ g) / L + 1e-12 * abs(f_v):
                break
            L *= 2.0
        f_c = prob.value(cand)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        if f_c > f_w:
            v, t = w.copy(), 1.0
            continue
        v = cand + (t - 1) / t_next * (cand - w)
        w, f_w, t = cand, f_c, t_next
        L *= 0.9
    return w


def _newton(prob: _Problem, w, tc: TrainConfig, tol):
    for _ in range(tc.max_steps):
        if prob.certificate(w) <= tol:
            return w
        zm = prob.y * (prob.Z @ w)
        g = prob.grad(w)
        step = _newton_direction(prob.Z, _curvature(prob.loss, zm), prob.r, g)
        f0, slope, t = prob.value(w), float(g @ step), 1.0
        if slope <= 1e-13 * (1.0 + abs(f0)):
            # predicted decrease is below the rounding of f: take the full step
            w = w - step
            continue
        while t > 1e-12:
            cand = w - t * step
            if prob.value(cand) <= f0 - 1e-4 * t * slope:
                break
            t *= 0.5
        if t <= 1e-12:
            # no decrease representable: accept the full step and let the certificate decide
            cand = w - step
        w = cand
    return w


def _hinge_active_set(Zy, r, w, tol_scale, max_rounds=200):
    """Exact hinge ERM from a nearby point by solving the KKT system on the margin set.

    With w = Zy^T beta / r and margins m = Zy w, optimality means beta_i = 1
    for m_i < 1, beta_i = 0 for m_i > 1 and beta_i in [0, 1] with m_i = 1.
    """
    m = Zy @ w
    k = Zy.shape[0]
    beta = np.clip((1.0 - m) / HUBER_WIDTH, 0.0, 1.0)
    on = (beta > 0) & (beta < 1)
    one = beta >= 1
    for _ in range(max_rounds):
        free = np.flatnonzero(on)
        fixed = np.flatnonzero(one)
        beta = np.zeros(k)
        beta[fixed] = 1.0
        if free.size:
            Zf = Zy[free]
            G = Zf @ Zf.T / r
            rhs = 1.0 - Zf @ (Zy[fixed].T @ beta[fixed]) / r
            sol, *_ = linalg.lstsq(G, rhs, cond=1e-13)
            beta[free] = sol
        w = Zy.T @ beta / r
        m = Zy @ w
        tol = 1e-9
        changed = False
        # free multipliers leaving [0, 1] move to the matching bound
        low = on & (beta < 0)
        high = on & (beta > 1)
        if low.any() or high.any():
            on = on & ~(low | high)
            one = one | high
            changed = True
        else:
            viol_one = one & (m > 1 + tol)
            viol_zero = ~on & ~one & (m < 1 - tol)
            if viol_one.any() or viol_zero.any():
                on = on | viol_one | viol_zero
                one = one & ~viol_one
                changed = True
        if not changed:
            return w, beta
    return w, beta


def _hinge_dual_bvls(Zy, r):
    """Exact hinge ERM through its box-constrained dual, written as bounded least squares.

    The dual objective |Zy^T beta|^2 / (2r) - sum(beta) equals
    |M beta - b|^2 / 2 up to a constant with M = Zy^T / sqrt(r) and
    M^T b = 1, which needs Zy to have full row rank.
    """
    M = Zy.T / math.sqrt(r)
    b = M @ linalg.solve(M.T @ M, np.ones(Zy.shape[0]), assume_a="pos")
    res = optimize.lsq_linear(M, b, bounds=(0.0, 1.0), method="bvls", tol=1e-14)
    return Zy.T @ res.x / r


def hinge_certificate(Zy, r, w, scale, kink_tol=1e-9):
    """Sup-norm of the smallest subgradient found by fitting multipliers on the kink set."""
    m = Zy @ w
    beta = np.where(m < 1 - kink_tol, 1.0, 0.0)
    kink = np.abs(m - 1) <= kink_tol
    base = r * w - Zy[~kink].T @ beta[~kink]
    if kink.any():
        Zk = Zy[kink]
        sol, *_ = linalg.lstsq(Zk.T, base, cond=1e-13)
        sol = np.clip(sol, 0.0, 1.0)
        base = base - Zk.T @ sol
    return float(np.max(np.abs(base))) / scale


def _exact_ridge(Z, y, r):
    k, m = Z.shape
    if k < m:
        K = Z @ Z.T
        K[np.diag_indices(k)] += r
        return Z.T @ linalg.solve(K, y, assume_a="pos")
    H = Z.T @ Z
    H[np.diag_indices(m)] += r
    return linalg.solve(H, Z.T @ y, assume_a="pos")


def train_on_design(Z, y, gp: GcnParams, tc: TrainConfig, scale):
    """ERM on explicit training rows Z (shape |R| x m) and labels y."""
    loss, r = gp.loss, gp.r
    prob = _Problem(Z, y, r, loss, scale)
    if loss is Loss.QUADRATIC and tc.step_rule is StepRule.EXACT_RIDGE:
        w = _exact_ridge(Z, y, r)
        # iterative refinement against the normal equations
        for _ in range(tc.max_steps):
            if prob.certificate(w) <= tc.grad_tol:
                return w
            w = w - _newton_direction(Z, np.ones(len(y)), r, prob.grad(w))
        raise TrainingError("ridge refinement did not converge", prob.certificate(w))
    w = np.zeros(Z.shape[1])
    if tc.warm_steps:
        w = _accelerated(prob, w, tc.warm_steps)
    if loss is Loss.HINGE:
        Zy = y[:, None] * Z
        w, _ = _hinge_active_set(Zy, r, w, scale, max_rounds=tc.max_steps)
        cert = hinge_certificate(Zy, r, w, scale)
        if cert > tc.grad_tol and Zy.shape[0] <= Zy.shape[1]:
            w = _hinge_dual_bvls(Zy, r)
            cert = hinge_certificate(Zy, r, w, scale)
        if cert > tc.grad_tol:
            raise TrainingError("hinge active-set polish did not certify", cert)
        return w
    w = _newton(prob, w, tc, tc.grad_tol)
    cert = prob.certificate(w)
    if cert > tc.grad_tol:
        raise TrainingError("Newton polish did not converge", cert)
    return w


def train_gcn(ds: Dataset, gp: GcnParams, tc: TrainConfig = TrainConfig()) -> np.ndarray:
    Z = ds.design(gp.c)[ds.train_mask]
    y = ds.labels[ds.train_mask]
    scale = len(ds.train_mask)
    if scale == 0:
        raise ParameterError("empty training set")
    return train_on_design(Z, y, gp, tc, scale)


def objective(ds: Dataset, w, gp: GcnParams) -> float:
    """L(w) with the 1/(rho n) scaling."""
    h = ds.design(gp.c)[ds.train_mask] @ w
    k = len(ds.train_mask)
    return float(np.sum(loss_eval(gp.loss, ds.labels[ds.train_mask] * h)) + 0.5 * gp.r * w @ w) / k


def evaluate_outputs(h, labels, train, test, loss) -> Metrics:
    def part(idx):
        if len(idx) == 0:
            return float("nan"), float("nan")
        yh = labels[idx] * h[idx]
        return float(np.mean(loss_eval(loss, yh))), float(np.mean(sign(h[idx]) == labels[idx]))

    e_tr, a_tr = part(train)
    e_te, a_te = part(test)
    return Metrics(e_tr, e_te, a_tr, a_te)


def evaluate(ds: Dataset, w, gp: GcnParams) -> Metrics:
    h = ds.design(gp.c) @ np.asarray(w, dtype=float)
    return evaluate_outputs(h, ds.labels, ds.train_mask, ds.test_mask, gp.loss)


# seeds and aggregation ----------------------------------------------------

@dataclass(frozen=True)
class SimSummary:
    per_seed: tuple
    mean: dict
    sem: dict

    def as_rows(self):
        return [dict(seed=s, **m.as_dict()) for s, m in self.per_seed]


def summarize(per_seed) -> SimSummary:
    per_seed = tuple(per_seed)
    keys = ("e_train", "e_test", "acc_train", "acc_test")
    vals = {k: np.array([getattr(m, k) for _, m in per_seed]) for k in keys}
    mean = {k: float(v.mean()) for k, v in vals.items()}
    sem = {k: float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")
           for k, v in vals.items()}
    return SimSummary(per_seed, mean, sem)


def simulate(dp: DataParams, gps, n, seeds, mode=AdjacencyMode.BERNOULLI, tc: TrainConfig = TrainConfig(),
             workers=1):
    """Train every GcnParams in ``gps`` on one dataset per seed.

    Returns one SimSummary per entry of ``gps``.  Datasets are generated and
    consumed one seed at a time so only one adjacency is alive per worker.
    """
    gps = list(gps)

    def one(seed):
        ds = gen_dataset(dp, n, mode, seed)
        out = [evaluate(ds, train_gcn(ds, gp, tc), gp) for gp in gps]
        return out

    seeds = list(seeds)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    return [summarize([(s, res[j]) for s, res in zip(seeds, results)]) for j in range(len(gps))]


# ingestion and export -----------------------------------------------------

def _parse_numeric_rows(path, delimiter=","):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                for col, cell in enumerate(row, start=1):
                    try:
                        float(cell)
                    except ValueError:
                        raise IngestionError(f"{path}: row {lineno}, column {col}: "
                                             f"cannot parse {cell!r} as a number") from None
            if rows and len(rows[-1]) != len(rows[0]):
                raise IngestionError(f"{path}: row {lineno} has {len(rows[-1])} columns, "
                                     f"expected {len(rows[0])}")
    if not rows:
        raise IngestionError(f"{path}: no numeric rows")
    return np.array(rows)


def standardize_columns(Xhat) -> np.ndarray:
    """Zero-mean columns with squared norm n."""
    Xhat = np.asarray(Xhat, dtype=float)
    n = Xhat.shape[0]
    centered = Xhat - Xhat.mean(axis=0)
    norms = np.sqrt(np.sum(centered ** 2, axis=0))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise IngestionError(f"column(s) {list(zero + 1)} have zero variance; use epsilon > 0")
    return math.sqrt(n) * centered / norms


def ingest_features(path, epsilon=0.0, seed=0, delimiter=",", label_column=None):
    """Read a dense CSV (one node per row), add N(0, epsilon^2) noise and standardize.

    With ``label_column`` (0-based) that column is removed from the features
    and returned as +-1 labels (the larger of its two values maps to +1).
    """
    raw = _parse_numeric_rows(path, delimiter)
    labels = None
    if label_column is not None:
        col = raw[:, label_column]
        values = np.unique(col)
        if values.size != 2:
            raise IngestionError(f"label column has {values.size} distinct values, expected 2")
        labels = np.where(col == values[1], 1.0, -1.0)
        raw = np.delete(raw, label_column, axis=1)
    if epsilon:
        raw = raw + epsilon * make_rng(seed).standard_normal(raw.shape)
    X = standardize_columns(raw)
    return X if label_column is None else (X, labels)


def save_dataset(path, ds: Dataset):
    """Write a replayable .npz bundle (adjacency, features, labels, masks, mode, seed)."""
    np.savez_compressed(path, adjacency=ds.adjacency, features=ds.features, labels=ds.labels,
                        hidden_u=ds.hidden_u, train_mask=ds.train_mask, test_mask=ds.test_mask,
                        mode=np.array(ds.adjacency_mode.value), model=np.array(ds.model.value),
                        seed=np.array(ds.seed), d=np.array(ds.d), symmetrize=np.array(ds.symmetrize))


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as f:
        X = f["features"]
        return Dataset(int(X.shape[0]), int(X.shape[1]), f["adjacency"], AdjacencyMode(str(f["mode"])),
                       X, f["labels"], f["hidden_u"], f["train_mask"], f["test_mask"], int(f["seed"]),
                       float(f["d"]), Model(str(f["model"])), bool(f["symmetrize"]))
