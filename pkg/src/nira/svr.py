"""Epsilon-SVR fusion of the four sub-model estimates.

The dual is solved with SMO over the standard ``2n``-variable form
(alpha for the upper tube edge, alpha* for the lower one) using
second-order working-set selection.  Predictions are
``f(v) = sum_i coef_i * exp(-gamma * |x_i - s(v)|^2) + bias`` where ``s``
min-max scales each input dimension to [0, 1] using training ranges.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .blstm import blstm_forward, temporal_average
from .errors import DataError, DegenerateTargets, EmptyDataset, ModelShapeMismatch

log = logging.getLogger(__name__)

C_GRID = (1.0, 10.0, 100.0)
GAMMA_GRID = (0.01, 0.1, 1.0)
EPSILON_FRACTIONS = (0.01, 0.1)
COMPONENTS = ("v1", "alpha", "beta", "gamma")
MIN_TRAIN_VECTORS = 20
SOLVER_TOL = 1e-8
TAU = 1e-12

MAGIC = b"NIRASVRM"
VERSION = 1


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # scaled to [0, 1]
    coef: np.ndarray  # alpha - alpha*, within [-C, C]
    bias: float
    gamma: float
    C: float
    epsilon: float
    scale_min: np.ndarray
    scale_max: np.ndarray
    components: tuple = COMPONENTS
    meta: dict = field(default_factory=dict)

    @property
    def n_inputs(self) -> int:
        return self.scale_min.size


@dataclass(frozen=True)
class EstimateVector:
    utterance_id: str
    v: tuple
    target: float

    def __post_init__(self):
        if len(self.v) != 4 or not all(np.isfinite(self.v)):
            raise ValueError(f"{self.utterance_id}: estimate vector must hold 4 finite values")


def minmax_fit(x: np.ndarray):
    lo, hi = x.min(axis=0), x.max(axis=0)
    return lo, hi


def minmax_apply(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return (x - lo) / span


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def _smo(K: np.ndarray, y: np.ndarray, C: float, epsilon: float, tol: float, max_iter: int):
    """Minimise 0.5 a'Qa + p'a subject to sign'a = 0, 0 <= a <= C."""
    n = y.size
    sign = np.r_[np.ones(n), -np.ones(n)]
    p = np.r_[epsilon - y, epsilon + y]
    idx = np.r_[np.arange(n), np.arange(n)]
    kdiag = np.diag(K)
    alpha = np.zeros(2 * n)
    grad = p.copy()

    for it in range(max_iter):
        up = ((sign > 0) & (alpha < C)) | ((sign < 0) & (alpha > 0))
        low = ((sign > 0) & (alpha > 0)) | ((sign < 0) & (alpha < C))
        score = -sign * grad
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, score, -np.inf)))
        gmax = score[i]
        gmin = float(np.min(np.where(low, score, np.inf)))
        if gmax - gmin < tol:
            break
        ki = K[idx[i], idx]
        qi = sign[i] * sign * ki
        cand = low & (score < gmax)
        b = gmax - score
        a = kdiag[idx[i]] + kdiag[idx] - 2.0 * ki
        a = np.where(a > 0, a, TAU)
        j = int(np.argmin(np.where(cand, -(b * b) / a, np.inf)))

        qj = sign[j] * sign * K[idx[j], idx]
        old_i, old_j = alpha[i], alpha[j]
        quad = max(kdiag[idx[i]] + kdiag[idx[j]] - 2.0 * K[idx[i], idx[j]], TAU)
        if sign[i] != sign[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0 and alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, diff
            elif diff <= 0 and alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0 and alpha[i] > C:
                alpha[i], alpha[j] = C, C - diff
            elif diff <= 0 and alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C and alpha[i] > C:
                alpha[i], alpha[j] = C, total - C
            elif total <= C and alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C and alpha[j] > C:
                alpha[j], alpha[i] = C, total - C
            elif total <= C and alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        grad += qi * (alpha[i] - old_i) + qj * (alpha[j] - old_j)
    else:
        log.warning("SMO stopped at max_iter=%d", max_iter)

    free = (alpha > 0) & (alpha < C)
    yg = sign * grad
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        up = ((sign > 0) & (alpha < C)) | ((sign < 0) & (alpha > 0))
        low = ((sign > 0) & (alpha > 0)) | ((sign < 0) & (alpha < C))
        ub = np.min(yg[up]) if up.any() else np.inf
        lb = np.max(yg[low]) if low.any() else -np.inf
        finite = [v for v in (ub, lb) if np.isfinite(v)]
        rho = float(np.mean(finite)) if finite else 0.0
    return alpha[:n] - alpha[n:], -rho


def fit_svr(x, y, C: float, gamma: float, epsilon: float, tol: float = SOLVER_TOL,
            max_iter: int = 200_000) -> SvrModel:
    """Solve one epsilon-SVR for fixed hyperparameters (epsilon in target units)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.size or y.size == 0:
        raise ModelShapeMismatch(f"bad training shapes {x.shape} / {y.shape}")
    lo, hi = minmax_fit(x)
    xs = minmax_apply(x, lo, hi)
    coef, bias = _smo(rbf_kernel(xs, xs, gamma), y, C, epsilon, tol, max_iter)
    keep = coef != 0.0
    return SvrModel(xs[keep], coef[keep], bias, gamma, C, epsilon, lo, hi)


def svr_predict(model: SvrModel, v) -> np.ndarray | float:
    """Predict for one 4-vector (returns float) or a ``(n, 4)`` array."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != model.n_inputs:
        raise ModelShapeMismatch(f"expected {model.n_inputs} inputs, got {v.shape[1]}")
    vs = minmax_apply(v, model.scale_min, model.scale_max)
    if model.coef.size:
        out = rbf_kernel(vs, model.support_vectors, model.gamma) @ model.coef + model.bias
    else:
        out = np.full(vs.shape[0], model.bias)
    return float(out[0]) if single else out


def kkt_residual(model: SvrModel, x, y, bound_tol: float = 1e-12) -> float:
    """Largest violation of the epsilon-SVR optimality conditions on the training set.

    With ``r = y - f(x)``: zero coefficient needs ``|r| <= eps``; a free
    coefficient needs ``r = sign(coef) * eps``; a coefficient at ``+-C``
    needs ``sign(coef) * r >= eps``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xs = minmax_apply(x, model.scale_min, model.scale_max)
    coef = np.zeros(y.size)
    for sv, c in zip(model.support_vectors, model.coef):
        hit = np.flatnonzero(np.all(xs == sv, axis=1))
        coef[hit[0]] = c
    r = y - svr_predict(model, x)
    eps = model.epsilon
    mag = np.abs(coef)
    s = np.sign(coef)
    at_bound = mag >= model.C * (1.0 - bound_tol)
    viol = np.where(
        mag == 0, np.maximum(np.abs(r) - eps, 0.0),
        np.where(at_bound, np.maximum(eps - s * r, 0.0), np.abs(s * r - eps)),
    )
    return float(viol.max()) if viol.size else 0.0


def lipschitz_bound(model: SvrModel) -> float:
    """Upper bound on ``|f(v) - f(w)| / |v - w|`` in the raw input space."""
    span = np.where(model.scale_max - model.scale_min > 0, model.scale_max - model.scale_min, 1.0)
    per_kernel = np.sqrt(2.0 * model.gamma / np.e)
    return float(np.abs(model.coef).sum() * per_kernel / span.min())


def hyper_grid(target_std: float):
    return [
        {"C": c, "gamma": g, "epsilon": f * target_std}
        for c, g, f in itertools.product(C_GRID, GAMMA_GRID, EPSILON_FRACTIONS)
    ]


def _as_arrays(data):
    x = np.array([e.v for e in data], dtype=np.float64)
    y = np.array([e.target for e in data], dtype=np.float64)
    return x, y


def svr_train(train: list[EstimateVector], validation: list[EstimateVector], grid=None):
    """Grid-search the SVR; keep the candidate with the lowest validation RMSD.

    Returns ``(model, table)`` where ``table`` lists every grid point with
    its validation RMSD.  Ties go to the earlier grid point.
    """
    if len(train) < MIN_TRAIN_VECTORS:
        raise EmptyDataset(f"need at least {MIN_TRAIN_VECTORS} training vectors, got {len(train)}")
    if not validation:
        raise EmptyDataset("empty validation set")
    x, y = _as_arrays(train)
    xv, yv = _as_arrays(validation)
    sd = float(np.std(y))
    if sd == 0.0:
        raise DegenerateTargets("training targets have zero variance")
    best, best_rmsd, table = None, np.inf, []
    for hp in grid or hyper_grid(sd):
        model = fit_svr(x, y, hp["C"], hp["gamma"], hp["epsilon"])
        rmsd = float(np.sqrt(np.mean((svr_predict(model, xv) - yv) ** 2)))
        table.append({**hp, "validation_rmsd": rmsd})
        if rmsd < best_rmsd:
            best, best_rmsd = model, rmsd
    best.meta.update({"validation_rmsd": best_rmsd, "n_train": len(train)})
    return best, table


def build_combiner_inputs(models, items) -> list[EstimateVector]:
    """Temporal-average estimates of four models for each utterance.

    ``items`` yields ``(utterance_id, load, target)`` where ``load()``
    returns the utterance's feature matrix.  Utterances whose features fail
    with a data error are skipped and logged.
    """
    if len(models) != 4:
        raise ModelShapeMismatch(f"fusion needs 4 models, got {len(models)}")
    if len({m.target for m in models}) != 1:
        raise ModelShapeMismatch("sub-models disagree on target kind")
    out = []
    for utt, load, target in items:
        try:
            fm = load()
        except DataError as exc:
            log.warning("skipping %s: %s", utt, exc)
            continue
        v = tuple(temporal_average(blstm_forward(m, fm)) for m in models)
        out.append(EstimateVector(utt, v, float(target)))
    return out


def dumps_svr(model: SvrModel) -> bytes:
    w = Writer(MAGIC, VERSION)
    w.json({"C": model.C, "gamma": model.gamma, "epsilon": model.epsilon,
            "components": list(model.components), "meta": model.meta})
    w.array(model.scale_min)
    w.array(model.scale_max)
    w.array(model.support_vectors.reshape(-1, model.n_inputs))
    w.array(model.coef)
    w.f64(model.bias)
    return w.getvalue()


def loads_svr(data: bytes) -> SvrModel:
    r = Reader(data, MAGIC)
    head = r.json()
    lo, hi = r.array(), r.array()
    sv, coef = r.array(), r.array()
    bias = r.f64()
    r.done()
    return SvrModel(sv, coef, bias, head["gamma"], head["C"], head["epsilon"], lo, hi,
                    tuple(head["components"]), head["meta"])


def save_svr(path, model: SvrModel) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps_svr(model))


def load_svr(path) -> SvrModel:
    return loads_svr(Path(path).read_bytes())
