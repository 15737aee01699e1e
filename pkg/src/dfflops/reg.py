"""Sparsity regularizers for learned term vectors, with analytic gradients.

Two losses over a batch of N vectors r_i indexed by term t:

    batch-mean loss:         L = sum_t (mean_i r_it)^2
    frequency-scaled loss:   L = sum_t (w_t * mean_i r_it)^2

The per-term scale w_t in [0, 1] comes from a generalized-logistic activation
applied to the term's estimated document-frequency ratio, so terms that show
up in many documents are penalized hard while rare terms are left alone.
Setting every w_t = 1 recovers the plain batch-mean loss exactly.

Both losses are quadratic forms, so the gradients are closed-form:

    dL/dr_jt = 2 * w_t^2 / N^2 * sum_i r_it      (identical for every j)

No autodiff framework is used anywhere in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DfTable, DocBatch

# exp() overflow threshold for float64; beyond this the logistic is exactly 0/1
_EXP_MAX = 700.0
# above this, log(expm1(u)) == u to double precision
_EXPM1_LOG_CUTOFF = 40.0


@dataclass(frozen=True)
class ActivationParams:
    """Shape of the penalty curve over document-frequency ratios.

    `alpha` is the soft cutoff: ratios above it are heavily penalized, ratios
    below only weakly (the curve passes through 0.5 exactly at x = alpha).
    `beta` sets how steep the transition is.
    """

    alpha: float = 0.1
    beta: float = 10.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")


def activ_array(x: np.ndarray, params: ActivationParams) -> np.ndarray:
    """Vectorized generalized-logistic activation 1 / (1 + (x^log_a(2) - 1)^b).

    Defined on [0, 1].  The endpoints are pinned to the limit values
    activ(0) = 0 and activ(1) = 1; interior values are computed in log space
    so extreme alpha/beta combinations cannot overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("activation input must lie in [0, 1]")
    exponent = math.log(2.0) / math.log(params.alpha)  # negative for alpha < 1

    out = np.empty_like(x)
    zero = x == 0.0
    one = x == 1.0
    mid = ~(zero | one)
    out[zero] = 0.0
    out[one] = 1.0

    if np.any(mid):
        # log_u = log(x^exponent) > 0 on (0, 1)
        log_u = exponent * np.log(x[mid])
        # d = beta * log(x^exponent - 1), stable for both tiny and huge x^exponent
        small = log_u <= _EXPM1_LOG_CUTOFF
        d = np.empty_like(log_u)
        d[small] = params.beta * np.log(np.expm1(log_u[small]))
        d[~small] = params.beta * log_u[~small]
        vals = np.empty_like(d)
        hi = d > _EXP_MAX
        lo = d < -_EXP_MAX
        rest = ~(hi | lo)
        vals[hi] = 0.0
        vals[lo] = 1.0
        vals[rest] = 1.0 / (1.0 + np.exp(d[rest]))
        out[mid] = vals
    return out


def activ(x: float, params: ActivationParams) -> float:
    """Scalar activation; see `activ_array`."""
    return float(activ_array(np.array([x]), params)[0])


@dataclass(frozen=True)
class PenaltyWeights:
    """Per-term loss scales w_t in [0, 1], one per vocabulary term."""

    w: np.ndarray

    def __post_init__(self):
        if self.w.ndim != 1:
            raise ValueError("weights must be a 1-d array")
        if np.any(self.w < 0.0) or np.any(self.w > 1.0):
            raise ValueError("penalty weights must lie in [0, 1]")
        self.w.setflags(write=False)

    @classmethod
    def ones(cls, vocab_size: int) -> "PenaltyWeights":
        return cls(np.ones(vocab_size, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.w)


def penalty_weights(df: DfTable, params: ActivationParams) -> PenaltyWeights:
    """Map estimated DF ratios through the activation: w_t = activ(DF_t / |C|).

    Terms never seen active (DF_t = 0) get w_t = 0, i.e. no penalty at all.
    """
    return PenaltyWeights(activ_array(df.ratios(), params))


@dataclass(frozen=True)
class RegResult:
    """Loss value plus its gradient.

    `grad_per_term[t]` is dL/dr_jt, which for these batch-mean quadratics is
    the same for every vector j in the batch; terms with zero batch mean have
    zero gradient.
    """

    loss: float
    grad_per_term: np.ndarray

    def grad_entry(self, term_id: int) -> float:
        return float(self.grad_per_term[term_id])


def mean_penalty_kernel(
    means: np.ndarray, batch_size: int, weights: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Shared kernel: loss and per-term gradient from the batch means.

    means[t] = (1/N) sum_i r_it.  Returns (sum_t (w_t m_t)^2, g) with
    g[t] = 2 w_t^2 m_t / N.  `weights=None` means all ones.
    """
    if weights is None:
        scaled = means
        w2 = None
    else:
        scaled = weights * means
        w2 = weights * weights
    loss = float(np.dot(scaled, scaled))
    grad = (2.0 / batch_size) * (means if w2 is None else w2 * means)
    return loss, grad


def _batch_means(batch: DocBatch) -> np.ndarray:
    means = np.zeros(batch.vocab_size, dtype=np.float64)
    for vec in batch.vectors:
        means[vec.term_ids] += vec.weights
    means /= len(batch)
    return means


def flops_loss(batch: DocBatch) -> RegResult:
    """Unweighted batch-mean loss: sum over terms of the squared batch mean."""
    loss, grad = mean_penalty_kernel(_batch_means(batch), len(batch))
    return RegResult(loss=loss, grad_per_term=grad)


def df_flops_loss(batch: DocBatch, weights: PenaltyWeights) -> RegResult:
    """Frequency-scaled loss: each term's batch mean is scaled by w_t first."""
    if len(weights) != batch.vocab_size:
        raise ValueError(
            f"got {len(weights)} penalty weights for vocabulary of size {batch.vocab_size}"
        )
    loss, grad = mean_penalty_kernel(_batch_means(batch), len(batch), weights.w)
    return RegResult(loss=loss, grad_per_term=grad)


@dataclass(frozen=True)
class LambdaSchedule:
    """Quadratic warmup of the regularization coefficient."""

    peak_lambda: float
    warmup_steps: int

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")


def lambda_at(step: int, schedule: LambdaSchedule) -> float:
    """lambda(s) = peak * min(1, (s / warmup)^2)."""
    frac = min(1.0, step / schedule.warmup_steps)
    return schedule.peak_lambda * frac * frac
