"""Entropy-regularized classification losses and their analytic gradients.

Two losses extend standard cross entropy CE1(p, p_hat) = -sum p log p_hat:

  mixed entropy:    total = beta1 * CE1 + beta2 * CE2,
                    CE2(p, p_hat) = -sum p_hat log p  (roles swapped),
  minimum entropy:  total = beta1 * CE1 + beta2 * H(p_hat),
                    H(q) = -sum q log q.

CE2 decomposes as KL(p_hat || p) + H(p_hat), so both variants push the
predicted distribution toward low entropy; CE2 additionally re-aligns it
with the target under the swapped weighting.

The regularizer weights beta1, beta2 and the logarithm base b are trainable:
each is driven by an unconstrained raw parameter theta through softplus
(beta_i = softplus(theta_i) >= 0, ln b = softplus(theta_base) > 0, so b > 1
and the 1/ln b scale factor never flips sign). beta1 defaults to a hard 1.0
so the cross-entropy anchor cannot collapse to zero; a hard-zero switch on
beta2 allows exact cross-entropy recovery, which softplus alone cannot reach.

All values are double precision. Every function is pure and safe to call
concurrently; class-index summation order is fixed, so results are
bit-reproducible on one platform.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateTargetError, InvalidInputError

# Floor applied to any probability inside a log. Keeps saturated softmax
# outputs and materialized targets finite while perturbing values far below
# every stated tolerance.
LOG_FLOOR = 1e-12

PROB_SUM_TOL = 1e-9


def softplus(x: float) -> float:
    """ln(1 + e^x), overflow-safe for any float."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def inv_softplus(y: float) -> float:
    """The x with softplus(x) = y, for y > 0."""
    if y <= 0.0:
        raise InvalidInputError(f"softplus is strictly positive, cannot invert {y!r}")
    return y + math.log(-math.expm1(-y))


def sigmoid(x: float) -> float:
    """d softplus / dx."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# Raw value giving softplus(theta) = 1: beta = 1, or ln b = 1 (b = e).
THETA_UNIT = inv_softplus(1.0)


class Beta1Mode(Enum):
    FIXED = "fixed"  # beta1 pinned to exactly 1.0, no gradient
    LEARNABLE = "learnable"


class LossKind(Enum):
    CE = "ce"
    MIX = "mix"
    MIN = "min"


@dataclass(frozen=True)
class ProbVector:
    """A discrete distribution over K >= 2 classes, validated on construction."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] < 2:
            raise InvalidInputError(f"need a 1-d vector with K >= 2, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("probabilities must be finite")
        if np.any(p < 0.0):
            raise InvalidInputError("probabilities must be non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise InvalidInputError(f"probabilities sum to {total!r}, not 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class SmoothedTarget:
    """A one-hot target mixed with epsilon of the uniform distribution.

    Materializes to (1 - eps) + eps/K at class_index and eps/K elsewhere.
    eps > 0 is required wherever log p(y|x) is evaluated (swapped cross
    entropy); eps = 0 is a plain one-hot target.
    """

    class_index: int
    epsilon: float
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidInputError(f"need K >= 2 classes, got {self.num_classes}")
        if not 0 <= self.class_index < self.num_classes:
            raise InvalidInputError(
                f"class_index {self.class_index} outside [0, {self.num_classes})"
            )
        if not 0.0 <= self.epsilon < 1.0:
            raise InvalidInputError(f"epsilon {self.epsilon!r} outside [0, 1)")

    def materialize(self) -> ProbVector:
        return ProbVector(
            smoothed_rows(np.array([self.class_index]), self.num_classes, self.epsilon)[0]
        )


@dataclass(frozen=True)
class LossParams:
    """Raw (unconstrained) loss-head parameters and their constrained reads."""

    theta_beta1: float = THETA_UNIT
    theta_beta2: float = THETA_UNIT
    theta_base: float = THETA_UNIT
    beta1_mode: Beta1Mode = Beta1Mode.FIXED
    beta2_enabled: bool = True  # hard-zero switch: False -> beta2 == 0 exactly

    @property
    def beta1(self) -> float:
        if self.beta1_mode is Beta1Mode.FIXED:
            return 1.0
        return softplus(self.theta_beta1)

    @property
    def beta2(self) -> float:
        return softplus(self.theta_beta2) if self.beta2_enabled else 0.0

    @property
    def ln_base(self) -> float:
        return softplus(self.theta_base)

    @property
    def base(self) -> float:
        return math.exp(self.ln_base)


@dataclass(frozen=True)
class LossValue:
    """Scaled total plus the decomposition components it was assembled from.

    components keys: ce1, ce2, entropy_hat, kl_p, kl_phat; all divided by
    ln_base like the total. They satisfy ce1 = kl_p + H(target) and
    ce2 = kl_phat + entropy_hat.
    """

    total: float
    components: dict


@dataclass(frozen=True)
class LossGrads:
    """Partials of a loss total w.r.t. logits and the raw head parameters."""

    grad_logits: np.ndarray
    grad_theta_beta1: float
    grad_theta_beta2: float
    grad_theta_base: float


# ---------------------------------------------------------------------------
# distribution-level operations
# ---------------------------------------------------------------------------


def _as_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise InvalidInputError(f"logits must be a 1-d vector with K >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    return z


def _check_ln_base(ln_base: float) -> float:
    ln_base = float(ln_base)
    if not (math.isfinite(ln_base) and ln_base > 0.0):
        raise InvalidInputError(f"ln_base must be positive and finite, got {ln_base!r}")
    return ln_base


def softmax(logits) -> ProbVector:
    """exp(z - max z) normalized; no overflow for logit magnitudes up to ~1e4."""
    z = _as_logits(logits)
    e = np.exp(z - z.max())
    return ProbVector(e / e.sum())


def entropy(p: ProbVector, ln_base: float) -> float:
    """(-sum p_i ln p_i) / ln_base, with 0 ln 0 = 0. In [0, ln(K)/ln_base]."""
    ln_base = _check_ln_base(ln_base)
    q = p.probs
    terms = np.where(q > 0.0, q * np.log(np.maximum(q, LOG_FLOOR)), 0.0)
    return float(-terms.sum()) / ln_base


def cross_entropy(target: ProbVector, p_hat: ProbVector, ln_base: float) -> float:
    """(-sum p_i ln p_hat_i) / ln_base. >= entropy(target) by Gibbs."""
    ln_base = _check_ln_base(ln_base)
    if target.num_classes != p_hat.num_classes:
        raise InvalidInputError(
            f"dimension mismatch: target K={target.num_classes}, p_hat K={p_hat.num_classes}"
        )
    log_q = np.log(np.maximum(p_hat.probs, LOG_FLOOR))
    return float(-(target.probs * log_q).sum()) / ln_base


def swapped_cross_entropy(target: SmoothedTarget, p_hat: ProbVector, ln_base: float) -> float:
    """(-sum p_hat_i ln p_i) / ln_base, the cross entropy with roles exchanged.

    Requires target.epsilon > 0 so every ln p_i is finite.
    """
    ln_base = _check_ln_base(ln_base)
    if target.epsilon == 0.0:
        raise DegenerateTargetError(
            "swapped cross entropy on a one-hot target evaluates log 0; "
            "use a smoothed target with epsilon > 0"
        )
    if target.num_classes != p_hat.num_classes:
        raise InvalidInputError(
            f"dimension mismatch: target K={target.num_classes}, p_hat K={p_hat.num_classes}"
        )
    p = target.materialize().probs
    log_p = np.log(np.maximum(p, LOG_FLOOR))
    return float(-(p_hat.probs * log_p).sum()) / ln_base


def kl_divergence(weighting: ProbVector, other: ProbVector, ln_base: float) -> float:
    """(sum w_i ln(w_i / o_i)) / ln_base with 0 ln 0 = 0; non-negative.

    Serves both orientations: KL weighted by the target (pass it first) and
    KL weighted by the prediction.
    """
    ln_base = _check_ln_base(ln_base)
    if weighting.num_classes != other.num_classes:
        raise InvalidInputError(
            f"dimension mismatch: weighting K={weighting.num_classes}, "
            f"other K={other.num_classes}"
        )
    w = weighting.probs
    o = np.maximum(other.probs, LOG_FLOOR)
    terms = np.where(w > 0.0, w * (np.log(np.maximum(w, LOG_FLOOR)) - np.log(o)), 0.0)
    return float(terms.sum()) / ln_base


# ---------------------------------------------------------------------------
# batched kernels on logits (log-sum-exp fused, shared by forward and backward)
# ---------------------------------------------------------------------------


def smoothed_rows(labels: np.ndarray, num_classes: int, epsilon: float) -> np.ndarray:
    """(B, K) smoothed one-hot rows for integer labels."""
    b = labels.shape[0]
    p = np.full((b, num_classes), epsilon / num_classes, dtype=np.float64)
    p[np.arange(b), labels] += 1.0 - epsilon
    return p


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log softmax of a (B, K) array; finite for any finite logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_batch(logits, labels, epsilon):
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[1] < 2:
        raise InvalidInputError(f"logits must be (B, K >= 2), got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    if y.ndim != 1 or y.shape[0] != z.shape[0]:
        raise InvalidInputError(f"labels shape {y.shape} does not match logits {z.shape}")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise InvalidInputError("labels outside [0, K)")
    if not 0.0 <= epsilon < 1.0:
        raise InvalidInputError(f"epsilon {epsilon!r} outside [0, 1)")
    return z, y.astype(np.int64)


class _Terms:
    """Per-sample natural-log quantities shared by forward and backward."""

    __slots__ = ("p", "log_p", "p_hat", "log_phat", "ce1", "ce2", "ent_hat", "kl_p", "kl_phat")

    def __init__(self, logits: np.ndarray, labels: np.ndarray, epsilon: float):
        self.log_phat = log_softmax(logits)
        self.p_hat = np.exp(self.log_phat)
        self.p = smoothed_rows(labels, logits.shape[1], epsilon)
        self.log_p = np.log(np.maximum(self.p, LOG_FLOOR))
        self.ce1 = -(self.p * self.log_phat).sum(axis=1)
        self.ce2 = -(self.p_hat * self.log_p).sum(axis=1)
        self.ent_hat = -(self.p_hat * self.log_phat).sum(axis=1)
        self.kl_p = (self.p * (self.log_p - self.log_phat)).sum(axis=1)
        self.kl_phat = (self.p_hat * (self.log_phat - self.log_p)).sum(axis=1)


def _regularizer(kind: LossKind, t: _Terms):
    if kind is LossKind.MIX:
        return t.ce2
    if kind is LossKind.MIN:
        return t.ent_hat
    return None  # CE: no regularizer term


def _check_smoothing(kind: LossKind, params: LossParams, epsilon: float):
    if kind is LossKind.MIX and params.beta2 > 0.0 and epsilon == 0.0:
        raise DegenerateTargetError(
            "mixed-entropy loss with active beta2 needs a smoothed target "
            "(epsilon > 0): the swapped term evaluates log p(y|x)"
        )


def _assemble_value(t: _Terms, params: LossParams, kind: LossKind) -> LossValue:
    s = params.ln_base
    reg = _regularizer(kind, t)
    total_nat = params.beta1 * t.ce1
    if reg is not None and params.beta2 != 0.0:
        total_nat = total_nat + params.beta2 * reg
    components = {
        "ce1": float(t.ce1.mean()) / s,
        "ce2": float(t.ce2.mean()) / s,
        "entropy_hat": float(t.ent_hat.mean()) / s,
        "kl_p": float(t.kl_p.mean()) / s,
        "kl_phat": float(t.kl_phat.mean()) / s,
    }
    return LossValue(total=float(total_nat.mean()) / s, components=components)


def batch_loss(logits, labels, epsilon: float, params: LossParams, kind: LossKind) -> LossValue:
    """Batch-mean loss on (B, K) logits and integer labels."""
    z, y = _check_batch(logits, labels, epsilon)
    _check_smoothing(kind, params, epsilon)
    return _assemble_value(_Terms(z, y, epsilon), params, kind)


def batch_loss_and_grads(
    logits, labels, epsilon: float, params: LossParams, kind: LossKind
) -> tuple[LossValue, np.ndarray, float, float, float]:
    """Batch-mean loss plus gradients of it.

    Returns (value, grad_logits, grad_theta_beta1, grad_theta_beta2,
    grad_theta_base). grad_logits is (B, K) and already carries the 1/B
    batch-averaging factor.

    Gradients in natural logs, then scaled by 1/ln_base:
      d CE1 / dz = p_hat - p
      d CE2 / dz = p_hat * (-log p   - CE2)   (softmax-weighted sum rule)
      d H   / dz = p_hat * (-log p_hat - H)
      d total / d theta_beta = (term / ln b) * sigmoid(theta_beta)
      d total / d theta_base = -(total / ln b) * sigmoid(theta_base)
    """
    z, y = _check_batch(logits, labels, epsilon)
    _check_smoothing(kind, params, epsilon)
    t = _Terms(z, y, epsilon)
    value = _assemble_value(t, params, kind)

    s = params.ln_base
    b = max(z.shape[0], 1)
    reg = _regularizer(kind, t)
    beta2_active = reg is not None and params.beta2 != 0.0

    grad_nat = params.beta1 * (t.p_hat - t.p)
    if beta2_active:
        if kind is LossKind.MIX:
            d_reg = t.p_hat * (-t.log_p - t.ce2[:, None])
        else:
            d_reg = t.p_hat * (-t.log_phat - t.ent_hat[:, None])
        grad_nat = grad_nat + params.beta2 * d_reg
    grad_logits = grad_nat / (s * b)

    grad_tb1 = 0.0
    if params.beta1_mode is Beta1Mode.LEARNABLE:
        grad_tb1 = (float(t.ce1.mean()) / s) * sigmoid(params.theta_beta1)
    grad_tb2 = 0.0
    if reg is not None and params.beta2_enabled:
        grad_tb2 = (float(reg.mean()) / s) * sigmoid(params.theta_beta2)
    grad_tbase = -(value.total / s) * sigmoid(params.theta_base)

    return value, grad_logits, grad_tb1, grad_tb2, grad_tbase


# ---------------------------------------------------------------------------
# single-sample operations on logits
# ---------------------------------------------------------------------------


def _single(logits, target: SmoothedTarget):
    z = _as_logits(logits)
    if z.shape[0] != target.num_classes:
        raise InvalidInputError(
            f"dimension mismatch: logits K={z.shape[0]}, target K={target.num_classes}"
        )
    return z[None, :], np.array([target.class_index])


def mix_ent_loss(logits, target: SmoothedTarget, params: LossParams) -> LossValue:
    """beta1 * CE1 + beta2 * CE2 on one sample, scaled by 1/ln_base."""
    z, y = _single(logits, target)
    return batch_loss(z, y, target.epsilon, params, LossKind.MIX)


def min_ent_loss(logits, target: SmoothedTarget, params: LossParams) -> LossValue:
    """beta1 * CE1 + beta2 * H(softmax(logits)) on one sample, scaled by 1/ln_base."""
    z, y = _single(logits, target)
    return batch_loss(z, y, target.epsilon, params, LossKind.MIN)


def loss_backward(logits, target: SmoothedTarget, params: LossParams, which: LossKind) -> LossGrads:
    """Analytic partials of the chosen loss total for one sample."""
    z, y = _single(logits, target)
    _, grad_logits, g1, g2, gb = batch_loss_and_grads(z, y, target.epsilon, params, which)
    return LossGrads(
        grad_logits=grad_logits[0],
        grad_theta_beta1=g1,
        grad_theta_beta2=g2,
        grad_theta_base=gb,
    )
