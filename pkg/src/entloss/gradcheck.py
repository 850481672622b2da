"""Finite-difference verification suites for the loss head and the network.

Central differences with step h on each raw coordinate; a coordinate passes
when |fd - analytic| <= max(atol, rtol * max(|fd|, |analytic|)). Suites
report the maximum scaled error max |fd - g| / max(|fd|, |g|, atol/rtol),
which is <= rtol exactly when every coordinate passes, plus the worst
instance serialized for replay.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import losses, net
from .losses import Beta1Mode, LossKind, LossParams, SmoothedTarget

FD_STEP = 1e-5
HEAD_RTOL = 1e-5
HEAD_ATOL = 1e-8
COMPOSED_RTOL = 1e-4
COMPOSED_ATOL = 1e-8
DECOMP_RTOL = 1e-9


@dataclass
class SuiteReport:
    name: str
    max_error: float
    tolerance: float
    instances: int
    worst: dict  # enough detail to replay the worst coordinate

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max_rel_err={self.max_error:.3e} "
                f"tol={self.tolerance:.0e} over {self.instances} instances")


def central_diff(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar f over every coordinate of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        plus = x.copy()
        minus = x.copy()
        plus.flat[i] += step
        minus.flat[i] -= step
        grad.flat[i] = (f(plus) - f(minus)) / (2.0 * step)
    return grad


def scaled_errors(fd: np.ndarray, analytic: np.ndarray, rtol: float, atol: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), atol / rtol)
    return np.abs(fd - analytic) / denom


def _random_params(rng, kind: LossKind, learnable_beta1: bool) -> LossParams:
    return LossParams(
        theta_beta1=float(rng.normal(0.5, 0.4)),
        theta_beta2=float(rng.normal(0.3, 0.6)),
        theta_base=float(rng.normal(0.6, 0.3)),
        beta1_mode=Beta1Mode.LEARNABLE if learnable_beta1 else Beta1Mode.FIXED,
        beta2_enabled=kind is not LossKind.CE,
    )


def check_loss_head(kind: LossKind, num_classes: int, instances: int, seed: int,
                    rtol: float = HEAD_RTOL, atol: float = HEAD_ATOL,
                    perturb: float = 0.0) -> SuiteReport:
    """loss_backward vs central differences of the forward total.

    The raw coordinate vector is [logits, theta_beta1, theta_beta2,
    theta_base]. `perturb` injects a bias into the analytic gradients
    (sensitivity check of the suite itself).
    """
    rng = np.random.default_rng(seed)
    worst = {}
    max_err = 0.0
    for i in range(instances):
        logits = rng.normal(0.0, 2.0, size=num_classes)
        target = SmoothedTarget(
            class_index=int(rng.integers(num_classes)),
            epsilon=float(rng.uniform(0.005, 0.1)),
            num_classes=num_classes,
        )
        params = _random_params(rng, kind, learnable_beta1=bool(i % 2))

        def total(x):
            p = replace(params, theta_beta1=x[num_classes],
                        theta_beta2=x[num_classes + 1], theta_base=x[num_classes + 2])
            return losses.batch_loss(
                x[None, :num_classes], np.array([target.class_index]),
                target.epsilon, p, kind,
            ).total

        x0 = np.concatenate([
            logits, [params.theta_beta1, params.theta_beta2, params.theta_base]
        ])
        fd = central_diff(total, x0)
        g = losses.loss_backward(logits, target, params, kind)
        analytic = np.concatenate([
            g.grad_logits,
            [g.grad_theta_beta1, g.grad_theta_beta2, g.grad_theta_base + perturb],
        ])
        errs = scaled_errors(fd, analytic, rtol, atol)
        err = float(errs.max())
        if err > max_err:
            max_err = err
            worst = {
                "kind": kind.value, "num_classes": num_classes, "instance": i,
                "logits": logits.tolist(), "class_index": target.class_index,
                "epsilon": target.epsilon, "theta_beta1": params.theta_beta1,
                "theta_beta2": params.theta_beta2, "theta_base": params.theta_base,
                "beta1_mode": params.beta1_mode.value,
                "coordinate": int(errs.argmax()),
                "fd": float(fd[errs.argmax()]), "analytic": float(analytic[errs.argmax()]),
            }
    return SuiteReport(name=f"loss-head/{kind.value}/K={num_classes}",
                       max_error=max_err, tolerance=rtol, instances=instances, worst=worst)


def _flatten_net(state: net.NetState, params: LossParams) -> np.ndarray:
    parts = [t.ravel() for _, t in state.named_tensors()]
    parts.append(np.array([params.theta_beta1, params.theta_beta2, params.theta_base]))
    return np.concatenate(parts)


def _unflatten_net(x: np.ndarray, state: net.NetState, params: LossParams):
    clone = net.init(state.config)
    offset = 0
    for _, tensor in clone.named_tensors():
        tensor[...] = x[offset : offset + tensor.size].reshape(tensor.shape)
        offset += tensor.size
    p = replace(params, theta_beta1=x[offset], theta_beta2=x[offset + 1],
                theta_base=x[offset + 2])
    return clone, p


def check_composed(kind: LossKind, instances: int, seed: int,
                   rtol: float = COMPOSED_RTOL, atol: float = COMPOSED_ATOL,
                   perturb: float = 0.0) -> SuiteReport:
    """net.backward composed with the loss head vs finite differences.

    Small random nets (inputs <= 10, hidden <= 8, K <= 5); dropout appears
    in half the instances with the recorded masks replayed inside the
    finite-difference evaluations so the objective stays deterministic.
    """
    rng = np.random.default_rng(seed)
    worst = {}
    max_err = 0.0
    for i in range(instances):
        hidden = tuple(
            int(rng.integers(2, 9)) for _ in range(int(rng.integers(0, 3)))
        )
        use_dropout = bool(i % 2) and bool(hidden)
        cfg = net.NetConfig(
            input_dim=int(rng.integers(2, 11)),
            hidden_dims=hidden,
            num_classes=int(rng.integers(2, 6)),
            dropout_rate=0.3 if use_dropout else 0.0,
            seed=int(rng.integers(2**31)),
        )
        state = net.init(cfg)
        # Generic evaluation point: zero-init biases park dead units exactly on
        # the ReLU kink (where central differences are meaningless), so move off it.
        for b in state.biases:
            b += rng.normal(0.0, 0.5, size=b.shape)
        batch = int(rng.integers(1, 5))
        xb = rng.normal(0.0, 1.0, size=(batch, cfg.input_dim))
        yb = rng.integers(0, cfg.num_classes, size=batch)
        epsilon = float(rng.uniform(0.005, 0.1))
        params = _random_params(rng, kind, learnable_beta1=bool(i % 2))

        logits, cache = net.forward(state, xb, net.Mode.TRAIN,
                                    rng=np.random.default_rng(int(rng.integers(2**31))))
        masks = cache.masks if cfg.hidden_dims else None

        def total(x):
            st, p = _unflatten_net(x, state, params)
            out = net.forward(st, xb, net.Mode.TRAIN, masks=masks)
            return losses.batch_loss(out[0], yb, epsilon, p, kind).total

        x0 = _flatten_net(state, params)
        fd = central_diff(total, x0)

        _, grad_logits, g1, g2, gb = losses.batch_loss_and_grads(
            logits, yb, epsilon, params, kind
        )
        grads = net.backward(state, cache, grad_logits)
        parts = []
        for d_w, d_b in grads:
            parts.append(d_w.ravel())
            parts.append(d_b.ravel())
        parts.append(np.array([g1, g2, gb + perturb]))
        analytic = np.concatenate(parts)

        errs = scaled_errors(fd, analytic, rtol, atol)
        err = float(errs.max())
        if err > max_err:
            max_err = err
            worst = {
                "kind": kind.value, "instance": i, "net": {
                    "input_dim": cfg.input_dim, "hidden_dims": list(cfg.hidden_dims),
                    "num_classes": cfg.num_classes, "dropout_rate": cfg.dropout_rate,
                    "seed": cfg.seed,
                },
                "batch": batch, "epsilon": epsilon,
                "coordinate": int(errs.argmax()),
                "fd": float(fd[errs.argmax()]), "analytic": float(analytic[errs.argmax()]),
            }
    return SuiteReport(name=f"composed/{kind.value}", max_error=max_err,
                       tolerance=rtol, instances=instances, worst=worst)


def random_distribution(rng, num_classes: int) -> losses.ProbVector:
    """Strictly interior point of the simplex (all coordinates >= ~0.05/K)."""
    raw = rng.uniform(0.05, 1.0, size=num_classes)
    return losses.ProbVector(raw / raw.sum())


def check_decompositions(num_classes: int, pairs: int, seed: int,
                         rtol: float = DECOMP_RTOL) -> SuiteReport:
    """Cross entropy = KL + entropy, in both weightings, on random pairs.

    Identity one: CE(p, q) = KL(p || q) + H(p). Identity two, via smoothed
    targets: CE_swapped(t, q) = KL(q || t) + H(q), for eps in
    {0.001, 0.01, 0.1}.
    """
    rng = np.random.default_rng(seed)
    worst = {}
    max_err = 0.0
    eps_cycle = (0.001, 0.01, 0.1)
    for i in range(pairs):
        p = random_distribution(rng, num_classes)
        q = random_distribution(rng, num_classes)
        ce = losses.cross_entropy(p, q, 1.0)
        lhs_rhs = [("target-weighted", ce,
                    losses.kl_divergence(p, q, 1.0) + losses.entropy(p, 1.0))]

        eps = eps_cycle[i % 3]
        target = SmoothedTarget(class_index=int(rng.integers(num_classes)),
                                epsilon=eps, num_classes=num_classes)
        swapped = losses.swapped_cross_entropy(target, q, 1.0)
        lhs_rhs.append((
            "prediction-weighted", swapped,
            losses.kl_divergence(q, target.materialize(), 1.0) + losses.entropy(q, 1.0),
        ))

        for label, lhs, rhs in lhs_rhs:
            err = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
            if err > max_err:
                max_err = err
                worst = {"identity": label, "num_classes": num_classes, "pair": i,
                         "lhs": lhs, "rhs": rhs}
    return SuiteReport(name=f"decomposition/K={num_classes}", max_error=max_err,
                       tolerance=rtol, instances=pairs, worst=worst)


def default_suites(seed: int = 0, head_instances: int = 100,
                   composed_instances: int = 20, decomp_pairs: int = 1000,
                   perturb: float = 0.0) -> list:
    """The full battery run by the gradcheck subcommand."""
    reports = []
    for k in (2, 5, 26):
        reports.append(check_decompositions(k, decomp_pairs, seed + k))
    for kind in (LossKind.CE, LossKind.MIX, LossKind.MIN):
        for k in (2, 5, 26):
            reports.append(check_loss_head(kind, k, head_instances, seed + 7 * k,
                                           perturb=perturb))
    for kind in (LossKind.CE, LossKind.MIX, LossKind.MIN):
        reports.append(check_composed(kind, composed_instances, seed + 101,
                                      perturb=perturb))
    return reports
