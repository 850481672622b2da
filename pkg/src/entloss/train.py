"""Training loop: parameter-group updates, evaluation, metrics, checkpoints.

Two parameter groups with independent learning rates: the network tensors
(lr_model, weight decay on weight matrices only) and the loss head's three
raw scalars (lr_loss_head, no decay). Plain cross entropy pins the head:
beta2 is hard-zeroed and the base stays at e.

Shuffle and dropout generators are derived per (seed, epoch), so a resumed
run replays the exact trajectory of an uninterrupted one.
"""

import csv
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import losses, net
from .data import Dataset
from .errors import (
    CheckpointCorruptError,
    CheckpointShapeError,
    CheckpointVersionError,
    DivergenceError,
    InvalidConfigError,
    InvalidInputError,
)
from .losses import Beta1Mode, LossKind, LossParams
from .seeding import SEED_DROPOUT, SEED_SHUFFLE, stream_rng


class OptimizerKind(Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerKind = OptimizerKind.ADAM
    lr_model: float = 1e-3
    lr_loss_head: float = 1e-4  # default 0.1 x lr_model: slower head stabilizes early epochs
    momentum: float = 0.9
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 1
    loss_kind: LossKind = LossKind.CE
    epsilon_smoothing: float = 0.01
    learn_beta1: bool = False
    beta2_enabled: bool = True
    beta2_init: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if self.lr_model < 0.0 or self.lr_loss_head < 0.0:
            raise InvalidConfigError("learning rates must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigError(f"momentum {self.momentum!r} outside [0, 1)")
        if len(self.adam_betas) != 2 or not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise InvalidConfigError(f"adam_betas {self.adam_betas!r} outside [0, 1)")
        if self.weight_decay < 0.0:
            raise InvalidConfigError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfigError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.epsilon_smoothing < 1.0:
            raise InvalidConfigError(
                f"epsilon_smoothing {self.epsilon_smoothing!r} outside [0, 1)"
            )
        if self.beta2_init <= 0.0:
            raise InvalidConfigError("beta2_init must be positive (use beta2_enabled=False for 0)")
        if self.seed < 0:
            raise InvalidConfigError("seed must be non-negative")


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    accuracy: float  # percent, on the held-out split
    mean_entropy: float  # nats, mean prediction entropy on the held-out split
    beta1: float
    beta2: float
    base: float
    wall_time_s: float


METRICS_HEADER = ["epoch", "train_loss", "accuracy", "mean_entropy",
                  "beta1", "beta2", "base", "wall_time_s"]

HEAD_PARAM_NAMES = ("theta_beta1", "theta_beta2", "theta_base")


def make_loss_params(cfg: TrainConfig) -> LossParams:
    """Initial head parameters: beta1 = 1, beta2 = beta2_init, base = e."""
    beta2_enabled = cfg.beta2_enabled and cfg.loss_kind is not LossKind.CE
    return LossParams(
        theta_beta1=losses.THETA_UNIT,
        theta_beta2=losses.inv_softplus(cfg.beta2_init),
        theta_base=losses.THETA_UNIT,
        beta1_mode=Beta1Mode.LEARNABLE if cfg.learn_beta1 else Beta1Mode.FIXED,
        beta2_enabled=beta2_enabled,
    )


def head_frozen(cfg: TrainConfig) -> bool:
    # CE keeps the base pinned at e; lr 0 freezes the head explicitly.
    return cfg.loss_kind is LossKind.CE or cfg.lr_loss_head == 0.0


# ---------------------------------------------------------------------------
# optimizer state and update rules
# ---------------------------------------------------------------------------


def _slot_names(kind: OptimizerKind):
    return ("m1", "m2") if kind is OptimizerKind.ADAM else ("vel",)


@dataclass
class OptState:
    kind: OptimizerKind
    t_model: int = 0
    t_head: int = 0
    model_slots: dict = field(default_factory=dict)  # tensor name -> slot -> array
    head_slots: dict = field(default_factory=dict)  # theta name -> slot -> float


def init_opt_state(kind: OptimizerKind, state: net.NetState) -> OptState:
    opt = OptState(kind=kind)
    for name, tensor in state.named_tensors():
        opt.model_slots[name] = {s: np.zeros_like(tensor) for s in _slot_names(kind)}
    for name in HEAD_PARAM_NAMES:
        opt.head_slots[name] = {s: 0.0 for s in _slot_names(kind)}
    return opt


def _update_tensor(param, grad, slots, lr, cfg: TrainConfig, t: int):
    if cfg.optimizer is OptimizerKind.SGD:
        v = slots["vel"]
        v *= cfg.momentum
        v += grad
        param -= lr * v
    else:
        b1, b2 = cfg.adam_betas
        m, v = slots["m1"], slots["m2"]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        param -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def _update_scalar(value: float, grad: float, slots: dict, lr: float,
                   cfg: TrainConfig, t: int) -> float:
    if cfg.optimizer is OptimizerKind.SGD:
        slots["vel"] = cfg.momentum * slots["vel"] + grad
        return value - lr * slots["vel"]
    b1, b2 = cfg.adam_betas
    slots["m1"] = b1 * slots["m1"] + (1.0 - b1) * grad
    slots["m2"] = b2 * slots["m2"] + (1.0 - b2) * grad * grad
    m_hat = slots["m1"] / (1.0 - b1**t)
    v_hat = slots["m2"] / (1.0 - b2**t)
    return value - lr * m_hat / (math.sqrt(v_hat) + cfg.adam_eps)


# ---------------------------------------------------------------------------
# epoch loop and evaluation
# ---------------------------------------------------------------------------


def train_epoch(net_state: net.NetState, loss_params: LossParams, opt_state: OptState,
                train_ds: Dataset, eval_ds: Dataset, cfg: TrainConfig,
                epoch: int):
    """One shuffled pass over train_ds; returns (new loss_params, MetricsRecord).

    Network tensors and optimizer state are updated in place. Metrics come
    from eval_ds in eval mode. Non-finite losses or gradients abort with
    DivergenceError.
    """
    t0 = time.perf_counter()
    n = len(train_ds)
    shuffle_rng = stream_rng(cfg.seed, SEED_SHUFFLE, epoch)
    dropout_rng = stream_rng(cfg.seed, SEED_DROPOUT, epoch)
    order = shuffle_rng.permutation(n)
    frozen = head_frozen(cfg)

    loss_sum = 0.0
    for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start : start + cfg.batch_size]
        xb = train_ds.images[idx]
        yb = train_ds.labels[idx]

        logits, cache = net.forward(net_state, xb, net.Mode.TRAIN, rng=dropout_rng)
        if not np.all(np.isfinite(logits)):
            raise DivergenceError(
                f"non-finite logits at epoch {epoch}, batch {batch_index}"
            )
        value, grad_logits, g_tb1, g_tb2, g_tbase = losses.batch_loss_and_grads(
            logits, yb, cfg.epsilon_smoothing, loss_params, cfg.loss_kind
        )
        if not math.isfinite(value.total):
            raise DivergenceError(
                f"non-finite loss {value.total!r} at epoch {epoch}, batch {batch_index}"
            )
        grads = net.backward(net_state, cache, grad_logits)

        opt_state.t_model += 1
        for i, (d_w, d_b) in enumerate(grads):
            if not (np.all(np.isfinite(d_w)) and np.all(np.isfinite(d_b))):
                raise DivergenceError(
                    f"non-finite gradient in layer {i} at epoch {epoch}, batch {batch_index}"
                )
            if cfg.weight_decay > 0.0:
                d_w = d_w + cfg.weight_decay * net_state.weights[i]
            _update_tensor(net_state.weights[i], d_w,
                           opt_state.model_slots[f"layer{i}_W"],
                           cfg.lr_model, cfg, opt_state.t_model)
            _update_tensor(net_state.biases[i], d_b,
                           opt_state.model_slots[f"layer{i}_b"],
                           cfg.lr_model, cfg, opt_state.t_model)

        if not frozen:
            head_grads = {"theta_beta1": g_tb1, "theta_beta2": g_tb2, "theta_base": g_tbase}
            if not all(math.isfinite(g) for g in head_grads.values()):
                raise DivergenceError(
                    f"non-finite head gradient at epoch {epoch}, batch {batch_index}"
                )
            opt_state.t_head += 1
            updated = {
                name: _update_scalar(getattr(loss_params, name), head_grads[name],
                                     opt_state.head_slots[name], cfg.lr_loss_head,
                                     cfg, opt_state.t_head)
                for name in HEAD_PARAM_NAMES
            }
            loss_params = replace(loss_params, **updated)

        loss_sum += value.total * len(idx)

    accuracy, mean_entropy = evaluate(net_state, eval_ds)
    record = MetricsRecord(
        epoch=epoch,
        train_loss=loss_sum / n,
        accuracy=accuracy,
        mean_entropy=mean_entropy,
        beta1=loss_params.beta1,
        beta2=loss_params.beta2,
        base=loss_params.base,
        wall_time_s=time.perf_counter() - t0,
    )
    return loss_params, record


def evaluate(net_state: net.NetState, dataset: Dataset, batch_size: int = 1024):
    """(accuracy %, mean prediction entropy in nats) on a dataset, eval mode."""
    n = len(dataset)
    if n == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    correct = 0
    entropy_sum = 0.0
    for start in range(0, n, batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        logits = net.forward(net_state, x, net.Mode.EVAL)
        correct += int((logits.argmax(axis=1) == y).sum())
        log_p = losses.log_softmax(logits)
        entropy_sum += float(-(np.exp(log_p) * log_p).sum())
    return 100.0 * correct / n, entropy_sum / n


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------


def write_metrics_header(path):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerow(METRICS_HEADER)


def append_metrics(path, rec: MetricsRecord):
    with open(path, "a", newline="") as fh:
        csv.writer(fh).writerow([
            rec.epoch, repr(rec.train_loss), repr(rec.accuracy), repr(rec.mean_entropy),
            repr(rec.beta1), repr(rec.beta2), repr(rec.base), repr(rec.wall_time_s),
        ])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != METRICS_HEADER:
        raise InvalidInputError(f"{path} is not a metrics CSV")
    return [
        MetricsRecord(int(r[0]), *(float(v) for v in r[1:]))
        for r in rows[1:]
    ]


# ---------------------------------------------------------------------------
# checkpoints: manifest.txt plus one little-endian f64 file per tensor
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass
class CheckpointBundle:
    net_state: net.NetState
    loss_params: LossParams
    opt_state: OptState
    epoch: int
    train_seed: int


def _all_tensors(net_state: net.NetState, opt_state: OptState):
    """All (name, array) pairs: model tensors then their optimizer slots."""
    out = list(net_state.named_tensors())
    for name, _ in net_state.named_tensors():
        for slot, arr in opt_state.model_slots[name].items():
            out.append((f"{name}.{slot}", arr))
    return out


def checkpoint_save(net_state: net.NetState, loss_params: LossParams,
                    opt_state: OptState, epoch: int, path, train_seed: int = 0):
    """Write a bit-exact resumable snapshot into directory `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfg = net_state.config
    tensors = _all_tensors(net_state, opt_state)

    lines = [
        f"format_version={CHECKPOINT_VERSION}",
        f"net.input_dim={cfg.input_dim}",
        "net.hidden_dims=" + ",".join(str(h) for h in cfg.hidden_dims),
        f"net.num_classes={cfg.num_classes}",
        f"net.dropout_rate={cfg.dropout_rate!r}",
        f"net.seed={cfg.seed}",
        f"train_seed={train_seed}",
        f"epoch={epoch}",
        f"loss.theta_beta1={loss_params.theta_beta1!r}",
        f"loss.theta_beta2={loss_params.theta_beta2!r}",
        f"loss.theta_base={loss_params.theta_base!r}",
        f"loss.beta1_mode={loss_params.beta1_mode.value}",
        f"loss.beta2_enabled={str(loss_params.beta2_enabled).lower()}",
        f"opt.kind={opt_state.kind.value}",
        f"opt.t_model={opt_state.t_model}",
        f"opt.t_head={opt_state.t_head}",
    ]
    for name, slots in opt_state.head_slots.items():
        for slot, value in slots.items():
            lines.append(f"opt.head.{name}.{slot}={value!r}")
    lines.append(f"tensor_count={len(tensors)}")
    for i, (name, arr) in enumerate(tensors):
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor.{i}={name};{shape}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")

    for name, arr in tensors:
        (path / f"{name}.f64").write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _parse_manifest(path: Path) -> dict:
    try:
        text = (path / "manifest.txt").read_text()
    except OSError as exc:
        raise CheckpointCorruptError(f"cannot read manifest: {exc}") from exc
    entries = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointCorruptError(f"malformed manifest line: {line!r}")
        key, _, value = line.partition("=")
        entries[key] = value
    return entries


def checkpoint_load(path) -> CheckpointBundle:
    """Rebuild (net state, loss params, optimizer state, epoch) from `path`."""
    path = Path(path)
    m = _parse_manifest(path)
    try:
        version = int(m["format_version"])
    except (KeyError, ValueError) as exc:
        raise CheckpointCorruptError("manifest missing format_version") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {version}, this build reads {CHECKPOINT_VERSION}"
        )
    try:
        hidden = tuple(int(h) for h in m["net.hidden_dims"].split(",") if h)
        cfg = net.NetConfig(
            input_dim=int(m["net.input_dim"]),
            hidden_dims=hidden,
            num_classes=int(m["net.num_classes"]),
            dropout_rate=float(m["net.dropout_rate"]),
            seed=int(m["net.seed"]),
        )
        epoch = int(m["epoch"])
        train_seed = int(m["train_seed"])
        loss_params = LossParams(
            theta_beta1=float(m["loss.theta_beta1"]),
            theta_beta2=float(m["loss.theta_beta2"]),
            theta_base=float(m["loss.theta_base"]),
            beta1_mode=Beta1Mode(m["loss.beta1_mode"]),
            beta2_enabled=m["loss.beta2_enabled"] == "true",
        )
        opt_kind = OptimizerKind(m["opt.kind"])
        t_model = int(m["opt.t_model"])
        t_head = int(m["opt.t_head"])
        tensor_count = int(m["tensor_count"])
        declared = []
        for i in range(tensor_count):
            name, _, shape = m[f"tensor.{i}"].partition(";")
            declared.append((name, tuple(int(s) for s in shape.split(",") if s)))
    except (KeyError, ValueError) as exc:
        raise CheckpointCorruptError(f"manifest incomplete or malformed: {exc}") from exc

    arrays = {}
    for name, shape in declared:
        file = path / f"{name}.f64"
        if not file.exists():
            raise CheckpointCorruptError(f"tensor file missing: {file.name}")
        raw = file.read_bytes()
        expected = 8 * math.prod(shape) if shape else 8
        if len(raw) != expected:
            raise CheckpointShapeError(
                f"{file.name}: {len(raw)} bytes, shape {shape} needs {expected}"
            )
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    state = net.init(cfg)  # shapes only; every tensor is overwritten below
    slot_names = _slot_names(opt_kind)
    opt = OptState(kind=opt_kind, t_model=t_model, t_head=t_head)
    for name, tensor in state.named_tensors():
        if name not in arrays:
            raise CheckpointCorruptError(f"manifest lacks tensor {name}")
        if arrays[name].shape != tensor.shape:
            raise CheckpointShapeError(
                f"{name}: checkpoint shape {arrays[name].shape}, config wants {tensor.shape}"
            )
        tensor[...] = arrays[name]
        opt.model_slots[name] = {}
        for slot in slot_names:
            key = f"{name}.{slot}"
            if key not in arrays:
                raise CheckpointCorruptError(f"manifest lacks optimizer slot {key}")
            if arrays[key].shape != tensor.shape:
                raise CheckpointShapeError(f"{key}: shape {arrays[key].shape}")
            opt.model_slots[name][slot] = arrays[key]
    expected_names = {n for n, _ in state.named_tensors()}
    expected_names |= {f"{n}.{s}" for n, _ in state.named_tensors() for s in slot_names}
    if {n for n, _ in declared} != expected_names:
        raise CheckpointCorruptError("manifest tensor list does not match the network")

    for name in HEAD_PARAM_NAMES:
        opt.head_slots[name] = {}
        for slot in slot_names:
            key = f"opt.head.{name}.{slot}"
            if key not in m:
                raise CheckpointCorruptError(f"manifest lacks {key}")
            opt.head_slots[name][slot] = float(m[key])

    return CheckpointBundle(net_state=state, loss_params=loss_params, opt_state=opt,
                            epoch=epoch, train_seed=train_seed)


# ---------------------------------------------------------------------------
# multi-epoch driver
# ---------------------------------------------------------------------------


def train_run(net_cfg: net.NetConfig, cfg: TrainConfig, train_ds: Dataset,
              eval_ds: Dataset, metrics_path=None, checkpoint_dir=None,
              resume_from=None):
    """Train for cfg.epochs epochs (or the remainder, when resuming).

    Returns the list of MetricsRecord produced, one per epoch trained.
    Appends to the metrics CSV as epochs finish and writes a final
    checkpoint into checkpoint_dir/epoch_NNNN when a directory is given.
    """
    if resume_from is not None:
        bundle = checkpoint_load(resume_from)
        if bundle.net_state.config.layer_dims != net_cfg.layer_dims:
            raise CheckpointShapeError(
                f"checkpoint layers {bundle.net_state.config.layer_dims} "
                f"do not match config {net_cfg.layer_dims}"
            )
        net_state, loss_params, opt_state = (
            bundle.net_state, bundle.loss_params, bundle.opt_state,
        )
        start_epoch = bundle.epoch + 1
    else:
        net_state = net.init(net_cfg)
        loss_params = make_loss_params(cfg)
        opt_state = init_opt_state(cfg.optimizer, net_state)
        start_epoch = 0
        if metrics_path is not None:
            write_metrics_header(metrics_path)

    records = []
    for epoch in range(start_epoch, cfg.epochs):
        loss_params, record = train_epoch(
            net_state, loss_params, opt_state, train_ds, eval_ds, cfg, epoch
        )
        records.append(record)
        if metrics_path is not None:
            append_metrics(metrics_path, record)

    if checkpoint_dir is not None and records:
        last = records[-1].epoch
        checkpoint_save(net_state, loss_params, opt_state, last,
                        Path(checkpoint_dir) / f"epoch_{last:04d}", train_seed=cfg.seed)
    return records
