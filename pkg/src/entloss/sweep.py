"""Random-search hyperparameter sweep under successive halving.

Trials are sampled uniformly (log-uniformly for scale-free ranges) and
trained rung by rung; a trial continues past a rung only while it ranks in
the top 1/reduction_factor of the results recorded at that rung when its
promotion is decided. The deterministic mode synchronizes every rung (exact
hand-simulable promotions); the asynchronous mode decides at completion time
over a bounded worker pool, so promotions depend on completion order.

Training runs behind a small backend seam so tests can substitute a
fixed-score backend with known outcomes.
"""

import csv
import json
import math
import os
import threading
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

from . import net, train
from .data import Dataset
from .errors import DivergenceError, InvalidConfigError
from .seeding import SEED_INIT, SEED_SWEEP, derive, stream_rng


@dataclass(frozen=True)
class SearchSpace:
    """Sampling ranges; two-tuples are (low, high), batch_size is a choice set."""

    batch_size: tuple = (32, 64, 128)
    lr_model: tuple = (1e-4, 1e-1)  # log-uniform
    weight_decay: tuple = (1e-7, 1e-3)  # log-uniform
    dropout_rate: tuple = (0.0, 0.5)  # uniform
    epsilon_smoothing: tuple = (1e-3, 1e-1)  # log-uniform
    lr_loss_head_multiplier: tuple = (0.01, 1.0)  # log-uniform

    def __post_init__(self):
        for name in ("batch_size", "lr_model", "weight_decay", "dropout_rate",
                     "epsilon_smoothing", "lr_loss_head_multiplier"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.batch_size or any(b < 1 for b in self.batch_size):
            raise InvalidConfigError(f"batch_size choices invalid: {self.batch_size}")
        for name in ("lr_model", "weight_decay", "epsilon_smoothing",
                     "lr_loss_head_multiplier"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise InvalidConfigError(f"log-uniform range {name} needs 0 < low <= high")
        lo, hi = self.dropout_rate
        if not (0.0 <= lo <= hi < 1.0):
            raise InvalidConfigError(f"dropout_rate range {self.dropout_rate} outside [0, 1)")


@dataclass(frozen=True)
class TrialConfig:
    trial_id: int
    batch_size: int
    lr_model: float
    weight_decay: float
    dropout_rate: float
    epsilon_smoothing: float
    lr_loss_head_multiplier: float
    train_seed: int


class TrialStatus(Enum):
    RUNNING = "running"
    STOPPED = "stopped"
    COMPLETED = "completed"
    DIVERGED = "diverged"


@dataclass
class TrialResult:
    trial_id: int
    config: TrialConfig
    rung_accuracy: dict = field(default_factory=dict)  # budget epochs -> val accuracy %
    status: TrialStatus = TrialStatus.RUNNING
    stopped_rung: int | None = None

    def score(self):
        """Validation accuracy at the highest rung reached, or None."""
        if not self.rung_accuracy:
            return None
        return self.rung_accuracy[max(self.rung_accuracy)]


@dataclass(frozen=True)
class PromotionDecision:
    trial_id: int
    rung_index: int
    rank: int
    pool_size: int  # results recorded at this rung when the decision was made
    promoted: bool


@dataclass
class SweepResult:
    trials: list  # TrialResult, ranked best first
    rungs: list  # epoch budgets
    total_epochs_trained: int
    promotion_log: list


def _log_uniform(rng, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def sample_trial(space: SearchSpace, seed: int, trial_id: int) -> TrialConfig:
    """Deterministic sample: a pure function of (seed, trial_id)."""
    rng = stream_rng(seed, SEED_SWEEP, trial_id)
    batch = int(space.batch_size[rng.integers(len(space.batch_size))])
    lr = _log_uniform(rng, *space.lr_model)
    wd = _log_uniform(rng, *space.weight_decay)
    drop = float(rng.uniform(*space.dropout_rate))
    eps = _log_uniform(rng, *space.epsilon_smoothing)
    mult = _log_uniform(rng, *space.lr_loss_head_multiplier)
    train_seed = int(rng.integers(0, 2**63))
    return TrialConfig(
        trial_id=trial_id, batch_size=batch, lr_model=lr, weight_decay=wd,
        dropout_rate=drop, epsilon_smoothing=eps, lr_loss_head_multiplier=mult,
        train_seed=train_seed,
    )


def rung_ladder(min_resource: int, reduction_factor: int, max_resource: int) -> list:
    """Budgets min * factor^k, capped so the top rung is exactly max_resource."""
    if min_resource < 1 or max_resource < min_resource:
        raise InvalidConfigError(
            f"need 1 <= min_resource <= max_resource, got {min_resource}, {max_resource}"
        )
    if reduction_factor < 2:
        raise InvalidConfigError(f"reduction_factor must be >= 2, got {reduction_factor}")
    rungs = []
    budget = min_resource
    while budget < max_resource:
        rungs.append(budget)
        budget *= reduction_factor
    rungs.append(max_resource)
    return rungs


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------


class FixedScoreBackend:
    """Test backend: trial quality is a fixed known score, independent of epochs."""

    def __init__(self, scores):
        self.scores = list(scores)

    def segment(self, trial: TrialConfig, state, start_epoch: int, end_epoch: int):
        score = self.scores[trial.trial_id]
        if score is None:
            raise DivergenceError(f"trial {trial.trial_id} set to diverge")
        return state, float(score)


def trial_train_config(trial: TrialConfig, base: train.TrainConfig,
                       epochs: int) -> train.TrainConfig:
    return replace(
        base,
        batch_size=trial.batch_size,
        lr_model=trial.lr_model,
        lr_loss_head=trial.lr_model * trial.lr_loss_head_multiplier,
        weight_decay=trial.weight_decay,
        epsilon_smoothing=trial.epsilon_smoothing,
        epochs=epochs,
        seed=trial.train_seed,
    )


def trial_net_config(trial: TrialConfig, template: net.NetConfig) -> net.NetConfig:
    return replace(template, dropout_rate=trial.dropout_rate,
                   seed=derive(trial.train_seed, SEED_INIT))


class TrainingBackend:
    """Real backend: trains the classifier, scores by validation accuracy."""

    def __init__(self, net_template: net.NetConfig, base_cfg: train.TrainConfig,
                 train_ds: Dataset, val_ds: Dataset, max_epochs: int):
        self.net_template = net_template
        self.base_cfg = base_cfg
        self.train_ds = train_ds
        self.val_ds = val_ds
        self.max_epochs = max_epochs

    def segment(self, trial: TrialConfig, state, start_epoch: int, end_epoch: int):
        cfg = trial_train_config(trial, self.base_cfg, self.max_epochs)
        if state is None:
            net_state = net.init(trial_net_config(trial, self.net_template))
            state = (net_state, train.make_loss_params(cfg),
                     train.init_opt_state(cfg.optimizer, net_state))
        net_state, loss_params, opt_state = state
        record = None
        for epoch in range(start_epoch, end_epoch):
            loss_params, record = train.train_epoch(
                net_state, loss_params, opt_state, self.train_ds, self.val_ds, cfg, epoch
            )
        if record is None:  # zero-length segment: evaluate in place
            accuracy, _ = train.evaluate(net_state, self.val_ds)
        else:
            accuracy = record.accuracy
        return (net_state, loss_params, opt_state), accuracy


# ---------------------------------------------------------------------------
# persistence: one CSV row per (trial, rung) plus one config file per trial
# ---------------------------------------------------------------------------

TRIALS_HEADER = ["trial_id", "rung", "epochs", "accuracy", "status"]


class _SweepLog:
    def __init__(self, persist_dir):
        self.dir = Path(persist_dir) if persist_dir is not None else None
        self.cache = {}  # (trial_id, budget) -> (accuracy | None, status string)
        if self.dir is None:
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        self.csv_path = self.dir / "trials.csv"
        if self.csv_path.exists():
            with open(self.csv_path, newline="") as fh:
                rows = list(csv.reader(fh))
            for row in rows[1:]:
                tid, _rung, epochs, acc, status = row
                self.cache[(int(tid), int(epochs))] = (
                    float(acc) if acc else None, status,
                )
        else:
            with open(self.csv_path, "w", newline="") as fh:
                csv.writer(fh).writerow(TRIALS_HEADER)

    def lookup(self, trial_id: int, budget: int):
        return self.cache.get((trial_id, budget))

    def record(self, trial_id: int, rung_index: int, budget: int, accuracy, status: str):
        self.cache[(trial_id, budget)] = (accuracy, status)
        if self.dir is None:
            return
        with open(self.csv_path, "a", newline="") as fh:
            csv.writer(fh).writerow([
                trial_id, rung_index, budget,
                "" if accuracy is None else repr(accuracy), status,
            ])

    def write_config(self, trial: TrialConfig):
        if self.dir is None:
            return
        path = self.dir / f"trial_{trial.trial_id:03d}.json"
        if not path.exists():
            path.write_text(json.dumps(asdict(trial), indent=2) + "\n")


# ---------------------------------------------------------------------------
# scheduler
# ---------------------------------------------------------------------------


class _TrialRun:
    """Scheduler-side bookkeeping for one trial."""

    __slots__ = ("result", "state", "state_epochs")

    def __init__(self, config: TrialConfig):
        self.result = TrialResult(trial_id=config.trial_id, config=config)
        self.state = None
        self.state_epochs = 0  # epochs the backend state actually reflects


def _row_status(promoted: bool, is_last_rung: bool) -> str:
    if is_last_rung:
        return TrialStatus.COMPLETED.value
    return TrialStatus.RUNNING.value if promoted else TrialStatus.STOPPED.value


def _rank_within(pool, trial_id: int) -> int:
    """1-based rank of trial_id in [(accuracy, trial_id)]: higher accuracy first,
    earlier trial on ties."""
    ordered = sorted(pool, key=lambda item: (-item[0], item[1]))
    return 1 + [tid for _, tid in ordered].index(trial_id)


def _promote_count(pool_size: int, reduction_factor: int) -> int:
    return math.ceil(pool_size / reduction_factor)


def run_asha(space: SearchSpace, num_trials: int, max_resource_epochs: int,
             reduction_factor: int, min_resource_epochs: int, seed: int,
             backend, deterministic: bool = False, workers: int | None = None,
             persist_dir=None) -> SweepResult:
    """Successive-halving sweep over num_trials sampled configurations.

    deterministic=True runs rung-synchronously in trial order (promotions
    match the hand simulation exactly); otherwise a thread pool of `workers`
    (default: available parallelism) runs trials concurrently with
    promotion decided as each rung result lands. With a persist_dir, every
    (trial, rung) result is appended to trials.csv and a finished sweep can
    be resumed from it: recorded rungs are reused and only missing training
    is replayed (replay is exact because epoch streams derive from the
    trial seed).
    """
    if num_trials < 1:
        raise InvalidConfigError("num_trials must be >= 1")
    rungs = rung_ladder(min_resource_epochs, reduction_factor, max_resource_epochs)
    log = _SweepLog(persist_dir)
    runs = []
    for tid in range(num_trials):
        config = sample_trial(space, seed, tid)
        log.write_config(config)
        runs.append(_TrialRun(config))

    epochs_counter = [0]
    counter_lock = threading.Lock()

    def run_rung(run: _TrialRun, rung_index: int):
        """Accuracy of `run` at rungs[rung_index], training only what's missing."""
        budget = rungs[rung_index]
        cached = log.lookup(run.result.trial_id, budget)
        if cached is not None:
            accuracy, status = cached
            if status == TrialStatus.DIVERGED.value:
                raise DivergenceError(f"trial {run.result.trial_id} diverged (recorded)")
            return accuracy
        with counter_lock:
            epochs_counter[0] += budget - run.state_epochs
        run.state, accuracy = backend.segment(
            run.result.config, run.state, run.state_epochs, budget
        )
        run.state_epochs = budget
        return accuracy

    promotion_log = []
    if deterministic:
        _run_synchronous(runs, rungs, reduction_factor, run_rung, log, promotion_log)
    else:
        _run_async(runs, rungs, reduction_factor, run_rung, log, promotion_log, workers)

    ranked = sorted(
        (r.result for r in runs),
        key=lambda res: (
            1 if (res.status is TrialStatus.DIVERGED or res.score() is None) else 0,
            -(res.score() or 0.0),
            res.trial_id,
        ),
    )
    return SweepResult(trials=ranked, rungs=rungs,
                       total_epochs_trained=epochs_counter[0],
                       promotion_log=promotion_log)


def _run_synchronous(runs, rungs, reduction_factor, run_rung, log, promotion_log):
    active = list(runs)
    for rung_index, budget in enumerate(rungs):
        is_last = rung_index == len(rungs) - 1
        pool = []
        for run in active:
            try:
                accuracy = run_rung(run, rung_index)
            except DivergenceError:
                run.result.status = TrialStatus.DIVERGED
                log.record(run.result.trial_id, rung_index, budget, None,
                           TrialStatus.DIVERGED.value)
                continue
            run.result.rung_accuracy[budget] = accuracy
            pool.append((accuracy, run.result.trial_id))

        survivors = [r for r in active if r.result.status is not TrialStatus.DIVERGED]
        keep = _promote_count(len(pool), reduction_factor)
        promoted = []
        for run in survivors:
            rank = _rank_within(pool, run.result.trial_id)
            goes_on = rank <= keep and not is_last
            promotion_log.append(PromotionDecision(
                trial_id=run.result.trial_id, rung_index=rung_index, rank=rank,
                pool_size=len(pool), promoted=goes_on,
            ))
            log.record(run.result.trial_id, rung_index, budget,
                       run.result.rung_accuracy[budget],
                       _row_status(goes_on, is_last))
            if goes_on:
                promoted.append(run)
            elif is_last:
                run.result.status = TrialStatus.COMPLETED
            else:
                run.result.status = TrialStatus.STOPPED
                run.result.stopped_rung = rung_index
        active = promoted
        if not active:
            break


def _run_async(runs, rungs, reduction_factor, run_rung, log, promotion_log, workers):
    if workers is None:
        workers = os.cpu_count() or 1
    last_rung = len(rungs) - 1
    rung_pools = [[] for _ in rungs]  # results in completion order
    pending = deque(runs)
    # Workers only train; promotion decisions, logging, and bookkeeping all
    # happen on this thread, which is the single synchronized decision point.
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {}

        def submit(run, rung_index):
            futures[pool.submit(run_rung, run, rung_index)] = (run, rung_index)

        while pending and len(futures) < workers:
            submit(pending.popleft(), 0)

        while futures:
            done, _ = wait(list(futures), return_when=FIRST_COMPLETED)
            for fut in done:
                run, rung_index = futures.pop(fut)
                budget = rungs[rung_index]
                is_last = rung_index == last_rung
                try:
                    accuracy = fut.result()
                except DivergenceError:
                    run.result.status = TrialStatus.DIVERGED
                    log.record(run.result.trial_id, rung_index, budget, None,
                               TrialStatus.DIVERGED.value)
                    continue
                run.result.rung_accuracy[budget] = accuracy
                rung_pools[rung_index].append((accuracy, run.result.trial_id))
                pool_now = list(rung_pools[rung_index])
                rank = _rank_within(pool_now, run.result.trial_id)
                keep = _promote_count(len(pool_now), reduction_factor)
                goes_on = rank <= keep and not is_last
                promotion_log.append(PromotionDecision(
                    trial_id=run.result.trial_id, rung_index=rung_index, rank=rank,
                    pool_size=len(pool_now), promoted=goes_on,
                ))
                log.record(run.result.trial_id, rung_index, budget, accuracy,
                           _row_status(goes_on, is_last))
                if goes_on:
                    submit(run, rung_index + 1)
                elif is_last:
                    run.result.status = TrialStatus.COMPLETED
                else:
                    run.result.status = TrialStatus.STOPPED
                    run.result.stopped_rung = rung_index
            while pending and len(futures) < workers:
                submit(pending.popleft(), 0)


def best_trial(result: SweepResult) -> TrialConfig:
    """Highest-ranked trial that finished the top rung."""
    for res in result.trials:
        if res.status is TrialStatus.COMPLETED:
            return res.config
    raise DivergenceError("no trial completed the sweep")


def refine_best(best: TrialConfig, net_template: net.NetConfig,
                base_cfg: train.TrainConfig, train_ds: Dataset, eval_ds: Dataset,
                extended_epochs: int, metrics_path=None, checkpoint_dir=None):
    """Fresh full-length run with the winning hyperparameters.

    Re-initializes from the trial's own seed, so with extended_epochs equal
    to the sweep's top budget and the same datasets it reproduces the
    trial's trajectory exactly.
    """
    cfg = trial_train_config(best, base_cfg, extended_epochs)
    net_cfg = trial_net_config(best, net_template)
    return train.train_run(net_cfg, cfg, train_ds, eval_ds,
                           metrics_path=metrics_path, checkpoint_dir=checkpoint_dir)
