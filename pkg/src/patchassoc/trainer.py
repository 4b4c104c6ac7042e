"""Full-batch gradient descent and the two fine-tuning procedures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .analysis import cosine_sim, estimate_accuracy, patch_association_score, residual_norm
from .distribution import Dataset, DistributionSpec, Partition
from .idealized import reduce_attention
from .model import ModelParams, batch_loss_and_grads
from .rng import stream

log = logging.getLogger(__name__)

MODES = ("realistic", "value-only")
DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings plus the model hyperparameters they are tuned for.

    The defaults are the calibrated desk configuration. A small temperature
    makes the attention logits move on the same time scale as ``v``; gradient
    descent on ``A`` with step ``eta`` is gradient descent on ``A / tau`` with
    step ``eta / tau**2``.
    """

    eta: float = 5e-5
    T: int = 200
    omega: float = 1e-6
    sigma_A: float = 6e-4
    seed: int = 0
    eval_every: int = 25
    mode: str = "realistic"
    p: int = 3
    nu: float = 0.01
    tau: float = 2e-4

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not self.omega >= 0:
            raise ValueError("omega must be non-negative")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def replace(self, **changes) -> "TrainConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return TrainConfig(**kw)


@dataclass(frozen=True)
class RunRecord:
    step: int
    train_loss: float
    test_accuracy: float
    cosine_sim: float
    patch_assoc_score: float
    gamma_hat: float
    rho_hat: float
    eps_v: float

    FIELDS = ("step", "train_loss", "test_accuracy", "cosine_sim", "patch_assoc_score",
              "gamma_hat", "rho_hat", "eps_v")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


@dataclass(frozen=True)
class EvalSpec:
    """Where and how to measure test metrics during training.

    The test set is regenerated from the same stream at every evaluation, so
    all records of a run are scored on identical points.
    """

    spec: DistributionSpec
    partition: Partition
    M: int = 4000
    seed: int = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, params: ModelParams, records: list):
        super().__init__(message)
        self.params = params
        self.records = records


def init_params(cfg: TrainConfig, d: int, D: int, rng: np.random.Generator) -> ModelParams:
    v = cfg.omega * rng.standard_normal(d)
    A = cfg.omega * rng.standard_normal((D, D))
    np.fill_diagonal(A, cfg.sigma_A)
    return ModelParams(A=A, v=v, p=cfg.p, nu=cfg.nu, tau=cfg.tau, sigma_A=cfg.sigma_A)


def _check_finite(loss: float, gv: np.ndarray, gA: np.ndarray) -> None:
    if not (math.isfinite(loss) and np.all(np.isfinite(gv)) and np.all(np.isfinite(gA))):
        raise FloatingPointError("non-finite loss or gradient")


def _apply(params: ModelParams, gv: np.ndarray, gA: np.ndarray | None, eta: float) -> ModelParams:
    v = params.v - eta * gv
    if gA is None:
        return params.with_(v=v)
    A = params.A - eta * gA
    np.fill_diagonal(A, params.sigma_A)
    return params.with_(A=A, v=v)


def gd_step(params: ModelParams, dataset: Dataset, eta: float, value_only: bool = False) -> ModelParams:
    if eta < 0:
        raise ValueError("eta must be non-negative")
    loss, gv, gA = batch_loss_and_grads(params, dataset)
    _check_finite(loss, gv, gA)
    return _apply(params, gv, None if value_only else gA, eta)


def evaluate(params: ModelParams, train_loss: float, step: int, ev: EvalSpec) -> RunRecord:
    w = ev.spec.w_star
    acc = estimate_accuracy(params, ev.spec, ev.partition, ev.M, stream(ev.seed, "eval")).accuracy
    red = reduce_attention(params.A, ev.partition)
    # cosine is undefined at v = 0 (omega = 0 before the first step); log 0
    cos = cosine_sim(params.v, w) if np.any(params.v) else 0.0
    return RunRecord(
        step=step,
        train_loss=train_loss,
        test_accuracy=acc,
        cosine_sim=cos,
        patch_assoc_score=patch_association_score(params.A, ev.partition).score,
        gamma_hat=red.gamma_hat,
        rho_hat=red.rho_hat,
        eps_v=residual_norm(params.v, w),
    )


def _descend(params: ModelParams, dataset: Dataset, cfg: TrainConfig, ev: EvalSpec | None,
             value_only: bool, callback: Callable | None, loss_log: list | None = None):
    records: list[RunRecord] = []
    for t in range(cfg.T + 1):
        loss, gv, gA = batch_loss_and_grads(params, dataset)
        if loss_log is not None:
            loss_log.append(loss)
        if not (math.isfinite(loss) and loss <= DIVERGENCE_LOSS
                and np.all(np.isfinite(gv)) and np.all(np.isfinite(gA))):
            raise TrainingDiverged(f"diverged at step {t}: loss={loss!r}", params, records)
        if ev is not None and (t % cfg.eval_every == 0 or t == cfg.T):
            rec = evaluate(params, loss, t, ev)
            records.append(rec)
            log.info("step %d loss %.4g acc %.4f cos %.4f pa %.3f", t, loss, rec.test_accuracy,
                     rec.cosine_sim, rec.patch_assoc_score)
            if callback is not None:
                callback(t, params, rec)
        if t < cfg.T:
            params = _apply(params, gv, None if value_only else gA, cfg.eta)
    return params, records


def train(cfg: TrainConfig, dataset: Dataset, eval_spec: EvalSpec | None = None,
          params: ModelParams | None = None, callback: Callable | None = None,
          loss_log: list | None = None):
    """Run ``cfg.T`` full-batch steps from ``init_params`` (or ``params``).

    Returns ``(params, records)``. Records are taken at step 0, every
    ``eval_every`` steps, and at the last step; ``train_loss`` is the loss of
    the parameters being recorded. Raises :class:`TrainingDiverged`, carrying
    the last finite parameters and the records so far, when the loss becomes
    non-finite or exceeds ``1e6``. If ``loss_log`` is given, the loss at every
    step is appended to it.
    """
    if params is None:
        d, D = dataset.spec.d, dataset.spec.D
        params = init_params(cfg, d, D, stream(cfg.seed, "init"))
    return _descend(params, dataset, cfg, eval_spec, cfg.mode == "value-only", callback, loss_log)


def finetune_value(params: ModelParams, dataset: Dataset, cfg: TrainConfig) -> ModelParams:
    """Gradient descent on ``v`` only, from ``v ~ N(0, omega^2 I)``; ``A`` stays frozen."""
    if cfg.mode != "value-only":
        raise ValueError("finetune_value requires mode='value-only'")
    v0 = cfg.omega * stream(cfg.seed, "finetune").standard_normal(params.d)
    out, _ = _descend(params.with_(v=v0), dataset, cfg, None, True, None)
    return out


def one_step_normalized_transfer(params: ModelParams, dataset: Dataset) -> ModelParams:
    """Set ``v = g / ||g||`` where ``g = -sum_n grad_v L(X_n)`` at ``v = 0``.

    At ``v = 0`` every pre-activation is zero, so ``sigma'`` equals ``nu`` and
    ``g`` is proportional to ``sum_n y_n sum_i O_n,i``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    base = params.with_(v=np.zeros(params.d))
    _, gv, _ = batch_loss_and_grads(base, dataset)
    g = -gv * len(dataset)
    norm = float(np.linalg.norm(g))
    if not norm > 0 or not math.isfinite(norm):
        raise ValueError("degenerate dataset: transfer direction has zero norm")
    v = g / norm
    c = float(v @ dataset.spec.w_star)
    if c <= 0:
        log.warning("one-step transfer direction has non-positive alignment %.3g with the target feature", c)
    return base.with_(v=v)
