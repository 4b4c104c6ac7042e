"""Baselines and counter-constructions.

* :func:`linear_baseline_error` scores the linear probe ``g(X) = sum_j <w*, X_j>``,
  which cannot separate the signal set from interfering noise patches.
* :func:`spurious_transformer` builds attention that classifies correctly
  while every row attends to the *next* set instead of its own.
* :func:`sample_complexity_sweep` compares downstream learners that do and do
  not reuse a pretrained attention matrix.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .distribution import (DistributionSpec, Partition, label_fn_batch, label_fn_from_coefficients,
                           sample_batch, sample_coefficients, sample_dataset)
from .model import ModelHyper, ModelParams, batch_outputs, batch_loss_and_grads, logistic_loss, score_matrix
from .rng import child_seed, stream
from .trainer import TrainConfig, init_params, one_step_normalized_transfer

log = logging.getLogger(__name__)


# --- linear baseline -------------------------------------------------------

def linear_baseline_error(spec: DistributionSpec, partition: Partition, M: int, rng: np.random.Generator,
                          chunk: int = 100_000) -> float:
    """Monte-Carlo ``P[f*(X) g(X) <= 0]`` for ``g(X) = sum_j <w*, X_j>``.

    Only the coefficients are sampled: with noise orthogonal to ``w*`` the
    inner products equal the planted ``delta_j`` exactly.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    errors = 0
    done = 0
    while done < M:
        n = min(chunk, M - done)
        _, _, delta = sample_coefficients(spec, partition, n, rng)
        g = delta.sum(axis=1, dtype=np.int64)
        f = label_fn_from_coefficients(delta, partition, spec)
        errors += int(np.count_nonzero(f * g <= 0))
        done += n
    return errors / M


def _set_sum_pmf(C: int, q: float) -> np.ndarray:
    """Distribution of the sum of ``C`` i.i.d. {-1: q/2, 0: 1-q, +1: q/2}; index ``s + C``."""
    pmf = np.array([1.0])
    step = np.array([q / 2, 1 - q, q / 2])
    for _ in range(C):
        pmf = np.convolve(pmf, step)
    return pmf


def noise_set_joint(spec: DistributionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Joint law of the noise sets' contributions to ``(f*, g)`` given ``y = +1``.

    Each of the ``L - 1`` non-signal sets adds its sum ``s`` to ``g`` and
    ``s * 1{|s| > threshold}`` to ``f*``. Returns ``(joint, totals)`` with
    ``joint[a, b] = P[thresholded total = totals[a], total = totals[b]]``.
    """
    C, L = spec.C, spec.L
    pmf = _set_sum_pmf(C, spec.q)
    span = (L - 1) * C
    joint = np.zeros((2 * span + 1, 2 * span + 1))
    joint[span, span] = 1.0
    for _ in range(L - 1):
        nxt = np.zeros_like(joint)
        for k, pk in enumerate(pmf):
            if pk == 0:
                continue
            s = k - C
            t = s if abs(s) > spec.threshold else 0
            # no wrap-around: totals never leave [-span, span]
            nxt += pk * np.roll(np.roll(joint, t, axis=0), s, axis=1)
        joint = nxt
    return joint, np.arange(-span, span + 1)


def exact_linear_baseline_error(spec: DistributionSpec) -> float:
    """Exact ``P[f*(X) g(X) <= 0]``; by symmetry take ``y = +1``, so ``f* = C + T`` and ``g = C + S``."""
    joint, tot = noise_set_joint(spec)
    f = spec.C + tot[:, None]
    g = spec.C + tot[None, :]
    return float(joint[f * g <= 0].sum())


def exact_label_consistency(spec: DistributionSpec) -> float:
    """Exact ``P[y f*(X) > 0]``."""
    joint, tot = noise_set_joint(spec)
    return float(joint.sum(axis=1)[spec.C + tot > 0].sum())


def set_trigger_probability(spec: DistributionSpec) -> float:
    """Probability that one noise set passes the threshold with a given sign."""
    pmf = _set_sum_pmf(spec.C, spec.q)
    s = np.arange(pmf.size) - spec.C
    return float(pmf[s < -spec.threshold].sum())


def label_flip_bound(spec: DistributionSpec) -> float:
    """Union bound on ``P[y f* <= 0]``.

    The signal set contributes ``y C`` to ``f*``, so a flip needs the
    thresholded noise total to be negative (relative to ``y``), which needs
    at least one noise set to trigger against ``y``.
    """
    return (spec.L - 1) * set_trigger_probability(spec)


def binomial_tail_error(spec: DistributionSpec) -> float:
    """``P[y * sum of noise coefficients <= -C]``: the error against ``y`` rather than ``sign f*``."""
    pmf = _set_sum_pmf(spec.D - spec.C, spec.q)
    s = np.arange(pmf.size) - (spec.D - spec.C)
    return float(pmf[s <= -spec.C].sum())


# --- spurious construction -------------------------------------------------

def spurious_transformer(partition: Partition, beta: float, w_star: np.ndarray,
                         model_hyper: ModelHyper = ModelHyper()) -> ModelParams:
    """``v = w*``; ``A = beta`` within a set, ``2 beta`` from set ``l`` to set ``l+1`` (cyclic), else 0.

    The diagonal is 0, so each row's ``C`` largest entries are exactly the
    next set and never intersect its own.
    """
    if not beta >= 0:
        raise ValueError("beta must be non-negative")
    m = partition.membership
    same = m[:, None] == m[None, :]
    nxt = m[None, :] == (m[:, None] + 1) % partition.L
    A = np.where(same, beta, 0.0) + np.where(nxt, 2.0 * beta, 0.0)
    np.fill_diagonal(A, 0.0)
    return ModelParams(A=A, v=np.array(w_star, dtype=np.float64), p=model_hyper.p, nu=model_hyper.nu,
                       tau=model_hyper.tau, sigma_A=0.0)


# --- sample-complexity sweep -----------------------------------------------

def fit_linear(patches: np.ndarray, y: np.ndarray, ridge: float = 1e-3) -> np.ndarray:
    """Ridge-regularised logistic regression of ``y`` on ``sum_j X_j`` (shared weight per patch)."""
    Z = patches.sum(axis=1)
    yf = np.asarray(y, dtype=np.float64)
    n = yf.size

    def obj(w):
        m = yf * (Z @ w)
        loss = logistic_loss(1.0, m).sum() / n + 0.5 * ridge * (w @ w)
        grad = -(Z.T @ (yf * expit(-m))) / n + ridge * w
        return loss, grad

    res = minimize(obj, np.zeros(Z.shape[1]), jac=True, method="L-BFGS-B")
    return res.x


def linear_accuracy(w: np.ndarray, patches: np.ndarray, f: np.ndarray) -> float:
    g = patches.sum(axis=1) @ w
    return float(np.mean(g * f > 0))


def _model_accuracy(params: ModelParams, patches: np.ndarray, f: np.ndarray) -> float:
    F = batch_outputs(params, patches, score_matrix(params.A, params.tau))
    return float(np.mean(F * f > 0))


@dataclass
class SweepResult:
    sample_sizes: list
    frozen_A_accuracy: list
    scratch_accuracy: list
    linear_accuracy: list
    seeds: int
    cells: list = field(default_factory=list)  # (N, arm, seed, accuracy)

    ARMS = ("frozen_A", "scratch", "linear")

    def arm(self, name: str) -> list:
        return {"frozen_A": self.frozen_A_accuracy, "scratch": self.scratch_accuracy,
                "linear": self.linear_accuracy}[name]

    def stderr(self, name: str) -> list:
        out = []
        for N in self.sample_sizes:
            acc = np.array([a for (n, arm, _, a) in self.cells if n == N and arm == name])
            out.append(float(acc.std(ddof=1) / math.sqrt(acc.size)) if acc.size > 1 else float("nan"))
        return out


def _scratch_best(cfg: TrainConfig, ds, budgets, test_patches, f) -> float:
    params = init_params(cfg, ds.spec.d, ds.spec.D, stream(cfg.seed, "init"))
    best = _model_accuracy(params, test_patches, f)
    for t in range(1, max(budgets) + 1):
        loss, gv, gA = batch_loss_and_grads(params, ds)
        if not (math.isfinite(loss) and np.all(np.isfinite(gv)) and np.all(np.isfinite(gA))):
            break
        A = params.A - cfg.eta * gA
        np.fill_diagonal(A, params.sigma_A)
        params = params.with_(A=A, v=params.v - cfg.eta * gv)
        if t in budgets:
            best = max(best, _model_accuracy(params, test_patches, f))
    return best


def sample_complexity_sweep(pretrained: ModelParams, spec_downstream: DistributionSpec, partition: Partition,
                            Ns, seeds: int, seed: int = 0, scratch_cfg: TrainConfig | None = None,
                            budgets=(10, 25, 50, 100, 150, 300), M_test: int = 2000) -> SweepResult:
    """Average downstream accuracy per sample size for three learners.

    * ``frozen_A``: one normalized gradient step on ``v`` with the pretrained ``A``.
    * ``scratch``: full training of ``A`` and ``v`` on the same samples, scored
      at each step budget in ``budgets`` and credited with the best one.
    * ``linear``: logistic regression on the patch sum.

    Cell ``(N, s)`` draws its training set from ``child_seed(seed, "train", N, s)``;
    all arms and sample sizes of seed ``s`` share one test set of ``M_test``
    points. ``N = 0`` cells are skipped and reported as NaN.
    """
    scratch_cfg = scratch_cfg or TrainConfig()
    budgets = frozenset(int(b) for b in budgets)
    Ns = [int(n) for n in Ns]
    tests = []
    for s in range(seeds):
        patches, _, _, _ = sample_batch(spec_downstream, partition, M_test, stream(seed, "test", s))
        tests.append((patches, label_fn_batch(patches, partition, spec_downstream)))

    cells = []
    means = {arm: [] for arm in SweepResult.ARMS}
    for N in Ns:
        per = {arm: [] for arm in SweepResult.ARMS}
        for s in range(seeds if N > 0 else 0):
            ds = sample_dataset(spec_downstream, partition, N, child_seed(seed, "train", N, s))
            tp, f = tests[s]
            try:
                acc_f = _model_accuracy(one_step_normalized_transfer(pretrained, ds), tp, f)
            except ValueError:
                acc_f = 0.0
            cfg = scratch_cfg.replace(seed=child_seed(seed, "scratch", N, s))
            acc_s = _scratch_best(cfg, ds, budgets, tp, f)
            acc_l = linear_accuracy(fit_linear(ds.patches, ds.y), tp, f)
            for arm, acc in zip(SweepResult.ARMS, (acc_f, acc_s, acc_l)):
                per[arm].append(acc)
                cells.append((N, arm, s, acc))
            log.info("N=%d seed=%d frozen %.3f scratch %.3f linear %.3f", N, s, acc_f, acc_s, acc_l)
        for arm in SweepResult.ARMS:
            means[arm].append(float(np.mean(per[arm])) if per[arm] else float("nan"))
    return SweepResult(Ns, means["frozen_A"], means["scratch"], means["linear"], seeds, cells)

