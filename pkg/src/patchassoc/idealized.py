"""Scalar recursions for the idealized (population, symmetric) learning process.

Under set-respecting symmetry the attention matrix is described by three
numbers: the fixed diagonal ``beta``, a shared in-set value ``gamma`` and a
shared cross-set value ``rho``; the value vector is ``alpha * w_star``. The
softmax masses of one row are then

    Lambda = e^beta / Z,  Gamma = e^gamma / Z,  Xi = e^rho / Z,
    Z = e^beta + (C-1) e^gamma + (D-C) e^rho,

and ``G = D (Lambda + (C-1) Gamma)`` is the (scaled) mass a row puts on its
own set.

Learning proceeds in three phases. alpha first grows through the linear part
of the activation until it reaches ``alpha_tilde = 1 / (C^2 lambda0)``. It
then stalls, because the sigmoid is no longer constant and noise patches
cancel the signal gradient, until attention has concentrated on the own set
(``C Gamma >= lambda0 / D``). After that alpha grows again until convergence.
The stall is modelled by a gate that freezes alpha between the two events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .distribution import Partition


@dataclass(frozen=True)
class ScalarState:
    alpha: float
    beta: float
    gamma: float
    rho: float
    t: int = 0


@dataclass(frozen=True)
class Aggregates:
    Lambda: float
    Gamma: float
    Xi: float
    G: float
    lambda0: float

    def normalization(self, C: int, D: int) -> float:
        return self.Lambda + (C - 1) * self.Gamma + (D - C) * self.Xi


@dataclass(frozen=True)
class DynHyper:
    """Step size, problem size, and the otherwise unspecified constants.

    ``polylog`` multiplies the cross-set increment and sets the convergence
    level ``alpha_final = polylog * alpha_tilde``; it defaults to ``log D``.
    ``lambda0`` defaults to ``D ** 0.01``.
    """

    eta: float
    C: int
    D: int
    p: int = 3
    nu: float = 0.01
    c_gamma: float = 1.0
    c_rho: float = 1.0
    c_alpha: float = 1.0
    lambda0: float | None = None
    polylog: float | None = None
    gate: bool = True

    def __post_init__(self):
        if self.lambda0 is None:
            object.__setattr__(self, "lambda0", self.D ** 0.01)
        if self.polylog is None:
            object.__setattr__(self, "polylog", math.log(self.D))
        if not 1 <= self.C <= self.D:
            raise ValueError("need 1 <= C <= D")
        if self.p < 3 or self.p % 2 == 0:
            raise ValueError("p must be an odd integer >= 3")
        for name in ("eta", "c_gamma", "c_rho", "c_alpha", "lambda0", "polylog"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")

    @property
    def alpha_tilde(self) -> float:
        return 1.0 / (self.C**2 * self.lambda0)

    @property
    def alpha_final(self) -> float:
        return self.polylog * self.alpha_tilde

    @property
    def gamma_threshold(self) -> float:
        """Event II fires once ``C * Gamma`` reaches this value."""
        return self.lambda0 / self.D


# Desk preset: the three phases resolve within a couple of thousand steps.
# c_alpha is small so that Event I does not outrun the attention updates.
DESK_BETA = 6.3


def desk_hyper(**overrides) -> DynHyper:
    kw = dict(eta=0.1, C=6, D=96, p=3, nu=1e-4, c_alpha=1e-6, polylog=math.log(128))
    kw.update(overrides)
    return DynHyper(**kw)


def init_scalar_state(p: int, nu: float, sigma_A: float) -> ScalarState:
    if p < 3 or p % 2 == 0:
        raise ValueError("p must be an odd integer >= 3")
    if not nu > 0:
        raise ValueError("nu must be positive")
    return ScalarState(alpha=nu ** (1.0 / (p - 1)), beta=float(sigma_A), gamma=0.0, rho=0.0, t=0)


def softmax_aggregates(state: ScalarState, C: int, D: int, lambda0: float | None = None) -> Aggregates:
    if not 1 <= C <= D:
        raise ValueError("need 1 <= C <= D")
    m = max(state.beta, state.gamma, state.rho)
    eb = math.exp(state.beta - m)
    eg = math.exp(state.gamma - m)
    er = math.exp(state.rho - m)
    Z = eb + (C - 1) * eg + (D - C) * er
    Lam, Gam, Xi = eb / Z, eg / Z, er / Z
    return Aggregates(Lam, Gam, Xi, D * (Lam + (C - 1) * Gam), D**0.01 if lambda0 is None else lambda0)


@dataclass(frozen=True)
class Increments:
    alpha: float
    gamma: float
    rho: float


def increments(state: ScalarState, hyper: DynHyper, agg: Aggregates | None = None) -> Increments:
    if agg is None:
        agg = softmax_aggregates(state, hyper.C, hyper.D, hyper.lambda0)
    a, p, C, D = state.alpha, hyper.p, hyper.C, hyper.D
    Gp1 = agg.G ** (p - 1)
    d_alpha = hyper.c_alpha * C * hyper.eta * agg.G**p * a ** (p - 1)
    stalled = a >= hyper.alpha_tilde and C * agg.Gamma < hyper.gamma_threshold
    if hyper.gate and stalled:
        d_alpha = 0.0
    d_gamma = hyper.c_gamma * C * hyper.eta * a**p * agg.Gamma * Gp1
    d_rho = hyper.c_rho * hyper.eta * hyper.polylog * a**p * (1.0 / D + agg.Gamma * Gp1 / D)
    return Increments(d_alpha, d_gamma, d_rho)


def step_scalar(state: ScalarState, hyper: DynHyper) -> ScalarState:
    inc = increments(state, hyper)
    new = ScalarState(
        alpha=state.alpha + inc.alpha,
        beta=state.beta,
        gamma=state.gamma + inc.gamma,
        rho=state.rho + inc.rho,
        t=state.t + 1,
    )
    if not all(math.isfinite(x) for x in (new.alpha, new.gamma, new.rho)):
        raise FloatingPointError(f"non-finite scalar state at t={new.t}: {new}")
    return new


@dataclass
class ScalarTrajectory:
    t: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    Lambda: np.ndarray
    Gamma: np.ndarray
    Xi: np.ndarray
    G: np.ndarray
    T0: int | None
    T1: int | None
    converged_at: int | None
    thresholds: dict = field(default_factory=dict)

    COLUMNS = ("t", "alpha", "gamma", "rho", "Lambda", "Gamma", "Xi", "G")

    def rows(self):
        cols = [getattr(self, c) for c in self.COLUMNS]
        return list(zip(*cols))


def run_scalar(state: ScalarState, hyper: DynHyper, T: int) -> ScalarTrajectory:
    """Iterate up to ``T`` steps, stopping early once alpha reaches ``alpha_final``.

    ``T0`` is the first step with ``alpha >= alpha_tilde`` and ``T1`` the first
    with ``C * Gamma >= lambda0 / D``; either is ``None`` if never reached.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    rec = {c: [] for c in ScalarTrajectory.COLUMNS}
    T0 = T1 = converged = None
    s = state
    for _ in range(T + 1):
        agg = softmax_aggregates(s, hyper.C, hyper.D, hyper.lambda0)
        for name, val in (("t", s.t), ("alpha", s.alpha), ("gamma", s.gamma), ("rho", s.rho),
                          ("Lambda", agg.Lambda), ("Gamma", agg.Gamma), ("Xi", agg.Xi), ("G", agg.G)):
            rec[name].append(val)
        if T0 is None and s.alpha >= hyper.alpha_tilde:
            T0 = s.t
        if T1 is None and hyper.C * agg.Gamma >= hyper.gamma_threshold:
            T1 = s.t
        if s.alpha >= hyper.alpha_final:
            converged = s.t
            break
        if s.t - state.t >= T:
            break
        s = step_scalar(s, hyper)
    return ScalarTrajectory(
        t=np.array(rec["t"], dtype=np.int64),
        **{c: np.array(rec[c]) for c in ScalarTrajectory.COLUMNS[1:]},
        T0=T0,
        T1=T1,
        converged_at=converged,
        thresholds={
            "alpha_tilde": hyper.alpha_tilde,
            "gamma_threshold": hyper.gamma_threshold,
            "alpha_final": hyper.alpha_final,
            "lambda0": hyper.lambda0,
        },
    )


@dataclass(frozen=True)
class AttentionReduction:
    gamma_hat: float
    rho_hat: float
    within_set_std: float
    cross_set_std: float

    def symmetry_ratio(self) -> float:
        """``within_set_std / (gamma_hat - rho_hat)``; inf if the gap is not positive."""
        gap = self.gamma_hat - self.rho_hat
        return self.within_set_std / gap if gap > 0 else math.inf


def reduce_attention(A: np.ndarray, partition: Partition) -> AttentionReduction:
    """Project ``A`` onto the symmetric (gamma, rho) coordinates."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (partition.D, partition.D):
        raise ValueError(f"A has shape {A.shape}, partition has D={partition.D}")
    same = partition.same_set_mask()
    off = ~np.eye(partition.D, dtype=bool)
    within = A[same & off]
    cross = A[~same]
    g = float(within.mean()) if within.size else 0.0
    r = float(cross.mean()) if cross.size else 0.0
    return AttentionReduction(
        gamma_hat=g,
        rho_hat=r,
        within_set_std=float(within.std()) if within.size else 0.0,
        cross_set_std=float(cross.std()) if cross.size else 0.0,
    )


def with_state(state: ScalarState, **changes) -> ScalarState:
    return replace(state, **changes)
