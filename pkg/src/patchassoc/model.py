"""Positional-attention transformer with a single value vector.

    F(X) = sum_i sigma(D * sum_j S_ij <v, X_j>),   S = rowsoftmax(A / tau),
    sigma(x) = x**p + nu * x

The diagonal of ``A`` is a fixed constant and never receives gradient.
Gradients are derived by hand; :func:`finite_diff_check` compares them with
central differences of the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class ModelParams:
    A: np.ndarray
    v: np.ndarray
    p: int = 3
    nu: float = 0.01
    tau: float = 1.0
    sigma_A: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "v", v)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if v.ndim != 1:
            raise ValueError("v must be a vector")
        if self.p < 3 or self.p % 2 == 0:
            raise ValueError(f"p must be an odd integer >= 3, got {self.p}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if not np.all(np.diag(A) == self.sigma_A):
            raise ValueError("diagonal of A must equal sigma_A")

    @property
    def d(self) -> int:
        return int(self.v.size)

    @property
    def D(self) -> int:
        return int(self.A.shape[0])

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


def score_matrix(A: np.ndarray, tau: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")
    Z = A / tau
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def activation(x, p: int, nu: float):
    return x**p + nu * x


def activation_deriv(x, p: int, nu: float):
    return p * x ** (p - 1) + nu


def logistic_loss(y, F):
    """``log(1 + exp(-y F))`` without overflow."""
    return np.logaddexp(0.0, -np.asarray(y, dtype=np.float64) * F)


@dataclass(frozen=True)
class ModelHyper:
    """The non-trainable model settings."""

    p: int = 3
    nu: float = 0.01
    tau: float = 2e-4


@dataclass(frozen=True)
class ForwardTrace:
    S: np.ndarray
    O: np.ndarray  # d x D, column i is O_i
    pre_activations: np.ndarray
    F: float


def forward(params: ModelParams, X: np.ndarray) -> ForwardTrace:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (params.d, params.D):
        raise ValueError(f"X must have shape ({params.d}, {params.D}), got {X.shape}")
    S = score_matrix(params.A, params.tau)
    O = X @ S.T
    z = params.D * (params.v @ O)
    F = float(activation(z, params.p, params.nu).sum())
    return ForwardTrace(S=S, O=O, pre_activations=z, F=F)


def _sample_terms(params: ModelParams, X: np.ndarray, y: int):
    tr = forward(params, X)
    u = params.v @ X
    o = tr.S @ u
    coef = -y * expit(-y * tr.F) * activation_deriv(tr.pre_activations, params.p, params.nu)
    return tr, u, o, coef


def grad_v(params: ModelParams, X: np.ndarray, y: int) -> np.ndarray:
    tr, _, _, coef = _sample_terms(params, X, y)
    return params.D * (tr.O @ coef)


def grad_A(params: ModelParams, X: np.ndarray, y: int) -> np.ndarray:
    tr, u, o, coef = _sample_terms(params, X, y)
    # sum_{r != j} S_ir <v, X_j - X_r> = u_j - o_i
    g = (params.D / params.tau) * coef[:, None] * tr.S * (u[None, :] - o[:, None])
    np.fill_diagonal(g, 0.0)
    return g


def loss(params: ModelParams, X: np.ndarray, y: int) -> float:
    return float(logistic_loss(y, forward(params, X).F))


# --- batched evaluation ----------------------------------------------------
#
# ``patches`` has shape (N, D, d). Reductions over points go through BLAS
# calls whose operand order is fixed, so results are bit-reproducible on a
# given machine and thread count.


def batch_outputs(params: ModelParams, patches: np.ndarray, S: np.ndarray | None = None) -> np.ndarray:
    if S is None:
        S = score_matrix(params.A, params.tau)
    N, D, d = patches.shape
    U = (patches.reshape(N * D, d) @ params.v).reshape(N, D)
    z = D * (U @ S.T)
    return activation(z, params.p, params.nu).sum(axis=1)


def batch_loss_and_grads(params: ModelParams, dataset=None, *, patches=None, y=None):
    """Mean loss and mean gradients over a dataset.

    Pass either a :class:`~patchassoc.distribution.Dataset` or raw
    ``patches``/``y`` arrays.
    """
    if dataset is not None:
        patches, y = dataset.patches, dataset.y
    y = np.asarray(y, dtype=np.float64)
    N = y.size
    if N == 0:
        raise ValueError("empty dataset")
    _, D, d = patches.shape
    S = score_matrix(params.A, params.tau)
    flat = patches.reshape(N * D, d)
    U = (flat @ params.v).reshape(N, D)
    Ou = U @ S.T
    z = D * Ou
    F = activation(z, params.p, params.nu).sum(axis=1)
    mean_loss = float(logistic_loss(y, F).sum() / N)
    W = (-y * expit(-y * F))[:, None] * activation_deriv(z, params.p, params.nu) * (D / N)
    gv = (W @ S).reshape(N * D) @ flat
    gA = S * ((W.T @ U) - (W * Ou).sum(axis=0)[:, None]) / params.tau
    np.fill_diagonal(gA, 0.0)
    return mean_loss, gv, gA


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_err: float
    max_rel_err_v: float
    max_rel_err_A: float
    diag_grad_max_abs: float


def _rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _loss_ld(A, v, X, y: int, p: int, nu: float, tau: float):
    # extended-precision loss used only as the finite-difference reference
    A = np.asarray(A, dtype=np.longdouble)
    Z = A / np.longdouble(tau)
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    S = E / E.sum(axis=1, keepdims=True)
    u = np.asarray(v, dtype=np.longdouble) @ np.asarray(X, dtype=np.longdouble)
    z = A.shape[0] * (S @ u)
    F = (z**p + np.longdouble(nu) * z).sum()
    return np.logaddexp(np.longdouble(0), -np.longdouble(y) * F)


def _stencil(f, h: float) -> float:
    # fourth-order central difference
    h = np.longdouble(h)
    return float((8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h))


def finite_diff_check(params: ModelParams, X: np.ndarray, y: int, h: float = 1e-4,
                      floor: float = 1e-12) -> GradCheckResult:
    """Compare analytic gradients with central differences of the loss.

    The reference uses the fourth-order central stencil on a long-double
    evaluation of the loss, so truncation and roundoff both stay well below
    the 1e-6 tolerance even for coordinates several decades smaller than
    the largest one. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    gv = grad_v(params, X, y)
    gA = grad_A(params, X, y)
    A0 = params.A.astype(np.longdouble)
    v0 = params.v.astype(np.longdouble)
    args = (X, y, params.p, params.nu, params.tau)

    nv = np.empty_like(params.v)
    for k in range(params.d):
        e = np.zeros_like(v0)
        e[k] = 1
        nv[k] = _stencil(lambda t: _loss_ld(A0, v0 + t * e, *args), h)

    nA = np.zeros_like(params.A)
    for i in range(params.D):
        for j in range(params.D):
            if i == j:
                continue
            E = np.zeros_like(A0)
            E[i, j] = 1
            nA[i, j] = _stencil(lambda t: _loss_ld(A0 + t * E, v0, *args), h)

    off = ~np.eye(params.D, dtype=bool)
    err_v = float(_rel_err(gv, nv, floor).max()) if params.d else 0.0
    err_A = float(_rel_err(gA[off], nA[off], floor).max()) if params.D > 1 else 0.0
    return GradCheckResult(
        max_rel_err=max(err_v, err_A),
        max_rel_err_v=err_v,
        max_rel_err_A=err_A,
        diag_grad_max_abs=float(np.abs(np.diag(gA)).max()),
    )


def default_tau(d: int) -> float:
    return math.sqrt(d)


def random_instance(rng: np.random.Generator, d_max: int = 8, D_max: int = 6):
    """A small random ``(params, X, y)`` for gradient checks.

    ``v`` is scaled so that pre-activations stay O(1).
    """
    d = int(rng.integers(2, d_max + 1))
    D = int(rng.integers(2, D_max + 1))
    p = int(rng.choice([3, 5]))
    tau = float(rng.uniform(0.5, 2.0))
    nu = float(rng.uniform(0.0, 0.2))
    sigma_A = float(rng.normal())
    A = rng.normal(size=(D, D))
    np.fill_diagonal(A, sigma_A)
    v = rng.normal(size=d) * 0.5 / (np.sqrt(d) * D)
    X = rng.normal(size=(d, D))
    y = int(rng.choice([-1, 1]))
    return ModelParams(A=A, v=v, p=p, nu=nu, tau=tau, sigma_A=sigma_A), X, y
