"""Spatially structured binary classification data.

Patches are partitioned into ``L`` disjoint sets of ``C`` patches each. One
set (the signal set) carries ``y * w_star``; every other patch carries
``delta_j * w_star`` with ``delta_j`` in {-1, 0, +1}. Gaussian noise is drawn
in the orthogonal complement of ``w_star`` so that ``<w_star, X_j>`` is
exactly the planted coefficient.

Indices are 0-based throughout. Patch matrices follow the ``d x D`` layout
(column ``j`` is patch ``j``); datasets store the transposed stack
``patches[n, j, :]`` for contiguous access.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import stream


@dataclass(frozen=True)
class Partition:
    """A partition of ``range(D)`` into ``L`` sets of size ``C``."""

    membership: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.membership, dtype=np.int64)
        object.__setattr__(self, "membership", m)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("membership must be a non-empty 1-d array")
        labels, counts = np.unique(m, return_counts=True)
        if labels[0] != 0 or labels[-1] != labels.size - 1:
            raise ValueError("set labels must be exactly 0..L-1")
        if not np.all(counts == counts[0]):
            raise ValueError(f"sets have unequal sizes: {sorted(set(counts.tolist()))}")

    @property
    def D(self) -> int:
        return int(self.membership.size)

    @property
    def L(self) -> int:
        return int(self.membership.max()) + 1

    @property
    def C(self) -> int:
        return self.D // self.L

    @property
    def sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.membership == ell) for ell in range(self.L)]

    def same_set_mask(self) -> np.ndarray:
        """``mask[i, j]`` is True iff patches i and j share a set (diagonal included)."""
        return self.membership[:, None] == self.membership[None, :]

    @classmethod
    def from_sets(cls, sets) -> "Partition":
        sets = [list(map(int, s)) for s in sets]
        D = sum(len(s) for s in sets)
        membership = np.full(D, -1, dtype=np.int64)
        for ell, s in enumerate(sets):
            for j in s:
                if not 0 <= j < D or membership[j] != -1:
                    raise ValueError(f"patch {j} is out of range or listed twice")
                membership[j] = ell
        return cls(membership)


def make_localized_partition(grid_rows: int, grid_cols: int, block_rows: int, block_cols: int) -> Partition:
    """Tile a row-major ``grid_rows x grid_cols`` patch grid with contiguous blocks."""
    if min(grid_rows, grid_cols, block_rows, block_cols) < 1:
        raise ValueError("grid and block dimensions must be positive")
    if grid_rows % block_rows or grid_cols % block_cols:
        raise ValueError(
            f"block {block_rows}x{block_cols} does not tile grid {grid_rows}x{grid_cols}: "
            "block dimensions must divide grid dimensions"
        )
    rows, cols = np.divmod(np.arange(grid_rows * grid_cols), grid_cols)
    blocks_per_row = grid_cols // block_cols
    return Partition((rows // block_rows) * blocks_per_row + cols // block_cols)


def make_random_partition(D: int, C: int, rng: np.random.Generator) -> Partition:
    """Uniformly random partition of ``range(D)`` into sets of size ``C``."""
    if C < 1 or D < 1 or D % C:
        raise ValueError(f"set size C={C} must divide D={D}")
    perm = rng.permutation(D)
    membership = np.empty(D, dtype=np.int64)
    membership[perm] = np.arange(D) // C
    return Partition(membership)


def sample_feature(d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a unit vector uniformly from the sphere in R^d."""
    if d < 1:
        raise ValueError("feature dimension must be at least 1")
    while True:
        g = rng.standard_normal(d)
        norm = np.linalg.norm(g)
        if norm > 0:
            return g / norm


def orthogonal_feature(w_star: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a unit vector uniformly from the sphere orthogonal to ``w_star``."""
    while True:
        g = rng.standard_normal(w_star.size)
        g -= (g @ w_star) * w_star
        norm = np.linalg.norm(g)
        if norm > 1e-8:
            g /= norm
            # second pass removes the residual left by rounding
            g -= (g @ w_star) * w_star
            return g / np.linalg.norm(g)


@dataclass(frozen=True)
class DistributionSpec:
    d: int
    D: int
    C: int
    L: int
    q: float
    sigma2: float
    threshold_frac: float
    w_star: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.w_star, dtype=np.float64)
        object.__setattr__(self, "w_star", w)
        if w.shape != (self.d,):
            raise ValueError(f"w_star must have shape ({self.d},), got {w.shape}")
        if abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ValueError("w_star must be a unit vector")
        if self.L * self.C != self.D:
            raise ValueError(f"L*C = {self.L * self.C} does not equal D = {self.D}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if not self.sigma2 >= 0.0:
            raise ValueError("sigma2 must be non-negative")
        if not 0.0 < self.threshold_frac < 1.0:
            raise ValueError("threshold_frac must lie in (0, 1)")

    @property
    def threshold(self) -> float:
        return self.threshold_frac * self.C

    def with_feature(self, w_star: np.ndarray) -> "DistributionSpec":
        return DistributionSpec(self.d, self.D, self.C, self.L, self.q, self.sigma2, self.threshold_frac, w_star)

    def check_partition(self, partition: Partition) -> None:
        if (partition.D, partition.C, partition.L) != (self.D, self.C, self.L):
            raise ValueError(
                f"partition (D={partition.D}, C={partition.C}, L={partition.L}) does not match "
                f"spec (D={self.D}, C={self.C}, L={self.L})"
            )


def desk_spec(w_star: np.ndarray, **overrides) -> DistributionSpec:
    """Calibrated desk-scale configuration (d=128, D=96, C=6, L=16, q=0.3)."""
    params = dict(d=128, D=96, C=6, L=16, q=0.3, sigma2=1.0 / 128, threshold_frac=0.9)
    params.update(overrides)
    return DistributionSpec(w_star=w_star, **params)


@dataclass(frozen=True)
class DataPoint:
    X: np.ndarray  # d x D
    y: int
    signal_set: int
    delta: np.ndarray  # signal patches hold y as a placeholder


def _draw_coefficients(spec: DistributionSpec, partition: Partition, n: int, rng: np.random.Generator):
    y = rng.choice(np.array([-1, 1]), size=n)
    ell = rng.integers(partition.L, size=n)
    u = rng.random((n, spec.D))
    half = spec.q / 2.0
    delta = np.where(u < half, -1, np.where(u < spec.q, 1, 0)).astype(np.int8)
    signal = partition.membership[None, :] == ell[:, None]
    delta = np.where(signal, y[:, None], delta).astype(np.int8)
    return y.astype(np.int8), ell, delta


def _draw_noise(spec: DistributionSpec, shape, rng: np.random.Generator) -> np.ndarray:
    xi = rng.standard_normal(shape + (spec.d,))
    xi -= (xi @ spec.w_star)[..., None] * spec.w_star
    xi *= np.sqrt(spec.sigma2)
    return xi


def sample_batch(spec: DistributionSpec, partition: Partition, n: int, rng: np.random.Generator):
    """Vectorised sampler: returns ``(patches[n, D, d], y[n], signal_set[n], delta[n, D])``."""
    spec.check_partition(partition)
    y, ell, delta = _draw_coefficients(spec, partition, n, rng)
    patches = _draw_noise(spec, (n, spec.D), rng)
    patches += delta[..., None].astype(np.float64) * spec.w_star
    return patches, y, ell, delta


def sample_coefficients(spec: DistributionSpec, partition: Partition, n: int, rng: np.random.Generator):
    """Sample only ``(y, signal_set, delta)``.

    Because the noise is orthogonal to ``w_star``, every quantity that depends
    on the data through ``<w_star, X_j>`` (the labeling function, the linear
    probe along ``w_star``) is a function of ``delta`` alone.
    """
    spec.check_partition(partition)
    return _draw_coefficients(spec, partition, n, rng)


def sample_datapoint(spec: DistributionSpec, partition: Partition, rng: np.random.Generator) -> DataPoint:
    patches, y, ell, delta = sample_batch(spec, partition, 1, rng)
    return DataPoint(X=patches[0].T.copy(), y=int(y[0]), signal_set=int(ell[0]), delta=delta[0].copy())


@dataclass
class Dataset:
    spec: DistributionSpec
    partition: Partition
    patches: np.ndarray  # N x D x d
    y: np.ndarray
    signal_set: np.ndarray
    delta: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def points(self) -> list[DataPoint]:
        return [self[n] for n in range(len(self))]

    def __getitem__(self, n: int) -> DataPoint:
        return DataPoint(X=self.patches[n].T, y=int(self.y[n]), signal_set=int(self.signal_set[n]), delta=self.delta[n])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.spec, self.partition, self.patches[idx], self.y[idx], self.signal_set[idx], self.delta[idx], self.seed)

    @classmethod
    def from_points(cls, spec: DistributionSpec, partition: Partition, points, seed=None) -> "Dataset":
        points = list(points)
        if not points:
            raise ValueError("cannot build a dataset from zero points")
        return cls(
            spec,
            partition,
            np.stack([p.X.T for p in points]),
            np.array([p.y for p in points], dtype=np.int8),
            np.array([p.signal_set for p in points], dtype=np.int64),
            np.stack([p.delta for p in points]).astype(np.int8),
            seed,
        )


def sample_dataset(spec: DistributionSpec, partition: Partition, N: int, seed: int) -> Dataset:
    """Sample ``N`` points, point ``n`` drawn from its own stream ``(seed, n)``."""
    spec.check_partition(partition)
    patches = np.empty((N, spec.D, spec.d))
    y = np.empty(N, dtype=np.int8)
    ell = np.empty(N, dtype=np.int64)
    delta = np.empty((N, spec.D), dtype=np.int8)
    for n in range(N):
        p, yy, ll, dd = sample_batch(spec, partition, 1, stream(seed, n))
        patches[n], y[n], ell[n], delta[n] = p[0], yy[0], ll[0], dd[0]
    return Dataset(spec, partition, patches, y, ell, delta, seed)


def _threshold_sum(set_sums: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(np.abs(set_sums) > threshold, set_sums, 0.0).sum(axis=-1)


def set_sums_from_coefficients(coeffs: np.ndarray, partition: Partition) -> np.ndarray:
    """Sum per-patch coefficients within each set: ``(..., D) -> (..., L)``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    out = np.zeros(coeffs.shape[:-1] + (partition.L,))
    for ell, members in enumerate(partition.sets):
        out[..., ell] = coeffs[..., members].sum(axis=-1)
    return out


def label_fn(X: np.ndarray, partition: Partition, spec: DistributionSpec) -> float:
    """Labeling function on a single ``d x D`` patch matrix."""
    if X.shape != (spec.d, spec.D):
        raise ValueError(f"X must have shape ({spec.d}, {spec.D}), got {X.shape}")
    return float(label_fn_from_coefficients(spec.w_star @ X, partition, spec))


def label_fn_batch(patches: np.ndarray, partition: Partition, spec: DistributionSpec) -> np.ndarray:
    return label_fn_from_coefficients(patches @ spec.w_star, partition, spec)


def label_fn_from_coefficients(coeffs: np.ndarray, partition: Partition, spec: DistributionSpec) -> np.ndarray:
    return _threshold_sum(set_sums_from_coefficients(coeffs, partition), spec.threshold)


def label_consistency(spec: DistributionSpec, partition: Partition, M: int, rng: np.random.Generator,
                      chunk: int = 100_000) -> float:
    """Monte-Carlo estimate of ``P[y f*(X) > 0]``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    hits = 0
    done = 0
    while done < M:
        n = min(chunk, M - done)
        y, _, delta = sample_coefficients(spec, partition, n, rng)
        f = label_fn_from_coefficients(delta, partition, spec)
        hits += int(np.count_nonzero(y * f > 0))
        done += n
    return hits / M
