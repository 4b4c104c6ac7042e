"""Metrics: patch association, accuracy, and value-vector alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distribution import DistributionSpec, Partition, label_fn_batch, sample_batch
from .model import ModelParams, batch_outputs, score_matrix


def top_c_sets(A: np.ndarray, C: int) -> list[frozenset]:
    """Indices of the ``C`` largest entries of each row, ties to the smaller index.

    The diagonal is included.
    """
    A = np.asarray(A, dtype=np.float64)
    if not 1 <= C <= A.shape[1]:
        raise ValueError(f"C must lie in [1, {A.shape[1]}], got {C}")
    # stable sort on -row keeps the original order among equal entries
    order = np.argsort(-A, axis=1, kind="stable")[:, :C]
    return [frozenset(int(j) for j in row) for row in order]


@dataclass(frozen=True)
class PatchAssocReport:
    per_row_top_sets: list
    per_row_hit: np.ndarray
    score: float
    intersection_empty_fraction: float


def patch_association_score(A: np.ndarray, partition: Partition) -> PatchAssocReport:
    A = np.asarray(A)
    if A.shape != (partition.D, partition.D):
        raise ValueError(f"A has shape {A.shape}, partition has D={partition.D}")
    tops = top_c_sets(A, partition.C)
    targets = [frozenset(int(j) for j in s) for s in partition.sets]
    hit = np.array([tops[i] == targets[partition.membership[i]] for i in range(partition.D)])
    empty = np.array([not (tops[i] & targets[partition.membership[i]]) for i in range(partition.D)])
    return PatchAssocReport(
        per_row_top_sets=tops,
        per_row_hit=hit,
        score=float(hit.mean()),
        intersection_empty_fraction=float(empty.mean()),
    )


def cosine_sim(v: np.ndarray, w_star: np.ndarray) -> float:
    nv = np.linalg.norm(v)
    nw = np.linalg.norm(w_star)
    if nv == 0 or nw == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(v, w_star) / (nv * nw), -1.0, 1.0))


def residual_norm(v: np.ndarray, w_star: np.ndarray) -> float:
    """Norm of the part of ``v`` orthogonal to the unit vector ``w_star``."""
    return float(np.linalg.norm(v - np.dot(v, w_star) * w_star))


@dataclass(frozen=True)
class AccuracyEstimate:
    accuracy: float
    stderr: float
    M: int


def estimate_accuracy(params: ModelParams, spec: DistributionSpec, partition: Partition, M: int,
                      rng: np.random.Generator, chunk: int = 1000) -> AccuracyEstimate:
    """Fraction of fresh samples with ``f*(X) F(X) > 0``; ties count as errors."""
    if M < 1:
        raise ValueError("M must be at least 1")
    S = score_matrix(params.A, params.tau)
    hits = 0
    done = 0
    while done < M:
        n = min(chunk, M - done)
        patches, _, _, _ = sample_batch(spec, partition, n, rng)
        F = batch_outputs(params, patches, S)
        f = label_fn_batch(patches, partition, spec)
        hits += int(np.count_nonzero(F * f > 0))
        done += n
    acc = hits / M
    return AccuracyEstimate(acc, math.sqrt(acc * (1 - acc) / M), M)


def test_accuracy(params: ModelParams, spec: DistributionSpec, partition: Partition, M: int,
                  rng: np.random.Generator) -> float:
    return estimate_accuracy(params, spec, partition, M, rng).accuracy


test_accuracy.__test__ = False  # not a pytest test
