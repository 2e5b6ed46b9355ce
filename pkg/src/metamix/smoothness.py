"""Numerical audit of the mixup-gap inequality.

For a scalar field f whose gradient is kappa-Lipschitz,

    |f(lam*x + (1-lam)*x') - [lam*f(x) + (1-lam)*f(x')]|
        <= lam*(1-lam)*kappa/2 * ||x - x'||^2

holds for every pair and every lam in [0, 1]. This module estimates kappa
empirically, evaluates the left side (the "gap") over sampled pairs and a
lam grid, and counts violations of the bound. Everything here works on
batches of flattened points, shape [n, d].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from . import engine as eng
from . import nets
from .engine import NonFiniteError, Tensor
from .nets import ModelState

LAMBDA_GRID = tuple(np.round(np.arange(1, 10) * 0.1, 1))

# equality cases (quadratics along the top eigendirection) land exactly on
# the bound, so a violation must clear both a relative and an absolute slack
RATIO_SLACK = 1e-9
GAP_SLACK = 1e-12


class ScalarField(Protocol):
    """Batched scalar field: values [n] and gradients [n, d] from points [n, d]."""

    def value(self, points: np.ndarray) -> np.ndarray: ...

    def grad(self, points: np.ndarray) -> np.ndarray: ...


class QuadraticField:
    """f(x) = 1/2 x^T A x + b^T x. The gradient Lipschitz constant is the
    spectral norm of the symmetric part of A, available exactly."""

    def __init__(self, matrix: np.ndarray, linear: np.ndarray | None = None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"matrix must be square, got {matrix.shape}")
        self.matrix = matrix
        self.sym = 0.5 * (matrix + matrix.T)
        self.linear = (np.zeros(len(matrix)) if linear is None
                       else np.asarray(linear, dtype=np.float64))

    @property
    def kappa(self) -> float:
        return float(np.abs(np.linalg.eigvalsh(self.sym)).max())

    def value(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return 0.5 * np.einsum("ni,ij,nj->n", points, self.matrix, points) \
            + points @ self.linear

    def grad(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.sym + self.linear


class LogitField:
    """One output channel of a network as a scalar field of the input.

    Gradients come from one backward pass over the whole batch: rows are
    independent, so the gradient of the summed channel is the per-row
    gradient stack. Meaningful kappa estimates need smooth activations
    (softplus, tanh, sigmoid); relu gradients are piecewise constant.
    """

    def __init__(self, model: ModelState, channel: int):
        n_out = model.arch.layers[-1].width
        if not 0 <= channel < n_out:
            raise ValueError(f"channel {channel} out of range for {n_out} outputs")
        self.model = model
        self.channel = channel
        self.input_shape = model.arch.input_shape
        self._pick = np.zeros((n_out, 1))
        self._pick[channel, 0] = 1.0

    def _batched(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return points.reshape(len(points), *self.input_shape)

    def value(self, points: np.ndarray) -> np.ndarray:
        with eng.no_grad():
            logits = nets.forward(self.model, self._batched(points))
        return logits.data[:, self.channel].copy()

    def grad(self, points: np.ndarray) -> np.ndarray:
        x = Tensor(self._batched(points), requires_grad=True)
        logits = nets.forward(self.model, x)
        total = eng.sum_reduce(eng.matmul(logits, Tensor(self._pick)))
        (gx,) = eng.backward(total, [x])
        return gx.data.reshape(len(gx.data), -1)


def logit_fields(model: ModelState) -> list[LogitField]:
    return [LogitField(model, c) for c in range(model.arch.layers[-1].width)]


def _as_pair_batch(x, x_prime):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x_prime = np.atleast_2d(np.asarray(x_prime, dtype=np.float64))
    if x.shape != x_prime.shape:
        raise ValueError(f"pair shapes differ: {x.shape} vs {x_prime.shape}")
    return x, x_prime


def mixup_gap(field: ScalarField, x, x_prime, lam: float) -> np.ndarray | float:
    """|f(lam x + (1-lam) x') - [lam f(x) + (1-lam) f(x')]| per pair.

    Vector inputs give a float; [n, d] batches give an [n] array."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    scalar = np.asarray(x).ndim == 1
    bx, bp = _as_pair_batch(x, x_prime)
    gap = np.abs(field.value(lam * bx + (1.0 - lam) * bp)
                 - (lam * field.value(bx) + (1.0 - lam) * field.value(bp)))
    if not np.all(np.isfinite(gap)):
        raise NonFiniteError("field evaluation produced a non-finite gap")
    return float(gap[0]) if scalar else gap


def gap_bound(kappa: float, lam, distance) -> np.ndarray:
    """Right side of the inequality: lam(1-lam) kappa/2 ||x - x'||^2."""
    lam = np.asarray(lam, dtype=np.float64)
    return lam * (1.0 - lam) * kappa / 2.0 * np.square(distance)


def sample_pairs(data: np.ndarray, n_pairs: int, rng: np.random.Generator,
                 scales: tuple[float, ...] = (0.05, 0.5, 2.0)):
    """Pairs for the audit: anchors are data rows; partners alternate between
    other data rows (distant pairs) and Gaussian perturbations of the anchor
    at the given length scales (local pairs). Returns (X, X') as [n, d]."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    flat = np.asarray(data, dtype=np.float64).reshape(len(data), -1)
    anchors = flat[rng.integers(0, len(flat), n_pairs)]
    partners = flat[rng.integers(0, len(flat), n_pairs)]
    kind = rng.integers(0, len(scales) + 1, n_pairs)
    noise = rng.standard_normal(anchors.shape)
    for i, scale in enumerate(scales):
        local = kind == i + 1
        partners[local] = anchors[local] + scale * noise[local]
    return anchors, partners


PairSampler = Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    n_pairs: int
    distance_min: float
    distance_mean: float
    distance_max: float
    per_channel: tuple[float, ...] | None = None


def kappa_from_pairs(field: ScalarField, x: np.ndarray,
                     x_prime: np.ndarray) -> KappaEstimate:
    """max ||grad f(x) - grad f(x')|| / ||x - x'|| over the given pairs.
    A lower bound of the true constant; degenerate pairs (x = x') are skipped."""
    x, x_prime = _as_pair_batch(x, x_prime)
    dist = np.linalg.norm(x - x_prime, axis=1)
    keep = dist > 0
    if not keep.any():
        raise ValueError("all pairs are degenerate (x == x')")
    diff = np.linalg.norm(field.grad(x[keep]) - field.grad(x_prime[keep]), axis=1)
    d = dist[keep]
    return KappaEstimate(
        kappa=float((diff / d).max()), n_pairs=int(keep.sum()),
        distance_min=float(d.min()), distance_mean=float(d.mean()),
        distance_max=float(d.max()))


def estimate_kappa(field: ScalarField, sampler: PairSampler, n_pairs: int,
                   rng: np.random.Generator) -> KappaEstimate:
    return kappa_from_pairs(field, *sampler(n_pairs, rng))


def estimate_kappa_network(model: ModelState, sampler: PairSampler,
                           n_pairs: int, rng: np.random.Generator) -> KappaEstimate:
    """Worst channel over a shared pair sample; per-channel values retained."""
    x, x_prime = sampler(n_pairs, rng)
    estimates = [kappa_from_pairs(f, x, x_prime) for f in logit_fields(model)]
    worst = max(estimates, key=lambda e: e.kappa)
    return KappaEstimate(
        kappa=worst.kappa, n_pairs=worst.n_pairs,
        distance_min=worst.distance_min, distance_mean=worst.distance_mean,
        distance_max=worst.distance_max,
        per_channel=tuple(e.kappa for e in estimates))


@dataclass(frozen=True)
class AuditReport:
    """Outcome of checking the bound over pairs x lam grid.

    ``rows`` is the flat evaluation table, one row per (pair, lam):
    columns (distance, lam, gap, bound). ``max_ratio`` is gap/bound over
    rows with a positive bound; a zero bound with a real gap counts as a
    violation directly (ratio undefined)."""
    kappa: float
    n_pairs: int
    lam_grid: tuple[float, ...]
    max_ratio: float
    violations: int
    worst_pair: dict
    rows: np.ndarray

    def summary(self) -> dict:
        return {
            "kappa": self.kappa, "n_pairs": self.n_pairs,
            "lambda_grid": list(self.lam_grid), "max_gap_ratio": self.max_ratio,
            "violations": self.violations, "worst_pair": self.worst_pair,
        }


def audit_gap_bound(field: ScalarField, kappa: float, pairs,
                      lam_grid: tuple[float, ...] = LAMBDA_GRID) -> AuditReport:
    """Evaluate the gap against the bound for every pair at every lam.

    Pairs are passed explicitly (from ``sample_pairs`` or hand-built) so a
    caller can append adversarial pairs such as eigendirections. A pair
    violates at lam when gap > bound * (1 + 1e-9) + 1e-12.
    """
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    x, x_prime = _as_pair_batch(*pairs)
    n = len(x)
    dist = np.linalg.norm(x - x_prime, axis=1)
    fx, fp = field.value(x), field.value(x_prime)

    rows = np.empty((n * len(lam_grid), 4))
    for j, lam in enumerate(lam_grid):
        gap = np.abs(field.value(lam * x + (1.0 - lam) * x_prime)
                     - (lam * fx + (1.0 - lam) * fp))
        block = rows[j * n:(j + 1) * n]
        block[:, 0] = dist
        block[:, 1] = lam
        block[:, 2] = gap
        block[:, 3] = gap_bound(kappa, lam, dist)
    if not np.all(np.isfinite(rows)):
        raise NonFiniteError("audit evaluation produced non-finite values")

    gaps, bounds = rows[:, 2], rows[:, 3]
    violated = gaps > bounds * (1.0 + RATIO_SLACK) + GAP_SLACK
    positive = bounds > 0
    ratios = np.zeros(len(rows))
    ratios[positive] = gaps[positive] / bounds[positive]
    worst_row = int(np.argmax(np.where(violated & ~positive, np.inf, ratios)))
    worst = {
        "pair_index": worst_row % n, "distance": float(rows[worst_row, 0]),
        "lam": float(rows[worst_row, 1]), "gap": float(rows[worst_row, 2]),
        "bound": float(rows[worst_row, 3]),
    }
    return AuditReport(
        kappa=float(kappa), n_pairs=n, lam_grid=tuple(lam_grid),
        max_ratio=float(ratios.max()), violations=int(violated.sum()),
        worst_pair=worst, rows=rows)


def audit_network(model: ModelState, kappa: float, pairs,
                  lam_grid: tuple[float, ...] = LAMBDA_GRID
                  ) -> tuple[AuditReport, int]:
    """Audit every logit channel with a shared kappa; return the worst
    (highest max ratio, violations breaking ties) and its channel index."""
    reports = [audit_gap_bound(f, kappa, pairs, lam_grid)
               for f in logit_fields(model)]
    worst = max(range(len(reports)),
                key=lambda c: (reports[c].violations, reports[c].max_ratio))
    return reports[worst], worst


def write_audit_csv(report: AuditReport, path) -> None:
    np.savetxt(path, report.rows, delimiter=",", fmt="%.17g",
               header="distance,lambda,gap,bound", comments="")
