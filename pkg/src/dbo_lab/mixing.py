"""Communication topologies as doubly-stochastic mixing matrices."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ParameterError, ShapeError, TopologyError, ValidationError
from .fileio import atomic_write

ROW_SUM_TOL = 1e-12
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class MixingMatrix:
    """An immutable, validated mixing matrix.

    ``slot_idx``/``slot_w`` hold each row's nonzero pattern in ascending
    neighbour order (padded with zero weights), which is the reduction order
    used by the deterministic gossip.
    """

    weights: np.ndarray
    rho: float
    slot_idx: np.ndarray = field(repr=False)
    slot_w: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.weights.shape[0]

    def neighbors(self, i):
        return [int(j) for j in np.flatnonzero(self.weights[i]) if j != i]


def _slots(weights):
    n = weights.shape[0]
    rows = [np.flatnonzero(weights[i]) for i in range(n)]
    width = max(len(r) for r in rows)
    idx = np.empty((n, width), dtype=np.intp)
    w = np.zeros((n, width))
    for i, r in enumerate(rows):
        idx[i, : len(r)] = r
        idx[i, len(r):] = i
        w[i, : len(r)] = weights[i, r]
    return idx, w


def validate_mixing(weights):
    """Check symmetry, nonnegativity, row sums and connectivity; return rho.

    rho = max(|lambda_2|, |lambda_n|) from a symmetric eigendecomposition.
    A single agent (W = [[1]]) is accepted with rho = 0.
    """
    W = np.asarray(weights, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"mixing matrix must be square, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise ValidationError("finite", "matrix has non-finite entries")
    if np.max(np.abs(W - W.T)) > SYMMETRY_TOL:
        raise ValidationError("symmetry", "W != W^T")
    if np.any(W < 0):
        raise ValidationError("nonnegativity", "negative entry in W")
    sums = W.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
        raise ValidationError("row-sum", f"max row-sum deviation {np.max(np.abs(sums - 1.0)):.3e}")
    if W.shape[0] == 1:
        return 0.0
    eig = np.sort(np.linalg.eigvalsh(W))[::-1]
    rho = float(max(abs(eig[1]), abs(eig[-1])))
    if rho >= 1.0 - 1e-12:
        raise ValidationError("spectral-gap", f"rho = {rho:.6g} >= 1 (network not connected)")
    return rho


def mixing_matrix(weights):
    """Validate ``weights`` and wrap it as a :class:`MixingMatrix`."""
    W = np.array(weights, dtype=float)
    rho = validate_mixing(W)
    W = 0.5 * (W + W.T)
    W.setflags(write=False)
    idx, w = _slots(W)
    idx.setflags(write=False)
    w.setflags(write=False)
    return MixingMatrix(W, rho, idx, w)


def build_ring_mixing(n, w):
    """Ring with self weight ``w`` and weight ``(1 - w)/2`` on both neighbours."""
    if int(n) != n or n < 3:
        raise TopologyError(f"ring needs n >= 3 agents, got {n}")
    if not 0.0 < w < 1.0:
        raise ParameterError(f"self weight must lie in (0, 1), got {w}")
    n = int(n)
    W = np.zeros((n, n))
    side = (1.0 - w) / 2.0
    for i in range(n):
        W[i, i] = w
        W[i, (i + 1) % n] = side
        W[i, (i - 1) % n] = side
    return mixing_matrix(W)


def complete_mixing(n):
    """Uniform averaging, W = (1/n) 11^T."""
    return mixing_matrix(np.full((n, n), 1.0 / n))


def single_agent():
    return mixing_matrix(np.ones((1, 1)))


def load_mixing(path):
    """Read n rows of n whitespace-separated decimals."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                rows.append([float(tok) for tok in line.split()])
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ShapeError(f"{path}: expected n rows of n values")
    return mixing_matrix(np.array(rows))


def save_mixing(path, W):
    rows = np.asarray(W.weights if isinstance(W, MixingMatrix) else W)
    atomic_write(path, "".join(" ".join(repr(float(x)) for x in row) + "\n" for row in rows))


def rho_power_iteration(weights, tol=1e-13, max_iter=100_000, seed=0):
    """rho via power iteration on (W - J)^2, J the averaging matrix.

    Squaring folds the +/- rho pair into a single dominant eigenvalue rho^2.
    """
    W = np.asarray(weights, dtype=float)
    n = W.shape[0]
    M = W - np.full((n, n), 1.0 / n)
    M = M @ M
    z = np.random.default_rng(seed).standard_normal(n)
    z -= z.mean()
    z /= np.linalg.norm(z)
    lam = 0.0
    for _ in range(max_iter):
        u = M @ z
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        new = float(z @ u)
        z = u / nrm
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    return float(np.sqrt(max(lam, 0.0)))


def gossip(W, Z, deterministic=True, backend=None):
    """One gossip round: row i of the result is sum_j w_ij Z_j.

    In deterministic mode the sum runs over neighbours in ascending index
    order; otherwise a dense BLAS product is used.
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    squeeze = Z.ndim == 1
    if squeeze:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[0] != W.n:
        raise ShapeError(f"expected {W.n} stacked rows, got shape {Z.shape}")
    if deterministic:
        out = kernels.get(backend).gossip(W.slot_idx, W.slot_w, Z)
    else:
        out = W.weights @ Z
    return out[:, 0] if squeeze else out
