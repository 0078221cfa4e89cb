"""Per-agent bilevel oracles and the two concrete problem families.

An agent oracle exposes the first- and second-order information of its local
upper objective F_i(x, y) and lower objective f_i(x, y):

    upper_value, lower_value                    scalars
    upper_grad_x, upper_grad_y                  gradients of F_i
    lower_grad_x, lower_grad_y                  gradients of f_i
    lower_hvp(x, y, v)                          Hessian_yy f_i . v
    lower_jvp(x, y, v)                          Jacobian_xy f_i . v  (in R^p)
    directions(x, y, v) -> (d_y, d_v, d_x)      the three single-loop directions

A problem bundles the agents. Its averaged methods implement the global
(1/n) sum_i aggregates and are what the truth oracle and the centralized
baseline consume.
"""
import os
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConstructionError, ParameterError, ShapeError
from .fileio import atomic_write

# max |psi'''| of the logistic loss, attained at s(1-s)(1-2s) extremum
_PSI3_MAX = 1.0 / (6.0 * np.sqrt(3.0))


def psi(t):
    """Logistic loss log(1 + exp(-t)), stable for any finite t."""
    t = np.asarray(t, dtype=float)
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(-t, 0.0)


def dpsi(t):
    """psi'(t) = -1 / (1 + e^t)."""
    return kernels.python_kernels.dpsi(np.asarray(t, dtype=float))


def d2psi(t):
    """psi''(t) = e^t / (1 + e^t)^2."""
    return kernels.python_kernels.d2psi(np.asarray(t, dtype=float))


class BilevelProblem:
    """A list of agent oracles plus their global averages."""

    agents = ()

    @property
    def n(self):
        return len(self.agents)

    def oracle(self, i):
        return self.agents[i]

    def _mean(self, name, *args):
        return np.mean(np.stack([getattr(a, name)(*args) for a in self.agents]), axis=0)

    def upper_value(self, x, y):
        return float(np.mean([a.upper_value(x, y) for a in self.agents]))

    def lower_value(self, x, y):
        return float(np.mean([a.lower_value(x, y) for a in self.agents]))

    def upper_grad_x(self, x, y):
        return self._mean("upper_grad_x", x, y)

    def upper_grad_y(self, x, y):
        return self._mean("upper_grad_y", x, y)

    def lower_grad_x(self, x, y):
        return self._mean("lower_grad_x", x, y)

    def lower_grad_y(self, x, y):
        return self._mean("lower_grad_y", x, y)

    def lower_hvp(self, x, y, v):
        return self._mean("lower_hvp", x, y, v)

    def lower_jvp(self, x, y, v):
        return self._mean("lower_jvp", x, y, v)

    def mean_directions(self, x, y, v):
        """Directions of the averaged problem, as the mean of the agents' directions."""
        per_agent = [a.directions(x, y, v) for a in self.agents]
        return tuple(np.mean(np.stack([d[k] for d in per_agent]), axis=0) for k in range(3))

    def lower_bounds(self, x):
        """(strong convexity, gradient Lipschitz) of y -> f(x, y) at fixed x."""
        raise NotImplementedError

    def lower_solution_exact(self, x):
        """Closed-form y*(x) when the family has one, else None."""
        return None


class _DirectionsMixin:
    def directions(self, x, y, v):
        d_y = self.lower_grad_y(x, y)
        d_v = self.upper_grad_y(x, y) - self.lower_hvp(x, y, v)
        d_x = self.upper_grad_x(x, y) - self.lower_jvp(x, y, v)
        return d_y, d_v, d_x


# --------------------------------------------------------------------------
# quadratic family


class QuadraticAgent(_DirectionsMixin):
    """f_i = 1/2 y'Qy - y'(Px + c),  F_i = 1/2 |y - Rx|^2 + b'x."""

    def __init__(self, Q, P, c, R, b):
        self.Q, self.P, self.c, self.R, self.b = Q, P, c, R, b
        self.q, self.p = P.shape

    def upper_value(self, x, y):
        r = y - self.R @ x
        return 0.5 * float(r @ r) + float(self.b @ x)

    def lower_value(self, x, y):
        return 0.5 * float(y @ self.Q @ y) - float(y @ (self.P @ x + self.c))

    def upper_grad_x(self, x, y):
        return -self.R.T @ (y - self.R @ x) + self.b

    def upper_grad_y(self, x, y):
        return y - self.R @ x

    def lower_grad_x(self, x, y):
        return -self.P.T @ y

    def lower_grad_y(self, x, y):
        return self.Q @ y - self.P @ x - self.c

    def lower_hvp(self, x, y, v):
        return self.Q @ v

    def lower_jvp(self, x, y, v):
        return -self.P.T @ v


class QuadraticBilevel(BilevelProblem):
    """Quadratic test family with closed-form y*, v* and hypergradient.

    Arrays are stacked over agents: Q (n,q,q), P (n,q,p), c (n,q), R (n,q,p), b (n,p).
    """

    def __init__(self, Q, P, c, R, b):
        Q, P, c, R, b = (np.array(a, dtype=float) for a in (Q, P, c, R, b))
        n, q, p = P.shape
        if Q.shape != (n, q, q) or c.shape != (n, q) or R.shape != (n, q, p) or b.shape != (n, p):
            raise ShapeError("inconsistent quadratic problem shapes")
        if np.max(np.abs(Q - Q.transpose(0, 2, 1))) > 1e-12:
            raise ConstructionError("every Q_i must be symmetric")
        self.Q, self.P, self.c, self.R, self.b = Q, P, c, R, b
        self.p, self.q = p, q
        self.Q_bar = Q.mean(axis=0)
        self.P_bar = P.mean(axis=0)
        self.c_bar = c.mean(axis=0)
        self.R_bar = R.mean(axis=0)
        self.b_bar = b.mean(axis=0)
        eig = np.linalg.eigvalsh(self.Q_bar)
        if eig[0] <= 0:
            raise ConstructionError(f"mean lower Hessian not positive definite (min eigenvalue {eig[0]:.3e})")
        self.sigma = float(eig[0])
        self.lower_lipschitz = float(eig[-1])
        self.agents = [quadratic_oracle(self, i) for i in range(n)]

    def lower_bounds(self, x):
        return self.sigma, self.lower_lipschitz

    def lower_solution_exact(self, x):
        return np.linalg.solve(self.Q_bar, self.P_bar @ x + self.c_bar)

    def y_star(self, x):
        return self.lower_solution_exact(x)

    def v_star(self, x):
        y = self.y_star(x)
        return np.linalg.solve(self.Q_bar, y - self.R_bar @ x)

    def hypergradient(self, x):
        """Closed form: mean grad_x F + P_bar' Q_bar^-1 mean grad_y F, at y*(x)."""
        y = self.y_star(x)
        g1 = np.mean([-R.T @ (y - R @ x) + b for R, b in zip(self.R, self.b)], axis=0)
        g2 = y - self.R_bar @ x
        return g1 + self.P_bar.T @ np.linalg.solve(self.Q_bar, g2)

    def phi(self, x):
        return self.upper_value(x, self.y_star(x))

    def minimizer(self):
        """Global minimizer of Phi and its value F*; Phi is a convex quadratic in x."""
        A = np.linalg.solve(self.Q_bar, self.P_bar)
        a = np.linalg.solve(self.Q_bar, self.c_bar)
        M = A[None] - self.R
        H = np.einsum("nqi,nqj->ij", M, M) / self.n
        g = np.einsum("nqi,q->i", M, a) / self.n + self.b_bar
        if np.linalg.eigvalsh(H)[0] <= 1e-12 * max(1.0, np.abs(H).max()):
            raise ConstructionError("upper objective has no unique minimizer")
        x_star = np.linalg.solve(H, -g)
        return x_star, self.phi(x_star)

    def default_region(self, x0=None):
        """(x_radius, y_radius) of a region holding x0, x* and y*(x) for every x in it.

        x_radius is twice the larger of |x0|, |x*| and 1; y_radius bounds |y*(x)| there.
        """
        x_star, _ = self.minimizer()
        x0_norm = 0.0 if x0 is None else float(np.linalg.norm(x0))
        x_radius = 2.0 * max(1.0, x0_norm, float(np.linalg.norm(x_star)))
        q_inv = 1.0 / self.sigma
        y_radius = q_inv * (float(np.linalg.norm(self.P_bar, 2)) * x_radius + float(np.linalg.norm(self.c_bar)))
        return x_radius, y_radius

    def lipschitz_constants(self, x_radius, y_radius):
        """Assumption constants on the region |x| <= x_radius, |y| <= y_radius.

        F_i is quadratic, so it is only Lipschitz on a bounded region; the
        remaining constants are global. sigma uses the per-agent minimum.
        """
        sigma = min(float(np.linalg.eigvalsh(Q)[0]) for Q in self.Q)
        L_f1 = L_F1 = L_F0 = 0.0
        for Q, P, R, b in zip(self.Q, self.P, self.R, self.b):
            Hf = np.block([[np.zeros((self.p, self.p)), -P.T], [-P, Q]])
            HF = np.block([[R.T @ R, -R.T], [-R, np.eye(self.q)]])
            L_f1 = max(L_f1, float(np.linalg.norm(Hf, 2)))
            L_F1 = max(L_F1, float(np.linalg.norm(HF, 2)))
            r_norm = float(np.linalg.norm(R, 2))
            gy = y_radius + r_norm * x_radius
            gx = r_norm * gy + float(np.linalg.norm(b))
            L_F0 = max(L_F0, float(np.hypot(gx, gy)))
        return dict(sigma=sigma, L_F0=L_F0, L_F1=L_F1, L_f1=L_f1, L_f2=0.0)


def quadratic_oracle(spec, agent):
    """Agent ``agent`` of a :class:`QuadraticBilevel` instance."""
    return QuadraticAgent(spec.Q[agent], spec.P[agent], spec.c[agent], spec.R[agent], spec.b[agent])


def random_quadratic(n=4, p=3, q=5, seed=0, coupling=0.5):
    """Heterogeneous random quadratic instance with every Q_i in [1, 2] spectrally."""
    rng = np.random.default_rng(seed)
    Q = np.empty((n, q, q))
    for i in range(n):
        U, _ = np.linalg.qr(rng.standard_normal((q, q)))
        Qi = (U * rng.uniform(1.0, 2.0, q)) @ U.T
        Q[i] = 0.5 * (Qi + Qi.T)
    P = coupling * rng.standard_normal((n, q, p))
    c = rng.standard_normal((n, q))
    R = coupling * rng.standard_normal((n, q, p))
    b = rng.standard_normal((n, p))
    return QuadraticBilevel(Q, P, c, R, b)


# --------------------------------------------------------------------------
# logistic hyperparameter family


@dataclass(frozen=True)
class AgentData:
    """One agent's private training and test sets; labels are +/-1."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def p(self):
        return self.x_train.shape[1]


def _check_set(X, y, p=None):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],) or X.shape[0] == 0:
        raise ShapeError(f"dataset shapes {X.shape} / {y.shape} are inconsistent or empty")
    if p is not None and X.shape[1] != p:
        raise ShapeError(f"feature dimension {X.shape[1]} != {p}")
    return X, y


class LogisticAgent(_DirectionsMixin):
    """Upper: logistic loss on the test set. Lower: logistic loss on the
    training set plus 1/2 sum_j exp(lambda_j) omega_j^2.

    ``reduction="mean"`` averages the per-sample losses, ``"sum"`` adds them.
    """

    def __init__(self, data, reduction="mean"):
        if reduction not in ("mean", "sum"):
            raise ParameterError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
        self.x_tr, self.y_tr = _check_set(data.x_train, data.y_train)
        self.x_te, self.y_te = _check_set(data.x_test, data.y_test, self.x_tr.shape[1])
        self.p = self.q = self.x_tr.shape[1]
        self.w_tr = 1.0 / len(self.y_tr) if reduction == "mean" else 1.0
        self.w_te = 1.0 / len(self.y_te) if reduction == "mean" else 1.0
        self.reduction = reduction

    def _check(self, *vecs):
        for z in vecs:
            if np.shape(z) != (self.p,):
                raise ShapeError(f"expected vectors of length {self.p}, got {np.shape(z)}")

    def upper_value(self, lam, omega):
        return self.w_te * float(np.sum(psi(self.y_te * (self.x_te @ omega))))

    def lower_value(self, lam, omega):
        loss = self.w_tr * float(np.sum(psi(self.y_tr * (self.x_tr @ omega))))
        return loss + 0.5 * float(np.sum(np.exp(lam) * omega**2))

    def upper_grad_x(self, lam, omega):
        return np.zeros(self.p)

    def upper_grad_y(self, lam, omega):
        m = self.y_te * (self.x_te @ omega)
        return self.w_te * (self.x_te.T @ (dpsi(m) * self.y_te))

    def lower_grad_x(self, lam, omega):
        return 0.5 * np.exp(lam) * omega**2

    def lower_grad_y(self, lam, omega):
        m = self.y_tr * (self.x_tr @ omega)
        return self.w_tr * (self.x_tr.T @ (dpsi(m) * self.y_tr)) + np.exp(lam) * omega

    def lower_hvp(self, lam, omega, v):
        m = self.y_tr * (self.x_tr @ omega)
        return self.w_tr * (self.x_tr.T @ (d2psi(m) * (self.x_tr @ v))) + np.exp(lam) * v

    def lower_jvp(self, lam, omega, v):
        return np.exp(lam) * omega * v

    def directions(self, lam, omega, v):
        self._check(lam, omega, v)
        return kernels.active.logistic_directions(
            self.x_tr, self.y_tr, self.x_te, self.y_te,
            np.ascontiguousarray(lam, dtype=float),
            np.ascontiguousarray(omega, dtype=float),
            np.ascontiguousarray(v, dtype=float),
            self.w_tr, self.w_te,
        )


def logistic_oracle(data, agent, reduction="mean"):
    """Oracle for agent ``agent`` given the list of per-agent datasets."""
    return LogisticAgent(data[agent], reduction)


class LogisticHyperOpt(BilevelProblem):
    """Decentralized l2-hyperparameter tuning of logistic regression."""

    def __init__(self, datasets, reduction="mean"):
        if not datasets:
            raise ShapeError("need at least one agent dataset")
        p = datasets[0].p
        for d in datasets:
            _check_set(d.x_train, d.y_train, p)
            _check_set(d.x_test, d.y_test, p)
        self.datasets = list(datasets)
        self.reduction = reduction
        self.agents = [logistic_oracle(self.datasets, i, reduction) for i in range(len(datasets))]
        self.p = self.q = p
        gram = np.mean([a.w_tr * (a.x_tr.T @ a.x_tr) for a in self.agents], axis=0)
        self._gram_bound = float(np.linalg.eigvalsh(gram)[-1]) / 4.0

    def lower_bounds(self, lam):
        el = np.exp(lam)
        return float(el.min()), self._gram_bound + float(el.max())

    def accuracy(self, omega):
        """Accuracy of the linear classifier ``omega`` on all agents' test data."""
        hits = total = 0
        for a in self.agents:
            pred = np.where(a.x_te @ omega > 0, 1.0, -1.0)
            hits += int(np.sum(pred == a.y_te))
            total += len(a.y_te)
        return hits / total

    def train_loss(self, omega):
        return float(np.mean([a.w_tr * np.sum(psi(a.y_tr * (a.x_tr @ omega))) for a in self.agents]))

    def test_loss(self, omega):
        return self.upper_value(None, omega)

    def lipschitz_constants(self, lambda_box=(-2.0, 2.0)):
        """Data-derived constants over a box lo <= lambda_j <= hi.

        sigma = e^lo; L_F0 from feature norms of the test sets; L_F1 and the
        logistic part of L_f1 from Gram matrices (|psi''| <= 1/4); L_f2 from
        |psi'''| <= 1/(6 sqrt 3). The exp(hi) terms bound the regulariser.
        """
        lo, hi = lambda_box
        if lo > hi:
            raise ParameterError("lambda box must have lo <= hi")
        L_F0 = L_F1 = L_f1 = L_f2 = 0.0
        for a in self.agents:
            L_F0 = max(L_F0, a.w_te * float(np.sum(np.linalg.norm(a.x_te, axis=1))))
            L_F1 = max(L_F1, a.w_te * float(np.linalg.eigvalsh(a.x_te.T @ a.x_te)[-1]) / 4.0)
            L_f1 = max(L_f1, a.w_tr * float(np.linalg.eigvalsh(a.x_tr.T @ a.x_tr)[-1]) / 4.0)
            L_f2 = max(L_f2, a.w_tr * _PSI3_MAX * float(np.sum(np.linalg.norm(a.x_tr, axis=1) ** 3)))
        eh = float(np.exp(hi))
        return dict(sigma=float(np.exp(lo)), L_F0=L_F0, L_F1=L_F1, L_f1=L_f1 + eh, L_f2=L_f2 + eh)


# --------------------------------------------------------------------------
# dataset files


def write_dataset(path, X, y):
    """Header ``p n_samples``, then ``label x_1 ... x_p`` per line."""
    X, y = _check_set(X, y)
    lines = [f"{X.shape[1]} {X.shape[0]}"]
    for label, row in zip(y, X):
        lines.append(f"{int(label):d} " + " ".join(repr(float(v)) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def read_dataset(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ShapeError(f"{path}: header must be 'p n_samples'")
        p, m = int(header[0]), int(header[1])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != m:
        raise ShapeError(f"{path}: header says {m} samples, found {len(rows)}")
    if any(len(r) != p + 1 for r in rows):
        raise ShapeError(f"{path}: every sample needs a label and {p} features")
    arr = np.array(rows, dtype=float).reshape(m, p + 1)
    y = arr[:, 0]
    if not np.all(np.abs(y) == 1.0):
        raise ShapeError(f"{path}: labels must be +1 or -1")
    return np.ascontiguousarray(arr[:, 1:]), np.ascontiguousarray(y)


def save_agent_datasets(directory, datasets):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, d in enumerate(datasets, start=1):
        tr = os.path.join(directory, f"agent{i}_train.txt")
        te = os.path.join(directory, f"agent{i}_test.txt")
        write_dataset(tr, d.x_train, d.y_train)
        write_dataset(te, d.x_test, d.y_test)
        paths += [tr, te]
    return paths


def load_agent_datasets(directory):
    out = []
    i = 1
    while os.path.exists(os.path.join(directory, f"agent{i}_train.txt")):
        xtr, ytr = read_dataset(os.path.join(directory, f"agent{i}_train.txt"))
        xte, yte = read_dataset(os.path.join(directory, f"agent{i}_test.txt"))
        if out and xtr.shape[1] != out[0].p:
            raise ShapeError(f"agent {i} has feature dimension {xtr.shape[1]}, expected {out[0].p}")
        out.append(AgentData(xtr, ytr, xte, yte))
        i += 1
    if not out:
        raise ShapeError(f"no agent datasets found in {directory}")
    return out
