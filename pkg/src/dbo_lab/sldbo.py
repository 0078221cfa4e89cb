"""Single-loop decentralized bilevel optimization (SLDBO).

Each round every agent forms three local directions from its oracle,

    d_y = grad_y f_i(x_i, y_i)
    d_v = grad_y F_i(x_i, y_i) - Hess_yy f_i(x_i, y_i) v_i
    d_x = grad_x F_i(x_i, y_i) - Jac_xy f_i(x_i, y_i) v_i

tracks their network average with

    t_i <- sum_j w_ij t_j + d_i - d_i(previous round)

and then moves adapt-then-combine:

    y_i <- sum_j w_ij (y_j - beta t_y,j)
    v_i <- Proj_{r_v}[ sum_j w_ij (v_j + eta t_v,j) ]
    x_i <- sum_j w_ij (x_j - alpha t_x,j)

A round is split into :func:`track` (directions and trackers at the current
iterates) and :func:`combine` (the three gossip updates), so that diagnostics
can observe the trackers of round k before the iterates move.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .diagnostics import IterateTrace
from .errors import DivergenceError, InitializationError, ParameterError, ShapeError


@dataclass(frozen=True)
class StepSizes:
    alpha: float
    beta: float
    eta: float

    def __post_init__(self):
        for name in ("alpha", "beta", "eta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ParameterError(f"stepsize {name} must be positive, got {val}")


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    t_x: np.ndarray
    t_y: np.ndarray
    t_v: np.ndarray
    d_x_prev: np.ndarray
    d_y_prev: np.ndarray
    d_v_prev: np.ndarray


@dataclass(frozen=True)
class NetworkState:
    """All agents' memory, stacked row-wise (row i belongs to agent i).

    Between rounds ``t*``/``d*`` hold the trackers and directions of round
    k-1 (zero before round 0). After :func:`track` they hold round k's values
    and ``tracked`` is set.
    """

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    tv: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dv: np.ndarray
    k: int = 0
    tracked: bool = False
    proj_active: bool = False

    @property
    def n(self):
        return self.x.shape[0]

    def agent(self, i):
        return AgentState(self.x[i], self.y[i], self.v[i], self.tx[i], self.ty[i], self.tv[i],
                          self.dx[i], self.dy[i], self.dv[i])

    def agents(self):
        return [self.agent(i) for i in range(self.n)]


def project_ball(z, r):
    """Euclidean projection of ``z`` onto the ball of radius ``r``."""
    if r < 0:
        raise ParameterError(f"radius must be nonnegative, got {r}")
    z = np.asarray(z, dtype=float)
    nrm = float(np.linalg.norm(z))
    if nrm <= r:
        return z.copy()
    return z * (r / nrm)


def init_states(problem, x0, y0, v0, r_v=None):
    """Consensus start with zero trackers and zero previous directions.

    Every agent gets copies of (x0, y0, v0); the first combine of the
    initialization box is the identity here, so it is not evaluated.
    """
    n = problem.n
    x0, y0, v0 = (np.asarray(a, dtype=float) for a in (x0, y0, v0))
    if x0.shape != (problem.p,) or y0.shape != (problem.q,) or v0.shape != (problem.q,):
        raise ShapeError("initial point dimensions do not match the problem")
    if r_v is not None and np.linalg.norm(v0) > r_v:
        raise InitializationError(f"|v0| = {np.linalg.norm(v0):.4g} exceeds r_v = {r_v}")
    X = np.tile(x0, (n, 1))
    Y = np.tile(y0, (n, 1))
    V = np.tile(v0, (n, 1))
    zp, zq = np.zeros((n, problem.p)), np.zeros((n, problem.q))
    return NetworkState(X, Y, V, zp, zq, zq.copy(), zp.copy(), zq.copy(), zq.copy())


def default_workers():
    try:
        return max(1, int(os.environ.get("DBO_LAB_THREADS", "1")))
    except ValueError:
        return 1


def local_directions(problem, state, workers=1):
    """Stacked (d_y, d_v, d_x) of every agent at the current iterates."""
    def one(i):
        return problem.oracle(i).directions(state.x[i], state.y[i], state.v[i])

    if workers > 1 and state.n > 1:
        with ThreadPoolExecutor(max_workers=min(workers, state.n)) as pool:
            per_agent = list(pool.map(one, range(state.n)))
    else:
        per_agent = [one(i) for i in range(state.n)]
    out = []
    for k in range(3):
        D = np.stack([d[k] for d in per_agent])
        bad = ~np.all(np.isfinite(D), axis=1)
        if bad.any():
            raise DivergenceError(int(np.argmax(bad)), state.k)
        out.append(np.ascontiguousarray(D))
    return tuple(out)


def track(state, problem, W, deterministic=True, workers=1, backend=None):
    """Compute round-k directions and gradient-tracking variables."""
    if state.tracked:
        raise ValueError("state already tracked for this round")
    if W.n != state.n:
        raise ShapeError(f"mixing matrix is {W.n}x{W.n} but there are {state.n} agents")
    dy, dv, dx = local_directions(problem, state, workers)
    if deterministic:
        kern = kernels.get(backend)
        tx = kern.track(W.slot_idx, W.slot_w, state.tx, state.dx, dx)
        ty = kern.track(W.slot_idx, W.slot_w, state.ty, state.dy, dy)
        tv = kern.track(W.slot_idx, W.slot_w, state.tv, state.dv, dv)
    else:
        A = W.weights
        tx = (A @ state.tx - state.dx) + dx
        ty = (A @ state.ty - state.dy) + dy
        tv = (A @ state.tv - state.dv) + dv
    return replace(state, tx=tx, ty=ty, tv=tv, dx=dx, dy=dy, dv=dv, tracked=True)


def _combine_fast(W, Z, T, step, radius):
    out = W.weights @ (Z + step * T)
    active = np.zeros(out.shape[0], dtype=bool)
    if radius >= 0:
        norms = np.linalg.norm(out, axis=1)
        active = norms > radius
        out[active] *= (radius / norms[active])[:, None]
    return out, active


def combine(state, W, steps, r_v, projection=True, deterministic=True, backend=None):
    """Gossip-combine the iterates with the round's trackers (advances k)."""
    if not state.tracked:
        raise ValueError("combine needs a tracked state")
    radius = float(r_v) if projection else -1.0
    if deterministic:
        kern = kernels.get(backend)

        def comb(Z, T, step, rad):
            return kern.combine(W.slot_idx, W.slot_w, Z, T, step, rad)
    else:
        def comb(Z, T, step, rad):
            return _combine_fast(W, Z, T, step, rad)

    y, _ = comb(state.y, state.ty, -steps.beta, -1.0)
    v, active = comb(state.v, state.tv, steps.eta, radius)
    x, _ = comb(state.x, state.tx, -steps.alpha, -1.0)
    for name, Z in (("x", x), ("y", y), ("v", v)):
        bad = ~np.all(np.isfinite(Z), axis=1)
        if bad.any():
            raise DivergenceError(int(np.argmax(bad)), state.k, what=f"iterate {name}")
    return replace(state, x=x, y=y, v=v, k=state.k + 1, tracked=False, proj_active=bool(np.any(active)))


def sldbo_step(state, problem, W, steps, r_v, projection=True, deterministic=True, workers=1,
               backend=None):
    """One full round: track, then combine."""
    tracked = track(state, problem, W, deterministic, workers, backend)
    return combine(tracked, W, steps, r_v, projection, deterministic, backend)


def run(problem, W, steps, r_v, K, projection=True, hooks=None, x0=None, y0=None, v0=None,
        deterministic=True, workers=None, backend=None, on_divergence="raise"):
    """Initialize and run K rounds.

    ``hooks`` are called as ``hook(k, state, trace)`` for k = 0..K with the
    tracked state of round k; the final call at k = K observes the iterates
    after K steps. If a round diverges the hooks are called once more with
    the untracked state so iterate-level metrics of the last finite iterate
    are still recorded. ``on_divergence="truncate"`` returns the partial trace
    with ``trace.error`` set instead of raising.
    """
    if K < 1:
        raise ParameterError("need at least one round")
    if on_divergence not in ("raise", "truncate"):
        raise ParameterError("on_divergence must be 'raise' or 'truncate'")
    hooks = list(hooks or [])
    workers = default_workers() if workers is None else workers
    x0 = np.zeros(problem.p) if x0 is None else x0
    y0 = np.zeros(problem.q) if y0 is None else y0
    v0 = np.zeros(problem.q) if v0 is None else v0
    state = init_states(problem, x0, y0, v0, r_v if projection else None)
    trace = IterateTrace()
    for k in range(K + 1):
        try:
            tracked = track(state, problem, W, deterministic, workers, backend)
        except DivergenceError as err:
            for hook in hooks:
                hook(k, state, trace)
            trace.error = err
            trace.final_state = state
            if on_divergence == "raise":
                err.trace = trace
                raise
            return trace
        for hook in hooks:
            hook(k, tracked, trace)
        if k == K:
            break
        try:
            state = combine(tracked, W, steps, r_v, projection, deterministic, backend)
        except DivergenceError as err:
            trace.error = err
            trace.final_state = tracked
            if on_divergence == "raise":
                err.trace = trace
                raise
            return trace
    trace.final_state = state
    return trace
