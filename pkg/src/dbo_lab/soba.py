"""Centralized single-loop baseline (three simultaneous sequences)."""
from dataclasses import dataclass

import numpy as np

from .diagnostics import IterateTrace
from .errors import DivergenceError, ParameterError
from .sldbo import NetworkState, project_ball


@dataclass(frozen=True)
class SobaState:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    k: int = 0


def soba_directions(state, problem):
    """(d_y, d_v, d_x) of the averaged problem at the state."""
    return problem.mean_directions(state.x, state.y, state.v)


def soba_step(state, problem, steps, r_v=None, directions=None):
    """y -= beta d_y; v += eta d_v (optionally projected); x -= alpha d_x.

    All three directions are evaluated at the incoming state (pass them in
    via ``directions`` if already computed).
    """
    d_y, d_v, d_x = soba_directions(state, problem) if directions is None else directions
    with np.errstate(over="ignore", invalid="ignore"):
        y = state.y + (-steps.beta) * d_y
        v = state.v + steps.eta * d_v
        if r_v is not None:
            v = project_ball(v, r_v)
        x = state.x + (-steps.alpha) * d_x
    for name, z in (("x", x), ("y", y), ("v", v)):
        if not np.all(np.isfinite(z)):
            raise DivergenceError(0, state.k, what=f"iterate {name}")
    return SobaState(x, y, v, state.k + 1)


def as_network_state(state, directions=None):
    """View a centralized state as a one-agent network whose trackers equal its directions."""
    if directions is None:
        zp, zq = np.zeros((1, state.x.size)), np.zeros((1, state.y.size))
        return NetworkState(state.x[None], state.y[None], state.v[None], zp, zq, zq, zp, zq, zq, k=state.k)
    d_y, d_v, d_x = (d[None] for d in directions)
    return NetworkState(state.x[None], state.y[None], state.v[None], d_x, d_y, d_v, d_x, d_y, d_v,
                        k=state.k, tracked=True)


def run_soba(problem, steps, K, r_v=None, hooks=None, x0=None, y0=None, v0=None, on_divergence="raise"):
    """K rounds of the baseline; hooks see one-agent network views (see :func:`as_network_state`)."""
    if K < 1:
        raise ParameterError("need at least one round")
    hooks = list(hooks or [])
    x0 = np.zeros(problem.p) if x0 is None else np.asarray(x0, dtype=float)
    y0 = np.zeros(problem.q) if y0 is None else np.asarray(y0, dtype=float)
    v0 = np.zeros(problem.q) if v0 is None else np.asarray(v0, dtype=float)
    state = SobaState(x0.copy(), y0.copy(), v0.copy())
    trace = IterateTrace()
    for k in range(K + 1):
        dirs = soba_directions(state, problem)
        if not all(np.all(np.isfinite(d)) for d in dirs):
            err = DivergenceError(0, k)
            for hook in hooks:
                hook(k, as_network_state(state), trace)
            trace.error, trace.final_state = err, state
            if on_divergence == "raise":
                err.trace = trace
                raise err
            return trace
        for hook in hooks:
            hook(k, as_network_state(state, dirs), trace)
        if k == K:
            break
        try:
            state = soba_step(state, problem, steps, r_v, dirs)
        except DivergenceError as err:
            trace.error, trace.final_state = err, state
            if on_divergence == "raise":
                err.trace = trace
                raise
            return trace
    trace.final_state = state
    return trace
