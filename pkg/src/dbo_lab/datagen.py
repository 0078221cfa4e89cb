"""Heterogeneous synthetic classification data for the logistic hyperparameter problem."""
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .oracles import AgentData

_TRUTH_STREAM = 2**32 - 1


@dataclass(frozen=True)
class SynthSpec:
    n_agents: int = 8
    dim: int = 50
    samples_per_agent: int = 2000
    heterogeneity: float = 1.0
    seed: int = 0
    truth: np.ndarray = None

    def __post_init__(self):
        for name in ("n_agents", "dim", "samples_per_agent"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be positive")
        if not self.heterogeneity > 0:
            raise ParameterError(f"heterogeneity must be > 0, got {self.heterogeneity}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")


def _rng(seed, *key):
    # per-(agent, split) substreams: output does not depend on generation order
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def ground_truth(spec):
    if spec.truth is not None:
        w = np.asarray(spec.truth, dtype=float)
        if w.shape != (spec.dim,):
            raise ParameterError(f"ground-truth weight must have length {spec.dim}")
        return w
    return _rng(spec.seed, _TRUTH_STREAM).standard_normal(spec.dim)


def generate_agent(spec, agent, w=None):
    """Train/test sets of agent ``agent`` (0-based); feature std is (agent+1) * r."""
    if w is None:
        w = ground_truth(spec)
    scale = (agent + 1) * spec.heterogeneity
    sets = []
    for split in (0, 1):
        rng = _rng(spec.seed, agent, split)
        X = rng.normal(0.0, scale, size=(spec.samples_per_agent, spec.dim))
        z = rng.standard_normal(spec.samples_per_agent)
        y = np.where(X @ w + 0.1 * z >= 0.0, 1.0, -1.0)
        sets += [X, y]
    return AgentData(*sets)


def generate_synthetic(spec):
    """One :class:`AgentData` per agent, labels sign(x'w + 0.1 z) with sign(0) = +1."""
    w = ground_truth(spec)
    return [generate_agent(spec, i, w) for i in range(spec.n_agents)]
