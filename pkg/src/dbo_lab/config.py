"""Run configuration: flat ``key = value`` text with ``#`` comments."""
import math
import os
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

PROBLEMS = ("quadratic", "logistic-synthetic", "logistic-file")
TOPOLOGIES = ("ring", "complete", "file")
ALGORITHMS = ("sldbo", "sldbo-noproj", "soba")


@dataclass(frozen=True)
class RunConfig:
    problem: str = "quadratic"
    algorithm: str = "sldbo"
    topology: str = "ring"
    self_weight: float = 0.4
    matrix_file: str = None
    n_agents: int = None          # 4 for quadratic, 8 for logistic
    dim: int = None               # upper dimension p: 3 for quadratic, 50 for logistic
    dim_lower: int = 5            # quadratic only
    coupling: float = 0.5         # quadratic only
    samples: int = 2000           # per agent and split
    heterogeneity: float = 1.0
    loss_reduction: str = "mean"
    data_dir: str = None
    save_data: str = None
    lambda_lo: float = -2.0
    lambda_hi: float = 2.0
    stepsize_rule: str = "manual"
    theory_fraction: float = 0.99
    alpha: float = 0.025
    beta: float = 0.06
    eta: float = 0.025
    r_v: float = None             # None: the ledger's L_F0 / sigma
    rounds: int = 1000
    seed: int = 0
    truth_every: int = 10
    enforce_theory: bool = False
    deterministic: bool = True
    jsonl: bool = False
    out: str = "runs/out"

    def resolved_n_agents(self):
        if self.n_agents is not None:
            return self.n_agents
        return 4 if self.problem == "quadratic" else 8

    def resolved_dim(self):
        if self.dim is not None:
            return self.dim
        return 3 if self.problem == "quadratic" else 50


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT_KEYS = {"n_agents", "dim", "dim_lower", "samples", "rounds", "seed", "truth_every"}
_BOOL_KEYS = {"enforce_theory", "deterministic", "jsonl"}
_STR_KEYS = {"problem", "algorithm", "topology", "matrix_file", "loss_reduction", "data_dir",
             "save_data", "stepsize_rule", "out"}
_PATH_KEYS = ("matrix_file", "data_dir")
_POSITIVE = {"alpha", "beta", "eta", "samples", "rounds", "dim", "dim_lower", "n_agents",
             "heterogeneity", "coupling"}


def _unquote(s):
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def _strip_comment(line):
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def _convert(key, raw, line):
    if raw.lower() in ("none", "") and _FIELDS[key].default is None:
        return None
    try:
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if key in _INT_KEYS:
            val = int(raw)
            return val
        if key in _STR_KEYS:
            return raw
        val = float(raw)
        if not math.isfinite(val):
            raise ValueError(raw)
        return val
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r}", key=key, line=line) from None


def validate(cfg, lines=None, base_dir=None):
    """Check value ranges and cross-key rules; returns the config with relative paths resolved."""
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(msg, key=key, line=lines.get(key))

    if cfg.problem not in PROBLEMS:
        fail("problem", f"must be one of {', '.join(PROBLEMS)}")
    if cfg.algorithm not in ALGORITHMS:
        fail("algorithm", f"must be one of {', '.join(ALGORITHMS)}")
    if cfg.topology not in TOPOLOGIES:
        fail("topology", f"must be one of {', '.join(TOPOLOGIES)}")
    if cfg.loss_reduction not in ("mean", "sum"):
        fail("loss_reduction", "must be 'mean' or 'sum'")
    if cfg.stepsize_rule not in ("manual", "theory"):
        fail("stepsize_rule", "must be 'manual' or 'theory'")
    for key in _POSITIVE:
        val = getattr(cfg, key)
        if val is not None and not val > 0:
            fail(key, f"must be positive, got {val}")
    if cfg.r_v is not None and not cfg.r_v >= 0:
        fail("r_v", f"must be nonnegative, got {cfg.r_v}")
    if not 0 <= cfg.seed < 2**64:
        fail("seed", "must be an unsigned 64-bit integer")
    if cfg.truth_every < 0:
        fail("truth_every", "must be >= 0 (0 disables the truth oracle)")
    if not 0 < cfg.theory_fraction < 1:
        fail("theory_fraction", "must lie in (0, 1)")
    if cfg.lambda_lo > cfg.lambda_hi:
        fail("lambda_lo", "lambda box must have lambda_lo <= lambda_hi")
    if cfg.topology == "ring" and not 0 < cfg.self_weight < 1:
        fail("self_weight", f"must lie in (0, 1), got {cfg.self_weight}")
    if cfg.problem == "logistic-file" and cfg.data_dir is None:
        fail("data_dir", "required for problem = logistic-file")
    if cfg.topology == "file" and cfg.matrix_file is None and cfg.algorithm != "soba":
        fail("matrix_file", "required for topology = file")
    if base_dir is not None:
        for key in _PATH_KEYS:
            val = getattr(cfg, key)
            if val is not None and not os.path.isabs(val):
                cfg = replace(cfg, **{key: os.path.normpath(os.path.join(base_dir, val))})
    for key in _PATH_KEYS:
        val = getattr(cfg, key)
        if val is not None and not os.path.exists(val):
            if key == "matrix_file" and (cfg.topology != "file" or cfg.algorithm == "soba"):
                continue
            fail(key, f"path does not exist: {val}")
    return cfg


def parse_config(source, base_dir=None):
    """Parse a config from a file path or from inline text (anything containing a newline or '=')."""
    if "\n" not in source and "=" not in source:
        path = source
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if base_dir is None:
            base_dir = os.path.dirname(os.path.abspath(path))
    else:
        text = source
    values, lines = _parse_pairs(text, _FIELDS)
    return validate(RunConfig(**values), lines, base_dir)


def _parse_pairs(text, allowed):
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in allowed:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in values:
            raise ConfigError("duplicate key", key=key, line=lineno)
        values[key] = _convert(key, _unquote(val.strip()), lineno)
        lines[key] = lineno
    return values, lines


_DATA_KEYS = {"n_agents": "n_agents", "dim": "dim", "samples": "samples_per_agent",
              "heterogeneity": "heterogeneity", "seed": "seed"}


def parse_data_spec(path):
    """Read a data-generation spec (keys n_agents, dim, samples, heterogeneity, seed)."""
    from .datagen import SynthSpec
    from .errors import ParameterError

    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read spec file: {exc}") from None
    values, lines = _parse_pairs(text, _DATA_KEYS)
    kw = {_DATA_KEYS[k]: v for k, v in values.items() if v is not None}
    try:
        return SynthSpec(**kw)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


def _render_value(val):
    if val is None:
        return "none"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, str):
        return f'"{val}"'
    return str(val)


def render_config(cfg):
    """Text that parses back to ``cfg``."""
    return "".join(f"{f.name} = {_render_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def with_overrides(cfg, **kw):
    """Apply CLI-style overrides (None values are ignored) and re-validate."""
    kw = {k: v for k, v in kw.items() if v is not None}
    return validate(replace(cfg, **kw)) if kw else cfg
