"""Theory constants, stepsize bounds, Lyapunov function and per-round metrics."""
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AccuracyError, ConfigError, InconsistencyError, ParameterError
from .fileio import atomic_write

CSV_COLUMNS = ("k", "stat_sq", "cons_x", "cons_y", "cons_v", "track_x", "track_y", "track_v",
               "lyapunov", "train_loss", "test_loss", "accuracy")
CSV_HEADER = ",".join(CSV_COLUMNS)


# --------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class ConstantsLedger:
    sigma: float
    L_F0: float
    L_F1: float
    L_f1: float
    L_f2: float
    rho: float
    r_v: float
    L_1: float
    L_v: float
    L_phi: float
    C_1: float
    C_2: float
    C: float
    a: tuple  # a_1 .. a_8

    def as_dict(self):
        d = asdict(self)
        d["a"] = list(self.a)
        return d


def derive_constants(sigma, L_F0, L_F1, L_f1, L_f2, rho):
    """Fill in every derived constant from the five problem constants and rho."""
    for name, val in (("sigma", sigma), ("L_F0", L_F0), ("L_F1", L_F1), ("L_f1", L_f1)):
        if not val > 0:
            raise ParameterError(f"{name} must be positive, got {val}")
    if not L_f2 >= 0:
        raise ParameterError(f"L_f2 must be nonnegative, got {L_f2}")
    if not 0 <= rho < 1:
        raise ParameterError(f"rho must lie in [0, 1), got {rho}")
    if sigma > L_f1:
        raise InconsistencyError(f"sigma = {sigma} exceeds L_f1 = {L_f1}")
    r_v = L_F0 / sigma
    L_1 = L_F1 + L_f2 * r_v
    L_v = L_1 * (1 + L_f1 / sigma)
    L_phi = (L_F1
             + (2 * L_F1 * L_f1 + L_f2 * L_F0**2) / sigma
             + (2 * L_f1 * L_F0 * L_f2 + L_f1**2 * L_F1) / sigma**2
             + L_f2 * L_f1**2 * L_F0 / sigma**3)
    C_1 = 3 * max(L_1**2, L_f1**2)
    C_2 = L_f1**2
    a6 = 2 * rho**2 / (1 - rho) ** 2
    a8 = max(30 * rho**4 / (1 - rho) ** 3, 15 * rho**2 / (2 * (1 - rho)))
    a = (1.0, 1.0, 1.0, 1.0, 10 * rho**2 / (1 - rho), a6, a6, a8)
    return ConstantsLedger(sigma, L_F0, L_F1, L_f1, L_f2, rho, r_v, L_1, L_v, L_phi,
                           C_1, C_2, max(C_1, C_2), a)


def _ratio(num, den):
    # a clause whose denominator vanishes imposes no constraint
    return math.inf if den == 0 else num / den


def stepsize_clauses(ledger, beta=None, eta=None):
    """Every clause of the three min{...} bounds, in order.

    The eta clauses depend on beta and the alpha clauses on beta and eta;
    when those are not given the corresponding suprema are used.
    """
    s, rho, Lf1, L1, Lv, C = ledger.sigma, ledger.rho, ledger.L_f1, ledger.L_1, ledger.L_v, ledger.C
    _, _, _, _, _, a6, a7, a8 = ledger.a
    g = 1 - rho
    beta_cl = [
        4 * s * g / (75 * Lf1**2),
        1 / Lf1,
        _ratio(g, math.sqrt(96 * C * a7)),
        _ratio(s * g, 128 * C * a7),
        g / math.sqrt(24 * C),
    ]
    if beta is None:
        beta = min(beta_cl)
    eta_cl = [
        4 * s * g / (225 * L1**2),
        2 * s * rho**2 / (9 * L1**2),
        s * beta / (60 * L1**2),
        1 / Lf1,
        1 / L1,
        _ratio(rho * g, math.sqrt(360 * C * a8)),
        math.sqrt(_ratio(s * g * beta, 896 * C * a8)),
        _ratio(s * g, 320 * C * a8),
        _ratio(g, math.sqrt(_ratio(24 * C * a8, a6))),
        g / math.sqrt(24 * C),
    ]
    if eta is None:
        eta = min(eta_cl)
    alpha_cl = [
        1 / (4 * ledger.L_phi),
        s**3 * beta / (40 * Lf1**2),
        s**3 * eta / (40 * Lv**2),
        s * beta / (40 * L1**2),
        s * eta / (20 * Lf1**2),
        2 * g / (25 * L1**2),
        rho**2 / Lf1**2,
        1.0,
        _ratio(rho * g, math.sqrt(360 * C * a6)),
        math.sqrt(_ratio(s * g * beta, 896 * C * a6)),
        math.sqrt(_ratio(s * g * eta, 320 * C * a6)),
        g**1.5 / math.sqrt(24 * C),
    ]
    return {"beta": beta_cl, "eta": eta_cl, "alpha": alpha_cl}


def max_stepsizes(ledger, beta=None, eta=None):
    """(beta_max, eta_max, alpha_max); pass the chosen beta/eta to get the dependent bounds."""
    cl = stepsize_clauses(ledger, beta, eta)
    return min(cl["beta"]), min(cl["eta"]), min(cl["alpha"])


def theory_stepsizes(ledger, fraction=0.99):
    """Stepsizes at ``fraction`` of each bound, chosen in the order beta, eta, alpha."""
    from .sldbo import StepSizes

    if not 0 < fraction < 1:
        raise ParameterError("fraction must lie in (0, 1)")
    beta = fraction * max_stepsizes(ledger)[0]
    eta = fraction * max_stepsizes(ledger, beta=beta)[1]
    alpha = fraction * max_stepsizes(ledger, beta=beta, eta=eta)[2]
    return StepSizes(alpha=alpha, beta=beta, eta=eta)


def check_stepsizes(ledger, steps):
    """Whether each stepsize is strictly below its bound; returns (ok, bounds dict)."""
    b_max, e_max, a_max = max_stepsizes(ledger, beta=steps.beta, eta=steps.eta)
    bounds = {"beta_max": b_max, "eta_max": e_max, "alpha_max": a_max}
    ok = steps.beta < b_max and steps.eta < e_max and steps.alpha < a_max
    return ok, bounds


# --------------------------------------------------------------------------
# metrics


def consensus_error(Z):
    """(1/n) sum_i |Z_i - mean|^2."""
    Z = np.asarray(Z)
    with np.errstate(over="ignore", invalid="ignore"):
        dev = Z - Z.mean(axis=0)
        return float(np.sum(dev * dev) / Z.shape[0])


def lyapunov_terms(state, ledger, steps, truth, F_star):
    """The nine terms of V_k, in order."""
    if F_star is None:
        raise ConfigError("Lyapunov value needs F*: supply it or compute it first")
    a = ledger.a
    xb, yb, vb = state.x.mean(axis=0), state.y.mean(axis=0), state.v.mean(axis=0)
    if not np.allclose(xb, truth.x, rtol=0, atol=1e-12 * max(1.0, float(np.abs(xb).max()))):
        raise ValueError("truth report was not computed at the mean iterate")
    dy, dv = yb - truth.y_star, vb - truth.v_star
    return [
        truth.phi - F_star,
        a[0] * float(dy @ dy),
        a[1] * float(dv @ dv),
        a[2] * consensus_error(state.x),
        a[3] * consensus_error(state.y),
        a[4] * consensus_error(state.v),
        a[5] * steps.alpha**2 * consensus_error(state.tx),
        a[6] * steps.beta**2 * consensus_error(state.ty),
        a[7] * steps.eta**2 * consensus_error(state.tv),
    ]


def lyapunov(state, ledger, steps, truth, F_star):
    """V_k at a tracked state (trackers of the same round as the iterates)."""
    return float(math.fsum(lyapunov_terms(state, ledger, steps, truth, F_star)))


def round_metrics(k, state, truth=None, problem=None, ledger=None, steps=None, F_star=None):
    """One trace row. Fields not computable from the inputs are left as None."""
    row = dict.fromkeys(CSV_COLUMNS)
    row["k"] = k
    row["cons_x"] = consensus_error(state.x)
    row["cons_y"] = consensus_error(state.y)
    row["cons_v"] = consensus_error(state.v)
    if state.tracked:
        row["track_x"] = consensus_error(state.tx)
        row["track_y"] = consensus_error(state.ty)
        row["track_v"] = consensus_error(state.tv)
    if truth is not None:
        row["stat_sq"] = truth.stationarity_sq
        if ledger is not None and steps is not None and F_star is not None and state.tracked:
            row["lyapunov"] = lyapunov(state, ledger, steps, truth, F_star)
    if problem is not None and hasattr(problem, "accuracy"):
        omega = state.y.mean(axis=0)
        row["train_loss"] = problem.train_loss(omega)
        row["test_loss"] = problem.test_loss(omega)
        row["accuracy"] = problem.accuracy(omega)
    return row


@dataclass
class IterateTrace:
    rows: list = field(default_factory=list)
    error: Exception = None
    final_state: object = None

    def __len__(self):
        return len(self.rows)

    def append(self, row):
        self.rows.append(row)

    def column(self, name):
        """Values of one column, with None where not computed."""
        return [r.get(name) for r in self.rows]

    def series(self, name):
        """(k, value) pairs of the rows where ``name`` was computed."""
        return [(r["k"], r[name]) for r in self.rows if r.get(name) is not None]

    def last(self, name):
        s = self.series(name)
        return s[-1][1] if s else None

    def min_stationarity(self, K=None):
        """min over computed rows with k < K of stat_sq (all rows if K is None)."""
        vals = [v for k, v in self.series("stat_sq") if K is None or k < K]
        return min(vals) if vals else None

    def to_csv_text(self):
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            buf.write(",".join(_fmt(r.get(c)) for c in CSV_COLUMNS) + "\n")
        return buf.getvalue()

    def to_jsonl_text(self):
        return "".join(json.dumps({c: r.get(c) for c in CSV_COLUMNS}) + "\n" for r in self.rows)

    def write_csv(self, path):
        atomic_write(path, self.to_csv_text())

    def write_jsonl(self, path):
        atomic_write(path, self.to_jsonl_text())


def _fmt(val):
    if val is None:
        return ""
    if isinstance(val, (int, np.integer)) and not isinstance(val, bool):
        return str(int(val))
    val = float(val)
    if not math.isfinite(val):
        return ""
    return repr(val)


def read_trace_csv(path):
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header!r}")
        trace = IterateTrace()
        for line in fh:
            vals = line.rstrip("\n").split(",")
            row = {}
            for c, v in zip(CSV_COLUMNS, vals):
                row[c] = None if v == "" else (int(v) if c == "k" else float(v))
            trace.append(row)
    return trace


class Diagnostics:
    """Run hook that appends one metrics row per round to the trace.

    The truth oracle is evaluated at the mean iterate on rounds divisible by
    ``truth_every`` and on the final round (``truth_every=0`` disables it).
    A truth solve that misses its tolerance leaves the row's stationarity
    empty and is counted in ``truth_failures``.
    """

    def __init__(self, problem, K, ledger=None, steps=None, F_star=None, truth_every=10,
                 truth_tol=1e-10, truth_method="auto"):
        self.problem = problem
        self.K = K
        self.ledger = ledger
        self.steps = steps
        self.F_star = F_star
        self.truth_every = truth_every
        self.truth_tol = truth_tol
        self.truth_method = truth_method
        self._y_warm = None
        self.truths = {}
        self.truth_failures = 0

    def wants_truth(self, k):
        if not self.truth_every:
            return False
        return k % self.truth_every == 0 or k == self.K

    def truth_at(self, x):
        from .truth import exact_hypergradient

        rep = exact_hypergradient(self.problem, x, self.truth_tol, self.truth_tol,
                                  y0=self._y_warm, method=self.truth_method)
        self._y_warm = rep.y_star
        return rep

    def __call__(self, k, state, trace):
        truth = None
        if state.tracked and self.wants_truth(k):
            try:
                truth = self.truth_at(state.x.mean(axis=0))
                self.truths[k] = truth
            except AccuracyError:
                self.truth_failures += 1
        trace.append(round_metrics(k, state, truth, self.problem, self.ledger, self.steps, self.F_star))
