import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbo_lab.diagnostics import (CSV_HEADER, Diagnostics, IterateTrace, check_stepsizes, consensus_error,
                                 derive_constants, lyapunov, lyapunov_terms, max_stepsizes, read_trace_csv,
                                 round_metrics, stepsize_clauses, theory_stepsizes)
from dbo_lab.errors import ConfigError, InconsistencyError, ParameterError
from dbo_lab.harness import problem_constants
from dbo_lab.mixing import build_ring_mixing, single_agent
from dbo_lab.oracles import random_quadratic
from dbo_lab.sldbo import StepSizes, combine, init_states, run, track
from dbo_lab.truth import exact_hypergradient

# Each clause as a cell formula over the ledger symbols. Evaluated with
# plain division so that a zero denominator shows up as ZeroDivisionError,
# which the sheet maps to +inf.
BETA_SHEET = [
    "4*s*g/(75*Lf1**2)", "1/Lf1", "g/sqrt(96*C*a7)", "s*g/(128*C*a7)", "g/sqrt(24*C)",
]
ETA_SHEET = [
    "4*s*g/(225*L1**2)", "2*s*rho**2/(9*L1**2)", "s*beta/(60*L1**2)", "1/Lf1", "1/L1",
    "rho*g/sqrt(360*C*a8)", "sqrt(s*g*beta/(896*C*a8))", "s*g/(320*C*a8)",
    "g/sqrt(24*C*a8/a6)", "g/sqrt(24*C)",
]
ALPHA_SHEET = [
    "1/(4*Lphi)", "s**3*beta/(40*Lf1**2)", "s**3*eta/(40*Lv**2)", "s*beta/(40*L1**2)",
    "s*eta/(20*Lf1**2)", "2*g/(25*L1**2)", "rho**2/Lf1**2", "1", "rho*g/sqrt(360*C*a6)",
    "sqrt(s*g*beta/(896*C*a6))", "sqrt(s*g*eta/(320*C*a6))", "g**1.5/sqrt(24*C)",
]


def sheet_min(cells, env):
    vals = []
    for c in cells:
        try:
            vals.append(eval(c, {"sqrt": math.sqrt}, env))
        except ZeroDivisionError:
            vals.append(math.inf)
    return min(vals)


def sheet_bounds(sigma, L_F0, L_F1, L_f1, L_f2, rho):
    r_v = L_F0 / sigma
    L1 = L_F1 + L_f2 * r_v
    Lv = L1 + L1 * L_f1 / sigma
    Lphi = sum([L_F1, 2 * L_F1 * L_f1 / sigma, L_f2 * L_F0**2 / sigma,
                2 * L_f1 * L_F0 * L_f2 / sigma**2, L_f1**2 * L_F1 / sigma**2, L_f2 * L_f1**2 * L_F0 / sigma**3])
    C = max(3 * L1**2, 3 * L_f1**2, L_f1**2)
    a6 = a7 = 2 * rho**2 / (1 - rho) ** 2
    a8 = max(30 * rho**4 / (1 - rho) ** 3, 15 * rho**2 / (2 * (1 - rho)))
    env = dict(s=sigma, g=1 - rho, rho=rho, Lf1=L_f1, L1=L1, Lv=Lv, Lphi=Lphi, C=C, a6=a6, a7=a7, a8=a8)
    env["beta"] = sheet_min(BETA_SHEET, env)
    env["eta"] = sheet_min(ETA_SHEET, env)
    return env["beta"], env["eta"], sheet_min(ALPHA_SHEET, env)


# --------------------------------------------------------------------------
# ledger


def test_rv_example():
    assert derive_constants(1.0, 2.0, 1.0, 1.0, 0.0, 0.5).r_v == 2.0


def test_unit_constants():
    led = derive_constants(1.0, 1.0, 1.0, 1.0, 0.0, 0.3)
    assert led.L_1 == 1.0 and led.L_v == 2.0 and led.L_phi == 4.0
    assert led.C_1 == 3.0 and led.C_2 == 1.0 and led.C == 3.0


def test_rho_zero_coefficients():
    led = derive_constants(1.0, 1.0, 1.0, 2.0, 0.5, 0.0)
    assert led.a[:4] == (1.0, 1.0, 1.0, 1.0)
    assert led.a[4:] == (0.0, 0.0, 0.0, 0.0)


def test_inconsistent_sigma():
    with pytest.raises(InconsistencyError):
        derive_constants(2.0, 1.0, 1.0, 1.0, 0.0, 0.5)


@pytest.mark.parametrize("args", [(0.0, 1, 1, 1, 0, 0.5), (1, -1, 1, 1, 0, 0.5), (1, 1, 1, 1, -0.1, 0.5),
                                  (1, 1, 1, 1, 0, 1.0), (1, 1, 1, 1, 0, -0.1)])
def test_ledger_domain(args):
    with pytest.raises(ParameterError):
        derive_constants(*args)


@settings(max_examples=100, deadline=None)
@given(sigma=st.floats(0.01, 5), ratio=st.floats(1, 50), L_F0=st.floats(0.01, 50), L_F1=st.floats(0.01, 50),
       L_f2=st.floats(0, 20), rho=st.floats(0, 0.99))
def test_ledger_coherence(sigma, ratio, L_F0, L_F1, L_f2, rho):
    L_f1 = sigma * ratio
    led = derive_constants(sigma, L_F0, L_F1, L_f1, L_f2, rho)
    assert led.L_v == pytest.approx(led.L_1 * (1 + L_f1 / sigma), rel=1e-14)
    assert led.C == max(led.C_1, led.C_2)
    assert all(v > 0 for v in (led.r_v, led.L_1, led.L_v, led.L_phi, led.C))
    bigger = derive_constants(sigma, 2 * L_F0, L_F1, L_f1, L_f2, rho)
    assert bigger.r_v > led.r_v and bigger.L_phi >= led.L_phi and bigger.L_1 >= led.L_1
    b, e, a = max_stepsizes(led)
    assert b <= 1 / L_f1
    sb, se, sa = sheet_bounds(sigma, L_F0, L_F1, L_f1, L_f2, rho)
    assert (b, e, a) == pytest.approx((sb, se, sa), rel=1e-12)


def test_seed0_bounds_two_ways(quad):
    c = problem_constants(quad)
    led = derive_constants(rho=build_ring_mixing(4, 0.4).rho, **c)
    got = max_stepsizes(led)
    ref = sheet_bounds(**c, rho=led.rho)
    for u, v in zip(got, ref):
        assert abs(u - v) <= 1e-12 * abs(v)


def test_rho_zero_clauses():
    led = derive_constants(1.0, 1.0, 1.0, 2.0, 0.0, 0.0)
    cl = stepsize_clauses(led)
    assert cl["beta"][2] == math.inf and cl["beta"][3] == math.inf
    assert cl["eta"][5] == math.inf and cl["eta"][7] == math.inf
    # the rho^2 clauses are genuine zeros at rho = 0
    assert cl["eta"][1] == 0.0 and cl["alpha"][6] == 0.0


def test_theory_stepsizes_satisfy_bounds(quad):
    led = derive_constants(rho=0.4, **problem_constants(quad))
    steps = theory_stepsizes(led, 0.5)
    ok, bounds = check_stepsizes(led, steps)
    assert ok
    assert steps.beta == pytest.approx(0.5 * bounds["beta_max"])
    assert steps.alpha == pytest.approx(0.5 * bounds["alpha_max"])
    ok, _ = check_stepsizes(led, StepSizes(0.025, 0.06, 0.025))
    assert not ok
    with pytest.raises(ParameterError):
        theory_stepsizes(led, 1.0)


# --------------------------------------------------------------------------
# metrics and Lyapunov function


def test_consensus_error():
    Z = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert consensus_error(Z) == 1.0
    assert consensus_error(np.tile([3.0, 4.0], (5, 1))) == 0.0


def test_round_metrics_consensus_start(quad):
    s = init_states(quad, np.ones(3), np.ones(5), np.zeros(5))
    row = round_metrics(0, s)
    assert row["cons_x"] == row["cons_y"] == row["cons_v"] == 0.0
    assert row["track_x"] is None and row["stat_sq"] is None and row["lyapunov"] is None


def test_round_metrics_losses(logistic_small):
    s = init_states(logistic_small, np.zeros(10), np.zeros(10), np.zeros(10))
    row = round_metrics(0, s, problem=logistic_small)
    assert row["train_loss"] == pytest.approx(np.log(2))
    assert 0 <= row["accuracy"] <= 1


def test_lyapunov_zero_at_optimum(quad):
    x_star, F_star = quad.minimizer()
    W = build_ring_mixing(4, 0.4)
    led = derive_constants(rho=W.rho, **problem_constants(quad))
    s = init_states(quad, x_star, quad.y_star(x_star), quad.v_star(x_star))
    rep = exact_hypergradient(quad, x_star)
    assert lyapunov(s, led, StepSizes(1e-3, 1e-3, 1e-3), rep, F_star) == pytest.approx(0.0, abs=1e-18)


def test_lyapunov_needs_f_star(quad):
    s = init_states(quad, np.zeros(3), np.zeros(5), np.zeros(5))
    led = derive_constants(rho=0.4, **problem_constants(quad))
    with pytest.raises(ConfigError):
        lyapunov(s, led, StepSizes(1, 1, 1), exact_hypergradient(quad, np.zeros(3)), None)


def test_lyapunov_terms_nonnegative(quad):
    W = build_ring_mixing(4, 0.4)
    led = derive_constants(rho=W.rho, **problem_constants(quad))
    steps = StepSizes(0.05, 0.2, 0.2)
    _, F_star = quad.minimizer()
    rng = np.random.default_rng(3)
    s = init_states(quad, rng.standard_normal(3), rng.standard_normal(5), np.zeros(5))
    for _ in range(5):
        t = track(s, quad, W)
        terms = lyapunov_terms(t, led, steps, exact_hypergradient(quad, t.x.mean(0)), F_star)
        assert all(v >= -1e-14 for v in terms)
        s = combine(t, W, steps, 100.0)


def test_lyapunov_descent_short_run(quad):
    W = build_ring_mixing(4, 0.4)
    led = derive_constants(rho=W.rho, **problem_constants(quad))
    steps = theory_stepsizes(led)
    _, F_star = quad.minimizer()
    diag = Diagnostics(quad, 50, led, steps, F_star, truth_every=1)
    tr = run(quad, W, steps, led.r_v, 50, hooks=[diag])
    V = tr.column("lyapunov")
    S = tr.column("stat_sq")
    eps = 1e-9 * max(1.0, V[0])
    for k in range(50):
        assert V[k + 1] - V[k] <= -0.5 * steps.alpha * S[k] + eps


def test_single_agent_metrics_zero():
    prob = random_quadratic(n=1)
    diag = Diagnostics(prob, 20, truth_every=5)
    tr = run(prob, single_agent(), StepSizes(0.05, 0.2, 0.2), 10.0, 20, hooks=[diag])
    for c in ("cons_x", "cons_y", "cons_v", "track_x", "track_y", "track_v"):
        assert all(v == 0.0 for v in tr.column(c))
    assert [r["k"] for r in tr.rows if r["stat_sq"] is not None] == [0, 5, 10, 15, 20]


def test_min_stationarity_monotone(quad):
    diag = Diagnostics(quad, 60, truth_every=3)
    tr = run(quad, build_ring_mixing(4, 0.4), StepSizes(0.05, 0.2, 0.2), 10.0, 60, hooks=[diag])
    mins = [tr.min_stationarity(K) for K in range(1, 62)]
    mins = [m for m in mins if m is not None]
    assert all(b <= a for a, b in zip(mins, mins[1:]))
    assert tr.min_stationarity() == min(v for _, v in tr.series("stat_sq"))


# --------------------------------------------------------------------------
# trace output


def _small_trace(quad):
    diag = Diagnostics(quad, 12, truth_every=5)
    return run(quad, build_ring_mixing(4, 0.4), StepSizes(0.05, 0.2, 0.2), 10.0, 12, hooks=[diag])


def test_csv_format(tmp_path, quad):
    tr = _small_trace(quad)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,stat_sq,cons_x,cons_y,cons_v,track_x,track_y,track_v,lyapunov,train_loss,test_loss,accuracy"
    assert lines[0] == CSV_HEADER
    assert len(lines) == 14
    for line in lines[1:]:
        fields = line.split(",")
        assert len(fields) == 12
        for f in fields[1:]:
            assert f == "" or (math.isfinite(float(f)) and float(f) >= 0)
    assert lines[2].split(",")[1] == ""
    back = read_trace_csv(path)
    assert back.rows == tr.rows


def test_jsonl(tmp_path, quad):
    tr = _small_trace(quad)
    path = tmp_path / "t.jsonl"
    tr.write_jsonl(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert list(rows[0]) == CSV_HEADER.split(",")
    assert rows[5]["stat_sq"] == tr.rows[5]["stat_sq"]


def test_read_trace_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("k,foo\n")
    with pytest.raises(ValueError):
        read_trace_csv(p)


def test_trace_helpers():
    tr = IterateTrace()
    assert tr.last("stat_sq") is None and tr.min_stationarity() is None
    tr.append({"k": 0, "stat_sq": 2.0})
    tr.append({"k": 1, "stat_sq": None})
    tr.append({"k": 2, "stat_sq": 1.0})
    assert tr.series("stat_sq") == [(0, 2.0), (2, 1.0)]
    assert tr.min_stationarity(2) == 2.0 and len(tr) == 3


def _quad_min_stationarity(steps_from_theory):
    prob = random_quadratic(n=4, p=3, q=5, seed=0)
    W = build_ring_mixing(4, 0.4)
    ledger = derive_constants(rho=W.rho, **prob.lipschitz_constants(*prob.default_region()))
    steps = theory_stepsizes(ledger) if steps_from_theory else StepSizes(0.025, 0.06, 0.025)
    diag = Diagnostics(prob, 1000, truth_every=1)
    trace = run(prob, W, steps, ledger.r_v, 1000, hooks=[diag])
    return trace.min_stationarity(100), trace.min_stationarity(1000)


@pytest.mark.xfail(strict=True, reason="theory stepsizes are ~1e-12 on this instance, so x barely "
                                       "moves in 1e3 rounds and the minimum cannot drop 5x")
def test_min_stationarity_drops_5x_theory_steps():
    m100, m1000 = _quad_min_stationarity(True)
    assert m1000 <= m100 / 5


def test_min_stationarity_drops_5x_practical_steps():
    m100, m1000 = _quad_min_stationarity(False)
    assert m1000 <= m100 / 5
