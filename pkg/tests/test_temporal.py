import pytest
from hypothesis import given
from hypothesis import strategies as st

from causal_av.scm import (
    BufferWriteError,
    EvaluationContext,
    Scm,
    buffer,
    const,
    evaluate,
    evaluate_at,
    exogenous,
    plain,
    tctd,
    time_conditional,
    tssp,
    tssq,
    Gaussian,
)
from causal_av.temporal import (
    Buffered,
    UnseededError,
    buffer_bind,
    buffer_unit,
    up,
)
from causal_av.values import M_S, M_S2, S, ZERO2
from helpers import kinematics_model


def _ctx(dt=1.0):
    ctx = EvaluationContext(dt)
    ctx.seed("v_buff", 0.0, 0.0)
    return ctx


def test_pts_returns_seed_at_step_one():
    ctx = _ctx()
    assert evaluate_at(kinematics_model(), "prev_v", ctx, 1.0) == 0.0


def test_pts_at_step_three():
    # window-graph oracle: v(0)=0, v(1)=1, v(2)=2 so prev_v(3)=v(2)
    ctx = _ctx()
    assert evaluate_at(kinematics_model(), "prev_v", ctx, 3.0) == 2.0


def test_pts_at_initial_time_without_seed_fails():
    ctx = EvaluationContext(1.0)
    with pytest.raises(UnseededError):
        evaluate(kinematics_model(), "prev_v", ctx)


def test_velocity_from_acceleration():
    ctx = _ctx()
    assert evaluate_at(kinematics_model(), "v", ctx, 3.0) == 3.0
    assert ctx.step == 0


@given(st.integers(1, 40))
def test_pts_restores_time(k):
    ctx = _ctx()
    ctx.step = k
    evaluate(kinematics_model(), "prev_v", ctx)
    assert ctx.step == k


@pytest.mark.parametrize("dt, value, node, expected", [
    (0.5, 2.0, "p", 1.0),
    (0.04, 1.0, "q", 25.0),
])
def test_time_scale(dt, value, node, expected):
    m = Scm([const("x", value, unit=M_S2 if node == "p" else M_S), tssp("p", "x"), tssq("q", "x")])
    assert evaluate(m, node, EvaluationContext(dt)) == pytest.approx(expected, rel=1e-15)
    assert m.unit_of("p") == (M_S if node == "p" else M_S * S)


def test_time_scale_zero_vector():
    m = Scm([const("x", ZERO2, unit=M_S2), tssp("p", "x")])
    assert evaluate(m, "p", EvaluationContext(0.1)) == ZERO2
    assert m.unit_of("p") == M_S


@given(st.floats(-1e12, 1e12, allow_nan=False), st.floats(1e-4, 10.0))
def test_tssp_inverts_tssq(x, dt):
    m = Scm([const("x", x), tssq("q", "x"), tssp("pq", "q")])
    got = evaluate(m, "pq", EvaluationContext(dt))
    assert abs(got - x) <= 2 * abs(x) * 2.0 ** -52 + 1e-300


@pytest.mark.parametrize("goal, now, expected", [(5.0, 3.0, 2.0), (3.0, 3.0, 0.0), (1.0, 3.0, -2.0)])
def test_tctd(goal, now, expected):
    m = Scm([const("g", goal, unit=S), tctd("ttg", "g")])
    ctx = EvaluationContext(1.0)
    assert evaluate_at(m, "ttg", ctx, now) == expected


class _Probe:
    def __init__(self, value):
        self.value, self.calls = value, 0

    def __call__(self):
        self.calls += 1
        return self.value


@pytest.mark.parametrize("now, chosen", [(2.0, "before"), (5.0, "after"), (6.0, "after")])
def test_time_conditional_branch_and_laziness(now, chosen):
    before, after = _Probe("before"), _Probe("after")
    m = Scm([plain("b", [], before), plain("a", [], after), time_conditional("tc", "b", "a", 5.0)])
    ctx = EvaluationContext(1.0)
    assert evaluate_at(m, "tc", ctx, now) == chosen
    skipped = after if chosen == "before" else before
    assert skipped.calls == 0


def test_time_conditional_threshold_tolerance_on_fine_grid():
    m = Scm([const("b", 0), const("a", 1), time_conditional("tc", "b", "a", 0.12)])
    ctx = EvaluationContext(0.04)
    # 3 * 0.04 is 0.12000000000000001 in binary; the switch still happens at step 3
    assert evaluate_at(m, "tc", ctx, 0.08) == 0
    assert evaluate_at(m, "tc", ctx, 0.12) == 1


def test_buffer_first_write_and_cached_reread():
    probe = _Probe(7)
    m = Scm([plain("x", [], probe), buffer("b", "x")])
    ctx = EvaluationContext(1.0)
    assert evaluate_at(m, "b", ctx, 2.0) == 7
    assert ctx.buffer_store[("b", 2)] == 7
    probe.value = 9  # upstream changes after the write
    assert evaluate_at(m, "b", ctx, 2.0) == 7
    assert probe.calls == 1


def test_seeded_buffer_never_touches_parent():
    probe = _Probe(1)
    m = Scm([plain("x", [], probe), buffer("b", "x")])
    ctx = EvaluationContext(1.0)
    ctx.seed("b", 0.0, 42)
    assert evaluate(m, "b", ctx) == 42 and probe.calls == 0


@given(st.integers(2, 6))
def test_buffer_idempotence(n):
    m = Scm([exogenous("u", Gaussian(0, 1)), plain("x", ["u"], float), buffer("b", "x")])
    ctx = EvaluationContext(1.0, rng_seed=3)
    first = evaluate(m, "b", ctx)
    assert all(evaluate(m, "b", ctx) == first for _ in range(n))


def test_write_once_enforced():
    ctx = EvaluationContext(1.0)
    ctx.commit("b", 0, 1.0)
    with pytest.raises(BufferWriteError):
        ctx.commit("b", 0, 2.0)


# monad laws over random write chains

writes = st.frozensets(st.tuples(st.sampled_from("abc"), st.integers(0, 3), st.integers(-5, 5)),
                       max_size=4)


def _writer(extra):
    return lambda x: up(extra, x * 2 + len(extra))


@given(st.integers(-100, 100), writes)
def test_left_identity(x, w):
    f = _writer(w)
    assert buffer_bind(buffer_unit(x), f) == f(x)


@given(st.integers(-100, 100), writes)
def test_right_identity(x, w):
    m = up(w, x)
    assert buffer_bind(m, buffer_unit) == m


@given(st.integers(-100, 100), writes, writes, writes)
def test_associativity(x, w0, w1, w2):
    m, f, g = up(w0, x), _writer(w1), _writer(w2)
    lhs = buffer_bind(buffer_bind(m, f), g)
    rhs = buffer_bind(m, lambda y: buffer_bind(f(y), g))
    assert lhs == rhs


def test_bind_unions_write_sets():
    a = up({("a", 0, 1)}, 1)
    out = buffer_bind(a, lambda x: up({("b", 0, 2)}, x + 1))
    assert out == Buffered(2, frozenset({("a", 0, 1), ("b", 0, 2)}))
    assert buffer_bind(buffer_unit(5), buffer_unit) == Buffered(5, frozenset())
