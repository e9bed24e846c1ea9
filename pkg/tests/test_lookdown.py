import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sstats

from sblookdown import ACTIVE, DORMANT, ModelParams, RandomSource
from sblookdown.lookdown import (
    ActivityTimeline,
    InteractionClock,
    LookdownRealization,
    build_clock,
    build_realization,
    build_timeline,
    first_coalescence_cdf,
    first_coalescence_mean,
    first_coalescence_with_k,
    fixation_time,
    last_interaction,
    lookdown_state,
    resolve_type,
    simulate_fixation,
)
from sblookdown.stats import fixation_samples

P11 = ModelParams(1.0, 1.0)


def hand_built(n, horizon, ticks, switches=None, types=None):
    """Realization with given clock ticks; ``switches`` maps a level to ``(initial state, switch times)``."""
    switches = switches or {}
    timelines = []
    for lv in range(1, n + 1):
        state, sw = switches.get(lv, (ACTIVE, []))
        timelines.append(ActivityTimeline(lv, state, sw, horizon))
    clocks = {(i, j): InteractionClock((i, j), ticks.get((i, j), []), horizon) for i in range(2, n + 1) for j in range(1, i)}
    return LookdownRealization(P11, horizon, timelines, clocks, types or list(range(1, n + 1)))


def test_last_interaction_examples():
    real = hand_built(3, 3.0, {(2, 1): [1.0]})
    assert last_interaction(real, 1, 2.5) is None
    assert last_interaction(real, 2, 0.0) is None
    assert last_interaction(real, 2, 2.0) == (1.0, 1)


def test_resolve_type_traces_chain():
    real = hand_built(3, 3.0, {(2, 1): [1.0], (3, 2): [2.0]}, types=[10, 20, 30])
    assert resolve_type(real, 3, 3.0) == 10
    assert resolve_type(real, 3, 1.5) == 30
    assert [resolve_type(real, 1, t) for t in (0.0, 1.0, 3.0)] == [10, 10, 10]
    assert lookdown_state(real, 3.0).types() == (10, 10, 10)


def test_no_ticks_keeps_initial_types():
    real = hand_built(4, 2.0, {}, types=[5, 6, 7, 8])
    assert lookdown_state(real, 2.0).types() == (5, 6, 7, 8)
    assert fixation_time(real).fixation_time is None


def test_dormant_tick_is_ineffective():
    # level 2 dormant on [0, 1.5); the tick at 1.0 does nothing, the one at 2.0 fixes
    real = hand_built(2, 3.0, {(2, 1): [1.0, 2.0]}, switches={2: (DORMANT, [1.5])})
    assert fixation_time(real).fixation_time == 2.0
    assert resolve_type(real, 2, 1.2) == 2


def test_fixation_single_level():
    real = build_realization(P11, 1, 1.0, RandomSource(0))
    assert fixation_time(real).fixation_time == 0.0
    assert fixation_samples(P11, 1, 5, RandomSource(0)).tolist() == [0.0] * 5


def test_fixation_needs_distinct_types():
    real = build_realization(P11, 3, 1.0, RandomSource(0), initial_types=[1, 1, 2])
    with pytest.raises(ValueError):
        real.fixation_time()


def test_two_level_fixation_is_first_effective_tick():
    real = build_realization(P11, 2, 50.0, RandomSource(4))
    times, _ = real.effective_events(2)
    assert fixation_time(real).fixation_time == times[0]


def test_first_reproduction_does_not_bound_coalescence():
    # Backward from T = 3: level 2 looks down to level 1 at time 2.5, so before 2.5
    # the lines of levels 1 and 2 both sit on level 1.  Level 3 looks down to level 2
    # at time 1.0, a reproduction with a lower level, yet its line lands on level 2,
    # which at that time carries neither line.  They only meet at the tick (2,1) at 0.5.
    T = 3.0
    real = hand_built(3, T, {(2, 1): [0.5, 2.5], (3, 2): [1.0]})
    r = T - 1.0
    lines_low = {real.ancestral_level(j, T, r) for j in (1, 2)}
    assert lines_low == {1}
    assert real.ancestral_level(3, T, r) == 2
    tau = T - 0.5
    assert {real.ancestral_level(3, T, tau), real.ancestral_level(1, T, tau)} == {1}
    assert tau > r


def test_truncation_and_size_independence():
    rng = RandomSource(8)
    big = build_realization(P11, 7, 4.0, rng)
    small = build_realization(P11, 4, 4.0, rng)
    cut = big.truncated(4)
    for t in (0.0, 1.0, 2.5, 4.0):
        assert big.state(t)[:4] == cut.state(t).particles == small.state(t).particles


def test_extension_matches_direct_build():
    rng = RandomSource(12)
    direct = build_realization(P11, 4, 6.0, rng)
    grown = build_realization(P11, 4, 1.5, rng).extended(6.0)
    assert list(direct.to_lines()) == list(grown.to_lines())


def test_parent_is_lower_level():
    real = build_realization(ModelParams(0.5, 2.0), 6, 10.0, RandomSource(3))
    _, recipients, donors = real.all_effective_events()
    assert np.all(donors < recipients)


def test_timeline_stationary_probability():
    for alpha, p, seed in ((1.0, 0.5, 1), (2.0, 2 / 3, 2)):
        params = ModelParams(alpha, 1.0)
        src = RandomSource(seed)
        reps = 20_000
        hits = sum(build_timeline(params, 1, 5.0, src.substream("tl", r)).is_active(5.0) for r in range(reps))
        assert abs(hits / reps - p) < 3 * np.sqrt(p * (1 - p) / reps)


def test_dormant_lengths_exponential():
    params = ModelParams(2.0, 1.0)
    tl = build_timeline(params, 1, 60_000.0, RandomSource(6))
    lengths = tl.dormant_lengths()
    assert len(lengths) > 10_000
    se = lengths.std() / np.sqrt(len(lengths))
    assert abs(lengths.mean() - 0.5) < 3 * se


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.1, 20.0), st.integers(0, 2**32))
def test_timeline_intervals_partition(alpha, sigma, horizon, seed):
    tl = build_timeline(ModelParams(alpha, sigma), 1, horizon, RandomSource(seed))
    iv = tl.intervals()
    assert iv[0][0] == 0.0 and iv[-1][1] == horizon
    for (s0, e0, st0), (s1, e1, st1) in zip(iv, iv[1:]):
        assert e0 == s1 and st0 != st1
    assert all(s <= e for s, e, _ in iv)


def test_clock_rate():
    clock = build_clock((2, 1), 20_000.0, RandomSource(1))
    assert abs(len(clock.times) - 20_000) < 4 * np.sqrt(20_000)
    with pytest.raises(ValueError):
        InteractionClock((1, 2), [], 1.0)


def test_first_coalescence_matches_full_realization():
    rng = RandomSource(21)
    r = first_coalescence_with_k(P11, 4, 2, rng)
    real = build_realization(P11, 4, r + 1.0, rng)
    times, donors = real.effective_events(4)
    assert r == times[donors <= 2][0]
    with pytest.raises(ValueError):
        first_coalescence_with_k(P11, 2, 2, rng)


def test_first_coalescence_mean_hand_solved():
    # k = 1, alpha = sigma = 1; mean killing times h(s, m) solve
    # h11 = (1 + h01 + h10)/3, h10 = h01 = (1 + h00 + h11)/2, h00 = (1 + h10 + h01)/2
    a = np.array([[3, -1, -1, 0], [-1, 2, 0, -1], [-1, 0, 2, -1], [0, -1, -1, 2]], float)
    h = np.linalg.solve(a, np.ones(4))
    exact = np.array([0.25, 0.25, 0.25, 0.25]) @ h
    assert exact == pytest.approx(5.25)
    assert first_coalescence_mean(P11, 1) == pytest.approx(exact, rel=1e-12)


def test_first_coalescence_samples_follow_phase_type_law():
    params = ModelParams(2.0, 1.0)
    src = RandomSource(5)
    x = np.array([first_coalescence_with_k(params, 3, 2, src.substream("r", r)) for r in range(2000)])
    res = sstats.kstest(x, lambda t: first_coalescence_cdf(params, 2, t), method="asymp")
    assert res.pvalue > 0.01
    assert abs(x.mean() - first_coalescence_mean(params, 2)) < 3 * x.std() / np.sqrt(len(x))


def test_fixation_kernel_agrees_with_realizations():
    src = RandomSource(30)
    a = fixation_samples(P11, 6, 600, src.substream("k"), backend="kernel")
    b = fixation_samples(P11, 6, 600, src.substream("r"), backend="realization")
    assert sstats.ks_2samp(a, b, method="asymp").pvalue > 0.01


def test_simulate_fixation_grows_horizon():
    record, real = simulate_fixation(P11, 5, RandomSource(2), horizon=0.1)
    assert record.fixed and record.fixation_time <= real.horizon
    assert real.state(record.fixation_time).types() == (1,) * 5


def test_query_outside_horizon():
    real = build_realization(P11, 3, 1.0, RandomSource(0))
    with pytest.raises(ValueError):
        real.state(2.0)
    with pytest.raises(IndexError):
        real.resolve_type(4, 0.5)
