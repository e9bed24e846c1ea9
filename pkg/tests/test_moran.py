from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sblookdown import Configuration, ModelParams, RandomSource, sample_stationary_config
from sblookdown.moran import (
    ACTIVATE,
    DEACTIVATE,
    INTERACT,
    MoranEvent,
    apply_event,
    empirical_measure,
    simulate_moran,
)

C = Configuration.of


def _run(n, horizon, seed, alpha=1.0, sigma=1.0):
    params = ModelParams(alpha, sigma, pop_size=n)
    init = sample_stationary_config(params, "all-distinct", RandomSource(seed).substream("init"))
    return simulate_moran(params, init, horizon, RandomSource(seed).substream("dynamics"))


def test_zero_horizon():
    traj = _run(4, 0.0, 1)
    assert traj.events == () and traj.final() == traj.initial


def test_single_particle_never_interacts():
    traj = _run(1, 50.0, 2)
    assert traj.events and all(e.kind != INTERACT for e in traj.events)


def test_two_state_chain_time_fraction():
    # long-run fraction of time particle 1 spends active under alpha = sigma = 1
    traj = _run(2, 10_000.0, 3)
    t_prev, active, on = 0.0, traj.initial[0].active, 0.0
    for e in traj.events:
        if e.i == 1 and e.kind in (ACTIVATE, DEACTIVATE) and e.effective:
            if active:
                on += e.time - t_prev
            t_prev, active = e.time, e.kind == ACTIVATE
    if active:
        on += traj.horizon - t_prev
    # on/off stretches are Exp(1): about 5000 cycles, s.d. of the fraction about 0.005
    assert abs(on / traj.horizon - 0.5) < 0.02


def test_interaction_count_matches_rate():
    n, horizon = 6, 200.0
    traj = _run(n, horizon, 4)
    count = sum(e.kind == INTERACT for e in traj.events)
    mean = horizon * n * (n - 1) / 2
    assert abs(count - mean) < 4 * np.sqrt(mean)


def test_empirical_measure_examples():
    assert empirical_measure(C([(0, "a"), (0, "a")])) == {(0, "a"): Fraction(1)}
    assert empirical_measure(C([(0, "a"), (1, "d")])) == {(0, "a"): Fraction(1, 2), (1, "d"): Fraction(1, 2)}


def test_apply_event_gated_on_activity():
    parts = list(C([(0, "a"), (1, "d")]))
    assert not apply_event(parts, MoranEvent(1.0, INTERACT, 1, 2))
    assert apply_event(parts, MoranEvent(2.0, ACTIVATE, 2))
    assert apply_event(parts, MoranEvent(3.0, INTERACT, 1, 2))
    assert parts[1].type_id == 0


def test_negative_horizon_rejected():
    with pytest.raises(ValueError):
        _run(3, -1.0, 0)


def test_export_lines():
    traj = _run(3, 1.0, 5)
    lines = list(traj.to_lines())
    assert lines[0].split("\t") == ["time", "kind", "i", "j", "effective"]
    assert len(lines) == len(traj.events) + 1


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.floats(0.1, 3.0), st.integers(0, 2**32))
def test_trajectory_invariants(n, horizon, seed):
    traj = _run(n, horizon, seed, alpha=0.7, sigma=1.3)
    times = [e.time for e in traj.events]
    assert all(b > a for a, b in zip(times, times[1:]))
    initial_types = set(traj.initial.types())
    particles = list(traj.initial.particles)
    for e in traj.events:
        before = list(particles)
        changed = apply_event(particles, e)
        assert changed == e.effective
        assert len(particles) == n
        assert set(p.type_id for p in particles) <= initial_types
        for b, a in zip(before, particles):
            # dormant particles keep their type
            if not b.active and not a.active:
                assert a.type_id == b.type_id
    assert Configuration(tuple(particles)) == traj.final()
    mid = horizon / 2
    assert traj.states_at([horizon, mid]) == [traj.final(), traj.state_at(mid)]


def test_reproducible_bytes():
    a = "\n".join(_run(5, 2.0, 9).to_lines()).encode()
    b = "\n".join(_run(5, 2.0, 9).to_lines()).encode()
    assert a == b
