from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sblookdown import (
    ACTIVE,
    DORMANT,
    ActivityState,
    Configuration,
    ModelParams,
    Particle,
    RandomSource,
    phi_activate,
    phi_deactivate,
    phi_reproduce,
    sample_stationary_config,
)
from sblookdown.core import ReplicateRecord

C = Configuration.of


def test_deactivate_examples():
    assert phi_deactivate(C([(0, "a"), (1, "a")]), 1) == C([(0, "d"), (1, "a")])
    assert phi_deactivate(C([(0, "d"), (1, "a")]), 1) == C([(0, "d"), (1, "a")])
    z = C([(3, "a"), (3, "a"), (7, "d")])
    assert phi_deactivate(z, 3) == z


def test_activate_examples():
    assert phi_activate(C([(0, "d"), (1, "a")]), 1) == C([(0, "a"), (1, "a")])
    assert phi_activate(C([(0, "a")]), 1) == C([(0, "a")])
    assert phi_activate(C([(2, "d"), (5, "d")]), 2) == C([(2, "d"), (5, "a")])


def test_reproduce_examples():
    assert phi_reproduce(C([(0, "a"), (1, "a")]), 1, 2) == C([(0, "a"), (0, "a")])
    assert phi_reproduce(C([(0, "a"), (1, "d")]), 1, 2) == C([(0, "a"), (1, "d")])
    assert phi_reproduce(C([(4, "a"), (4, "a")]), 2, 1) == C([(4, "a"), (4, "a")])


def test_index_errors():
    z = C([(0, "a"), (1, "a")])
    with pytest.raises(IndexError):
        phi_deactivate(z, 0)
    with pytest.raises(IndexError):
        phi_activate(z, 3)
    with pytest.raises(ValueError):
        phi_reproduce(z, 1, 1)


def test_particle_validation():
    with pytest.raises(ValueError):
        Particle(-1, "a")
    with pytest.raises(ValueError):
        Particle(0, "x")
    assert Particle(2, "d").state is DORMANT
    assert ActivityState.parse("a") is ACTIVE


@pytest.mark.parametrize("alpha,sigma", [(0, 1), (1, -1), (float("inf"), 1), (float("nan"), 1)])
def test_params_reject_bad_rates(alpha, sigma):
    with pytest.raises(ValueError):
        ModelParams(alpha, sigma)


def test_params_p_exact():
    assert ModelParams(Fraction(2), Fraction(1)).p == Fraction(2, 3)
    assert ModelParams(1.0, 1.0).p_float == 0.5
    with pytest.raises(ValueError):
        ModelParams(1, 1, pop_size=2, sample_size=3)


@pytest.mark.parametrize("alpha,sigma,p", [(1.0, 1.0, 0.5), (2.0, 1.0, 2 / 3)])
def test_stationary_active_fraction(alpha, sigma, p):
    params = ModelParams(alpha, sigma, pop_size=100_000)
    z = sample_stationary_config(params, "all-distinct", RandomSource(11))
    frac = z.n_active() / len(z)
    se = np.sqrt(p * (1 - p) / len(z))
    assert abs(frac - p) < 3 * se
    assert z.types()[:3] == (1, 2, 3)


def test_iid_typing_uses_law():
    params = ModelParams(1.0, 1.0, pop_size=20_000)
    z = sample_stationary_config(params, "iid-from-law", RandomSource(3), type_law=[0.5, 0.3, 0.2])
    counts = np.bincount(z.types(), minlength=3) / len(z)
    assert np.allclose(counts, [0.5, 0.3, 0.2], atol=0.02)
    with pytest.raises(ValueError):
        sample_stationary_config(params, "iid-from-law", RandomSource(3))
    with pytest.raises(ValueError):
        sample_stationary_config(params, "mystery", RandomSource(3))


def test_random_source_reproducible_and_independent():
    a = RandomSource(5).substream("clock", 2, 1).uniform(8)
    b = RandomSource(5).substream("clock", 2, 1).uniform(8)
    c = RandomSource(5).substream("clock", 3, 1).uniform(8)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        RandomSource(-1)
    with pytest.raises(ValueError):
        RandomSource(2**64)
    seeds = RandomSource(1).seeds(100)
    assert seeds.dtype == np.uint64 and seeds.max() < 2**32


def test_poisson_times_sorted_within_horizon():
    t = RandomSource(2).poisson_times(3.0, 10.0)
    assert np.all(np.diff(t) >= 0) and (len(t) == 0 or t[-1] <= 10.0)


def test_permuted_and_pairs():
    z = C([(0, "a"), (1, "d"), (2, "a")])
    assert z.permuted([2, 0, 1]).types() == (2, 0, 1)
    assert z.as_pairs() == [(0, "a"), (1, "d"), (2, "a")]
    assert z.level(2) == Particle(1, "d")


def test_replicate_record_row():
    r = ReplicateRecord(replicate=0, seed=9, tmrca=1.5)
    assert r.row()["tmrca"] == 1.5 and r.row()["seed"] == 9


configs = st.lists(
    st.tuples(st.integers(0, 4), st.sampled_from(["a", "d"])), min_size=1, max_size=8
).map(Configuration.of)


@given(configs, st.data())
def test_phi_idempotent(z, data):
    i = data.draw(st.integers(1, len(z)))
    assert phi_deactivate(phi_deactivate(z, i), i) == phi_deactivate(z, i)
    assert phi_activate(phi_activate(z, i), i) == phi_activate(z, i)


@given(configs, st.data())
def test_reproduce_changes_at_most_one_type_and_no_state(z, data):
    if len(z) < 2:
        return
    i = data.draw(st.integers(1, len(z)))
    j = data.draw(st.integers(1, len(z)).filter(lambda x: x != i))
    w = phi_reproduce(z, i, j)
    assert w.states() == z.states()
    changed = [k for k in range(len(z)) if w[k].type_id != z[k].type_id]
    assert changed in ([], [j - 1])


@settings(max_examples=25)
@given(st.integers(0, 2**64 - 1))
def test_same_seed_same_bytes(seed):
    params = ModelParams(1.0, 2.0, pop_size=12)
    a = sample_stationary_config(params, "iid-from-law", RandomSource(seed), type_law=[0.2, 0.8])
    b = sample_stationary_config(params, "iid-from-law", RandomSource(seed), type_law=[0.2, 0.8])
    assert repr(a).encode() == repr(b).encode()
