import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sblookdown import Configuration, ModelParams, RandomSource, phi_activate, phi_deactivate, phi_reproduce
from sblookdown.equivalence import (
    average_function,
    averaged_discrepancy,
    build_generator,
    check_averaged_generators,
    compare_empirical_laws,
)

C = Configuration.of
F = Fraction


def apply_generator(f, z, params, variant):
    """Generator applied to ``f`` at ``z``, written directly from the particle moves."""
    n = len(z)
    fz = f(z)
    out = F(0)
    for i in range(1, n + 1):
        out += params.sigma * (f(phi_deactivate(z, i)) - fz)
        out += params.alpha * (f(phi_activate(z, i)) - fz)
    for i, j in itertools.permutations(range(1, n + 1), 2):
        if variant == "moran":
            out += F(1, 2) * (f(phi_reproduce(z, i, j)) - fz)
        elif i < j:
            out += f(phi_reproduce(z, i, j)) - fz
    return out


def all_configs(n, n_types):
    cells = [(t, s) for t in range(n_types) for s in "ad"]
    return [C(c) for c in itertools.product(cells, repeat=n)]


@pytest.mark.parametrize("n,types,alpha,sigma", [(2, 2, F(1), F(1)), (3, 2, F(1), F(2)), (4, 3, F(1, 2), F(2))])
def test_exact_zero_discrepancy(n, types, alpha, sigma):
    report = check_averaged_generators(ModelParams(alpha, sigma), n, types)
    assert report.exact and report.max_discrepancy == 0 and report.passed


def test_mutated_lookdown_is_caught():
    report = check_averaged_generators(ModelParams(F(1), F(1)), 3, 2, lookdown_pair_rates={(1, 2): 2})
    assert report.max_discrepancy > 0 and not report.passed


def test_float_rates_use_tolerance():
    report = check_averaged_generators(ModelParams(0.3, 1.7), 3, 2)
    assert report.passed


def test_single_particle_variants_identical():
    p = ModelParams(F(1, 2), F(2))
    a = build_generator(p, 1, 3, "moran")
    b = build_generator(p, 1, 3, "lookdown")
    assert (a.matrix != b.matrix).nnz == 0 and a.scale == b.scale


def test_two_particle_pair_rates():
    p = ModelParams(F(1), F(1))
    m = build_generator(p, 2, 2, "moran")
    ld = build_generator(p, 2, 2, "lookdown")
    z = C([(0, "a"), (1, "a")])
    up, down = C([(0, "a"), (0, "a")]), C([(1, "a"), (1, "a")])
    assert m.rate(z, up) == m.rate(z, down) == F(1, 2)
    assert ld.rate(z, up) == 1 and ld.rate(z, down) == 0


def test_rows_sum_to_zero_exactly():
    for variant in ("moran", "lookdown"):
        g = build_generator(ModelParams(F(1, 2), F(2)), 3, 2, variant)
        assert np.all(g.row_sums() == 0)
        off = g.matrix.copy()
        off.setdiag(0)
        assert off.min() >= 0


def test_matrix_matches_direct_generator():
    p = ModelParams(F(1, 2), F(2))
    for variant in ("moran", "lookdown"):
        g = build_generator(p, 3, 2, variant)
        for z in all_configs(3, 2)[::5]:
            for w in all_configs(3, 2)[::3]:
                direct = apply_generator(lambda x: F(int(x == w)), z, p, variant)
                assert g.rate(z, w) == direct


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=64, max_size=64), st.sampled_from([F(1, 2), F(1), F(2)]), st.sampled_from([F(1, 2), F(1), F(2)]))
def test_averaged_identity_for_random_functions(values, alpha, sigma):
    # independent of the matrix machinery: apply both generators to an arbitrary f
    p = ModelParams(alpha, sigma)
    table = dict(zip(map(repr, all_configs(3, 2)), values))
    f = lambda z: F(table[repr(z)])
    for z in all_configs(3, 2)[::7]:
        lhs = average_function(lambda x: apply_generator(f, x, p, "moran"), z)
        rhs = average_function(lambda x: apply_generator(f, x, p, "lookdown"), z)
        assert lhs == rhs


def test_average_function_examples():
    z = C([(0, "a"), (1, "a")])
    assert average_function(lambda x: x[0].type_id, z) == F(1, 2)
    sym = lambda x: x.n_active() + sum(x.types())
    w = C([(0, "a"), (1, "d"), (2, "a")])
    assert average_function(sym, w) == sym(w)
    for perm in itertools.permutations(range(3)):
        assert average_function(lambda x: x[0].type_id * 3 + x[1].type_id, w.permuted(perm)) == average_function(
            lambda x: x[0].type_id * 3 + x[1].type_id, w
        )


def test_size_limits():
    with pytest.raises(ValueError):
        check_averaged_generators(ModelParams(1, 1), 7, 2)
    with pytest.raises(ValueError):
        build_generator(ModelParams(1, 1), 5, 10, "moran")


def test_discrepancy_shape_mismatch():
    p = ModelParams(F(1), F(1))
    with pytest.raises(ValueError):
        averaged_discrepancy(build_generator(p, 2, 2, "moran"), build_generator(p, 3, 2, "moran"))


def test_compare_laws_small_run():
    report = compare_empirical_laws(ModelParams(1.0, 1.0), 5, [0.0, 1.0], 600, RandomSource(3))
    assert report["pass"]
    at_zero = [r for r in report["ks"] if r["time"] == 0.0]
    assert len(at_zero) == 3 and all(r["p_corrected"] > 0.01 for r in at_zero)
    assert {r["model"] for r in report["chi_square"]} == {"moran", "lookdown"}
