import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from nonprob.errors import ConfigError, DesignError, ImpossibleSampleError
from nonprob.popgen import (
    Design,
    DgpSpec,
    Population,
    draw_b_sample,
    draw_s_sample,
    generate_population,
    resample_outcomes,
)


def test_same_seed_same_population():
    spec = DgpSpec(N=500, proportions=(0.4, 0.6), mu=(0, 1), p=(0.2, 0.3), p_het=0.5, z="uniform", z_slope=1.0)
    a, b = generate_population(spec, 11), generate_population(spec, 11)
    for f in ("y", "x", "p_true", "z", "mu"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    c = generate_population(spec, 12)
    assert not np.array_equal(a.y, c.y)


def test_zero_amplitude_is_exact():
    spec = DgpSpec(N=1000, proportions=(0.5, 0.5), mu=(1.0, 3.0), p=(0.1, 0.4), noise_sd=0.0)
    pop = generate_population(spec, 0)
    np.testing.assert_array_equal(pop.p_true, np.where(pop.x == 0, 0.1, 0.4))
    np.testing.assert_array_equal(pop.y, np.where(pop.x == 0, 1.0, 3.0))


def test_undercoverage_count_exact():
    spec = DgpSpec(N=1000, proportions=(0.5, 0.5), mu=(0, 1), p=(0.2, 0.2), undercoverage=0.2)
    pop = generate_population(spec, 3)
    assert int(np.sum(pop.p_true == 0)) == 200


def test_undercoverage_top_y_in_designated_strata():
    spec = DgpSpec(N=1000, proportions=(0.5, 0.5), mu=(0, 1), p=(0.2, 0.2), undercoverage=0.1,
                   undercoverage_strata=(1,))
    pop = generate_population(spec, 3)
    zero = pop.p_true == 0
    assert np.all(pop.x[zero] == 1)
    assert pop.y[zero].min() >= pop.y[(pop.x == 1) & ~zero].max()


def test_undercoverage_too_large_for_strata():
    spec = DgpSpec(N=100, proportions=(0.9, 0.1), mu=(0, 1), p=(0.2, 0.2), undercoverage=0.5,
                   undercoverage_strata=(1,))
    with pytest.raises(ConfigError):
        generate_population(spec, 0)


@settings(max_examples=40, deadline=None)
@given(
    K=st.integers(1, 4),
    N=st.integers(40, 400),
    p_het=st.floats(0.0, 1.0),
    mu_het=st.floats(0.0, 2.0),
    informative=st.sampled_from([-1, 0, 1]),
    seed=st.integers(0, 2**31),
)
def test_cell_means_of_p_and_mu_preserved(K, N, p_het, mu_het, informative, seed):
    rng = np.random.default_rng(seed)
    props = rng.dirichlet(np.ones(K)) * 0.5 + 0.5 / K
    props = props / props.sum()
    p = rng.uniform(0.05, 0.5, K)
    mu = rng.normal(0, 1, K)
    spec = DgpSpec(N=N, proportions=tuple(props), mu=tuple(mu), p=tuple(p), p_het=p_het, mu_het=mu_het,
                   informative=informative)
    try:
        counts = spec.stratum_counts()
    except ConfigError:
        return
    pop = generate_population(spec, seed)
    for k in range(K):
        m = pop.x == k
        assert m.sum() == counts[k]
        assert abs(pop.p_true[m].mean() - p[k]) <= 1e-12
        assert abs(pop.mu[m].mean() - mu[k]) <= 1e-12


def test_informative_sign_orders_propensity_with_residual():
    spec = DgpSpec(N=2000, p=(0.4,), p_het=0.5, informative=1)
    pop = generate_population(spec, 5)
    e = pop.y - pop.mu
    hi = pop.p_true > 0.4
    assert e[hi].min() >= e[~hi].max()


def test_resample_keeps_structure():
    spec = DgpSpec(N=300, proportions=(0.5, 0.5), mu=(0, 2), p=(0.1, 0.2))
    pop = generate_population(spec, 0)
    new = resample_outcomes(pop, 1.0, 9)
    np.testing.assert_array_equal(new.mu, pop.mu)
    np.testing.assert_array_equal(new.p_true, pop.p_true)
    assert not np.array_equal(new.y, pop.y)


def test_b_sample_binomial_band():
    pop = Population(y=np.zeros(10_000), x=np.zeros(10_000, int), p_true=np.full(10_000, 0.3))
    fracs = np.array([draw_b_sample(pop, s).n / pop.N for s in range(400)])
    inside = np.mean(np.abs(fracs - 0.3) <= 0.015)
    # P(|X/N - 0.3| <= 0.015) for X ~ Bin(10^4, 0.3)
    expected = stats.binom.cdf(3150, 10_000, 0.3) - stats.binom.cdf(2849, 10_000, 0.3)
    assert expected > 0.99
    assert inside >= 0.99


def test_b_sample_all_zero_propensity():
    pop = Population(y=np.zeros(5), x=np.zeros(5, int), p_true=np.zeros(5))
    with pytest.raises(ImpossibleSampleError):
        draw_b_sample(pop, 0)


def test_b_sample_never_empty():
    pop = Population(y=np.zeros(3), x=np.zeros(3, int), p_true=np.full(3, 0.05))
    for s in range(50):
        assert draw_b_sample(pop, s).n >= 1


def test_s_frame_excludes_b():
    spec = DgpSpec(N=2000, proportions=(0.5, 0.5), mu=(0, 1), p=(0.3, 0.3))
    pop = generate_population(spec, 0)
    b = draw_b_sample(pop, 1)
    for design in (Design("srs", n=200), Design("stratified", fractions={0: 0.1, 1: 0.2}),
                   Design("poisson", pi=0.1)):
        s = draw_s_sample(pop, design, exclude=b, seed=2)
        assert np.intersect1d(s.members, b.members).size == 0


def test_stratified_sizes():
    x = np.repeat([0, 1], [100, 1000])
    pop = Population(y=np.zeros(1100), x=x, p_true=np.full(1100, 0.1))
    s = draw_s_sample(pop, Design("stratified", fractions={0: 0.5, 1: 0.1}), seed=0)
    assert np.sum(s.strata == 0) == 50 and np.sum(s.strata == 1) == 100
    np.testing.assert_allclose(s.pi[s.strata == 0], 0.5)
    np.testing.assert_allclose(s.pi[s.strata == 1], 0.1)


def test_srs_inclusion_frequencies():
    N, n, reps = 20, 5, 10_000
    pop = Population(y=np.zeros(N), x=np.zeros(N, int), p_true=np.full(N, 0.1))
    hits = np.zeros(N)
    for r in range(reps):
        hits[draw_s_sample(pop, Design("srs", n=n), seed=r).members] += 1
    f = hits / reps
    band = 3 * np.sqrt(n / N * (1 - n / N) / reps)
    assert np.all(np.abs(f - n / N) <= band)


def test_srs_larger_than_frame():
    pop = Population(y=np.zeros(10), x=np.zeros(10, int), p_true=np.full(10, 0.1))
    with pytest.raises(DesignError):
        draw_s_sample(pop, Design("srs", n=11))


@pytest.mark.parametrize("kwargs", [
    dict(N=0),
    dict(N=10, proportions=(0.5, 0.6)),
    dict(N=10, mu=(0, 1)),
    dict(N=10, p=(0.8,), p_het=0.5),
    dict(N=10, undercoverage=1.0),
    dict(N=10, informative=2),
    dict(N=10, z_slope=1.0),
])
def test_invalid_spec(kwargs):
    with pytest.raises(ConfigError):
        DgpSpec(**kwargs)


def test_too_small_for_strata():
    with pytest.raises(ConfigError):
        DgpSpec(N=2, proportions=(0.5, 0.3, 0.2)).stratum_counts()
