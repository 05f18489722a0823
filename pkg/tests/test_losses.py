"""Loss-function oracles: brute-force formula evaluations and finite differences.

The oracle implementations below are deliberately plain Python (explicit sums,
no numpy vectorization) so they share nothing with the production code paths.
"""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from speechtraits.errors import DomainError
from speechtraits.heads.losses import (
    ccc,
    ccc_grad,
    ccc_loss,
    ccc_loss_grad,
    kl_loss,
    kl_loss_grad,
    multilabel_loss,
    multilabel_loss_grad,
    scale_dimensional,
    sigmoid,
)

# --- independent oracles ---


def oracle_ccc(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    vx = sum((x - mx) ** 2 for x in xs) / n
    vy = sum((y - my) ** 2 for y in ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / n
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        return 1.0 if list(xs) == list(ys) else 0.0
    return 2 * cov / denom


def oracle_kl(pred, target):
    total = 0.0
    for p, t in zip(pred, target):
        if t > 0:
            total += t * (math.log(t) - math.log(max(p, 1e-8)))
    return total


def oracle_bce(scores, targets):
    total = 0.0
    for s, t in zip(scores, targets):
        p = 1.0 / (1.0 + math.exp(-s))
        total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
    return total / len(scores)


def fd_grad(fn, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        dn = x.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fn(up) - fn(dn)) / (2 * h)
    return grad


def rel_err(a, b):
    denom = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


# --- frozen examples (values computed with the oracles above) ---


def test_ccc_frozen_example():
    x = [1.0, 2.0, 3.0, 4.0]
    y = [1.0, 2.0, 3.0, 5.0]
    expected = 0.9285714285714286  # oracle_ccc value: 3.25 / 3.5
    assert oracle_ccc(x, y) == pytest.approx(expected, abs=1e-15)
    assert ccc(x, y) == pytest.approx(expected, abs=1e-12)


def test_ccc_identity_and_sign():
    x = np.array([0.3, -1.2, 2.0, 0.0, -1.1])
    assert ccc(x, x) == pytest.approx(1.0, abs=1e-12)
    zero_mean = x - x.mean()
    assert ccc(zero_mean, -zero_mean) == pytest.approx(-1.0, abs=1e-12)


def test_ccc_degenerate_convention():
    assert ccc([2.0, 2.0, 2.0], [2.0, 2.0, 2.0]) == 1.0
    assert ccc([2.0, 2.0, 2.0], [3.0, 3.0, 3.0]) == 0.0


def test_ccc_requires_two_values():
    with pytest.raises(DomainError):
        ccc([1.0], [1.0])


def test_ccc_loss_shift_closed_form():
    rng = np.random.default_rng(0)
    target = rng.standard_normal(50)
    c = 0.7
    pred = target + c
    sigma2 = target.var()
    expected = 1 - 2 * sigma2 / (2 * sigma2 + c**2)
    assert ccc_loss(pred, target) == pytest.approx(expected, abs=1e-12)


def test_ccc_loss_trivial_cases():
    target = np.array([0.1, 0.5, 0.9, 0.3])
    assert ccc_loss(target, target) == pytest.approx(0.0, abs=1e-12)
    assert ccc_loss(np.full(4, 0.5), target) == pytest.approx(1.0, abs=1e-12)


def test_kl_frozen_examples():
    assert kl_loss([0.25, 0.75], [0.25, 0.75]) == pytest.approx(0.0, abs=1e-12)
    assert kl_loss([0.5, 0.5], [1.0, 0.0]) == pytest.approx(math.log(2), abs=1e-12)


def test_kl_rejects_bad_distributions():
    with pytest.raises(DomainError):
        kl_loss([0.5, 0.5], [1.1, -0.1])
    with pytest.raises(DomainError):
        kl_loss([0.9, 0.2], [1.0, 0.0])  # off the simplex


def test_multilabel_frozen_examples():
    assert multilabel_loss([0.0, 0.0, 0.0], [1, 0, 1]) == pytest.approx(math.log(2), abs=1e-12)
    saturated = multilabel_loss([40.0, -40.0], [1, 0])
    assert saturated < 1e-12
    base = multilabel_loss([4.0, -4.0], [1, 0])
    flipped = multilabel_loss([4.0, -4.0], [0, 0])
    assert flipped > base


def test_multilabel_rejects_non_binary_targets():
    with pytest.raises(DomainError):
        multilabel_loss([0.0], [0.5])


def test_scale_dimensional():
    assert scale_dimensional(0.0) == 0.5
    assert scale_dimensional(2.0) == pytest.approx(0.8807970779778823, abs=1e-15)
    assert scale_dimensional(50.0) > 1 - 1e-9
    xs = np.linspace(-6, 6, 100)
    ys = [scale_dimensional(x) for x in xs]
    assert all(b > a for a, b in zip(ys, ys[1:]))
    assert all(0 < y < 1 for y in ys)


# --- 1000 random inputs against the oracles (1e-9 absolute) ---


def test_losses_match_oracles_on_random_inputs():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        x = rng.standard_normal(n) * rng.uniform(0.5, 3)
        y = rng.standard_normal(n) * rng.uniform(0.5, 3)
        assert abs(ccc(x, y) - oracle_ccc(list(x), list(y))) < 1e-9
        assert abs(ccc_loss(x, y) - (1 - oracle_ccc(list(x), list(y)))) < 1e-9
        k = int(rng.integers(2, 12))
        pred = rng.dirichlet(np.ones(k))
        target = rng.dirichlet(np.ones(k))
        assert abs(kl_loss(pred, target) - oracle_kl(list(pred), list(target))) < 1e-9
        scores = rng.standard_normal(k) * 3
        targets = (rng.uniform(size=k) < 0.5).astype(float)
        assert abs(multilabel_loss(scores, targets) - oracle_bce(list(scores), list(targets))) < 1e-9


# --- gradients against central finite differences (1e-4 relative) ---


def test_ccc_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(3, 20))
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        fd = fd_grad(lambda v: ccc(v, y), x)
        assert rel_err(ccc_grad(x, y), fd) < 1e-4
        fd_loss = fd_grad(lambda v: ccc_loss(v, y), x)
        assert rel_err(ccc_loss_grad(x, y), fd_loss) < 1e-4


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    for _ in range(25):
        k = int(rng.integers(2, 10))
        pred = rng.dirichlet(np.ones(k) * 3)  # concentrated away from the clamp
        target = rng.dirichlet(np.ones(k))
        fd = fd_grad(lambda v: kl_loss(v, target), pred, h=1e-7)
        assert rel_err(kl_loss_grad(pred, target), fd) < 1e-4


def test_multilabel_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    for _ in range(25):
        k = int(rng.integers(1, 12))
        scores = rng.standard_normal(k) * 2
        targets = (rng.uniform(size=k) < 0.5).astype(float)
        fd = fd_grad(lambda v: multilabel_loss(v, targets), scores)
        assert rel_err(multilabel_loss_grad(scores, targets), fd) < 1e-4


# --- algebraic properties ---


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=20), st.integers(0, 2**32 - 1))
def test_ccc_symmetric(xs, seed):
    rng = np.random.default_rng(seed)
    ys = rng.standard_normal(len(xs))
    assert ccc(xs, ys) == pytest.approx(ccc(ys, list(xs)), abs=1e-10)


@given(
    st.integers(0, 2**32 - 1),
    st.floats(min_value=-5, max_value=5),
    st.floats(min_value=0.1, max_value=4),
)
def test_ccc_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(12)
    y = rng.standard_normal(12)
    assert ccc(a + b * x, a + b * y) == pytest.approx(ccc(x, y), abs=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(2, 10))
def test_kl_nonnegative(seed, k):
    rng = np.random.default_rng(seed)
    pred = rng.dirichlet(np.ones(k))
    target = rng.dirichlet(np.ones(k))
    assert kl_loss(pred, target) >= 0.0


def test_ccc_loss_range():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 15))
        value = ccc_loss(rng.standard_normal(n), rng.standard_normal(n))
        assert 0.0 <= value <= 2.0


def test_sigmoid_matches_reference():
    xs = np.linspace(-30, 30, 61)
    ref = 1 / (1 + np.exp(-xs.astype(np.float64)))
    assert np.allclose(sigmoid(xs), ref, atol=1e-12)
