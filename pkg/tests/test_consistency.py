import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.strategies import booleans, integers, sampled_from

from src.consistency import (
    bottom_up,
    check_consistency,
    level_weights,
    ls_oracle,
    make_consistent,
    max_residual,
    top_down,
    universal_weight,
)
from src.custom_exception import ConfigError, ConsistencyError
from src.sanitization_plan import SanitizationPlan
from src.steps_tree import build_tree, pad_phantoms
from tests.conftest import dataset_of, make_schema, random_dataset


def padded_tree(cards, L, n=200, seed=0):
    schema = make_schema(*cards)
    data = random_dataset(schema, n, seed=seed)
    plan = SanitizationPlan.build(L, "equal", 1, 1.0, schema.p)
    return pad_phantoms(build_tree(data, plan))


def add_noise(tree, gen, scale=2.0, root_sanitized=False):
    for node in tree.iter_nodes():
        if node.is_phantom:
            node.noisy_count = 0.0
        elif node.layer == 0 and not root_sanitized:
            node.noisy_count = None
        else:
            node.noisy_count = node.true_count + gen.laplace(scale=scale)
        if node.block is not None:
            node.block.noisy = node.block.true_counts + gen.laplace(scale=scale, size=node.block.size)
    return tree


def exact_counts(tree):
    for node in tree.iter_nodes():
        node.noisy_count = None if node.layer == 0 else float(node.true_count)
        if node.block is not None:
            node.block.noisy = node.block.true_counts.astype(float)
    return tree


def two_leaf_tree():
    schema = make_schema(2)
    data = dataset_of(schema, [0] * 4 + [1] * 4)
    tree = pad_phantoms(build_tree(data, SanitizationPlan(1, (1.0,), 1, 1.0)))
    tree.root.noisy_count = 10.0
    tree.root.children[0].noisy_count = 3.0
    tree.root.children[1].noisy_count = 5.0
    return tree


def assert_same_release(tree, oracle, tol=1e-9):
    for mine, ref in zip(tree.iter_nodes(), oracle.iter_nodes()):
        assert abs(mine.consistent_count - ref.consistent_count) <= tol * (1 + abs(ref.consistent_count))
        if mine.block is not None:
            assert np.allclose(mine.block.consistent, ref.block.consistent, rtol=tol, atol=tol)
            assert abs(mine.block.pad_share - ref.block.pad_share) <= tol * (1 + abs(ref.block.pad_share))


@pytest.mark.parametrize("b, h, expected", [(2, 1, 1.0), (2, 2, 2 / 3), (3, 2, 3 / 4), (2, 3, 4 / 7)])
def test_universal_weight(b, h, expected):
    assert universal_weight(b, h) == pytest.approx(expected)


def test_level_weights_reduce_to_closed_form():
    for b, L in itertools.product([2, 3, 14], [1, 2, 3]):
        weights = level_weights([b] * L)
        expected = [universal_weight(b, L + 1 - depth) for depth in range(L + 1)]
        assert weights == pytest.approx(expected, rel=1e-12)


def test_two_leaf_example():
    tree = bottom_up(two_leaf_tree())
    assert [c.z for c in tree.root.children] == [3.0, 5.0]
    assert tree.root.z == pytest.approx((2 / 3) * 10 + (1 / 3) * 8)

    top_down(tree)
    assert tree.root.consistent_count == pytest.approx(28 / 3)
    assert [c.consistent_count for c in tree.root.children] == pytest.approx([11 / 3, 17 / 3])
    assert check_consistency(tree) <= 1e-12


def test_two_leaf_example_matches_oracle():
    tree = two_leaf_tree()
    oracle = ls_oracle(tree)
    assert_same_release(make_consistent(tree), oracle)


@pytest.mark.parametrize("cards, L", [((2, 3, 2), 1), ((2, 3, 2), 2), ((3, 3, 2), 3)])
def test_exact_counts_are_released_unchanged(cards, L):
    tree = make_consistent(exact_counts(padded_tree(cards, L)))
    for node in tree.iter_nodes():
        assert node.z == pytest.approx(node.true_count, abs=1e-9)
        assert node.consistent_count == pytest.approx(node.true_count, abs=1e-9)
        if node.block is not None:
            assert np.allclose(node.block.consistent, node.block.true_counts, atol=1e-9)
            assert node.block.pad_share == pytest.approx(0.0, abs=1e-9)


def test_exact_counts_match_oracle():
    tree = exact_counts(padded_tree((2, 3, 2), 2))
    assert_same_release(make_consistent(tree), ls_oracle(tree))


def test_public_root_takes_sum_of_children():
    tree = add_noise(padded_tree((2, 2), 2), np.random.default_rng(1))
    bottom_up(tree)
    for leaf in tree.layers()[2]:
        assert leaf.z == leaf.noisy_count
    assert tree.root.z == pytest.approx(sum(c.z for c in tree.root.children))
    top_down(tree)
    assert tree.root.consistent_count == tree.n


def test_root_shift_spreads_evenly():
    gen = np.random.default_rng(2)
    base = add_noise(padded_tree((3, 3, 2), 2), gen, root_sanitized=True)
    shifted = base.clone()
    for a, b in zip(base.iter_nodes(), shifted.iter_nodes()):
        b.noisy_count = a.noisy_count
        if a.block is not None:
            b.block.noisy = a.block.noisy.copy()
    delta = 6.0
    bottom_up(base)
    bottom_up(shifted)
    shifted.root.z += delta
    top_down(base)
    top_down(shifted)
    for a, b in zip(base.root.children, shifted.root.children):
        assert b.consistent_count - a.consistent_count == pytest.approx(delta / base.b)


def test_release_is_affine_in_noisy_counts():
    gen = np.random.default_rng(3)
    template = padded_tree((2, 3, 2), 2)
    x = add_noise(template.clone(), gen)
    y = add_noise(template.clone(), gen)
    mix = template.clone()
    a = 0.3
    for nx, ny, nm in zip(x.iter_nodes(), y.iter_nodes(), mix.iter_nodes()):
        if nx.noisy_count is not None:
            nm.noisy_count = a * nx.noisy_count + (1 - a) * ny.noisy_count
        if nx.block is not None:
            nm.block.noisy = a * nx.block.noisy + (1 - a) * ny.block.noisy
    for tree in (x, y, mix):
        make_consistent(tree)
    for nx, ny, nm in zip(x.iter_nodes(), y.iter_nodes(), mix.iter_nodes()):
        assert nm.consistent_count == pytest.approx(a * nx.consistent_count + (1 - a) * ny.consistent_count)


RANDOM_TREE_SHAPES = [((2, 2, 2, 2), L) for L in (1, 2, 3)] + \
    [((3, 2, 3, 2), L) for L in (1, 2, 3)] + \
    [((14, 2, 2), L) for L in (1, 2, 3)]


@settings(max_examples=100, deadline=None)
@given(shape=sampled_from(RANDOM_TREE_SHAPES), n=integers(20, 400), seed=integers(0, 2 ** 32 - 1),
       root_sanitized=booleans())
def test_random_trees_match_least_squares_oracle(shape, n, seed, root_sanitized):
    cards, L = shape
    tree = add_noise(padded_tree(cards, L, n=n, seed=seed), np.random.default_rng(seed),
                     root_sanitized=root_sanitized)
    oracle = ls_oracle(tree)
    released = make_consistent(tree)
    assert max_residual(released) <= 1e-9
    assert_same_release(released, oracle)


@pytest.mark.slow
def test_released_counts_are_unbiased():
    template = padded_tree((2, 3), 1, n=60, seed=5)
    gen = np.random.default_rng(6)
    R = 10_000
    samples = []
    for _ in range(R):
        tree = make_consistent(add_noise(template.clone(), gen, scale=1.0))
        row = [node.consistent_count for node in tree.iter_nodes() if not node.is_phantom]
        row += [v for node in tree.leaf_nodes() for v in node.block.consistent]
        samples.append(row)
    samples = np.array(samples)
    truth = [node.true_count for node in template.iter_nodes() if not node.is_phantom]
    truth += [v for node in template.leaf_nodes() for v in node.block.true_counts]
    se = samples.std(axis=0) / np.sqrt(R)
    assert np.all(np.abs(samples.mean(axis=0) - truth) <= 4 * se + 1e-12)


def test_unpadded_tree_is_rejected():
    schema = make_schema(2, 3)
    data = random_dataset(schema, 30)
    tree = build_tree(data, SanitizationPlan.build(1, "equal", 1, 1.0, 2))
    with pytest.raises(ConsistencyError):
        bottom_up(tree)


def test_broken_constraint_is_reported():
    tree = make_consistent(two_leaf_tree())
    tree.root.children[0].consistent_count += 1.0
    with pytest.raises(ConsistencyError):
        check_consistency(tree)


def test_oracle_refuses_large_trees():
    tree = add_noise(padded_tree((14, 14, 14, 2), 1, n=100), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ls_oracle(tree)
