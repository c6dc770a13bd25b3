import numpy as np
import pytest
from scipy.stats import chisquare

from hyc.automaton import ConcreteState, Jump, Trace
from hyc.exploretree import ExploreNode, ExploreTree, NoDataError, Particle, TraceMismatchError, estimate_q
from hyc.modelfile import load_bundled
from hyc.sampler import SamplerConfig, sample_indexed
from hyc.toys import single_variable, two_window


def stay_trace(h, v=(0.0,), k=1):
    s = ConcreteState(h.initial_mode, v)
    return Trace((s,) * (k + 1), (Jump(),) * k)


def test_first_trace_discovers_then_revisit():
    h = single_variable({"q": "0"}, [], steps=1)
    tree = ExploreTree(h)
    created = tree.record_trace(stay_trace(h))
    assert tree.root.n == 1 and tree.root.m == 0
    assert [c.path for c in created] == [("q", "q")]
    assert tree.record_trace(stay_trace(h)) == []
    assert (tree.root.m, tree.root.n) == (1, 1)


def test_estimate_formula():
    node = ExploreNode(("q",))
    assert estimate_q(node) == 0.5
    node.m, node.n = 8, 0
    assert estimate_q(node) == 0.1
    node.m, node.n = 3, 1
    assert estimate_q(node) == pytest.approx(1 / 3, abs=1e-15)
    node.m, node.n = 0, 5
    assert estimate_q(node) == pytest.approx(6 / 7, abs=1e-15)


def test_estimate_monotone():
    prev = None
    for n in range(20):
        node = ExploreNode(("q",), m=4, n=n)
        q = estimate_q(node)
        assert 0 < q < 1
        if prev is not None:
            assert q > prev
        prev = q
    prev = None
    for m in range(20):
        q = estimate_q(ExploreNode(("q",), m=m, n=3))
        if prev is not None:
            assert q < prev
        prev = q


def test_mismatch_rejected():
    h = two_window()
    tree = ExploreTree(h)
    s0 = ConcreteState("q", (0.0,))
    with pytest.raises(TraceMismatchError):
        tree.record_trace(Trace((s0, ConcreteState("b", (1.0,))), (Jump(0, 0.2),)))
    with pytest.raises(TraceMismatchError):
        tree.record_trace(Trace((ConcreteState("a", (0.0,)),) * 2, (Jump(),)))


def test_sewerage_frontier_after_partial_sampling():
    h = load_bundled("sewerage")
    tree = ExploreTree(h)
    cfg = SamplerConfig(J=8)
    for i in range(40):
        tr = sample_indexed(h, cfg, i)
        if "flooding" not in tr.modes:
            tree.record_trace(tr)
    pairs = [(n.path, v) for n, v in tree.frontier()]
    assert (("normal",), "flooding") in pairs
    assert pairs == sorted(pairs)


def test_frontier_prunes_and_empties():
    h = single_variable({"q": "1", "a": "0", "b": "0"}, [("q", "x > 0.5", "a"), ("q", "x > 0.1", "b")],
                        negative=("a",))
    tree = ExploreTree(h)
    assert [(n.path, v) for n, v in tree.frontier()] == [(("q",), "a")]
    s0 = ConcreteState("q", (0.0,))
    tree.record_trace(Trace((s0, ConcreteState("a", (1.0,))), (Jump(0, 0.7),)))
    assert tree.frontier() == []
    # without pruning, b would be reported
    assert [(n.path, v) for n, v in tree.frontier(qbad={"a", "b", "q"})] == [(("q",), "b")]


def test_empirical_probabilities():
    h = two_window()
    tree = ExploreTree(h)
    with pytest.raises(NoDataError):
        tree.empirical_transition_probabilities(tree.root)
    s0 = ConcreteState("q", (0.0,))
    ta = Trace((s0, ConcreteState("a", (0.9,))), (Jump(0, 0.2),))
    tb = Trace((s0, ConcreteState("b", (0.9,))), (Jump(1, 0.55),))
    for tr in (ta, ta, ta, tb):
        tree.record_trace(tr)
    assert tree.empirical_transition_probabilities(tree.root) == {"a": 0.75, "b": 0.25}
    single = ExploreTree(h)
    single.record_trace(ta)
    assert single.empirical_transition_probabilities(single.root) == {"a": 1.0}


def test_empirical_probabilities_converge():
    h = two_window()
    tree = ExploreTree(h)
    cfg = SamplerConfig(J=64, K=1, seed=5)
    for i in range(10_000):
        tree.record_trace(sample_indexed(h, cfg, i))
    p = tree.empirical_transition_probabilities(tree.root)
    assert abs(sum(p.values()) - 1.0) <= 1e-12
    assert p["a"] == pytest.approx(0.75, abs=0.02)
    assert p["b"] == pytest.approx(0.25, abs=0.02)


def test_tree_shape_invariants():
    h = load_bundled("sewerage")
    tree = ExploreTree(h, cap=4)
    cfg = SamplerConfig(J=8)
    for i in range(50):
        tree.record_trace(sample_indexed(h, cfg, i))
    for node in tree.nodes():
        assert node.depth <= tree.K
        assert len(node.particles) <= 4
        for q, child in node.children.items():
            assert child.path == node.path + (q,)
            assert child.parent is node
        for p in node.particles:
            assert p.trace.states[p.step] == p.state
            assert p.state.mode == node.mode


def test_reservoir_uniform():
    h = single_variable({"q": "0"}, [])
    bins = np.zeros(10)
    rng = np.random.default_rng(9)
    tr = stay_trace(h)
    for _ in range(100):
        tree = ExploreTree(h, cap=256, rng=rng)
        node = tree.root
        for tag in range(10_000):
            tree._insert(node, Particle(ConcreteState("q", (float(tag),)), tr, 0))
        tags = np.array([p.state.valuation[0] for p in node.particles])
        bins += np.bincount((tags // 1000).astype(int), minlength=10)
    assert chisquare(bins).pvalue > 0.01
