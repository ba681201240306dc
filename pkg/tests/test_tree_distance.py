import itertools

import numpy as np

from conftest import seed_spec
from src.dyace.dsl import tree_edit_distance, zhang_shasha


def tree(label, *children):
    return (label, list(children))


def children_of(node):
    return node[1]


def label_of(node):
    return node[0]


def flatten(root):
    """Post-order labels plus the ancestor set of every node"""
    labels, ancestors = [], []

    def visit(node, path):
        start = len(labels)
        for child in node[1]:
            visit(child, path)
        labels.append(node[0])
        ancestors.append(set(path))
        index = len(labels) - 1
        # every node visited under this one has it as an ancestor
        for k in range(start, index):
            ancestors[k].add(index)

    visit(root, [])
    return labels, ancestors


def brute_force_distance(a, b):
    """Minimum-cost edit mapping by enumerating every valid node mapping"""
    la, anc_a = flatten(a)
    lb, anc_b = flatten(b)

    def is_ancestor(anc, x, y):
        return x in anc[y]

    def left_of(anc, x, y):
        return x < y and not is_ancestor(anc, y, x)

    best = len(la) + len(lb)
    for k in range(0, min(len(la), len(lb)) + 1):
        for left in itertools.combinations(range(len(la)), k):
            for right in itertools.permutations(range(len(lb)), k):
                pairs = list(zip(left, right))
                valid = all(
                    is_ancestor(anc_a, i1, i2) == is_ancestor(anc_b, j1, j2)
                    and left_of(anc_a, i1, i2) == left_of(anc_b, j1, j2)
                    for (i1, j1), (i2, j2) in itertools.permutations(pairs, 2)
                )
                if not valid:
                    continue
                cost = sum(la[i] != lb[j] for i, j in pairs) + (len(la) - k) + (len(lb) - k)
                best = min(best, cost)
    return best


def random_tree(gen, max_nodes=5):
    size = int(gen.integers(1, max_nodes + 1))
    nodes = [tree(str(gen.choice(["a", "b", "c"])))]
    for _ in range(size - 1):
        parent = nodes[int(gen.integers(0, len(nodes)))]
        child = tree(str(gen.choice(["a", "b", "c"])))
        parent[1].append(child)
        nodes.append(child)
    return nodes[0]


def distance(a, b):
    return zhang_shasha(a, b, children_of, label_of)


def test_textbook_example():
    # f(d(a c(b)) e) against f(c(d(a b)) e)
    first = tree("f", tree("d", tree("a"), tree("c", tree("b"))), tree("e"))
    second = tree("f", tree("c", tree("d", tree("a"), tree("b"))), tree("e"))
    assert distance(first, second) == 2


def test_single_nodes():
    assert distance(tree("a"), tree("a")) == 0
    assert distance(tree("a"), tree("b")) == 1
    assert distance(tree("a"), tree("a", tree("b"), tree("c"))) == 2


def test_matches_brute_force_oracle():
    gen = np.random.default_rng(2024)
    for _ in range(100):
        a, b = random_tree(gen), random_tree(gen)
        assert distance(a, b) == brute_force_distance(a, b)


def test_metric_axioms():
    gen = np.random.default_rng(7)
    trees = [random_tree(gen, 6) for _ in range(12)]
    for a in trees:
        assert distance(a, a) == 0
    for a, b, c in itertools.combinations(trees, 3):
        assert distance(a, b) == distance(b, a)
        assert distance(a, c) <= distance(a, b) + distance(b, c)


def test_operator_graph_distance():
    first = seed_spec("jssp", 0, "S1")
    second = seed_spec("jssp", 1, "S2")
    assert tree_edit_distance(first.graph, first.graph) == 0
    # tournament/order/swap/swap_hill_climb against rank/two_point/inversion: three relabels and one deletion
    assert tree_edit_distance(first.graph, second.graph) == 4
    assert tree_edit_distance(second.graph, first.graph) == 4
