"""Unit-cost ordered tree edit distance over operator graphs."""
from typing import Callable, Hashable, Sequence, TypeVar

import zss

from .spec import Node

T = TypeVar("T")


def unit_cost(x: Hashable, y: Hashable) -> int:
    return 0 if x == y else 1


def zhang_shasha(
    a: T,
    b: T,
    get_children: Callable[[T], Sequence[T]],
    get_label: Callable[[T], Hashable],
) -> int:
    """Minimum insert/delete/relabel count turning tree ``a`` into tree ``b``"""
    return int(zss.simple_distance(a, b, get_children=get_children, get_label=get_label, label_dist=unit_cost))


def tree_edit_distance(a: Node, b: Node) -> int:
    """Structural distance between operator graphs; labels are (kind, primitive), parameters ignored"""
    return zhang_shasha(a, b, lambda n: list(n.children), lambda n: n.label)
