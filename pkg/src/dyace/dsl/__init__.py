from .catalog import NodeKind, ParamBound, PrimitiveDescriptor, catalog_primitives, get_primitive, render_catalog
from .spec import Lineage, Node, OperatorGraph, OperatorSpec, serialize, validate_spec
from .interpreter import VariationResult, apply_operator
from .tree_distance import tree_edit_distance, zhang_shasha

__all__ = [
    "Lineage",
    "Node",
    "NodeKind",
    "OperatorGraph",
    "OperatorSpec",
    "ParamBound",
    "PrimitiveDescriptor",
    "VariationResult",
    "apply_operator",
    "catalog_primitives",
    "get_primitive",
    "render_catalog",
    "serialize",
    "tree_edit_distance",
    "validate_spec",
    "zhang_shasha",
]
