from .instances import (
    CvrpInstance,
    Domain,
    JsspInstance,
    ProblemInstance,
    Solution,
    TspInstance,
)
from .parsers import BksEntry, BksRegistry, load_instance, parse_instance
from .evaluation import (
    FeasibilityReport,
    check_feasible,
    encoding_cost,
    evaluate,
    exhaustive_makespan,
    held_karp,
    optimality_gap,
    split_routes,
)

__all__ = [
    "BksEntry",
    "BksRegistry",
    "CvrpInstance",
    "Domain",
    "FeasibilityReport",
    "JsspInstance",
    "ProblemInstance",
    "Solution",
    "TspInstance",
    "check_feasible",
    "encoding_cost",
    "evaluate",
    "exhaustive_makespan",
    "held_karp",
    "load_instance",
    "optimality_gap",
    "parse_instance",
    "split_routes",
]
