import hashlib
import json
import logging
import re
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, Optional

from ..assets import asset_path
from ..dsl.catalog import get_primitive
from ..dsl.spec import OperatorSpec
from ..errors import DyaceError
from ..problems.instances import Domain

logger = logging.getLogger(__name__)

PROMPT_DIR = asset_path("prompts")
CHECKSUM_FILE = PROMPT_DIR / "SHA256SUMS"

TEMPLATE_NAMES = (
    "diagnosis_combine",
    "diagnosis_mutate",
    "diagnosis_explore",
    "coding_combine",
    "coding_mutate",
    "coding_explore",
    "coding_initialize",
)

PROBLEM_TYPES = {
    Domain.JSSP: "job shop scheduling (makespan minimization)",
    Domain.TSP: "the traveling salesman problem (tour length minimization)",
    Domain.CVRP: "the capacitated vehicle routing problem (total distance minimization)",
}

GENERIC_DIRECTION = (
    "Improve the algorithm's final optimality gap. Keep the parts that work, "
    "adjust parameters within their bounds and replace operators that stall the search."
)

_PLACEHOLDER = re.compile(r"\{([a-z0-9_]+)\}")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise DyaceError(f"unknown prompt template '{name}'")
    return (PROMPT_DIR / f"{name}.txt").read_text(encoding="utf-8")


def placeholders(name: str) -> set:
    return set(_PLACEHOLDER.findall(load_template(name)))


def render(name: str, values: Dict[str, str]) -> str:
    """Literal ``{placeholder}`` substitution; JSON braces in the templates are left alone"""
    text = load_template(name)
    missing = placeholders(name) - set(values)
    if missing:
        raise DyaceError(f"template {name} needs values for {sorted(missing)}")
    # single pass: braces inside substituted values stay literal
    return _PLACEHOLDER.sub(lambda m: str(values.get(m.group(1), m.group(0))), text)


def template_checksums(names: Iterable[str] = TEMPLATE_NAMES) -> Dict[str, str]:
    return {
        f"{name}.txt": hashlib.sha256((PROMPT_DIR / f"{name}.txt").read_bytes()).hexdigest()
        for name in names
    }


def shipped_checksums(path: Path = CHECKSUM_FILE) -> Dict[str, str]:
    """Parse a ``sha256sum``-style manifest"""
    sums = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            digest, filename = line.split(maxsplit=1)
            sums[filename.strip().lstrip("*")] = digest
    return sums


def drifted_templates() -> Dict[str, str]:
    """Templates whose content no longer matches the shipped checksum manifest"""
    shipped = shipped_checksums()
    return {name: digest for name, digest in template_checksums().items() if shipped.get(name) != digest}


# rendering helpers -------------------------------------------------------------

def problem_type(domain: Domain) -> str:
    return PROBLEM_TYPES[Domain(domain)]


def describe_spec(spec: OperatorSpec, spec_score: Optional[float]) -> str:
    """Parent block: id, score, description and the full document as 'code'"""
    shown = "not scored" if spec_score is None else f"{spec_score:.4f}% mean final gap"
    document = {"description": spec.description, "parameters": spec.parameters, "graph": spec.graph.model_dump(mode="json")}
    return (
        f"{spec.id} ({shown})\n"
        f"{spec.description.strip()}\n"
        f"code:\n{json.dumps(document, sort_keys=True, indent=2)}"
    )


def parameter_listing(spec: OperatorSpec) -> str:
    """Current parameter values with the bounds of every attribute they bind"""
    bounds: Dict[str, list] = {}
    for node in spec.graph.iter_nodes():
        primitive = get_primitive(node.op)
        for attr, binding in node.params.items():
            names = binding if isinstance(binding, list) else [binding]
            for name in names:
                bounds.setdefault(name, []).append(f"{node.op}.{attr}: {primitive.params[attr].render()}")
    lines = []
    for name in sorted(spec.parameters):
        where = "; ".join(bounds.get(name, ["unused"]))
        lines.append(f"{name} = {spec.parameters[name]:g}  ({where})")
    return "\n".join(lines)


def algorithm_listing(spec: OperatorSpec) -> str:
    document = {"description": spec.description, "parameters": spec.parameters, "graph": spec.graph.model_dump(mode="json")}
    return json.dumps(document, sort_keys=True, indent=2)


def feature_section(block: Optional[str]) -> str:
    """Feature placeholder value; empty when the feature extractor is switched off"""
    if block is None:
        return ""
    return "search trajectory on the solution population:\n" + block + "\n"


def direction_section(direction: Optional[str]) -> str:
    text = direction if direction is not None else GENERIC_DIRECTION
    return "Improvement directions:\n" + text.strip()
