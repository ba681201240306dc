import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..assets import asset_path
from ..errors import BksMissingError, InstanceParseError
from .instances import CvrpInstance, JsspInstance, ProblemInstance, TspInstance

logger = logging.getLogger(__name__)

FORMATS = ("taillard", "tsplib", "cvrplib")
_FORMAT_SUFFIXES = {".txt": "taillard", ".jss": "taillard", ".tsp": "tsplib", ".vrp": "cvrplib"}


@dataclass(frozen=True)
class BksEntry:
    cost: float
    metric: str  # "exact" or "rounded"


class BksRegistry:
    """Best-known costs keyed by instance name, one ``name cost metric`` triple per line"""

    def __init__(self, entries: Optional[Dict[str, BksEntry]] = None):
        self._entries: Dict[str, BksEntry] = dict(entries or {})

    @classmethod
    def from_text(cls, text: str) -> "BksRegistry":
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise InstanceParseError(f"BKS registry line {lineno}: expected 'name cost metric', got '{raw}'")
            name, cost = parts[0], float(parts[1])
            metric = parts[2] if len(parts) == 3 else "exact"
            if metric not in ("exact", "rounded"):
                raise InstanceParseError(f"BKS registry line {lineno}: unknown metric '{metric}'")
            entries[name.lower()] = BksEntry(cost, metric)
        return cls(entries)

    @classmethod
    def from_file(cls, path: Path) -> "BksRegistry":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "BksRegistry":
        return cls.from_file(asset_path("bks.txt"))

    def get(self, name: str) -> BksEntry:
        entry = self._entries.get(name.lower())
        if entry is None:
            raise BksMissingError(name)
        return entry

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._entries


def _numbers(line: str) -> List[float]:
    try:
        return [float(tok) for tok in line.replace(",", " ").split()]
    except ValueError:
        return []


def _parse_taillard(text: str, name: Optional[str], registry: BksRegistry) -> JsspInstance:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise InstanceParseError("malformed Taillard header: empty file")

    # Either "Nb of jobs, Nb of Machines, ..." followed by a value row, or a bare "J M" row
    idx = 0
    if re.match(r"(?i)nb\s+of\s+jobs", lines[0]):
        idx = 1
    header = _numbers(lines[idx]) if idx < len(lines) else []
    if len(header) < 2 or any(v != int(v) or v <= 0 for v in header[:2]):
        raise InstanceParseError(f"malformed Taillard header: '{lines[idx] if idx < len(lines) else ''}'")
    num_jobs, num_machines = int(header[0]), int(header[1])
    idx += 1

    def block(label: str, start: int) -> Tuple[List[List[int]], int]:
        if start < len(lines) and lines[start].lower().startswith(label):
            start += 1
        rows = []
        while start < len(lines) and len(rows) < num_jobs:
            values = _numbers(lines[start])
            if not values:
                break
            rows.append([int(v) for v in values])
            start += 1
        if len(rows) != num_jobs or any(len(r) != num_machines for r in rows):
            raise InstanceParseError(
                f"dimension mismatch: expected {num_jobs} {label} rows of {num_machines} values"
            )
        return rows, start

    times, idx = block("times", idx)
    machines, idx = block("machines", idx)
    flat = [m for row in machines for m in row]
    offset = 1 if min(flat) == 1 else 0
    routing = tuple(
        tuple((m - offset, p) for m, p in zip(mrow, trow)) for mrow, trow in zip(machines, times)
    )
    if name is None:
        raise InstanceParseError("Taillard files carry no instance name; pass one explicitly")
    entry = registry.get(name)
    return JsspInstance(name, num_jobs, num_machines, routing, entry.cost, entry.metric)


def _parse_tsplib_sections(text: str) -> Tuple[Dict[str, str], Dict[str, List[List[str]]]]:
    """Split a TSPLIB-style file into ``KEY: VALUE`` header fields and named sections"""
    header: Dict[str, str] = {}
    sections: Dict[str, List[List[str]]] = {}
    current: Optional[str] = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.upper() == "EOF":
            break
        if ":" in line and current is None:
            key, value = line.split(":", 1)
            header[key.strip().upper()] = value.strip()
            continue
        token = line.split()[0].upper()
        if token.endswith("_SECTION"):
            current = token
            sections[current] = []
            continue
        if current is None:
            raise InstanceParseError(f"malformed header line: '{line}'")
        if ":" in line:
            # a header field after a section ends that section
            key, value = line.split(":", 1)
            header[key.strip().upper()] = value.strip()
            current = None
            continue
        sections[current].append(line.split())
    return header, sections


def _dimension(header: Dict[str, str]) -> int:
    try:
        dimension = int(header["DIMENSION"])
    except (KeyError, ValueError):
        raise InstanceParseError("malformed header: missing or invalid DIMENSION")
    if dimension <= 0:
        raise InstanceParseError(f"malformed header: DIMENSION {dimension}")
    return dimension


def _check_euclidean(header: Dict[str, str]) -> None:
    weight_type = header.get("EDGE_WEIGHT_TYPE", "").upper()
    if weight_type != "EUC_2D":
        raise InstanceParseError(
            f"unsupported edge weight type '{weight_type or 'missing'}': only EUC_2D is supported"
        )


def _node_index(token: str, dimension: int, section: str) -> int:
    try:
        node = int(token) - 1
    except ValueError:
        raise InstanceParseError(f"malformed {section} row: node id '{token}' is not an integer")
    if not 0 <= node < dimension:
        raise InstanceParseError(f"dimension mismatch: {section} node id {token} outside 1..{dimension}")
    return node


def _coords(sections: Dict[str, List[List[str]]], dimension: int) -> np.ndarray:
    rows = sections.get("NODE_COORD_SECTION")
    if rows is None:
        raise InstanceParseError("malformed file: NODE_COORD_SECTION missing")
    if len(rows) != dimension:
        raise InstanceParseError(f"dimension mismatch: DIMENSION {dimension} but {len(rows)} coordinates")
    coords = np.empty((dimension, 2), dtype=np.float64)
    seen = set()
    for row in rows:
        if len(row) < 3:
            raise InstanceParseError(f"malformed coordinate row: '{' '.join(row)}'")
        node = _node_index(row[0], dimension, "coordinate")
        if node in seen:
            raise InstanceParseError(f"dimension mismatch: coordinate node id {row[0]} repeated")
        seen.add(node)
        try:
            coords[node] = (float(row[1]), float(row[2]))
        except ValueError:
            raise InstanceParseError(f"malformed coordinate row: '{' '.join(row)}'")
    return coords


def _parse_tsplib(text: str, name: Optional[str], registry: BksRegistry) -> TspInstance:
    header, sections = _parse_tsplib_sections(text)
    kind = header.get("TYPE", "TSP").upper()
    if kind != "TSP":
        raise InstanceParseError(f"malformed header: TYPE {kind} is not a symmetric TSP")
    _check_euclidean(header)
    dimension = _dimension(header)
    coords = _coords(sections, dimension)
    name = name or header.get("NAME")
    if not name:
        raise InstanceParseError("malformed header: NAME missing")
    entry = registry.get(name)
    return TspInstance(name, coords, entry.cost, entry.metric)


def _parse_cvrplib(text: str, name: Optional[str], registry: BksRegistry) -> CvrpInstance:
    header, sections = _parse_tsplib_sections(text)
    kind = header.get("TYPE", "CVRP").upper()
    if kind != "CVRP":
        raise InstanceParseError(f"malformed header: TYPE {kind} is not CVRP")
    _check_euclidean(header)
    dimension = _dimension(header)
    try:
        capacity = int(header["CAPACITY"])
    except (KeyError, ValueError):
        raise InstanceParseError("malformed header: missing or invalid CAPACITY")
    for extra in ("DISTANCE", "SERVICE_TIME"):
        if extra in header:
            logger.warning(f"{extra} constraint in {name or header.get('NAME')} is ignored")
    coords = _coords(sections, dimension)

    rows = sections.get("DEMAND_SECTION")
    if rows is None:
        raise InstanceParseError("malformed file: DEMAND_SECTION missing")
    if len(rows) != dimension:
        raise InstanceParseError(f"dimension mismatch: DIMENSION {dimension} but {len(rows)} demands")
    demands = np.zeros(dimension, dtype=np.int64)
    seen = set()
    for row in rows:
        if len(row) < 2:
            raise InstanceParseError(f"malformed demand row: '{' '.join(row)}'")
        node = _node_index(row[0], dimension, "demand")
        if node in seen:
            raise InstanceParseError(f"dimension mismatch: demand node id {row[0]} repeated")
        seen.add(node)
        try:
            demands[node] = int(row[1])
        except ValueError:
            raise InstanceParseError(f"malformed demand row: '{' '.join(row)}'")

    depot = 0
    # the section ends with -1
    depot_rows = [r[0] for r in sections.get("DEPOT_SECTION", []) if r[0] != "-1"]
    if depot_rows:
        depot = _node_index(depot_rows[0], dimension, "depot")
    name = name or header.get("NAME")
    if not name:
        raise InstanceParseError("malformed header: NAME missing")
    entry = registry.get(name)
    return CvrpInstance(name, coords, demands, capacity, entry.cost, depot=depot, metric=entry.metric)


_PARSERS = {"taillard": _parse_taillard, "tsplib": _parse_tsplib, "cvrplib": _parse_cvrplib}


def parse_instance(
    text: str,
    format: str,
    name: Optional[str] = None,
    registry: Optional[BksRegistry] = None,
) -> ProblemInstance:
    """Parse benchmark text; the BKS comes from the registry, never from the file"""
    parser = _PARSERS.get(format)
    if parser is None:
        raise InstanceParseError(f"unknown instance format '{format}', expected one of {FORMATS}")
    return parser(text, name, registry or BksRegistry.default())


def load_instance(
    path: Path,
    format: Optional[str] = None,
    name: Optional[str] = None,
    registry: Optional[BksRegistry] = None,
) -> ProblemInstance:
    """Read an instance file; Taillard files are named after their stem"""
    path = Path(path)
    format = format or _FORMAT_SUFFIXES.get(path.suffix.lower())
    if format is None:
        raise InstanceParseError(f"cannot infer instance format of {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InstanceParseError(f"cannot read instance {path}: {e}") from e
    if format == "taillard" and name is None:
        name = path.stem
    instance = parse_instance(text, format, name=name, registry=registry)
    logger.info(f"Loaded {format} instance {instance.name} (bks={instance.bks}, metric={instance.metric})")
    return instance
