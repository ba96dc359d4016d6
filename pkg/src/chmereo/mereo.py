"""Granular partitions over a domain of objects with parthood.

Relations are closed reflexively and transitively when a domain or
partition is built; a cycle between distinct elements is an error.  Cells
carry no geometry: overlap is read only from the sub-cell order, and two
cells are *separated* when they have no common sub-cell.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

Obj = Hashable
Cell = Hashable

LIBRARY_TOL = 1e-12


class OrderError(ValueError):
    """A relation that should be a partial order is not antisymmetric."""


class UnknownElement(KeyError):
    pass


def close_order(elements: Iterable, pairs: Iterable[tuple]) -> frozenset[tuple]:
    """Reflexive-transitive closure of ``pairs`` (``(a, b)`` means ``a <= b``)."""
    elements = set(elements)
    above: dict = {e: {e} for e in elements}
    for a, b in pairs:
        if a not in elements or b not in elements:
            raise UnknownElement(f"relation mentions unknown element in {(a, b)!r}")
        above[a].add(b)
    # Warshall
    for k in elements:
        for i in elements:
            if k in above[i]:
                above[i] |= above[k]
    for a in elements:
        for b in above[a]:
            if a != b and a in above[b]:
                raise OrderError(f"{a!r} and {b!r} are each below the other")
    return frozenset((a, b) for a in elements for b in above[a])


@dataclass(frozen=True)
class ObjectDomain:
    objects: frozenset
    parthood: frozenset = frozenset()
    extensional: bool = False

    def __post_init__(self):
        objects = frozenset(self.objects)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "parthood", close_order(objects, self.parthood))
        if self.extensional:
            seen: dict = {}
            for x in objects:
                parts = frozenset(self.proper_parts(x))
                if parts and parts in seen:
                    raise ValueError(
                        f"{seen[parts]!r} and {x!r} share the same proper parts"
                    )
                seen[parts] = x

    def part_of(self, x: Obj, y: Obj) -> bool:
        return (x, y) in self.parthood

    def proper_parts(self, x: Obj) -> set:
        return {a for a, b in self.parthood if b == x and a != x}


@dataclass(frozen=True)
class Partition:
    cells: frozenset
    subcell: frozenset = frozenset()
    locations: frozenset = frozenset()

    def __post_init__(self):
        cells = frozenset(self.cells)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "subcell", close_order(cells, self.subcell))
        locations = frozenset((x, z) for x, z in self.locations)
        for _, z in locations:
            if z not in cells:
                raise UnknownElement(f"location in unknown cell {z!r}")
        object.__setattr__(self, "locations", locations)

    def below(self, a: Cell, b: Cell) -> bool:
        return (a, b) in self.subcell

    def cells_of(self, x: Obj) -> set:
        return {z for y, z in self.locations if y == x}

    def located_in(self, z: Cell) -> set:
        return {x for x, c in self.locations if c == z}

    @property
    def located_objects(self) -> set:
        return {x for x, _ in self.locations}

    @property
    def simple_cells(self) -> set:
        return {z for z in self.cells if not any(self.below(w, z) for w in self.cells if w != z)}

    def common_subcell(self, a: Cell, b: Cell) -> Cell | None:
        for z in sorted(self.cells, key=repr):
            if self.below(z, a) and self.below(z, b):
                return z
        return None

    def separated(self, a: Cell, b: Cell) -> bool:
        return self.common_subcell(a, b) is None


@dataclass(frozen=True)
class PCRViolation:
    object: Obj
    cells: tuple
    time: float | None = None


@dataclass(frozen=True)
class MereologyViolation:
    part: Obj
    whole: Obj
    cell: Cell


def check_pcr(p: Partition) -> list[PCRViolation]:
    """Objects located in two cells that share no sub-cell."""
    out = []
    for x in sorted(p.located_objects, key=repr):
        for a, b in itertools.combinations(sorted(p.cells_of(x), key=repr), 2):
            if p.separated(a, b):
                out.append(PCRViolation(x, (a, b)))
    return out


def _require(p: Partition, d: ObjectDomain | None, x=None, z=None):
    if d is not None and x is not None and x not in d.objects:
        raise UnknownElement(f"unknown object {x!r}")
    if z is not None and z not in p.cells:
        raise UnknownElement(f"unknown cell {z!r}")


def recognizes(p: Partition, x: Obj, d: ObjectDomain | None = None) -> bool:
    _require(p, d, x)
    return any(y == x for y, _ in p.locations)


def preserves_mereology(p: Partition, d: ObjectDomain) -> list[MereologyViolation]:
    """For each ``part <= whole`` and each cell locating the whole, the part
    must be located in a sub-cell of it (the cell itself counts)."""
    out = []
    for part, whole in sorted(d.parthood, key=repr):
        if part == whole:
            continue
        part_cells = p.cells_of(part)
        for zk in sorted(p.cells_of(whole), key=repr):
            if not any(p.below(zj, zk) for zj in part_cells):
                out.append(MereologyViolation(part, whole, zk))
    return out


def strong_location(p: Partition, d: ObjectDomain, x: Obj, z: Cell) -> bool:
    _require(p, d, x, z)
    if (x, z) not in p.locations:
        return False
    return all(d.part_of(y, x) for y in p.located_in(z))


def strongly_recognizes(p: Partition, d: ObjectDomain, x: Obj) -> bool:
    _require(p, d, x)
    return any(strong_location(p, d, x, z) for z in p.cells_of(x))


def strongly_located_by(p: Partition, d: ObjectDomain, z: Cell) -> list:
    return [x for x in sorted(p.located_in(z), key=repr) if strong_location(p, d, x, z)]


def is_strong_partition(p: Partition, d: ObjectDomain) -> bool:
    return all(
        not p.located_in(z) or strongly_located_by(p, d, z) for z in p.cells
    )


def boundary_report(p: Partition, d: ObjectDomain) -> dict:
    """Cells whose boundary is a de facto object boundary, mapped to those objects.

    Only meaningful for a strong partition that preserves the domain's
    mereology; otherwise the report is empty.
    """
    if not is_strong_partition(p, d) or preserves_mereology(p, d):
        return {}
    report = {}
    for z in sorted(p.cells, key=repr):
        objs = strongly_located_by(p, d, z)
        if objs:
            report[z] = tuple(objs)
    return report


@dataclass(frozen=True)
class PartitionHistory:
    steps: tuple  # ((time, Partition), ...)

    def __post_init__(self):
        steps = tuple((float(t), p) for t, p in self.steps)
        times = [t for t, _ in steps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"partition history times must increase: {times}")
        object.__setattr__(self, "steps", steps)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.steps)

    def at(self, t: float) -> Partition | None:
        for s, p in self.steps:
            if s == t:
                return p
        return None


def history_consistent(h: PartitionHistory) -> tuple[bool, list[PCRViolation]]:
    """Consistent iff no step puts an object in two separated cells at once."""
    violations = [
        PCRViolation(v.object, v.cells, t) for t, p in h.steps for v in check_pcr(p)
    ]
    return not violations, violations


def mutually_exclusive(h1: PartitionHistory, h2: PartitionHistory) -> bool:
    """Some shared time at which the two histories assert different locations."""
    shared = set(h1.times) & set(h2.times)
    return any(h1.at(t).locations != h2.at(t).locations for t in shared)


@dataclass(frozen=True)
class HistoryLibrary:
    entries: tuple  # ((PartitionHistory, probability), ...)


@dataclass(frozen=True)
class LibraryReport:
    non_exclusive: tuple[tuple[int, int], ...]
    bad_probabilities: tuple[int, ...]
    sum_defect: float
    tol: float = LIBRARY_TOL

    @property
    def valid(self) -> bool:
        return not self.non_exclusive and not self.bad_probabilities and self.sum_defect <= self.tol


def validate_library(lib: HistoryLibrary, tol: float = LIBRARY_TOL) -> LibraryReport:
    entries = list(lib.entries)
    clash = tuple(
        (i, j)
        for (i, (a, _)), (j, (b, _)) in itertools.combinations(enumerate(entries), 2)
        if not mutually_exclusive(a, b)
    )
    bad = tuple(i for i, (_, prob) in enumerate(entries) if not 0.0 <= prob <= 1.0)
    total = sum(prob for _, prob in entries)
    return LibraryReport(clash, bad, abs(total - 1.0), tol)


# document ingestion

def domain_from_dict(doc: Mapping) -> ObjectDomain:
    return ObjectDomain(
        frozenset(doc.get("objects", ())),
        frozenset(tuple(pair) for pair in doc.get("parthood", ())),
        bool(doc.get("extensional", False)),
    )


def partition_from_dict(doc: Mapping) -> Partition:
    return Partition(
        frozenset(doc.get("cells", ())),
        frozenset(tuple(pair) for pair in doc.get("subcell", ())),
        frozenset(tuple(pair) for pair in doc.get("locations", ())),
    )


def partition_history_from_list(steps) -> PartitionHistory:
    return PartitionHistory(
        tuple((step["time"], partition_from_dict(step["partition"])) for step in steps)
    )
