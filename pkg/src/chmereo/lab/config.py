"""Experiment configuration: JSON ingestion, validation and assembly.

Complex numbers are written as ``[re, im]`` pairs.  Coupling values and
times may be given as numbers or as strings like ``"pi/16"`` or
``"3*pi/16"``.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Callable

import numpy as np

from ..histories import DEFAULT_CAP, ProjectiveFamily, validate_family
from ..overlay import DEFAULT_EPS, DEFAULT_TOL, SystemEnvSplit
from ..qlin import (
    KETS,
    PAULI,
    STRUCT_TOL,
    DenseOperator,
    FactorSpace,
    Projector,
    StateVector,
    bell_state,
    product_state,
)

NAMED_BASES = {
    "Z": ("0", "1"),
    "X": ("+", "-"),
    "Y": ("i", "j"),
}

_PI_EXPR = re.compile(r"^\s*(?:([+-]?\d+(?:\.\d*)?)\s*\*?\s*)?(-)?pi\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


class ConfigError(ValueError):
    """Carries every defect found, one message each."""

    def __init__(self, defects: list[str]):
        super().__init__("; ".join(defects))
        self.defects = defects


def parse_real(value) -> float:
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_EXPR.match(value)
        if m:
            mult = float(m.group(1)) if m.group(1) else 1.0
            sign = -1.0 if m.group(2) else 1.0
            div = float(m.group(3)) if m.group(3) else 1.0
            return sign * mult * math.pi / div
        return float(value)
    raise ValueError(f"expected a number, got {value!r}")


def parse_complex(value) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(parse_real(value[0]), parse_real(value[1]))
    return complex(parse_real(value), 0.0)


def parse_vector(rows) -> np.ndarray:
    return np.array([parse_complex(v) for v in rows], dtype=complex)


def parse_matrix(rows) -> np.ndarray:
    return np.array([[parse_complex(v) for v in row] for row in rows], dtype=complex)


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(doc: Any) -> str:
    return hashlib.sha256(canonical_json(doc).encode("ascii")).hexdigest()


@dataclass
class Term:
    coefficient: float
    parameter: str | None
    operator: DenseOperator


@dataclass
class Experiment:
    doc: dict
    space: FactorSpace
    terms: list[Term]
    families: dict[str, ProjectiveFamily]
    measurements: list[str]
    times: tuple[float, ...]
    prepare_time: float | None
    initial_state: StateVector
    eps: float = DEFAULT_EPS
    tol: float = DEFAULT_TOL
    cap: int = DEFAULT_CAP
    seed: int = 0
    parameters: dict[str, float] = field(default_factory=dict)
    sweep_parameter: str | None = None
    sweep_values: tuple[float, ...] = ()
    split: SystemEnvSplit | None = None

    @property
    def digest(self) -> str:
        return digest(self.doc)

    @property
    def measurement_families(self) -> tuple[ProjectiveFamily, ...]:
        return tuple(self.families[name] for name in self.measurements)

    def hamiltonian(self, **values: float) -> DenseOperator:
        params = {**self.parameters, **values}
        h = DenseOperator.zero(self.space)
        for term in self.terms:
            scale = term.coefficient
            if term.parameter is not None:
                if term.parameter not in params:
                    raise ConfigError([f"parameter {term.parameter!r} has no value; set parameters.{term.parameter}"])
                scale *= params[term.parameter]
            h = h + term.operator * scale
        return h

    def hamiltonian_family(self, parameter: str) -> Callable[[float], DenseOperator]:
        def at(g: float) -> DenseOperator:
            return self.hamiltonian(**{parameter: g})
        return at


def _factor_op(space: FactorSpace, label: str, given) -> np.ndarray:
    dim = space.dim_of(label)
    if isinstance(given, str):
        if given == "I":
            return np.eye(dim, dtype=complex)
        if dim == 2 and given in PAULI:
            return PAULI[given]
        raise ValueError(f"operator {given!r} is not defined on factor {label!r} of dim {dim}")
    m = parse_matrix(given)
    if m.shape != (dim, dim):
        raise ValueError(f"inline operator on {label!r} has shape {m.shape}, expected {(dim, dim)}")
    return m


def _build_term(space: FactorSpace, raw: dict, idx: int, defects: list[str]) -> Term | None:
    where = f"hamiltonian term {idx}"
    try:
        coeff = parse_real(raw.get("coefficient", 1.0))
    except ValueError as exc:
        defects.append(f"{where}: {exc}")
        return None
    ops = raw.get("ops", {})
    if not isinstance(ops, dict):
        defects.append(f"{where}: ops must map factor labels to operators")
        return None
    unknown = [label for label in ops if label not in space.labels]
    if unknown:
        defects.append(f"{where}: unknown factor label(s) {unknown}")
        return None
    try:
        mats = [_factor_op(space, label, ops.get(label, "I")) for label in space.labels]
    except ValueError as exc:
        defects.append(f"{where}: {exc}")
        return None
    op = DenseOperator(space, reduce(np.kron, mats))
    if not op.is_hermitian(STRUCT_TOL):
        defects.append(f"{where}: operator is not Hermitian (defect {op.hermiticity_defect():.3e})")
        return None
    parameter = raw.get("parameter")
    return Term(coeff, None if parameter is None else str(parameter), op)


def _build_family(space: FactorSpace, name: str, raw: dict, defects: list[str]) -> ProjectiveFamily | None:
    where = f"family {name!r}"
    outcomes = tuple(parse_real(a) for a in raw.get("outcomes", ()))
    try:
        if "projectors" in raw:
            projectors = tuple(
                Projector(DenseOperator(space, parse_matrix(m))) for m in raw["projectors"]
            )
            fam = ProjectiveFamily(space, projectors, outcomes, name)
        else:
            label = raw.get("factor")
            if label not in space.labels:
                defects.append(f"{where}: unknown factor label {label!r}")
                return None
            basis = raw.get("basis")
            dim = space.dim_of(label)
            if basis == "I":
                return ProjectiveFamily.trivial(space, name)
            if basis == "Z":
                vectors = np.eye(dim)
            elif basis in NAMED_BASES and dim == 2:
                vectors = np.array([KETS[k] for k in NAMED_BASES[basis]])
            elif "vectors" in raw:
                vectors = np.array([parse_vector(v) for v in raw["vectors"]])
                norms = np.linalg.norm(vectors, axis=1)
                if np.any(norms == 0):
                    defects.append(f"{where}: zero vector")
                    return None
                vectors = vectors / norms[:, None]
            else:
                defects.append(f"{where}: give a basis name (I, X, Y, Z), vectors, or projectors")
                return None
            fam = ProjectiveFamily.local(space, label, vectors, name, outcomes)
    except (ValueError, TypeError) as exc:
        defects.append(f"{where}: {exc}")
        return None
    report = validate_family(fam)
    if not report.valid:
        defects.extend(report.defects())
        return None
    return fam


def _build_state(space: FactorSpace, raw, defects: list[str]) -> StateVector | None:
    try:
        if isinstance(raw, str):
            word = raw.strip().lstrip("|").rstrip(">").strip()
            if word.lower() == "bell":
                return bell_state(space)
            return product_state(space, word)
        amps = parse_vector(raw)
        return StateVector(space, amps)
    except (ValueError, TypeError) as exc:
        defects.append(f"initial_state: {exc}")
        return None


def build_experiment(doc: dict, *, seed: int | None = None, tol: float | None = None, cap: int | None = None) -> Experiment:
    """Assemble and validate; raises :class:`ConfigError` listing every defect."""
    defects: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])

    try:
        space = FactorSpace(tuple((f["label"], int(f["dim"])) for f in doc["space"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"space: {exc}"]) from None

    terms = [
        t for i, raw in enumerate(doc.get("hamiltonian", []))
        if (t := _build_term(space, raw, i, defects)) is not None
    ]
    families = {}
    for name, raw in doc.get("families", {}).items():
        fam = _build_family(space, name, raw, defects)
        if fam is not None:
            families[name] = fam

    try:
        times = tuple(parse_real(t) for t in doc.get("times", []))
    except ValueError as exc:
        defects.append(f"times: {exc}")
        times = ()
    if not times:
        defects.append("times: need at least one measurement time")
    if any(b <= a for a, b in zip(times, times[1:])):
        defects.append(f"times: not strictly increasing {list(times)}")
    prepare_time = doc.get("prepare_time")
    if prepare_time is not None:
        prepare_time = parse_real(prepare_time)
        if times and prepare_time > times[0]:
            defects.append("prepare_time: follows the first measurement time")

    measurements = list(doc.get("measurements", []))
    if len(measurements) != len(times):
        defects.append(f"measurements: {len(measurements)} entries for {len(times)} times")
    for name in measurements:
        if name not in doc.get("families", {}):
            defects.append(f"measurements: unknown family {name!r}")

    state = None
    if "initial_state" not in doc:
        defects.append("initial_state: missing")
    else:
        state = _build_state(space, doc["initial_state"], defects)

    parameters = {}
    for k, v in doc.get("parameters", {}).items():
        try:
            parameters[k] = parse_real(v)
        except ValueError as exc:
            defects.append(f"parameters.{k}: {exc}")

    sweep_parameter, sweep_values = None, ()
    if "sweep" in doc:
        sw = doc["sweep"]
        sweep_parameter = sw.get("parameter")
        try:
            sweep_values = tuple(parse_real(v) for v in sw.get("values", []))
        except ValueError as exc:
            defects.append(f"sweep.values: {exc}")
        if not sweep_parameter:
            defects.append("sweep: missing parameter name")
        if not sweep_values:
            defects.append("sweep: no values")
    for t in terms:
        if t.parameter is not None and t.parameter not in parameters and t.parameter != sweep_parameter:
            defects.append(f"hamiltonian: parameter {t.parameter!r} has no value or sweep")

    split = None
    if "split" in doc:
        system = doc["split"].get("system", [])
        unknown = [label for label in system if label not in space.labels]
        if unknown:
            defects.append(f"split: unknown factor label(s) {unknown}")
        else:
            try:
                split = SystemEnvSplit(space, tuple(system), tuple(doc["split"].get("environment", ())))
            except ValueError as exc:
                defects.append(f"split: {exc}")

    eps = parse_real(doc.get("eps", DEFAULT_EPS))
    if not 0 < eps < 1:
        defects.append(f"eps: {eps} outside (0, 1)")
    tol_v = parse_real(tol if tol is not None else doc.get("tol", DEFAULT_TOL))
    if tol_v <= 0:
        defects.append("tol: must be positive")
    cap_v = int(cap if cap is not None else doc.get("cap", DEFAULT_CAP))
    seed_v = int(seed if seed is not None else doc.get("seed", 0))
    if not 0 <= seed_v < 2**64:
        defects.append("seed: must be an unsigned 64-bit integer")

    if defects:
        raise ConfigError(defects)
    return Experiment(
        doc=doc, space=space, terms=terms, families=families, measurements=measurements,
        times=times, prepare_time=prepare_time, initial_state=state, eps=eps, tol=tol_v,
        cap=cap_v, seed=seed_v, parameters=parameters, sweep_parameter=sweep_parameter,
        sweep_values=sweep_values, split=split,
    )
