"""Consistent histories on a finite-dimensional space.

A history is stored as one projector index per time point; chain operators
are built multiplicatively rather than on the n-fold history space.  The
preparation time of the initial state may precede the first measurement
time, in which case the chain starts with a propagator.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qlin import (
    STRUCT_TOL,
    DenseOperator,
    FactorSpace,
    NotHermitianError,
    Projector,
    SpaceError,
    StateVector,
    embed,
)

DEFAULT_CAP = 4096


class HistoryCapExceeded(RuntimeError):
    pass


class ScheduleMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ProjectiveFamily:
    """A complete set of mutually orthogonal projectors with real outcome values.

    Construction does not enforce validity; use :func:`validate_family`.
    """

    space: FactorSpace
    projectors: tuple[Projector, ...]
    outcomes: tuple[float, ...] = ()
    name: str = ""

    def __post_init__(self):
        projectors = tuple(self.projectors)
        outcomes = tuple(float(a) for a in self.outcomes) or tuple(
            float(i) for i in range(len(projectors))
        )
        if len(outcomes) != len(projectors):
            raise ValueError("need one outcome value per projector")
        if len(set(outcomes)) != len(outcomes):
            raise ValueError(f"outcome values of family {self.name!r} are not distinct")
        for p in projectors:
            if p.space != self.space:
                raise SpaceError(f"projector of family {self.name!r} lives on another space")
        object.__setattr__(self, "projectors", projectors)
        object.__setattr__(self, "outcomes", outcomes)

    def __len__(self):
        return len(self.projectors)

    @classmethod
    def from_basis(cls, space: FactorSpace, vectors, name: str = "", outcomes=()) -> "ProjectiveFamily":
        """Rank-1 family from the rows of ``vectors`` (an orthonormal basis)."""
        vs = np.asarray(vectors, dtype=complex)
        return cls(space, tuple(Projector.onto(space, v) for v in vs), tuple(outcomes), name)

    @classmethod
    def local(cls, space: FactorSpace, label: str, vectors, name: str = "", outcomes=()) -> "ProjectiveFamily":
        """Family acting on the single factor ``label``, identity elsewhere."""
        sub = space.subspace([label])
        vs = np.asarray(vectors, dtype=complex)
        projectors = tuple(
            Projector(embed(Projector.onto(sub, v).op, space)) for v in vs
        )
        return cls(space, projectors, tuple(outcomes), name)

    @classmethod
    def trivial(cls, space: FactorSpace, name: str = "I") -> "ProjectiveFamily":
        return cls(space, (Projector(DenseOperator.identity(space)),), (0.0,), name)


@dataclass(frozen=True)
class FamilyReport:
    name: str
    orthogonality_defect: float
    idempotence_defect: float
    hermiticity_defect: float
    completeness_defect: float
    tol: float

    @property
    def valid(self) -> bool:
        return max(
            self.orthogonality_defect,
            self.idempotence_defect,
            self.hermiticity_defect,
            self.completeness_defect,
        ) <= self.tol

    def defects(self) -> list[str]:
        out = []
        for what in ("orthogonality", "idempotence", "hermiticity", "completeness"):
            value = getattr(self, f"{what}_defect")
            if value > self.tol:
                out.append(f"family {self.name!r}: {what} defect {value:.3e} > {self.tol:g}")
        return out


def _max_abs(m) -> float:
    return float(np.max(np.abs(m), initial=0.0))


def validate_family(f: ProjectiveFamily, tol: float = STRUCT_TOL) -> FamilyReport:
    mats = [p.entries for p in f.projectors]
    orth = max(
        (_max_abs(a @ b) for a, b in itertools.combinations(mats, 2)), default=0.0
    )
    idem = max((_max_abs(m @ m - m) for m in mats), default=0.0)
    herm = max((_max_abs(m - m.conj().T) for m in mats), default=0.0)
    total = sum(mats, np.zeros((f.space.total_dim,) * 2, dtype=complex))
    comp = _max_abs(total - np.eye(f.space.total_dim))
    return FamilyReport(f.name, orth, idem, herm, comp, tol)


class Schedule:
    """Measurement times plus a time-independent Hermitian Hamiltonian.

    ``prepare_time`` is when the initial state is given; it defaults to the
    first measurement time.  Propagators ``T(b, a) = exp(-i H (b - a))``
    come from one cached eigendecomposition.
    """

    def __init__(self, times: Sequence[float], hamiltonian: DenseOperator, prepare_time: float | None = None):
        times = tuple(float(t) for t in times)
        if not times:
            raise ValueError("a schedule needs at least one time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"times must be strictly increasing: {times}")
        t0 = times[0] if prepare_time is None else float(prepare_time)
        if t0 > times[0]:
            raise ValueError("prepare_time must not follow the first measurement time")
        scale = max(1.0, _max_abs(hamiltonian.entries))
        if hamiltonian.hermiticity_defect() > STRUCT_TOL * scale:
            raise NotHermitianError("schedule Hamiltonian is not Hermitian")
        self.times = times
        self.prepare_time = t0
        self.hamiltonian = hamiltonian
        self._vals, self._vecs = np.linalg.eigh(hamiltonian.entries)
        points = (t0,) + times
        # T(t_{k+1}, t_k), starting with T(t_1, t_0)
        self.steps = tuple(
            self.unitary(b, a) for a, b in zip(points, points[1:])
        )

    @property
    def space(self) -> FactorSpace:
        return self.hamiltonian.space

    @property
    def points(self) -> tuple[float, ...]:
        return (self.prepare_time,) + self.times

    def unitary(self, to_time: float, from_time: float) -> np.ndarray:
        """Raw ``T(to_time, from_time)`` matrix for arbitrary times."""
        dt = to_time - from_time
        if dt == 0:
            return np.eye(len(self._vals), dtype=complex)
        return (self._vecs * np.exp(-1j * self._vals * dt)) @ self._vecs.conj().T

    def propagator(self, to_time: float, from_time: float) -> DenseOperator:
        """``T(to_time, from_time)``; both must be schedule points."""
        for t in (to_time, from_time):
            if t not in self.points:
                raise ScheduleMismatch(f"time {t} is not a point of this schedule")
        return DenseOperator(self.space, self.unitary(to_time, from_time))

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return (
            self is other
            or (
                self.points == other.points
                and self.space == other.space
                and np.array_equal(self.hamiltonian.entries, other.hamiltonian.entries)
            )
        )

    def __hash__(self):
        return hash((self.points, self.space))

    def __repr__(self):
        return f"Schedule(times={self.times}, prepare_time={self.prepare_time})"


def heisenberg_transport(p: Projector, sched: Schedule, from_time: float, to_time: float) -> Projector:
    """Carry ``p`` from ``from_time`` to ``to_time``: ``T(to, from) P T(from, to)``."""
    fwd = sched.propagator(to_time, from_time).entries
    out = fwd @ p.entries @ fwd.conj().T
    return Projector(DenseOperator(p.space, (out + out.conj().T) / 2), p.rank)


@dataclass(frozen=True)
class History:
    schedule: Schedule
    families: tuple[ProjectiveFamily, ...]
    selected: tuple[int, ...]
    initial_state: StateVector
    _chain: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        families = tuple(self.families)
        selected = tuple(int(i) for i in self.selected)
        if len(families) != len(self.schedule.times) or len(selected) != len(families):
            raise ValueError("need exactly one family and one selection per time point")
        for f, i in zip(families, selected):
            if f.space != self.schedule.space:
                raise SpaceError(f"family {f.name!r} lives on another space")
            if not 0 <= i < len(f):
                raise IndexError(f"selection {i} out of range for family {f.name!r}")
        if self.initial_state.space != self.schedule.space:
            raise SpaceError("initial state lives on another space")
        object.__setattr__(self, "families", families)
        object.__setattr__(self, "selected", selected)

    def chain_vector(self) -> np.ndarray:
        """``K(Y)|psi_i>``: the unnormalized state carried through the history."""
        if self._chain is None:
            v = self.initial_state.amplitudes
            for step, f, i in zip(self.schedule.steps, self.families, self.selected):
                v = f.projectors[i].entries @ (step @ v)
            v.setflags(write=False)
            object.__setattr__(self, "_chain", v)
        return self._chain

    def label(self) -> str:
        return "-".join(str(i) for i in self.selected)


def chain_operator(y: History) -> DenseOperator:
    """``Pi_n T ... Pi_1 T(t_1, t_0) |psi_i><psi_i|``."""
    psi = y.initial_state.amplitudes
    return DenseOperator(y.schedule.space, np.outer(y.chain_vector(), psi.conj()))


def born_weight(y: History) -> float:
    """``Tr(K^dag K)``."""
    v = y.chain_vector()
    return float(np.vdot(v, v).real)


def _check_shared(y1: History, y2: History):
    if y1.schedule != y2.schedule:
        raise ScheduleMismatch("histories use different schedules")
    if y1.initial_state != y2.initial_state and not np.array_equal(
        y1.initial_state.amplitudes, y2.initial_state.amplitudes
    ):
        raise ScheduleMismatch("histories start from different initial states")


def decoherence_functional(y1: History, y2: History) -> complex:
    """``Tr(K^dag(y1) K(y2))``."""
    _check_shared(y1, y2)
    return complex(np.vdot(y1.chain_vector(), y2.chain_vector()))


def decoherence_matrix(histories: Sequence[History]) -> np.ndarray:
    """All pairwise decoherence-functional values as a Gram matrix."""
    for y in histories[1:]:
        _check_shared(histories[0], y)
    if not histories:
        return np.zeros((0, 0), dtype=complex)
    chains = np.array([y.chain_vector() for y in histories])
    return chains.conj() @ chains.T


def offdiagonal_max(d: np.ndarray) -> float:
    if len(d) < 2:
        return 0.0
    mask = ~np.eye(len(d), dtype=bool)
    return float(np.max(np.abs(d[mask])))


def consistency_threshold(d: np.ndarray, tol: float) -> float:
    """Off-diagonal bound ``tol * max(largest weight, 1e-300)``."""
    top = float(np.max(d.diagonal().real, initial=0.0)) if len(d) else 0.0
    return tol * max(top, 1e-300)


@dataclass(frozen=True)
class Framework:
    histories: tuple[History, ...]
    consistency_matrix: np.ndarray = field(repr=False)
    tol: float

    @property
    def weights(self) -> np.ndarray:
        return self.consistency_matrix.diagonal().real.copy()

    @property
    def max_offdiag(self) -> float:
        return offdiagonal_max(self.consistency_matrix)


@dataclass(frozen=True)
class FrameworkRejection:
    """Histories that failed the consistency condition."""

    histories: tuple[History, ...]
    consistency_matrix: np.ndarray = field(repr=False)
    tol: float
    offending: tuple[tuple[int, int, float], ...]

    @property
    def max_offdiag(self) -> float:
        return offdiagonal_max(self.consistency_matrix)

    def __bool__(self):
        return False


def build_framework(histories: Sequence[History], tol: float = 1e-8) -> Framework | FrameworkRejection:
    """Framework if every off-diagonal ``|D|`` is within the relative tolerance.

    Otherwise a :class:`FrameworkRejection` listing each offending pair
    ``(i, j, |D_ij|)`` with ``i < j``.
    """
    histories = tuple(histories)
    d = decoherence_matrix(histories)
    bound = consistency_threshold(d, tol)
    mags = np.abs(d)
    offending = tuple(
        (i, j, float(mags[i, j]))
        for i, j in itertools.combinations(range(len(histories)), 2)
        if mags[i, j] > bound
    )
    d.setflags(write=False)
    if offending:
        return FrameworkRejection(histories, d, tol, offending)
    return Framework(histories, d, tol)


def are_compatible(f1: ProjectiveFamily, f2: ProjectiveFamily, tol: float = STRUCT_TOL) -> bool:
    if f1.space != f2.space:
        raise SpaceError("families live on different spaces")
    for p in f1.projectors:
        for q in f2.projectors:
            a, b = p.entries, q.entries
            if _max_abs(a @ b - b @ a) > tol:
                return False
    return True


def enumerate_histories(
    sched: Schedule,
    families: Sequence[ProjectiveFamily],
    initial_state: StateVector,
    cap: int = DEFAULT_CAP,
) -> list[History]:
    """Every selection sequence, lexicographic in the projector indices."""
    families = tuple(families)
    count = int(np.prod([len(f) for f in families]))
    if count > cap:
        raise HistoryCapExceeded(f"{count} histories exceed the cap of {cap}")
    ranges = [range(len(f)) for f in families]
    return [History(sched, families, sel, initial_state) for sel in itertools.product(*ranges)]
