"""Partitions overlaid on Hilbert space, and the interaction no-go experiment.

The experiment couples a system to its environment with strength ``g``,
enumerates the histories of a system-side projective family interleaved with
the global propagators, and records the largest off-diagonal value of the
decoherence functional next to the entanglement the dynamics generates
across the split.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .histories import (
    DEFAULT_CAP,
    Framework,
    FrameworkRejection,
    History,
    ProjectiveFamily,
    Schedule,
    build_framework,
    consistency_threshold,
    decoherence_matrix,
    enumerate_histories,
    heisenberg_transport,
    offdiagonal_max,
    validate_family,
)
from .mereo import Partition, PartitionHistory
from .qlin import (
    STRUCT_TOL,
    DenseOperator,
    FactorSpace,
    Projector,
    SpaceError,
    StateVector,
    embed,
    entanglement_entropy,
    partial_trace,
    product_state,
    schmidt,
    tensor,
)

DEFAULT_EPS = 1e-6
DEFAULT_TOL = 1e-8
ENTROPY_TOL = 1e-9
# round-off allowance on the inclusive resolution boundary
RESOLUTION_SLACK = 1e-12


class UnrecordableOutcome(ValueError):
    """A selected projector falls below the resolution threshold."""


class CrossTermError(ValueError):
    pass


class CommutatorDefectError(ValueError):
    pass


class NonOrthonormalBasis(ValueError):
    pass


class NonProductState(ValueError):
    pass


class POVMError(ValueError):
    pass


# outcome resolution

@dataclass(frozen=True)
class ResolutionMap:
    epsilon: float
    family: ProjectiveFamily
    probabilities: tuple[float, ...]
    admitted: tuple[int, ...]

    @property
    def m_epsilon(self) -> int:
        return len(self.admitted)


def _amplitudes(state) -> np.ndarray:
    return state.amplitudes if isinstance(state, StateVector) else np.asarray(state, dtype=complex)


def resolution_map(state, f: ProjectiveFamily, eps: float) -> ResolutionMap:
    """Projectors with ``<state|P|state> >= eps``; the boundary is admitted
    (up to :data:`RESOLUTION_SLACK` of round-off)."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"resolution must lie in (0, 1), got {eps}")
    v = _amplitudes(state)
    probs = tuple(float(np.vdot(v, p.entries @ v).real) for p in f.projectors)
    admitted = tuple(j for j, prob in enumerate(probs) if prob >= eps - RESOLUTION_SLACK)
    return ResolutionMap(float(eps), f, probs, admitted)


def state_before(y: History, time_index: int) -> np.ndarray | None:
    """Normalized state just before the measurement at ``time_index``,
    conditioned on the history's earlier selections; None if unreachable."""
    v = y.initial_state.amplitudes
    steps, fams, sel = y.schedule.steps, y.families, y.selected
    for k in range(time_index):
        v = fams[k].projectors[sel[k]].entries @ (steps[k] @ v)
    v = steps[time_index] @ v
    norm = np.linalg.norm(v)
    if norm < 1e-150:
        return None
    return v / norm


def outcome_partition(y: History, time_index: int, eps: float) -> Partition:
    """Simple cells ``1..m_eps``, one per admitted projector (objects are
    projector indices); the history's selection sits in exactly one cell."""
    v = state_before(y, time_index)
    fam = y.families[time_index]
    sel = y.selected[time_index]
    if v is None:
        raise UnrecordableOutcome(f"time index {time_index} is unreachable along this history")
    res = resolution_map(v, fam, eps)
    if sel not in res.admitted:
        raise UnrecordableOutcome(
            f"selection {sel} at time index {time_index} has probability "
            f"{res.probabilities[sel]:.3e} < eps = {eps:g}"
        )
    cells = frozenset(range(1, res.m_epsilon + 1))
    locations = frozenset((j, pos + 1) for pos, j in enumerate(res.admitted))
    return Partition(cells, frozenset(), locations)


def recordable(y: History, eps: float) -> bool:
    for k, sel in enumerate(y.selected):
        v = state_before(y, k)
        if v is None or sel not in resolution_map(v, y.families[k], eps).admitted:
            return False
    return True


def outcome_partition_history(y: History, eps: float) -> PartitionHistory:
    return PartitionHistory(
        tuple((t, outcome_partition(y, k, eps)) for k, t in enumerate(y.schedule.times))
    )


@dataclass(frozen=True)
class HilbertPartition:
    partition: Partition
    directions: dict = field(repr=False)  # object -> unit vector
    resolution: ResolutionMap = field(repr=False)


def hilbert_partition(f: ProjectiveFamily, state, eps: float, tol: float = STRUCT_TOL) -> HilbertPartition:
    """Cells are the images of the admitted projectors.

    Objects are basis directions ``(j, r)`` of the admitted images; each is
    located in every admitted cell whose projector fixes it up to ``tol``, so
    orthogonality of the family is what keeps every direction in one cell.
    """
    report = validate_family(f)
    if not report.valid:
        raise ValueError("; ".join(report.defects()))
    res = resolution_map(state, f, eps)
    cell_of = {j: pos + 1 for pos, j in enumerate(res.admitted)}
    directions = {}
    for j in res.admitted:
        for r, vec in enumerate(f.projectors[j].image_basis()):
            directions[(j, r)] = vec
    locations = set()
    for obj, vec in directions.items():
        for j in res.admitted:
            if np.linalg.norm(f.projectors[j].entries @ vec - vec) <= tol:
                locations.add((obj, cell_of[j]))
    cells = frozenset(cell_of.values())
    return HilbertPartition(Partition(cells, frozenset(), frozenset(locations)), directions, res)


# N non-interacting systems

def local_residual(h: DenseOperator, groups: Sequence[Sequence[str]]) -> DenseOperator:
    """Part of ``h`` not expressible as a sum of terms local to ``groups``."""
    space = h.space
    if len(groups) < 2:
        return DenseOperator.zero(space)
    total = space.total_dim
    local = DenseOperator(space, -(len(groups) - 1) * h.trace() / total * np.eye(total))
    for labels in groups:
        rest = total // space.subspace(labels).total_dim
        local = local + embed(partial_trace(h, labels) * (1.0 / rest), space)
    return h - local


def _opnorm(m: np.ndarray) -> float:
    return float(np.max(np.abs(m), initial=0.0))


@dataclass(frozen=True)
class ProductUniverse:
    space: FactorSpace
    schedule: Schedule
    history: History
    framework: Framework | FrameworkRejection
    partition_history: PartitionHistory
    max_commutator: float


def product_universe_history(
    systems: Sequence[tuple[FactorSpace, ProjectiveFamily, DenseOperator]],
    times: Sequence[float],
    selections: Sequence[Sequence[int]],
    initial_states: Sequence[StateVector],
    interaction: DenseOperator | None = None,
    prepare_time: float | None = None,
    tol: float = STRUCT_TOL,
    cap: int = DEFAULT_CAP,
    transport: bool = True,
) -> ProductUniverse:
    """Histories of independent systems on the tensor product of their spaces.

    ``selections[k][mu]`` is the projector chosen for system ``mu`` at
    ``times[k]``.  Each system's family is given at the first time; with
    ``transport`` the family at later times is its Heisenberg transport
    along the (local) dynamics, which keeps it factor-local.  Pass
    ``transport=False`` to reuse the same family at every time.  An
    ``interaction`` term on the full space is accepted only if it is itself
    a sum of local terms.
    """
    if len(initial_states) != len(systems):
        raise ValueError("need one initial state per system")
    spaces = [s for s, _, _ in systems]
    space = spaces[0]
    for s in spaces[1:]:
        space = space * s
    groups = [s.labels for s in spaces]

    h_local = [embed(h, space) for _, _, h in systems]
    hamiltonian = h_local[0]
    for h in h_local[1:]:
        hamiltonian = hamiltonian + h
    if interaction is not None:
        hamiltonian = hamiltonian + interaction
    cross = _opnorm(local_residual(hamiltonian, groups).entries)
    if cross > tol:
        raise CrossTermError(f"Hamiltonian couples the systems (cross-term size {cross:.3e})")

    sched = Schedule(times, hamiltonian, prepare_time)
    extended = []
    for sub, fam, h in systems:
        ops = [embed(p.op, space).entries for p in fam.projectors]
        local_sched = Schedule(times, h, prepare_time)
        ops += [embed(DenseOperator(sub, step), space).entries for step in local_sched.steps]
        extended.append(ops)
    worst = 0.0
    for ops_a, ops_b in itertools.combinations(extended, 2):
        for a in ops_a:
            for b in ops_b:
                worst = max(worst, _opnorm(a @ b - b @ a))
    if worst > tol:
        raise CommutatorDefectError(f"extended operators fail to commute (defect {worst:.3e})")

    joint_projectors = []
    for combo in itertools.product(*[range(len(f)) for _, f, _ in systems]):
        m = np.eye(space.total_dim, dtype=complex)
        for (_, fam, _), j in zip(systems, combo):
            m = m @ embed(fam.projectors[j].op, space).entries
        joint_projectors.append(Projector(DenseOperator(space, m)))
    joint = ProjectiveFamily(space, tuple(joint_projectors), name="product")
    index_of = {
        combo: n
        for n, combo in enumerate(itertools.product(*[range(len(f)) for _, f, _ in systems]))
    }

    psi = initial_states[0]
    for st in initial_states[1:]:
        psi = tensor(psi, st)
    if transport:
        first = sched.times[0]
        families = tuple(
            ProjectiveFamily(
                space,
                tuple(heisenberg_transport(p, sched, first, t) for p in joint.projectors),
                joint.outcomes,
                joint.name,
            )
            for t in sched.times
        )
    else:
        families = (joint,) * len(sched.times)
    histories = enumerate_histories(sched, families, psi, cap)
    framework = build_framework(histories, tol)

    if len(selections) != len(sched.times):
        raise ValueError("need one selection tuple per time")
    chosen = History(sched, families, tuple(index_of[tuple(sel)] for sel in selections), psi)

    names = ["+".join(g) for g in groups]
    steps = []
    for t, sel in zip(sched.times, selections):
        cells = frozenset(
            (name, j) for name, (_, fam, _) in zip(names, systems) for j in range(len(fam))
        )
        locations = frozenset((name, (name, j)) for name, j in zip(names, sel))
        steps.append((t, Partition(cells, frozenset(), locations)))
    return ProductUniverse(space, sched, chosen, framework, PartitionHistory(tuple(steps)), worst)


# system / environment overlay

@dataclass(frozen=True)
class SystemEnvSplit:
    space: FactorSpace
    system_labels: tuple[str, ...]
    env_labels: tuple[str, ...] = ()

    def __post_init__(self):
        sys_labels = tuple(self.system_labels)
        env_labels = tuple(self.env_labels) or self.space.complement(sys_labels)
        known = set(self.space.labels)
        if not sys_labels or not env_labels:
            raise SpaceError("system and environment cells must both be non-empty")
        if set(sys_labels) & set(env_labels):
            raise SpaceError(
                f"labels {sorted(set(sys_labels) & set(env_labels))} assigned to both cells"
            )
        if set(sys_labels) | set(env_labels) != known:
            raise SpaceError("split must cover exactly the labels of the space")
        order = self.space.labels
        object.__setattr__(self, "system_labels", tuple(l for l in order if l in sys_labels))
        object.__setattr__(self, "env_labels", tuple(l for l in order if l in env_labels))

    @property
    def system_space(self) -> FactorSpace:
        return self.space.subspace(self.system_labels)

    @property
    def env_space(self) -> FactorSpace:
        return self.space.subspace(self.env_labels)


@dataclass(frozen=True)
class CellProjectorPair:
    pi_S: Projector
    pi_E: Projector
    construction: str  # "factor-local" or "subspace"

    def commutator_defect(self, state: StateVector) -> float:
        a, b = self.pi_S.entries, self.pi_E.entries
        return float(np.linalg.norm((a @ b - b @ a) @ state.amplitudes))


def _local_projector(sub: FactorSpace, given) -> Projector:
    m = np.asarray(given, dtype=complex)
    if m.ndim == 1:
        return Projector.onto(sub, m / np.linalg.norm(m))
    return Projector(DenseOperator(sub, m))


def _subspace_projector(space: FactorSpace, basis) -> Projector:
    vs = np.atleast_2d(np.asarray(basis, dtype=complex))
    if vs.shape[1] != space.total_dim:
        raise SpaceError("subspace basis vectors have the wrong length")
    if not np.allclose(vs.conj() @ vs.T, np.eye(len(vs)), atol=STRUCT_TOL):
        raise NonOrthonormalBasis("subspace basis is not orthonormal")
    return Projector(DenseOperator(space, vs.T @ vs.conj()))


def build_cell_projectors(
    split: SystemEnvSplit,
    *,
    system=None,
    environment=None,
    system_basis=None,
    environment_basis=None,
) -> CellProjectorPair:
    """Cell projectors for the two-cell overlay.

    Pass ``system``/``environment`` (a ket or projector on that side only)
    for the factor-local construction, or ``system_basis``/``environment_basis``
    (orthonormal rows on the full space) for the subspace construction.
    """
    if system is not None and environment is not None:
        pi_s = _local_projector(split.system_space, system)
        pi_e = _local_projector(split.env_space, environment)
        return CellProjectorPair(
            Projector(embed(pi_s.op, split.space)),
            Projector(embed(pi_e.op, split.space)),
            "factor-local",
        )
    if system_basis is not None and environment_basis is not None:
        return CellProjectorPair(
            _subspace_projector(split.space, system_basis),
            _subspace_projector(split.space, environment_basis),
            "subspace",
        )
    raise ValueError("give either system/environment or system_basis/environment_basis")


@dataclass(frozen=True)
class Separability:
    separable: bool
    coefficients: np.ndarray = field(repr=False)
    entropy: float


def separability_check(state: StateVector, split: SystemEnvSplit, tol: float = DEFAULT_TOL) -> Separability:
    """Schmidt rank one across the split, i.e. second coefficient below ``tol``."""
    coeffs = schmidt(state, split.system_labels)
    second = float(coeffs[1]) if len(coeffs) > 1 else 0.0
    return Separability(second < tol, coeffs, entanglement_entropy(state, split.system_labels))


# generalized measurements

@dataclass(frozen=True)
class NaimarkDilation:
    system_space: FactorSpace
    space: FactorSpace
    isometry: np.ndarray = field(repr=False)  # (dim_S * m) x dim_S
    family: ProjectiveFamily

    def dilate(self, state: StateVector) -> StateVector:
        return StateVector(self.space, self.isometry @ state.amplitudes)

    def probabilities(self, state: StateVector) -> np.ndarray:
        v = self.isometry @ state.amplitudes
        return np.array([np.vdot(v, p.entries @ v).real for p in self.family.projectors])


def _psd_sqrt(m: np.ndarray, tol: float) -> np.ndarray:
    if _opnorm(m - m.conj().T) > tol:
        raise POVMError("POVM element is not Hermitian")
    vals, vecs = np.linalg.eigh((m + m.conj().T) / 2)
    if vals.min() < -tol:
        raise POVMError(f"POVM element has negative eigenvalue {vals.min():.3e}")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.conj().T


def naimark_dilation(povm: Sequence[DenseOperator], ancilla_label: str = "ancilla", tol: float = STRUCT_TOL) -> NaimarkDilation:
    """Projective realization of a POVM on system (x) ancilla.

    ``V|psi> = sum_i (sqrt(E_i)|psi>) (x) |i>`` and ``Pi_i = I_S (x) |i><i|``.
    """
    if not povm:
        raise POVMError("empty POVM")
    sys_space = povm[0].space
    if any(e.space != sys_space for e in povm):
        raise SpaceError("POVM elements live on different spaces")
    d, m = sys_space.total_dim, len(povm)
    total = sum((e.entries for e in povm), np.zeros((d, d), dtype=complex))
    if _opnorm(total - np.eye(d)) > tol:
        raise POVMError(f"POVM elements sum to identity only within {_opnorm(total - np.eye(d)):.3e}")
    if m < 2:
        raise POVMError("a POVM with one element needs no dilation (ancilla dim must be >= 2)")
    label = ancilla_label
    while label in sys_space.labels:
        label += "'"
    anc = FactorSpace(((label, m),))
    space = sys_space * anc
    v = np.zeros((d * m, d), dtype=complex)
    for i, e in enumerate(povm):
        ket = np.zeros((m, 1))
        ket[i] = 1.0
        v += np.kron(_psd_sqrt(e.entries, tol), ket)
    if _opnorm(v.conj().T @ v - np.eye(d)) > tol:
        raise POVMError("dilation map is not an isometry")
    projectors = []
    for i in range(m):
        ket = np.zeros(m)
        ket[i] = 1.0
        projectors.append(Projector(tensor(DenseOperator.identity(sys_space), DenseOperator(anc, np.outer(ket, ket)))))
    family = ProjectiveFamily(space, tuple(projectors), name=f"{label}-readout")
    v.setflags(write=False)
    return NaimarkDilation(sys_space, space, v, family)


# the no-go experiment

@dataclass(frozen=True)
class CoupledHamiltonian:
    """``local + g * interaction``."""

    local: DenseOperator
    interaction: DenseOperator

    def __call__(self, g: float) -> DenseOperator:
        return self.local + self.interaction * g


@dataclass(frozen=True)
class OverlayReport:
    coupling: float
    max_offdiag: float
    entropy: float
    consistent: bool
    degenerate: bool = False

    @property
    def partitionable_verdict(self) -> bool:
        return self.consistent


CSV_HEADER = ("g", "max_offdiag", "entropy", "consistent", "degenerate_flag")


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def fmt_bool(b: bool) -> str:
    return "true" if b else "false"


def write_overlay_csv(rows: Iterable[OverlayReport], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([
            fmt_float(r.coupling), fmt_float(r.max_offdiag), fmt_float(r.entropy),
            fmt_bool(r.consistent), fmt_bool(r.degenerate),
        ])


def overlay_csv(rows: Iterable[OverlayReport]) -> str:
    buf = io.StringIO()
    write_overlay_csv(rows, buf)
    return buf.getvalue()


def read_overlay_csv(text: str) -> list[OverlayReport]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [
        OverlayReport(float(g), float(d), float(s), c == "true", f == "true")
        for g, d, s, c, f in reader
    ]


def _families_for(split: SystemEnvSplit, family, n_times: int) -> tuple[ProjectiveFamily, ...]:
    fams = list(family) if isinstance(family, (list, tuple)) else [family] * n_times
    if len(fams) != n_times:
        raise ValueError("need one family per measurement time")
    out = []
    for f in fams:
        if f.space == split.space:
            out.append(f)
        elif f.space == split.system_space:
            out.append(ProjectiveFamily(
                split.space,
                tuple(Projector(embed(p.op, split.space)) for p in f.projectors),
                f.outcomes, f.name,
            ))
        else:
            raise SpaceError(f"family {f.name!r} lives on neither the system nor the full space")
    return tuple(out)


def run_point(
    g: float,
    split: SystemEnvSplit,
    families: tuple[ProjectiveFamily, ...],
    hamiltonian: Callable[[float], DenseOperator],
    times: Sequence[float],
    initial_state: StateVector,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    prepare_time: float | None = None,
    cap: int = DEFAULT_CAP,
    entropy_tol: float = ENTROPY_TOL,
) -> OverlayReport:
    sched = Schedule(times, hamiltonian(g), prepare_time)
    histories = [
        y for y in enumerate_histories(sched, families, initial_state, cap) if recordable(y, eps)
    ]
    d = decoherence_matrix(histories)
    max_off = offdiagonal_max(d)
    consistent = max_off <= consistency_threshold(d, tol)
    psi = initial_state.amplitudes
    entropy = 0.0
    for t in sched.times:
        evolved = StateVector.normalized(split.space, sched.unitary(t, sched.prepare_time) @ psi)
        entropy = max(entropy, entanglement_entropy(evolved, split.system_labels))
    degenerate = g != 0 and entropy <= entropy_tol
    return OverlayReport(float(g), max_off, entropy, bool(consistent), bool(degenerate))


def no_go_experiment(
    split: SystemEnvSplit,
    family,
    hamiltonian: Callable[[float], DenseOperator],
    times: Sequence[float],
    initial_state: StateVector,
    g_values: Iterable[float],
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    prepare_time: float | None = None,
    cap: int = DEFAULT_CAP,
    jobs: int = 1,
) -> list[OverlayReport]:
    """One :class:`OverlayReport` per coupling value, in ascending ``g``.

    ``family`` is a system-side projective family (on the system factors or
    already on the full space), or a list with one family per time.  The
    reported entropy is the largest entanglement entropy across the split of
    the unmeasured evolved state over the measurement times.  A nonzero
    coupling that generates no entanglement is flagged degenerate.
    """
    if initial_state.space != split.space:
        raise SpaceError("initial state does not live on the split space")
    if not separability_check(initial_state, split).separable:
        raise NonProductState("initial state is entangled across the split")
    families = _families_for(split, family, len(times))
    g_sorted = sorted(float(g) for g in g_values)

    def point(g):
        return run_point(g, split, families, hamiltonian, times, initial_state,
                         eps, tol, prepare_time, cap)

    if jobs > 1 and len(g_sorted) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(point, g_sorted))
    return [point(g) for g in g_sorted]


def no_go_ensemble(split, family, hamiltonian, times, initial_states, g_values, **kw) -> list[list[OverlayReport]]:
    """Per-element reports for an ensemble of product initial states."""
    return [no_go_experiment(split, family, hamiltonian, times, s, g_values, **kw) for s in initial_states]


def canonical_scenario() -> dict:
    """Two qubits S, E from |00>, ``H = g X(x)X``, z-measurements of S at t = 1, 2.

    Keyword arguments for :func:`no_go_experiment` with the coupling sweep
    ``g = 0, pi/16, ..., pi/4``.
    """
    space = FactorSpace.qubits("S", "E")
    split = SystemEnvSplit(space, ("S",))
    z = ProjectiveFamily.local(space, "S", np.eye(2), name="zS", outcomes=(1.0, -1.0))
    xx = np.kron([[0, 1], [1, 0]], [[0, 1], [1, 0]])
    return dict(
        split=split,
        family=z,
        hamiltonian=CoupledHamiltonian(DenseOperator.zero(space), DenseOperator(space, xx)),
        times=(1.0, 2.0),
        prepare_time=0.0,
        initial_state=product_state(space, "00"),
        g_values=tuple(k * math.pi / 16 for k in range(5)),
    )
