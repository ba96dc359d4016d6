"""Dense complex linear algebra on small labeled tensor-product spaces.

Index convention: the leftmost factor of a :class:`FactorSpace` is the
slowest-varying index of a flattened amplitude vector, matching
``numpy.kron``.  Units are dimensionless (hbar = 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterable, Sequence, Union

import numpy as np

STRUCT_TOL = 1e-10
SPECTRAL_TOL = 1e-9


class SpaceError(ValueError):
    """Raised when operands live on incompatible or malformed spaces."""


class NotHermitianError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FactorSpace:
    """Ordered list of ``(label, dim)`` pairs describing a tensor-product structure."""

    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        factors = tuple((str(label), int(dim)) for label, dim in self.factors)
        if not factors:
            raise SpaceError("a space needs at least one factor")
        labels = [label for label, _ in factors]
        if len(set(labels)) != len(labels):
            raise SpaceError(f"duplicate factor labels in {labels}")
        for label, dim in factors:
            if dim < 2:
                raise SpaceError(f"factor {label!r} has dim {dim}; need >= 2")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def of(cls, **dims: int) -> "FactorSpace":
        """``FactorSpace.of(S=2, E=2)`` keeps keyword order."""
        return cls(tuple(dims.items()))

    @classmethod
    def qubits(cls, *labels: str) -> "FactorSpace":
        return cls(tuple((label, 2) for label in labels))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.factors)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def dim_of(self, label: str) -> int:
        for lab, dim in self.factors:
            if lab == label:
                return dim
        raise SpaceError(f"unknown factor label {label!r}")

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SpaceError(f"unknown factor label {label!r}") from None

    def subspace(self, labels: Iterable[str]) -> "FactorSpace":
        """Sub-structure on ``labels``, kept in this space's factor order."""
        wanted = set(labels)
        unknown = wanted - set(self.labels)
        if unknown:
            raise SpaceError(f"unknown factor labels {sorted(unknown)}")
        return FactorSpace(tuple(f for f in self.factors if f[0] in wanted))

    def complement(self, labels: Iterable[str]) -> tuple[str, ...]:
        wanted = set(labels)
        return tuple(label for label in self.labels if label not in wanted)

    def __mul__(self, other: "FactorSpace") -> "FactorSpace":
        return FactorSpace(self.factors + other.factors)


@dataclass(frozen=True, eq=False)
class StateVector:
    space: FactorSpace
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = _frozen(self.amplitudes).reshape(-1)
        if amps.shape != (self.space.total_dim,):
            raise SpaceError(
                f"{amps.shape[0]} amplitudes for a space of dim {self.space.total_dim}"
            )
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > STRUCT_TOL:
            raise ValueError(f"state is not normalized (|psi|^2 = {norm2:.3e})")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def normalized(cls, space: FactorSpace, amplitudes) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        return cls(space, amps / np.linalg.norm(amps))

    @classmethod
    def basis(cls, space: FactorSpace, *indices: int) -> "StateVector":
        """Computational basis state; one index per factor."""
        if len(indices) != len(space.factors):
            raise SpaceError("need one basis index per factor")
        flat = int(np.ravel_multi_index(indices, space.dims))
        amps = np.zeros(space.total_dim, dtype=complex)
        amps[flat] = 1.0
        return cls(space, amps)

    def projector(self) -> "DenseOperator":
        return DenseOperator(self.space, np.outer(self.amplitudes, self.amplitudes.conj()))

    def inner(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True, eq=False)
class DenseOperator:
    space: FactorSpace
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _frozen(self.entries)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise SpaceError(f"operator of shape {m.shape} on a space of dim {n}")
        object.__setattr__(self, "entries", m)

    @classmethod
    def identity(cls, space: FactorSpace) -> "DenseOperator":
        return cls(space, np.eye(space.total_dim))

    @classmethod
    def zero(cls, space: FactorSpace) -> "DenseOperator":
        return cls(space, np.zeros((space.total_dim,) * 2))

    def _check(self, other: "DenseOperator"):
        if other.space != self.space:
            raise SpaceError(f"space mismatch: {self.space.factors} vs {other.space.factors}")

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            self._check(DenseOperator.zero(other.space))
            return self.entries @ other.amplitudes
        self._check(other)
        return DenseOperator(self.space, self.entries @ other.entries)

    def __add__(self, other: "DenseOperator") -> "DenseOperator":
        self._check(other)
        return DenseOperator(self.space, self.entries + other.entries)

    def __sub__(self, other: "DenseOperator") -> "DenseOperator":
        self._check(other)
        return DenseOperator(self.space, self.entries - other.entries)

    def __mul__(self, scalar) -> "DenseOperator":
        return DenseOperator(self.space, self.entries * complex(scalar))

    __rmul__ = __mul__

    def dag(self) -> "DenseOperator":
        return DenseOperator(self.space, self.entries.conj().T)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def is_hermitian(self, tol: float = STRUCT_TOL) -> bool:
        return self.hermiticity_defect() <= tol

    def allclose(self, other: "DenseOperator", tol: float = STRUCT_TOL) -> bool:
        return self.space == other.space and np.allclose(
            self.entries, other.entries, rtol=0, atol=tol
        )


@dataclass(frozen=True, eq=False)
class Projector:
    """Hermitian idempotent operator; ``rank`` is the rounded trace."""

    op: DenseOperator
    rank: int = -1

    def __post_init__(self):
        m = self.op.entries
        if np.max(np.abs(m @ m - m), initial=0.0) > STRUCT_TOL:
            raise ValueError("projector is not idempotent")
        if self.op.hermiticity_defect() > STRUCT_TOL:
            raise ValueError("projector is not Hermitian")
        rank = int(round(self.op.trace().real))
        if self.rank not in (-1, rank):
            raise ValueError(f"declared rank {self.rank} but trace gives {rank}")
        object.__setattr__(self, "rank", rank)

    @classmethod
    def onto(cls, space: FactorSpace, vectors) -> "Projector":
        """Projector onto the span of orthonormal ``vectors``."""
        vs = np.atleast_2d(np.asarray(vectors, dtype=complex))
        gram = vs.conj() @ vs.T
        if not np.allclose(gram, np.eye(len(vs)), atol=STRUCT_TOL):
            raise ValueError("vectors are not orthonormal")
        return cls(DenseOperator(space, vs.T @ vs.conj()))

    @property
    def space(self) -> FactorSpace:
        return self.op.space

    @property
    def entries(self) -> np.ndarray:
        return self.op.entries

    def image_basis(self) -> np.ndarray:
        """Orthonormal basis of the image, one vector per row."""
        vals, vecs = np.linalg.eigh(self.entries)
        return vecs[:, vals > 0.5].T


Tensorable = Union[DenseOperator, StateVector, Projector]


def tensor(a: Tensorable, b: Tensorable, *rest: Tensorable):
    """Kronecker product with concatenated factor lists (left factor slowest)."""
    if rest:
        return reduce(tensor, rest, tensor(a, b))
    if isinstance(a, Projector):
        a = a.op
    if isinstance(b, Projector):
        b = b.op
    space = a.space * b.space
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(space, np.kron(a.amplitudes, b.amplitudes))
    if isinstance(a, DenseOperator) and isinstance(b, DenseOperator):
        return DenseOperator(space, np.kron(a.entries, b.entries))
    raise TypeError("tensor operands must both be states or both be operators")


def _permutation(space: FactorSpace, order: Sequence[str]) -> list[int]:
    return [space.index_of(label) for label in order]


def embed(local: DenseOperator, space: FactorSpace) -> DenseOperator:
    """Extend an operator on a sub-structure of ``space`` by identities."""
    sub_labels = local.space.labels
    for label in sub_labels:
        if space.dim_of(label) != local.space.dim_of(label):
            raise SpaceError(f"dimension mismatch on factor {label!r}")
    rest = space.complement(sub_labels)
    if not rest:
        return permute(local, space.labels)
    rest_space = space.subspace(rest)
    big = np.kron(local.entries, np.eye(rest_space.total_dim))
    return permute(DenseOperator(local.space * rest_space, big), space.labels)


def permute(op: DenseOperator, order: Sequence[str]) -> DenseOperator:
    """Reorder the factors of ``op`` to ``order``."""
    space = op.space
    if sorted(order) != sorted(space.labels):
        raise SpaceError(f"{list(order)} is not a reordering of {list(space.labels)}")
    perm = _permutation(space, order)
    n = len(perm)
    t = op.entries.reshape(space.dims * 2)
    t = t.transpose(perm + [p + n for p in perm])
    new_space = FactorSpace(tuple(space.factors[p] for p in perm))
    return DenseOperator(new_space, t.reshape(new_space.total_dim, new_space.total_dim))


def partial_trace(op: DenseOperator, keep: Iterable[str]) -> DenseOperator:
    """Trace out every factor not in ``keep``; kept factors retain their order."""
    space = op.space
    keep = set(keep)
    unknown = keep - set(space.labels)
    if unknown:
        raise SpaceError(f"unknown factor labels {sorted(unknown)}")
    if not keep:
        raise SpaceError("keep must name at least one factor")
    if keep == set(space.labels):
        raise SpaceError("keep names every factor; nothing to trace out")
    kept = [i for i, label in enumerate(space.labels) if label in keep]
    traced = [i for i in range(len(space.factors)) if i not in kept]
    n = len(space.factors)
    t = op.entries.reshape(space.dims * 2)
    t = t.transpose(kept + traced + [n + i for i in kept] + [n + i for i in traced])
    dk = int(np.prod([space.dims[i] for i in kept]))
    dt = int(np.prod([space.dims[i] for i in traced]))
    red = np.einsum("ajbj->ab", t.reshape(dk, dt, dk, dt))
    return DenseOperator(space.subspace(space.labels[i] for i in kept), red)


def hermitian_exponential(h: DenseOperator, t: float) -> DenseOperator:
    """``exp(-i h t)`` by eigendecomposition of the Hermitian generator ``h``."""
    scale = max(1.0, float(np.max(np.abs(h.entries), initial=0.0)))
    if h.hermiticity_defect() > STRUCT_TOL * scale:
        raise NotHermitianError("generator is not Hermitian")
    vals, vecs = np.linalg.eigh(h.entries)
    return DenseOperator(h.space, (vecs * np.exp(-1j * vals * t)) @ vecs.conj().T)


def _bipartite_matrix(state: StateVector, side: Iterable[str]) -> np.ndarray:
    space = state.space
    side = list(dict.fromkeys(side))
    unknown = set(side) - set(space.labels)
    if unknown:
        raise SpaceError(f"unknown factor labels {sorted(unknown)}")
    a = [label for label in space.labels if label in side]
    b = space.complement(a)
    if not a or not b:
        raise SpaceError("split must put at least one factor on each side")
    perm = _permutation(space, a) + _permutation(space, b)
    t = state.amplitudes.reshape(space.dims).transpose(perm)
    da = int(np.prod([space.dim_of(label) for label in a]))
    return t.reshape(da, -1)


def schmidt(state: StateVector, side: Iterable[str], cutoff: float = 0.0) -> np.ndarray:
    """Descending Schmidt coefficients across ``side`` | complement.

    Coefficients at or below ``cutoff`` are dropped; the default keeps every
    singular value, including numerical zeros.
    """
    s = np.linalg.svd(_bipartite_matrix(state, side), compute_uv=False)
    return s[s > cutoff] if cutoff > 0 else s


def entanglement_entropy(state: StateVector, side: Iterable[str]) -> float:
    """Von Neumann entropy (natural log) of the reduced state on ``side``."""
    lam2 = schmidt(state, side) ** 2
    lam2 = lam2[lam2 > 1e-300]
    return max(0.0, float(-np.sum(lam2 * np.log(lam2))))


def commutator_defect(a: DenseOperator, b: DenseOperator, state: StateVector) -> float:
    """Euclidean norm of ``(ab - ba)|state>``."""
    if a.space != b.space or a.space != state.space:
        raise SpaceError("commutator_defect operands live on different spaces")
    comm = a.entries @ b.entries - b.entries @ a.entries
    return float(np.linalg.norm(comm @ state.amplitudes))


# single-qubit named operators
PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# single-qubit named kets
KETS = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
    "i": np.array([1, 1j], dtype=complex) / np.sqrt(2),
    "j": np.array([1, -1j], dtype=complex) / np.sqrt(2),
}


def product_state(space: FactorSpace, word: str) -> StateVector:
    """Product state from one symbol per factor.

    A digit ``k`` is basis state ``|k>`` on a factor of any dimension; the
    qubit symbols ``+ - i j`` (``j`` is the -i state) need dimension 2.
    """
    if len(word) != len(space.factors):
        raise SpaceError(f"word {word!r} does not match space {space.factors}")
    kets = []
    for ch, d in zip(word, space.dims):
        if ch.isdigit() and int(ch) < d:
            ket = np.zeros(d, dtype=complex)
            ket[int(ch)] = 1.0
        elif ch in KETS and d == 2:
            ket = KETS[ch]
        else:
            raise ValueError(f"ket symbol {ch!r} is not defined on a factor of dim {d}")
        kets.append(ket)
    return StateVector(space, reduce(np.kron, kets))


def bell_state(space: FactorSpace) -> StateVector:
    """``(|00> + |11>)/sqrt(2)`` on a two-qubit space."""
    if space.dims != (2, 2):
        raise SpaceError("bell state needs exactly two qubits")
    return StateVector(space, np.array([1, 0, 0, 1]) / np.sqrt(2))


def pauli_string(space: FactorSpace, ops: dict[str, str]) -> DenseOperator:
    """Tensor product of named Paulis; factors absent from ``ops`` get I."""
    for label in ops:
        space.index_of(label)
    mats = []
    for label, dim in space.factors:
        name = ops.get(label, "I")
        if name == "I":
            mats.append(np.eye(dim))
        elif dim == 2 and name in PAULI:
            mats.append(PAULI[name])
        else:
            raise ValueError(f"operator {name!r} undefined on factor {label!r} (dim {dim})")
    return DenseOperator(space, reduce(np.kron, mats))


# random objects for property tests and sweeps
def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_hermitian(space: FactorSpace, rng: np.random.Generator) -> DenseOperator:
    n = space.total_dim
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return DenseOperator(space, (a + a.conj().T) / 2)


def random_state(space: FactorSpace, rng: np.random.Generator) -> StateVector:
    n = space.total_dim
    return StateVector.normalized(space, rng.standard_normal(n) + 1j * rng.standard_normal(n))


def random_density(space: FactorSpace, rng: np.random.Generator, rank: int | None = None) -> DenseOperator:
    n = space.total_dim
    rank = rank or n
    g = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    rho = g @ g.conj().T
    return DenseOperator(space, rho / np.trace(rho))
