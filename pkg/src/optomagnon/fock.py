"""Exact linear algebra on truncated multi-mode Fock spaces.

The registry fixes an ordered list of labeled bosonic modes, each with a
photon-number cutoff.  Basis states are occupation tuples mapped to flat
indices by a mixed-radix rule (first mode is the most significant digit,
matching the Kronecker-product convention used throughout).  Pure states
are dense complex vectors, mixed states dense complex matrices, and mode
operators sparse matrices on the same basis.

All containers are immutable values: operations return new objects and
never mutate their inputs, so everything here is safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_MAX_DIMENSION = 2**22
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
NORM_TOL = 1e-12

# Canonical mode labels of the entanglement protocol.  The engine accepts
# any labels; these constants keep the protocol modules consistent.
PULSE_A, PULSE_B = "pulse_A", "pulse_B"
STOKES_A, STOKES_B = "stokes_A", "stokes_B"
MAGNON_A, MAGNON_B = "magnon_A", "magnon_B"
READ_A, READ_B = "read_A", "read_B"
ANTISTOKES_A, ANTISTOKES_B = "antistokes_A", "antistokes_B"


class FockSpaceError(Exception):
    """Base class for engine errors."""


class DimensionOverflowError(FockSpaceError):
    """Total dimension exceeds the configured maximum (cutoffs too large)."""


class UnknownModeError(FockSpaceError):
    """A mode label is not present in the registry."""


class RegistryMismatchError(FockSpaceError):
    """Two objects live on different registries or dimensions."""


class NormalizationError(FockSpaceError):
    """A state or density violates its norm/trace invariant beyond tolerance."""


@dataclass(frozen=True)
class ModeRegistry:
    """Ordered list of (label, cutoff) pairs defining the truncated space.

    A cutoff of ``c`` keeps occupations 0..c inclusive, so each mode
    contributes a factor ``c + 1`` to the total dimension.
    """

    modes: tuple[tuple[str, int], ...]

    def __post_init__(self):
        modes = tuple((str(label), int(cutoff)) for label, cutoff in self.modes)
        object.__setattr__(self, "modes", modes)
        if not modes:
            raise FockSpaceError("registry needs at least one mode")
        labels = [label for label, _ in modes]
        if len(set(labels)) != len(labels):
            raise FockSpaceError(f"duplicate mode labels in {labels}")
        for label, cutoff in modes:
            if not label:
                raise FockSpaceError("mode labels must be nonempty strings")
            if cutoff < 1:
                raise FockSpaceError(f"cutoff for mode {label!r} must be >= 1, got {cutoff}")

    @classmethod
    def of(cls, *modes: tuple[str, int]) -> "ModeRegistry":
        return cls(tuple(modes))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.modes)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(cutoff + 1 for _, cutoff in self.modes)

    @property
    def dimension(self) -> int:
        return math.prod(self.dims)

    @property
    def strides(self) -> tuple[int, ...]:
        out, acc = [], 1
        for d in reversed(self.dims):
            out.append(acc)
            acc *= d
        return tuple(reversed(out))

    def axis_of(self, label: str) -> int:
        for k, (name, _) in enumerate(self.modes):
            if name == label:
                return k
        raise UnknownModeError(f"mode {label!r} not in registry {self.labels}")

    def cutoff_of(self, label: str) -> int:
        return self.modes[self.axis_of(label)][1]

    def extended(self, *new_modes: tuple[str, int]) -> "ModeRegistry":
        """Registry with additional modes appended (in the given order)."""
        return ModeRegistry(self.modes + tuple(new_modes))

    def restricted(self, keep: Iterable[str]) -> "ModeRegistry":
        """Registry containing only ``keep``, preserving the original order."""
        keep = set(keep)
        for label in keep:
            self.axis_of(label)
        return ModeRegistry(tuple(m for m in self.modes if m[0] in keep))


@dataclass(frozen=True)
class BasisIndexer:
    """Bijection between occupation tuples and flat basis indices."""

    dims: tuple[int, ...]

    @cached_property
    def dimension(self) -> int:
        return math.prod(self.dims)

    def index_of(self, occupation: Sequence[int]) -> int:
        if len(occupation) != len(self.dims):
            raise FockSpaceError(
                f"occupation has {len(occupation)} entries, registry has {len(self.dims)} modes"
            )
        for n, d in zip(occupation, self.dims):
            if not 0 <= n < d:
                raise FockSpaceError(f"occupation {tuple(occupation)} outside cutoffs")
        return int(np.ravel_multi_index(tuple(occupation), self.dims))

    def tuple_of(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.dimension:
            raise FockSpaceError(f"index {index} outside dimension {self.dimension}")
        return tuple(int(n) for n in np.unravel_index(index, self.dims))


def build_basis(registry: ModeRegistry, max_dimension: int = DEFAULT_MAX_DIMENSION) -> BasisIndexer:
    """Indexer for the registry's basis, guarding against runaway dimensions."""
    if registry.dimension > max_dimension:
        raise DimensionOverflowError(
            f"dimension {registry.dimension} exceeds maximum {max_dimension}; reduce cutoffs"
        )
    return BasisIndexer(registry.dims)


@dataclass(frozen=True)
class MultiModeState:
    """Pure state: complex amplitude vector over the registry's basis."""

    registry: ModeRegistry
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.registry.dimension,):
            raise RegistryMismatchError(
                f"amplitude vector of length {amps.shape} does not match dimension "
                f"{self.registry.dimension}"
            )
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_occupation(cls, registry: ModeRegistry, occupation: Sequence[int]) -> "MultiModeState":
        amps = np.zeros(registry.dimension, dtype=complex)
        amps[build_basis(registry).index_of(occupation)] = 1.0
        return cls(registry, amps)

    @classmethod
    def vacuum(cls, registry: ModeRegistry) -> "MultiModeState":
        return cls.from_occupation(registry, (0,) * len(registry.modes))

    @property
    def norm(self) -> float:
        n = float(np.linalg.norm(self.amplitudes))
        if not np.isfinite(n):
            raise NormalizationError("state norm is not finite")
        return n

    def normalized(self) -> "MultiModeState":
        n = self.norm
        if n == 0.0:
            raise NormalizationError("cannot normalize the zero vector")
        return MultiModeState(self.registry, self.amplitudes / n)

    def check(self, norm_tol: float = NORM_TOL) -> "MultiModeState":
        """Assert unit norm within tolerance, returning self on success."""
        if abs(self.norm - 1.0) > norm_tol:
            raise NormalizationError(f"norm {self.norm!r} differs from 1 beyond {norm_tol}")
        return self

    def overlap(self, other: "MultiModeState") -> complex:
        _require_same_registry(self.registry, other.registry)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def occupation_probabilities(self) -> np.ndarray:
        """Probabilities over flat basis indices."""
        return np.abs(self.amplitudes) ** 2

    def to_density(self) -> "DensityOperator":
        return DensityOperator(self.registry, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityOperator:
    """Mixed state: Hermitian trace-one matrix over the registry's basis.

    The constructor only checks shape; `check` verifies the Hermiticity,
    trace and positivity invariants where tests or stage boundaries need
    them, to keep inner-loop construction cheap.
    """

    registry: ModeRegistry
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        d = self.registry.dimension
        if mat.shape != (d, d):
            raise RegistryMismatchError(f"matrix shape {mat.shape} does not match dimension {d}")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_pure(cls, state: MultiModeState) -> "DensityOperator":
        return state.to_density()

    @classmethod
    def product(cls, registry: ModeRegistry, single_mode_matrices: Sequence[np.ndarray]) -> "DensityOperator":
        """Tensor product of one single-mode matrix per registry mode, in order."""
        if len(single_mode_matrices) != len(registry.modes):
            raise RegistryMismatchError("need exactly one factor per mode")
        mat = np.ones((1, 1), dtype=complex)
        for (label, cutoff), factor in zip(registry.modes, single_mode_matrices):
            factor = np.asarray(factor, dtype=complex)
            if factor.shape != (cutoff + 1, cutoff + 1):
                raise RegistryMismatchError(f"factor for mode {label!r} has shape {factor.shape}")
            mat = np.kron(mat, factor)
        return cls(registry, mat)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> "DensityOperator":
        t = np.trace(self.matrix)
        if abs(t) == 0.0:
            raise NormalizationError("cannot normalize a zero-trace matrix")
        return DensityOperator(self.registry, self.matrix / t)

    def hermiticity_defect(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def check(self, herm_tol: float = HERMITICITY_TOL, trace_tol: float = TRACE_TOL,
              positivity_tol: float = HERMITICITY_TOL) -> "DensityOperator":
        """Assert the density-operator invariants, returning self on success."""
        if self.hermiticity_defect() > herm_tol:
            raise NormalizationError(f"Hermiticity defect {self.hermiticity_defect():.3e}")
        if abs(self.trace - 1.0) > trace_tol:
            raise NormalizationError(f"trace {self.trace!r} differs from 1")
        if self.min_eigenvalue() < -positivity_tol:
            raise NormalizationError(f"negative eigenvalue {self.min_eigenvalue():.3e}")
        return self

    def occupation_probabilities(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()


@dataclass(frozen=True)
class ModeOperator:
    """Operator on the registry's space, held as a sparse matrix."""

    registry: ModeRegistry
    matrix: sp.csr_matrix

    def __post_init__(self):
        mat = sp.csr_matrix(self.matrix, dtype=complex)
        d = self.registry.dimension
        if mat.shape != (d, d):
            raise RegistryMismatchError(f"operator shape {mat.shape} does not match dimension {d}")
        object.__setattr__(self, "matrix", mat)

    def dag(self) -> "ModeOperator":
        return ModeOperator(self.registry, self.matrix.conj().T.tocsr())

    def __matmul__(self, other: "ModeOperator") -> "ModeOperator":
        _require_same_registry(self.registry, other.registry)
        return ModeOperator(self.registry, (self.matrix @ other.matrix).tocsr())

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _require_same_registry(a: ModeRegistry, b: ModeRegistry) -> None:
    if a.modes != b.modes:
        raise RegistryMismatchError(f"registries differ: {a.labels} vs {b.labels}")


# ---------------------------------------------------------------------------
# Embedding single- and two-mode blocks into the full space.
#
# A block acting on modes (x, y) is lifted by enumerating every basis index,
# splitting off the (n_x, n_y) digits, and re-assembling target indices with
# the block's output digits.  This keeps lifted operators sparse: at most
# block-dimension entries per column.


def _digits(registry: ModeRegistry, labels: Sequence[str]) -> tuple[np.ndarray, ...]:
    cols = np.arange(registry.dimension)
    out = []
    for label in labels:
        axis = registry.axis_of(label)
        stride = registry.strides[axis]
        out.append((cols // stride) % registry.dims[axis])
    return tuple(out)


def embed_single_mode(registry: ModeRegistry, label: str, block: np.ndarray) -> ModeOperator:
    """Lift a (cutoff+1)-dimensional single-mode matrix to the full space."""
    axis = registry.axis_of(label)
    d = registry.dims[axis]
    block = np.asarray(block, dtype=complex)
    if block.shape != (d, d):
        raise RegistryMismatchError(f"block shape {block.shape} does not match mode {label!r}")
    stride = registry.strides[axis]
    cols = np.arange(registry.dimension)
    (n,) = _digits(registry, [label])
    rest = cols - n * stride
    rows_all, cols_all, vals_all = [], [], []
    for n_out in range(d):
        vals = block[n_out, n]
        mask = vals != 0
        if not mask.any():
            continue
        rows_all.append(rest[mask] + n_out * stride)
        cols_all.append(cols[mask])
        vals_all.append(vals[mask])
    mat = sp.coo_matrix(
        (np.concatenate(vals_all) if vals_all else np.array([], dtype=complex),
         (np.concatenate(rows_all) if rows_all else np.array([], dtype=int),
          np.concatenate(cols_all) if cols_all else np.array([], dtype=int))),
        shape=(registry.dimension, registry.dimension),
    )
    return ModeOperator(registry, mat.tocsr())


def embed_mode_pair(registry: ModeRegistry, label_a: str, label_b: str,
                    block: np.ndarray) -> ModeOperator:
    """Lift a two-mode matrix (row-major in (n_a, n_b)) to the full space."""
    if label_a == label_b:
        raise FockSpaceError("two-mode block needs two distinct modes")
    axis_a, axis_b = registry.axis_of(label_a), registry.axis_of(label_b)
    da, db = registry.dims[axis_a], registry.dims[axis_b]
    block = np.asarray(block, dtype=complex)
    if block.shape != (da * db, da * db):
        raise RegistryMismatchError(
            f"block shape {block.shape} does not match modes ({label_a!r}, {label_b!r})"
        )
    sa, sb = registry.strides[axis_a], registry.strides[axis_b]
    cols = np.arange(registry.dimension)
    na, nb = _digits(registry, [label_a, label_b])
    rest = cols - na * sa - nb * sb
    bcol = na * db + nb
    rows_all, cols_all, vals_all = [], [], []
    for brow in range(da * db):
        vals = block[brow, bcol]
        mask = vals != 0
        if not mask.any():
            continue
        na_out, nb_out = divmod(brow, db)
        rows_all.append(rest[mask] + na_out * sa + nb_out * sb)
        cols_all.append(cols[mask])
        vals_all.append(vals[mask])
    mat = sp.coo_matrix(
        (np.concatenate(vals_all) if vals_all else np.array([], dtype=complex),
         (np.concatenate(rows_all) if rows_all else np.array([], dtype=int),
          np.concatenate(cols_all) if cols_all else np.array([], dtype=int))),
        shape=(registry.dimension, registry.dimension),
    )
    return ModeOperator(registry, mat.tocsr())


def single_mode_annihilation(cutoff: int) -> np.ndarray:
    """Dense (cutoff+1)-dimensional ladder matrix with a|n> = sqrt(n)|n-1>."""
    d = cutoff + 1
    mat = np.zeros((d, d), dtype=complex)
    ns = np.arange(1, d)
    mat[ns - 1, ns] = np.sqrt(ns)
    return mat


def annihilation(registry: ModeRegistry, label: str) -> ModeOperator:
    """Annihilation operator for one mode, exact up to the cutoff boundary."""
    return embed_single_mode(registry, label, single_mode_annihilation(registry.cutoff_of(label)))


def creation(registry: ModeRegistry, label: str) -> ModeOperator:
    return annihilation(registry, label).dag()


def number_operator(registry: ModeRegistry, label: str) -> ModeOperator:
    (n,) = _digits(registry, [label])
    return ModeOperator(registry, sp.diags(n.astype(complex)).tocsr())


def identity_operator(registry: ModeRegistry) -> ModeOperator:
    return ModeOperator(registry, sp.identity(registry.dimension, dtype=complex, format="csr"))


def apply_unitary(obj, unitary: ModeOperator):
    """Evolve a pure state (U|psi>) or a density (U rho U+); returns the same kind."""
    _require_same_registry(obj.registry, unitary.registry)
    u = unitary.matrix
    if isinstance(obj, MultiModeState):
        return MultiModeState(obj.registry, u @ obj.amplitudes)
    if isinstance(obj, DensityOperator):
        # U rho U+ as U (U rho)+ for Hermitian rho: two sparse-dense products.
        half = u @ obj.matrix
        return DensityOperator(obj.registry, u @ half.conj().T)
    raise TypeError(f"cannot apply a unitary to {type(obj).__name__}")


def partial_trace(rho: DensityOperator, keep: Iterable[str]) -> DensityOperator:
    """Trace out every mode not in ``keep``; kept modes retain their order."""
    keep = list(dict.fromkeys(keep))
    if not keep:
        raise FockSpaceError("keep set must be nonempty")
    registry = rho.registry
    keep_axes = sorted(registry.axis_of(label) for label in keep)
    n_modes = len(registry.modes)
    dims = registry.dims
    tensor = rho.matrix.reshape(dims + dims)

    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if 2 * n_modes > len(letters):
        raise FockSpaceError("too many modes for partial trace")
    ket = list(letters[:n_modes])
    bra = list(letters[n_modes:2 * n_modes])
    for axis in range(n_modes):
        if axis not in keep_axes:
            bra[axis] = ket[axis]
    out = "".join(ket[a] for a in keep_axes) + "".join(bra[a] for a in keep_axes)
    reduced = np.einsum("".join(ket) + "".join(bra) + "->" + out, tensor)

    new_registry = registry.restricted(keep)
    d = new_registry.dimension
    return DensityOperator(new_registry, reduced.reshape(d, d))


def expectation(rho: DensityOperator, op: ModeOperator) -> complex:
    """tr(rho O); real within tolerance for Hermitian O."""
    _require_same_registry(rho.registry, op.registry)
    return complex(op.matrix.multiply(rho.matrix.T).sum())


def fidelity_with_pure(rho: DensityOperator, psi: MultiModeState,
                       norm_tol: float = 1e-8, clamp_tol: float = 1e-8) -> float:
    """<psi| rho |psi>, clamped to [0, 1] only for tolerance-sized excursions."""
    _require_same_registry(rho.registry, psi.registry)
    if abs(psi.norm - 1.0) > norm_tol:
        raise NormalizationError(f"reference state norm {psi.norm!r} not 1 within {norm_tol}")
    value = float(np.vdot(psi.amplitudes, rho.matrix @ psi.amplitudes).real)
    if value < -clamp_tol or value > 1.0 + clamp_tol:
        raise NormalizationError(f"fidelity {value!r} outside [0, 1] beyond tolerance")
    return min(max(value, 0.0), 1.0)
