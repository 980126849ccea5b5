"""Exact statevector arithmetic for one- and two-photon registers.

Everything is dense complex128. All gate matrices are assembled from the
same 1/sqrt(2) float so that amplitudes which cancel algebraically cancel
to an exact floating-point zero: outcomes that are impossible in theory
carry probability 0.0 exactly, not 1e-17. Tests rely on this.
"""
from __future__ import annotations

import enum
from typing import Iterable

import numpy as np

from .errors import NonUnitaryError, NormalizationError

# Tolerances. State norms and unitarity are checked tightly; probabilities
# accumulate a little more float noise through tensor products.
STATE_TOL = 1e-12
PROB_TOL = 1e-9

INV_SQRT2 = 1.0 / np.sqrt(2.0)


class BellOutcome(enum.IntEnum):
    """Index of a Bell-basis measurement result."""

    PHI_PLUS = 0
    PHI_MINUS = 1
    PSI_PLUS = 2
    PSI_MINUS = 3

    @property
    def label(self) -> str:
        return _BELL_LABELS[int(self)]


_BELL_LABELS = ("phi+", "phi-", "psi+", "psi-")


def _as_state(vec: Iterable[complex], size: int) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.complex128)
    if arr.shape != (size,):
        raise NormalizationError(f"expected a length-{size} amplitude vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise NormalizationError("amplitudes must be finite")
    norm2 = float(np.sum(arr.real**2 + arr.imag**2))
    if abs(norm2 - 1.0) > STATE_TOL:
        raise NormalizationError(f"state norm^2 = {norm2!r}, expected 1 within {STATE_TOL}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


class PhotonState:
    """Pure state of a single photon, |psi> = amps[0]|0> + amps[1]|1>."""

    __slots__ = ("amps",)

    def __init__(self, amps: Iterable[complex]):
        self.amps = _as_state(amps, 2)

    def __repr__(self) -> str:
        return f"PhotonState({self.amps.tolist()})"


class PairState:
    """Pure state of an ordered photon pair in the |00>,|01>,|10>,|11> basis."""

    __slots__ = ("amps",)

    def __init__(self, amps: Iterable[complex]):
        self.amps = _as_state(amps, 4)

    def __repr__(self) -> str:
        return f"PairState({self.amps.tolist()})"


class Unitary2:
    """A 2x2 unitary. Construction rejects non-unitary matrices."""

    __slots__ = ("matrix",)

    def __init__(self, matrix: Iterable[Iterable[complex]]):
        mat = np.asarray(matrix, dtype=np.complex128)
        if mat.shape != (2, 2):
            raise NonUnitaryError(f"expected a 2x2 matrix, got shape {mat.shape}")
        defect = np.abs(mat @ mat.conj().T - np.eye(2)).max()
        if defect > STATE_TOL:
            raise NonUnitaryError(f"matrix is not unitary (defect {defect:.3e})")
        mat = mat.copy()
        mat.setflags(write=False)
        self.matrix = mat

    def __matmul__(self, other: "Unitary2") -> "Unitary2":
        return Unitary2(self.matrix @ other.matrix)


# Canonical single-photon states, all built from the shared INV_SQRT2 atom.
ZERO = PhotonState([1.0, 0.0])
ONE = PhotonState([0.0, 1.0])
PLUS = PhotonState([INV_SQRT2, INV_SQRT2])
MINUS = PhotonState([INV_SQRT2, -INV_SQRT2])

IDENTITY = Unitary2([[1.0, 0.0], [0.0, 1.0]])
HADAMARD = Unitary2([[INV_SQRT2, INV_SQRT2], [INV_SQRT2, -INV_SQRT2]])

# The basis-cycling gate: the real rotation by pi/4. Applied repeatedly it
# walks |0> -> |+> -> |1> -> -|-> -> -|0> -> ..., i.e. it cycles through the
# four signal states up to a global sign, and its 8th power is the identity.
_CYCLE_COS = (1.0, INV_SQRT2, 0.0, -INV_SQRT2)
_CYCLE_SIN = (0.0, INV_SQRT2, 1.0, INV_SQRT2)
CYCLE = Unitary2([[INV_SQRT2, -INV_SQRT2], [INV_SQRT2, INV_SQRT2]])

_CYCLE_POWERS = tuple(
    Unitary2([[c, -s], [s, c]]) for c, s in zip(_CYCLE_COS, _CYCLE_SIN)
)

# Rows are Bell-state bras, ordered as BellOutcome. The matrix is real and
# orthogonal, so its transpose converts Bell coefficients back to the
# computational basis.
BELL_MATRIX = np.array(
    [
        [INV_SQRT2, 0.0, 0.0, INV_SQRT2],
        [INV_SQRT2, 0.0, 0.0, -INV_SQRT2],
        [0.0, INV_SQRT2, INV_SQRT2, 0.0],
        [0.0, INV_SQRT2, -INV_SQRT2, 0.0],
    ]
)

BELL_STATES = tuple(PairState(BELL_MATRIX[k]) for k in range(4))


def z_photon(bit: int) -> PhotonState:
    """Computational-basis photon |0> or |1>."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    return ZERO if bit == 0 else ONE


def apply_unitary(u: Unitary2, state: PhotonState) -> PhotonState:
    return PhotonState(u.matrix @ state.amps)


def cycle_power(j: int) -> Unitary2:
    """The basis-cycling rotation composed j times, j in 0..3.

    cycle_power(0) is the identity; cycle_power(2) maps |0> to |1> exactly.
    Higher powers are not needed by the protocols and are rejected.
    """
    if j not in (0, 1, 2, 3):
        raise ValueError(f"rotation count must be in 0..3, got {j!r}")
    return _CYCLE_POWERS[j]


def tensor(a: PhotonState, b: PhotonState) -> PairState:
    return PairState(np.kron(a.amps, b.amps))


def bell_probabilities(pair: PairState) -> np.ndarray:
    """Born probabilities of the four Bell outcomes, ordered as BellOutcome."""
    coeff = BELL_MATRIX @ pair.amps
    return coeff.real**2 + coeff.imag**2


def bell_state(outcome: BellOutcome) -> PairState:
    return BELL_STATES[int(outcome)]


def bell_measure(pair: PairState, rng: np.random.Generator) -> tuple[BellOutcome, PairState]:
    """Sample a Bell measurement; the post-measurement state is the Bell state."""
    probs = bell_probabilities(pair)
    outcome = int(_sample_index(probs, rng))
    return BellOutcome(outcome), BELL_STATES[outcome]


def states_equal_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = STATE_TOL) -> bool:
    """True when a = exp(i*phi) * b for some global phase phi."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape:
        return False
    k = int(np.argmax(np.abs(b)))
    if abs(b[k]) < tol:
        return bool(np.abs(a).max() < tol)
    phase = a[k] / b[k]
    if abs(abs(phase) - 1.0) > 1e-9:
        return False
    return bool(np.abs(a - phase * b).max() <= max(tol, 1e-10))


# ---------------------------------------------------------------------------
# Batch kernels. The protocol engines run thousands of positions per trial,
# so the hot path works on (N, ...) arrays instead of wrapper objects. The
# wrapper API above is a thin view over the same arithmetic.

def _sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(probs)
    u = rng.random() * cum[-1]
    return int(min(np.searchsorted(cum, u, side="right"), probs.size - 1))


def batch_sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample one index per row of a (N, K) probability matrix."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def batch_tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Kronecker product of (N,2) x (N,2) -> (N,4)."""
    return np.einsum("ni,nj->nij", a, b).reshape(a.shape[0], 4)


def batch_apply(mats: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Apply per-row matrices (N,d,d) or one shared (d,d) matrix to (N,d) rows."""
    if mats.ndim == 2:
        return states @ mats.T
    return np.einsum("nij,nj->ni", mats, states)


def batch_bell_probabilities(pairs: np.ndarray) -> np.ndarray:
    coeff = pairs @ BELL_MATRIX.T
    return coeff.real**2 + coeff.imag**2


def bell_rows(joint: np.ndarray) -> np.ndarray:
    """Bell-basis decomposition of a pair (x) probe state.

    joint is a (4, d) matrix of computational-basis pair amplitudes, one
    probe column space per pair basis vector. Row k of the result is the
    unnormalized probe vector attached to Bell outcome k; its squared norm
    is the outcome probability.
    """
    return BELL_MATRIX @ joint
