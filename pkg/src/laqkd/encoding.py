"""Bit/basis photon encodings and the Bell-outcome decode tables.

One shared copy for the protocol machines and the attack experiments, so
the two sides cannot drift apart. Array tables mirror the object API for
the batch engines.
"""
from __future__ import annotations

import numpy as np

from .qstate import (
    HADAMARD,
    ZERO,
    BellOutcome,
    PhotonState,
    apply_unitary,
    cycle_power,
    z_photon,
)

# Decoded message bit per (basis bit, Bell outcome index). With the basis
# bit clear, both phi outcomes mean the two photons carried equal bits;
# with it set, the outcome's sign carries the bit instead.
DECODE_BITS = np.array([[0, 0, 1, 1], [0, 1, 0, 1]], dtype=np.uint8)


def decode_outcome(basis_bit: int, outcome: BellOutcome | int) -> int:
    """Message bit announced by a Bell result under the given basis bit."""
    if basis_bit not in (0, 1):
        raise ValueError(f"basis bit must be 0 or 1, got {basis_bit!r}")
    return int(DECODE_BITS[basis_bit, int(outcome)])


def allowed_outcomes(basis_bit: int, m_bit: int) -> tuple[BellOutcome, ...]:
    """The two Bell results consistent with a decoded bit."""
    return tuple(BellOutcome(k) for k in range(4) if DECODE_BITS[basis_bit, k] == m_bit)


def forbidden_outcomes(basis_bit: int, m_bit: int) -> tuple[BellOutcome, ...]:
    return tuple(BellOutcome(k) for k in range(4) if DECODE_BITS[basis_bit, k] != m_bit)


def encoded_photon(bit: int, basis_bit: int) -> PhotonState:
    """Z photon for the bit, rotated into the X basis when the key bit is set."""
    photon = z_photon(bit)
    if basis_bit:
        photon = apply_unitary(HADAMARD, photon)
    return photon


def return_photon(basis_bit: int, r_bit: int) -> PhotonState:
    """Round-trip encoding: the cycle gate applied basis + 2r times to |0>."""
    return apply_unitary(cycle_power(basis_bit + 2 * r_bit), ZERO)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# PHOTON_AMPS[basis, bit] and RETURN_AMPS[basis, r] are the single-photon
# amplitude tables behind the two functions above.
PHOTON_AMPS = _frozen(np.array(
    [[encoded_photon(b, k).amps for b in (0, 1)] for k in (0, 1)]
).astype(np.complex128))

RETURN_AMPS = _frozen(np.array(
    [[return_photon(k, r).amps for r in (0, 1)] for k in (0, 1)]
).astype(np.complex128))

# PAIR_PRODUCT[basis, a, b]: the joint state of two photons encoded with a
# shared basis bit, as seen by the Bell measurement.
PAIR_PRODUCT = _frozen(np.array(
    [[[np.kron(PHOTON_AMPS[k, a], PHOTON_AMPS[k, b]) for b in (0, 1)] for a in (0, 1)]
     for k in (0, 1)]
))

RETURN_PAIR = _frozen(np.array(
    [[[np.kron(RETURN_AMPS[k, ra], RETURN_AMPS[k, rb]) for rb in (0, 1)] for ra in (0, 1)]
     for k in (0, 1)]
))

# PAIR_OPS[basis, ra, rb]: both participants' round-trip gates as one 4x4
# operator on the photon pair.
PAIR_OPS = _frozen(np.array(
    [[[np.kron(cycle_power(k + 2 * ra).matrix, cycle_power(k + 2 * rb).matrix)
       for rb in (0, 1)] for ra in (0, 1)] for k in (0, 1)]
))

CYCLE_MATS = _frozen(np.array([cycle_power(j).matrix for j in range(4)]))

PAIR_HADAMARD = _frozen(np.kron(HADAMARD.matrix, HADAMARD.matrix))
