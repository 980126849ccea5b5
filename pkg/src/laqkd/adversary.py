"""Channel attack strategies and the collective-probe machinery.

Covers intercept-resend attacks at a configurable measurement angle, forged
relay announcements, and entangling-probe attacks: constructing probes that
satisfy the undetectability conditions, checking those conditions
numerically on arbitrary probes, and estimating what a probe's owner can
learn.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import (
    CYCLE_MATS,
    DECODE_BITS,
    PAIR_HADAMARD,
    PAIR_OPS,
    PAIR_PRODUCT,
    PHOTON_AMPS,
    RETURN_PAIR,
    forbidden_outcomes,
)
from .errors import ConfigError, ProbeConditionError
from .qstate import (
    BELL_MATRIX,
    STATE_TOL,
    BellOutcome,
    batch_bell_probabilities,
    batch_sample,
    batch_tensor,
    bell_rows,
)

# A probe "satisfies the conditions" when no forbidden Bell amplitude
# exceeds this. Well-formed constructions land around 1e-15.
PROBE_TOL = 1e-9

_PROTOCOLS = ("p1", "p2", "p3")

POLICY_ANGLES = {"z": 0.0, "x": np.pi / 4, "breidbart": np.pi / 8}
INTERCEPT_POLICIES = ("z", "x", "random", "breidbart")
ANNOUNCE_POLICIES = ("truthful", "uniform", "flip", "constant")


# ---------------------------------------------------------------------------
# Projective measurement at an angle

def _measurement_rows(angles: np.ndarray) -> np.ndarray:
    """Per-position orthonormal basis bras, shape (N, 2, 2)."""
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)], axis=-2)


def _intercept_photons(photons: np.ndarray, angles: np.ndarray,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Measure each photon in its angle's basis and return the collapsed
    resends plus the outcome bits."""
    rows = _measurement_rows(angles)
    amp0 = rows[:, 0, 0] * photons[:, 0] + rows[:, 0, 1] * photons[:, 1]
    p0 = amp0.real**2 + amp0.imag**2
    outcomes = (rng.random(photons.shape[0]) >= p0).astype(np.uint8)
    resent = rows[np.arange(photons.shape[0]), outcomes].astype(np.complex128)
    return resent, outcomes


@dataclass
class EveRecord:
    """Everything the attacker wrote down during one run."""

    angles: dict = field(default_factory=dict)
    outcomes: dict = field(default_factory=dict)


def intercept_resend(photons, basis_policy: str, rng: np.random.Generator):
    """Measure-and-resend on a photon batch; returns resends and the record.

    Accepts an (N, 2) amplitude array or a list of PhotonState; the resends
    come back in the same form.
    """
    from .qstate import PhotonState

    if basis_policy not in INTERCEPT_POLICIES:
        raise ConfigError(f"unknown basis policy {basis_policy!r}")
    as_objects = not isinstance(photons, np.ndarray)
    amps = (np.array([p.amps for p in photons], dtype=np.complex128)
            if as_objects else np.asarray(photons, dtype=np.complex128))
    n = amps.shape[0]
    if basis_policy == "random":
        angles = np.where(rng.integers(0, 2, n) == 1, np.pi / 4, 0.0)
    else:
        angles = np.full(n, POLICY_ANGLES[basis_policy])
    resent, outcomes = _intercept_photons(amps, angles, rng)
    record = EveRecord(angles={"photons": angles}, outcomes={"photons": outcomes})
    if as_objects:
        return [PhotonState(row) for row in resent], record
    return resent, record


# ---------------------------------------------------------------------------
# Channel strategies

class AttackStrategy:
    """Interposition hooks on the simulated channels.

    Strategy objects are immutable; per-run scratch lives in the context
    dict from begin_run, so one instance can serve parallel trials. The
    default implementation touches nothing.
    """

    name = "passive"

    def begin_run(self, positions: int, rng: np.random.Generator) -> dict:
        return {"record": EveRecord()}

    def tamper_photons(self, photons: np.ndarray, leg: str, context: dict,
                       rng: np.random.Generator) -> np.ndarray:
        return photons

    def tamper_pairs(self, pairs: np.ndarray, context: dict,
                     rng: np.random.Generator) -> np.ndarray:
        return pairs

    def forge_announcement(self, outcomes: np.ndarray, context: dict,
                           rng: np.random.Generator) -> np.ndarray:
        return outcomes

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class Passive(AttackStrategy):
    """Identity on every channel; the baseline for transcript comparisons."""


class InterceptResend(AttackStrategy):
    """Measure every transiting photon at a fixed or per-position angle.

    The random policy draws one basis per position and reuses it for every
    leg and both halves of a pair; fresh coins per photon would only raise
    the attacker's own error rate.
    """

    def __init__(self, basis_policy: str):
        if basis_policy not in INTERCEPT_POLICIES:
            raise ConfigError(f"unknown basis policy {basis_policy!r}")
        self.basis_policy = basis_policy
        self.name = f"intercept:{basis_policy}"

    def begin_run(self, positions: int, rng: np.random.Generator) -> dict:
        if self.basis_policy == "random":
            angles = np.where(rng.integers(0, 2, positions) == 1, np.pi / 4, 0.0)
        else:
            angles = np.full(positions, POLICY_ANGLES[self.basis_policy])
        record = EveRecord(angles={"shared": angles})
        return {"record": record, "angles": angles}

    def tamper_photons(self, photons, leg, context, rng):
        resent, outcomes = _intercept_photons(photons, context["angles"], rng)
        context["record"].outcomes[leg] = outcomes
        return resent

    def tamper_pairs(self, pairs, context, rng):
        n = pairs.shape[0]
        rows = _measurement_rows(context["angles"])
        joint = np.einsum("nij,nkl->nikjl", rows, rows).reshape(n, 4, 4)
        amps = np.einsum("noj,nj->no", joint, pairs)
        probs = amps.real**2 + amps.imag**2
        picked = batch_sample(probs, rng)
        context["record"].outcomes["pairs"] = picked.astype(np.uint8)
        return joint[np.arange(n), picked].astype(np.complex128)


class MaliciousTP(AttackStrategy):
    """The relay itself lies about (some of) its Bell results."""

    def __init__(self, announce_policy: str = "uniform",
                 constant: BellOutcome = BellOutcome.PHI_PLUS):
        if announce_policy not in ANNOUNCE_POLICIES:
            raise ConfigError(f"unknown announce policy {announce_policy!r}")
        self.announce_policy = announce_policy
        self.constant = BellOutcome(constant)
        self.name = f"malicious_tp:{announce_policy}"

    def forge_announcement(self, outcomes, context, rng):
        return malicious_tp_announce(self.announce_policy, outcomes, rng, self.constant)


def malicious_tp_announce(policy: str, true_outcomes: np.ndarray,
                          rng: np.random.Generator,
                          constant: BellOutcome = BellOutcome.PHI_PLUS) -> np.ndarray:
    """Forge (or pass through) an announcement vector of Bell outcome indices."""
    if policy not in ANNOUNCE_POLICIES:
        raise ConfigError(f"unknown announce policy {policy!r}")
    outcomes = np.asarray(true_outcomes, dtype=np.uint8)
    if policy == "truthful":
        return outcomes.copy()
    if policy == "uniform":
        return rng.integers(0, 4, size=outcomes.shape[0], dtype=np.uint8)
    if policy == "flip":
        # Swaps within the phi pair and within the psi pair. Positions whose
        # basis bit is clear decode both members of a pair identically, so
        # this forgery is invisible there.
        return outcomes ^ 1
    return np.full(outcomes.shape[0], int(constant), dtype=np.uint8)


class EntanglingProbe(AttackStrategy):
    """Collective attack: the probe state machine lives in the instance;
    the protocol engine consults its outcome tables instead of the honest
    Born rule."""

    def __init__(self, probe: "ProbeInstance"):
        self.probe = probe
        self.table = probe_outcome_table(probe)
        self.name = f"probe:{probe.protocol}:d{probe.dim}"


# ---------------------------------------------------------------------------
# Probe instances

def _as_complex(arr, shape, what: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.complex128)
    if out.shape != shape:
        raise ConfigError(f"{what}: expected shape {shape}, got {out.shape}")
    out = out.copy()
    out.setflags(write=False)
    return out


def _check_unit(arr: np.ndarray, what: str) -> None:
    norm2 = float(np.sum(arr.real**2 + arr.imag**2))
    if abs(norm2 - 1.0) > STATE_TOL:
        raise ConfigError(f"{what}: norm^2 = {norm2!r}, expected 1")


def _check_unitary(mat: np.ndarray, what: str) -> None:
    defect = np.abs(mat @ mat.conj().T - np.eye(mat.shape[0])).max()
    if defect > 1e-10:
        raise ConfigError(f"{what}: not unitary (defect {defect:.3e})")


@dataclass(frozen=True, eq=False)
class ProbeInstance:
    """One collective attack: ancilla dimension plus its coupling maps.

    Joint vectors are ordered pair-index major, ancilla minor, so a (4, d)
    response matrix flattens to the 4d joint vector and back.

    Per protocol: the two-way single-photon variant (p1) couples in transit
    via `entangler` acting on pair (x) ancilla with the ancilla starting in
    `probe_init`; the pair-source variant (p2) replaces the distributed
    state with `source`; the round-trip variant (p3) turns the blank pair
    into `first_pass` on the way out and applies `second_pass` on the way
    back.
    """

    protocol: str
    dim: int
    entangler: np.ndarray | None = None
    probe_init: np.ndarray | None = None
    source: np.ndarray | None = None
    first_pass: np.ndarray | None = None
    second_pass: np.ndarray | None = None

    def __post_init__(self):
        if self.protocol not in _PROTOCOLS:
            raise ConfigError(f"unknown protocol id {self.protocol!r}")
        d = self.dim
        low = 4 if self.protocol == "p3" else 1
        if not low <= d <= 16:
            raise ConfigError(f"{self.protocol} probe dimension must be in {low}..16, got {d}")
        if self.protocol == "p1":
            if self.entangler is None or self.probe_init is None:
                raise ConfigError("p1 probe needs entangler and probe_init")
            object.__setattr__(self, "entangler",
                               _as_complex(self.entangler, (4 * d, 4 * d), "entangler"))
            object.__setattr__(self, "probe_init",
                               _as_complex(self.probe_init, (d,), "probe_init"))
            _check_unitary(self.entangler, "entangler")
            _check_unit(self.probe_init, "probe_init")
        elif self.protocol == "p2":
            if self.source is None:
                raise ConfigError("p2 probe needs a source state")
            object.__setattr__(self, "source", _as_complex(self.source, (4, d), "source"))
            _check_unit(self.source, "source")
        else:
            if self.first_pass is None or self.second_pass is None:
                raise ConfigError("p3 probe needs first_pass and second_pass")
            object.__setattr__(self, "first_pass",
                               _as_complex(self.first_pass, (4, d), "first_pass"))
            object.__setattr__(self, "second_pass",
                               _as_complex(self.second_pass, (4 * d, 4 * d), "second_pass"))
            _check_unit(self.first_pass, "first_pass")
            _check_unitary(self.second_pass, "second_pass")


# ---------------------------------------------------------------------------
# Random linear-algebra helpers

def _random_unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def _random_phases(rng: np.random.Generator, k: int) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, size=k))


def _random_frame(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    """k orthonormal rows in C^d."""
    if k > d:
        raise ConfigError(f"cannot fit {k} orthonormal vectors in dimension {d}")
    mat = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    q, r = np.linalg.qr(mat)
    # Fix the QR phase ambiguity so the frame is a deterministic function
    # of the draw.
    q = q * (np.diagonal(r) / np.abs(np.diagonal(r)))
    return q.T.copy()


def null_complement(rows: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of the row span."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.complex128))
    _, s, vh = np.linalg.svd(rows, full_matrices=True)
    rank = int(np.sum(s > 1e-10))
    return vh[rank:]


def complete_unitary(inputs: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    """The unitary sending each input row to the matching output row.

    Inputs and outputs must each be orthonormal families of equal size;
    the action on the orthogonal complement is fixed by pairing the two
    complements' SVD bases.
    """
    inputs = np.asarray(inputs, dtype=np.complex128)
    outputs = np.asarray(outputs, dtype=np.complex128)
    if inputs.shape != outputs.shape:
        raise ConfigError("inputs and outputs must have matching shapes")
    for name, fam in (("inputs", inputs), ("outputs", outputs)):
        gram = fam @ fam.conj().T
        if np.abs(gram - np.eye(fam.shape[0])).max() > 1e-10:
            raise ConfigError(f"{name} are not orthonormal")
    in_full = np.vstack([inputs, null_complement(inputs)])
    out_full = np.vstack([outputs, null_complement(outputs)])
    return out_full.T @ in_full.conj()


# ---------------------------------------------------------------------------
# Constrained-probe construction

def _construct_p1_probe(rng: np.random.Generator, dim: int, tilt: float = 0.0) -> ProbeInstance:
    """Random probe meeting every transit-attack condition.

    The four responses pair the allowed Bell rows with ancilla vectors so
    that equal-basis superposition inputs cancel on their forbidden rows.
    A nonzero tilt leaks a forbidden component of magnitude sin(tilt) into
    the |00> response while keeping the map unitary; used as a negative
    control.
    """
    probe_init = _random_unit(rng, dim)
    u, v, w, z = (_random_unit(rng, dim) for _ in range(4))
    c = _random_phases(rng, 4) * np.sqrt(0.5)
    bell = BELL_MATRIX.astype(np.complex128)
    o00 = c[0] * np.kron(bell[0], u) + c[1] * np.kron(bell[1], v)
    o11 = c[0] * np.kron(bell[0], u) - c[1] * np.kron(bell[1], v)
    o01 = c[2] * np.kron(bell[2], w) + c[3] * np.kron(bell[3], z)
    o10 = c[2] * np.kron(bell[2], w) - c[3] * np.kron(bell[3], z)
    if tilt != 0.0:
        if dim < 2:
            raise ConfigError("a tilted probe needs ancilla dimension >= 2")
        stray = _random_unit(rng, dim)
        stray = stray - (w.conj() @ stray) * w
        stray = stray / np.linalg.norm(stray)
        o00 = np.cos(tilt) * o00 + np.sin(tilt) * np.kron(bell[2], stray)
    eye4 = np.eye(4, dtype=np.complex128)
    inputs = np.stack([np.kron(eye4[k], probe_init) for k in range(4)])
    outputs = np.stack([o00, o01, o10, o11])
    return ProbeInstance("p1", dim, entangler=complete_unitary(inputs, outputs),
                         probe_init=probe_init)


def _construct_p2_probe(rng: np.random.Generator, dim: int) -> ProbeInstance:
    """Random undetectable source: the anticorrelated Bell pair times an
    arbitrary ancilla vector. Anything else trips one of the residuals."""
    g = _random_phases(rng, 1)[0] * _random_unit(rng, dim)
    source = np.outer(BELL_MATRIX[1].astype(np.complex128), g)
    return ProbeInstance("p2", dim, source=source)


def _block_outputs(frame_a: np.ndarray, frame_b: np.ndarray,
                   coeff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two orthonormal outputs over the 2-frame {frame_a, frame_b} with the
    given 2x2 unitary of coefficients (rows index the frame)."""
    o1 = coeff[0, 0] * frame_a + coeff[1, 0] * frame_b
    o2 = coeff[0, 1] * frame_a + coeff[1, 1] * frame_b
    return o1, o2


def _construct_p3_probe(rng: np.random.Generator, dim: int) -> ProbeInstance:
    """Random probe meeting every round-trip attack condition.

    The outgoing coupling spreads the blank pair over all four Bell rows
    with orthonormal ancilla tags. The returning coupling is fixed on the
    eight reachable (Bell row, tag) inputs by four 2x2 blocks whose
    coefficients cancel the forbidden rows of every encoding-case
    superposition; each block's output 2-frame is drawn orthonormal so the
    whole family stays unitary.
    """
    # Amplitudes bounded away from zero keep the block normalizers
    # (|a1|^2+|a4|^2 and |a2|^2+|a3|^2) well conditioned.
    while True:
        amp = rng.normal(size=4) + 1j * rng.normal(size=4)
        amp = amp / np.linalg.norm(amp)
        if np.abs(amp).min() >= 0.15:
            break
    a1, a2, a3, a4 = amp
    nu_a = np.sqrt(abs(a1) ** 2 + abs(a4) ** 2)
    nu_b = np.sqrt(abs(a2) ** 2 + abs(a3) ** 2)

    tags = _random_frame(rng, dim, 4)
    pp = _random_frame(rng, dim, 2)
    qq = _random_frame(rng, dim, 2)
    rr = _random_frame(rng, dim, 2)
    ss = _random_frame(rng, dim, 2)
    ph = _random_phases(rng, 8)

    bell = BELL_MATRIX.astype(np.complex128)
    first_pass = sum(amp[x] * np.outer(bell[x], tags[x]) for x in range(4))

    def joint(row: int, vec: np.ndarray) -> np.ndarray:
        return np.kron(bell[row], vec)

    # Block A: inputs phi+ tag1, psi- tag4; outputs in span{phi+ p, phi- q}.
    va = np.array([[ph[0] * np.conj(a1), ph[0] * np.conj(a4)],
                   [ph[1] * a4, -ph[1] * a1]]) / nu_a
    oa1, oa2 = _block_outputs(joint(0, pp[0]), joint(1, qq[0]), va)
    # Block B: inputs phi- tag2, psi+ tag3; outputs in span{phi+ p', phi- q'}.
    vb = np.array([[ph[2] * a3, -ph[2] * a2],
                   [ph[3] * np.conj(a2), ph[3] * np.conj(a3)]]) / nu_b
    ob1, ob2 = _block_outputs(joint(0, pp[1]), joint(1, qq[1]), vb)
    # Block C: inputs psi- tag1, phi+ tag4; outputs in span{psi+ r, psi- s}.
    vc = np.array([[ph[4] * a4, ph[4] * a1],
                   [ph[5] * np.conj(a1), -ph[5] * np.conj(a4)]]) / nu_a
    oc1, oc2 = _block_outputs(joint(2, rr[0]), joint(3, ss[0]), vc)
    # Block D: inputs psi+ tag2, phi- tag3; outputs in span{psi+ r', psi- s'}.
    vd = np.array([[ph[6] * np.conj(a2), -ph[6] * np.conj(a3)],
                   [ph[7] * a3, ph[7] * a2]]) / nu_b
    od1, od2 = _block_outputs(joint(2, rr[1]), joint(3, ss[1]), vd)

    inputs = np.stack([
        joint(0, tags[0]), joint(3, tags[3]),
        joint(1, tags[1]), joint(2, tags[2]),
        joint(3, tags[0]), joint(0, tags[3]),
        joint(2, tags[1]), joint(1, tags[2]),
    ])
    outputs = np.stack([oa1, oa2, ob1, ob2, oc1, oc2, od1, od2])
    second_pass = complete_unitary(inputs, outputs)
    return ProbeInstance("p3", dim, first_pass=first_pass, second_pass=second_pass)


def construct_constrained_probe(protocol_id: str, rng: np.random.Generator,
                                dim: int | None = None) -> ProbeInstance:
    """Sample a random probe whose free parameters are unconstrained and
    whose remaining parameters enforce all undetectability conditions."""
    if protocol_id not in _PROTOCOLS:
        raise ConfigError(f"unknown protocol id {protocol_id!r}")
    if dim is None:
        dim = 4
    if protocol_id == "p1":
        return _construct_p1_probe(rng, dim)
    if protocol_id == "p2":
        return _construct_p2_probe(rng, dim)
    return _construct_p3_probe(rng, dim)


# ---------------------------------------------------------------------------
# Condition checking

# Case labels in fixed enumeration order.
_CASES_8 = tuple((k, ra, rb) for k in (0, 1) for ra in (0, 1) for rb in (0, 1))


def _p1_case_states(probe: ProbeInstance) -> np.ndarray:
    """(2,2,2,4,dim) array: response of the coupling for each encoding case,
    rows indexed by pair computational basis."""
    d = probe.dim
    out = np.empty((2, 2, 2, 4, d), dtype=np.complex128)
    for k, a, b in _CASES_8:
        joint_in = np.kron(PAIR_PRODUCT[k, a, b], probe.probe_init)
        out[k, a, b] = (probe.entangler @ joint_in).reshape(4, d)
    return out


def _p3_case_states(probe: ProbeInstance) -> np.ndarray:
    d = probe.dim
    out = np.empty((2, 2, 2, 4, d), dtype=np.complex128)
    for k, ra, rb in _CASES_8:
        mid = PAIR_OPS[k, ra, rb].astype(np.complex128) @ probe.first_pass
        out[k, ra, rb] = (probe.second_pass @ mid.reshape(4 * d)).reshape(4, d)
    return out


def _p2_case_states(probe: ProbeInstance) -> np.ndarray:
    """(2,4,dim): the source as each participant pair sees it, per basis bit."""
    return np.stack([probe.source, PAIR_HADAMARD.astype(np.complex128) @ probe.source])


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the numerical undetectability check."""

    satisfied: bool
    residual: float
    cases: dict
    structure_residual: float | None = None


def _bell_case_report(states: np.ndarray) -> tuple[float, dict]:
    worst = 0.0
    cases = {}
    for k, ra, rb in _CASES_8:
        rows = bell_rows(states[k, ra, rb])
        norms = np.linalg.norm(rows, axis=1)
        forb = forbidden_outcomes(k, ra ^ rb)
        case_res = float(max(norms[int(x)] for x in forb))
        worst = max(worst, case_res)
        cases[f"basis={k} ra={ra} rb={rb}"] = {
            "residual": case_res,
            "support": {BellOutcome(x).label: float(norms[x] ** 2) for x in range(4)},
        }
    return worst, cases


def _p3_structure_residual(states: np.ndarray) -> float:
    """Deviation from the common-vector sign pattern across the eight
    encoding cases of the round-trip probe."""
    rows = {c: bell_rows(states[c]) for c in _CASES_8}
    f1 = rows[(0, 0, 0)][0]
    f2 = rows[(0, 0, 0)][1]
    f3 = rows[(0, 0, 1)][2]
    f4 = rows[(0, 0, 1)][3]
    checks = [
        rows[(0, 1, 0)][2] - f3, rows[(0, 1, 0)][3] + f4,
        rows[(0, 1, 1)][0] - f1, rows[(0, 1, 1)][1] + f2,
        rows[(1, 0, 0)][0] - f1, rows[(1, 0, 0)][2] - f3,
        rows[(1, 0, 1)][1] + f2, rows[(1, 0, 1)][3] - f4,
        rows[(1, 1, 0)][1] + f2, rows[(1, 1, 0)][3] + f4,
        rows[(1, 1, 1)][0] - f1, rows[(1, 1, 1)][2] + f3,
    ]
    return float(max(np.linalg.norm(c) for c in checks))


def check_probe_conditions(probe: ProbeInstance) -> ConditionReport:
    """Evaluate every zero-amplitude condition the probe must satisfy.

    The residual is the largest forbidden Bell amplitude over all encoding
    cases (for the round-trip variant, also the worst deviation from the
    required output structure). Satisfied means residual < PROBE_TOL.
    """
    if probe.protocol == "p2":
        states = _p2_case_states(probe)
        worst = 0.0
        cases = {}
        for k in (0, 1):
            norms = np.linalg.norm(states[k], axis=1)
            forb = (1, 2) if k == 0 else (0, 3)
            case_res = float(max(norms[x] for x in forb))
            worst = max(worst, case_res)
            cases[f"basis={k}"] = {
                "residual": case_res,
                "support": {format(x, "02b"): float(norms[x] ** 2) for x in range(4)},
            }
        return ConditionReport(worst < PROBE_TOL, worst, cases)
    states = _p1_case_states(probe) if probe.protocol == "p1" else _p3_case_states(probe)
    worst, cases = _bell_case_report(states)
    structure = None
    if probe.protocol == "p3":
        structure = _p3_structure_residual(states)
        worst = max(worst, structure)
    return ConditionReport(worst < PROBE_TOL, worst, cases, structure)


# ---------------------------------------------------------------------------
# Outcome tables: what the relay announces and what the probe keeps

@dataclass(frozen=True)
class OutcomeTable:
    """Sampling tables for a probe-attacked position.

    probs[case..., outcome] is the outcome distribution; post[case...,
    outcome] is the normalized ancilla state left behind (a zero row when
    the outcome cannot occur).
    """

    protocol: str
    dim: int
    probs: np.ndarray
    post: np.ndarray


def probe_outcome_table(probe: ProbeInstance) -> OutcomeTable:
    if probe.protocol == "p2":
        states = _p2_case_states(probe)  # (2,4,d) rows already = ZZ outcomes
        rows = states
    else:
        states = _p1_case_states(probe) if probe.protocol == "p1" else _p3_case_states(probe)
        rows = np.einsum("xj,karjd->karxd", BELL_MATRIX, states)
    norms = np.linalg.norm(rows, axis=-1)
    probs = norms**2
    safe = np.where(norms > 1e-300, norms, 1.0)
    post = rows / safe[..., None]
    post[norms <= 1e-300] = 0.0
    return OutcomeTable(probe.protocol, probe.dim, probs, post)


# ---------------------------------------------------------------------------
# Information estimates

def empirical_mutual_information(counts: np.ndarray) -> float:
    """Plug-in mutual information (bits) of a 2-D contingency table."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts / total
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / (px @ py)[mask])))


def plugin_bias_bound(cells: int, trials: int) -> float:
    """First-order positive bias of the plug-in estimator (Miller-Madow)."""
    return (cells - 1) / (2.0 * trials * np.log(2.0))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    eigs = np.linalg.eigvalsh(rho - sigma)
    return float(0.5 * np.sum(np.abs(eigs)))


def _max_pairwise_trace_distance(probe: ProbeInstance, table: OutcomeTable) -> float:
    """Exact best distinguishing advantage over the probe's reduced states.

    Groups the ancilla states by what the attacker publicly sees (the
    announced Bell result for relay-measured variants, nothing for the
    pair-source variant) and compares across the four (basis, r) secret
    cells; the maximum pairwise trace distance bounds any measurement.
    """
    d = probe.dim
    worst = 0.0
    if probe.protocol == "p2":
        cells = []
        for k in (0, 1):
            for r in (0, 1):
                # Alice's Z outcome is her key bit; rows 2r and 2r+1 share it.
                rho = np.zeros((d, d), dtype=np.complex128)
                weight = 0.0
                for zz in (2 * r, 2 * r + 1):
                    w = table.probs[k, zz]
                    rho += w * np.outer(table.post[k, zz], table.post[k, zz].conj())
                    weight += w
                if weight > 1e-12:
                    cells.append(rho / weight)
        for i in range(len(cells)):
            for j in range(i + 1, len(cells)):
                worst = max(worst, trace_distance(cells[i], cells[j]))
        return worst
    for x in range(4):
        cells = []
        for k in (0, 1):
            for ra in (0, 1):
                rho = np.zeros((d, d), dtype=np.complex128)
                weight = 0.0
                for rb in (0, 1):
                    w = 0.5 * table.probs[k, ra, rb, x]
                    rho += w * np.outer(table.post[k, ra, rb, x],
                                        table.post[k, ra, rb, x].conj())
                    weight += w
                if weight > 1e-12:
                    cells.append(rho / weight)
        for i in range(len(cells)):
            for j in range(i + 1, len(cells)):
                worst = max(worst, trace_distance(cells[i], cells[j]))
    return worst


@dataclass(frozen=True)
class LeakageReport:
    protocol: str
    dim: int
    trials: int
    mi_bits: float
    bias_bound: float
    max_trace_distance: float
    residual: float
    satisfied: bool
    detection_probability: float

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "probe_dim": self.dim,
            "trials": self.trials,
            "mi_estimate": self.mi_bits,
            "mi_bias_bound": self.bias_bound,
            "max_trace_distance": self.max_trace_distance,
            "residual": self.residual,
            "satisfied": self.satisfied,
            "per_position_detection": self.detection_probability,
        }


def _leakage_counts(probe: ProbeInstance, table: OutcomeTable, trials: int,
                    rng: np.random.Generator) -> np.ndarray:
    d = probe.dim
    if probe.protocol == "p2":
        basis = rng.integers(0, 2, trials)
        zz = batch_sample(table.probs[basis], rng)
        secret = basis * 2 + (zz >> 1)
        post = table.post[basis, zz]
    else:
        basis = rng.integers(0, 2, trials)
        ra = rng.integers(0, 2, trials)
        rb = rng.integers(0, 2, trials)
        outcome = batch_sample(table.probs[basis, ra, rb], rng)
        secret = basis * 2 + ra
        post = table.post[basis, ra, rb, outcome]
    eve_probs = post.real**2 + post.imag**2
    # Guard rows that sampled an impossible outcome (cannot happen when the
    # table rows sum to 1, but keep the sampler total-probability safe).
    eve_probs = np.where(eve_probs.sum(axis=1, keepdims=True) > 0, eve_probs, 1.0 / d)
    eve = batch_sample(eve_probs, rng)
    flat = np.bincount(secret * d + eve, minlength=4 * d)
    return flat.reshape(4, d)


def _detection_probability(probe: ProbeInstance, table: OutcomeTable) -> float:
    """Forbidden-outcome mass per position, averaged over uniform secrets."""
    if probe.protocol == "p2":
        return float(np.mean([table.probs[0, 1] + table.probs[0, 2],
                              table.probs[1, 0] + table.probs[1, 3]]))
    total = 0.0
    for k, ra, rb in _CASES_8:
        forb = forbidden_outcomes(k, ra ^ rb)
        total += sum(float(table.probs[k, ra, rb, int(x)]) for x in forb)
    return total / len(_CASES_8)


def probe_attack_report(probe: ProbeInstance, trials: int,
                        rng: np.random.Generator) -> LeakageReport:
    """Leakage and detectability of an arbitrary probe, reported together.

    No admissibility gate: an unconstrained probe may show nonzero mutual
    information and a nonzero forbidden-outcome mass side by side.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    check = check_probe_conditions(probe)
    table = probe_outcome_table(probe)
    counts = _leakage_counts(probe, table, trials, rng)
    return LeakageReport(
        protocol=probe.protocol,
        dim=probe.dim,
        trials=trials,
        mi_bits=empirical_mutual_information(counts),
        bias_bound=plugin_bias_bound(4 * probe.dim, trials),
        max_trace_distance=_max_pairwise_trace_distance(probe, table),
        residual=check.residual,
        satisfied=check.satisfied,
        detection_probability=_detection_probability(probe, table),
    )


def probe_leakage_experiment(probe: ProbeInstance, trials: int,
                             rng: np.random.Generator) -> LeakageReport:
    """Leakage estimate for a probe that passes the undetectability check.

    Probes failing the check are rejected: their runs abort and the
    leakage figure would conflate detection with extraction. Use
    probe_attack_report to study those.
    """
    check = check_probe_conditions(probe)
    if not check.satisfied:
        raise ProbeConditionError(
            f"probe violates the undetectability conditions (residual "
            f"{check.residual:.3e} >= {PROBE_TOL:g})"
        )
    return probe_attack_report(probe, trials, rng)


# ---------------------------------------------------------------------------
# Intercept-resend experiments

def _strategy_positions_error_p1(strategy: AttackStrategy, positions: int,
                                 rng: np.random.Generator) -> float:
    basis = rng.integers(0, 2, positions)
    bits_a = rng.integers(0, 2, positions)
    bits_b = rng.integers(0, 2, positions)
    ctx = strategy.begin_run(positions, rng)
    photons_a = strategy.tamper_photons(PHOTON_AMPS[basis, bits_a], "alice-tp", ctx, rng)
    photons_b = strategy.tamper_photons(PHOTON_AMPS[basis, bits_b], "bob-tp", ctx, rng)
    probs = batch_bell_probabilities(batch_tensor(photons_a, photons_b))
    outcomes = strategy.forge_announcement(batch_sample(probs, rng), ctx, rng)
    decoded = DECODE_BITS[basis, outcomes]
    return float(np.mean(decoded != (bits_a ^ bits_b)))


def _strategy_positions_error_p3(strategy: AttackStrategy, positions: int,
                                 rng: np.random.Generator) -> float:
    basis = rng.integers(0, 2, positions)
    r_a = rng.integers(0, 2, positions)
    r_b = rng.integers(0, 2, positions)
    ctx = strategy.begin_run(positions, rng)
    blanks = np.zeros((positions, 2), dtype=np.complex128)
    blanks[:, 0] = 1.0
    out_a = strategy.tamper_photons(blanks, "tp-alice", ctx, rng)
    out_b = strategy.tamper_photons(blanks.copy(), "tp-bob", ctx, rng)
    enc_a = np.einsum("nij,nj->ni", CYCLE_MATS[basis + 2 * r_a].astype(np.complex128), out_a)
    enc_b = np.einsum("nij,nj->ni", CYCLE_MATS[basis + 2 * r_b].astype(np.complex128), out_b)
    back_a = strategy.tamper_photons(enc_a, "alice-tp", ctx, rng)
    back_b = strategy.tamper_photons(enc_b, "bob-tp", ctx, rng)
    probs = batch_bell_probabilities(batch_tensor(back_a, back_b))
    outcomes = strategy.forge_announcement(batch_sample(probs, rng), ctx, rng)
    decoded = DECODE_BITS[basis, outcomes]
    return float(np.mean(decoded != (r_a ^ r_b)))


def _strategy_positions_error_p2(strategy: AttackStrategy, positions: int,
                                 rng: np.random.Generator) -> float:
    pairs = np.tile(BELL_MATRIX[1].astype(np.complex128), (positions, 1))
    basis = rng.integers(0, 2, positions)
    ctx = strategy.begin_run(positions, rng)
    pairs = strategy.tamper_pairs(pairs, ctx, rng)
    rotated = np.where((basis == 1)[:, None],
                       pairs @ PAIR_HADAMARD.T.astype(np.complex128), pairs)
    probs = rotated.real**2 + rotated.imag**2
    zz = batch_sample(probs, rng)
    r_alice = zz >> 1
    r_bob = (zz & 1) ^ basis
    return float(np.mean(r_alice != r_bob))


def decode_error_experiment(protocol_id: str, strategy: AttackStrategy,
                            positions: int, rng: np.random.Generator) -> float:
    """Monte-Carlo per-position decode-error rate under a channel attack.

    Positions are independent: uniform basis and message bits, the attack
    interposed on every transmission leg, honest measurement and decoding
    afterwards.
    """
    if protocol_id not in _PROTOCOLS:
        raise ConfigError(f"unknown protocol id {protocol_id!r}")
    if positions < 1:
        raise ConfigError("positions must be >= 1")
    if isinstance(strategy, EntanglingProbe):
        raise ConfigError("probe attacks act at the source, not the channel; "
                          "use probe_attack_report")
    if protocol_id == "p2" and isinstance(strategy, MaliciousTP):
        raise ConfigError("the pair-source scheme has no relay announcement to forge")
    if protocol_id == "p1":
        return _strategy_positions_error_p1(strategy, positions, rng)
    if protocol_id == "p2":
        return _strategy_positions_error_p2(strategy, positions, rng)
    return _strategy_positions_error_p3(strategy, positions, rng)


def _photon_branches(photon: np.ndarray, rows: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """(probability, resent state) per measurement branch of one photon."""
    amps = rows @ photon
    return [(float(a.real**2 + a.imag**2), rows[i]) for i, a in enumerate(amps)]


def _p3_leg_branches(encode_index: int, rows: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """Branches for one participant's round trip: the blank is intercepted
    on the way out, encoded, then intercepted again on the way back."""
    blank = np.array([1.0, 0.0])
    gate = CYCLE_MATS[encode_index]
    out = []
    for p_out, resent in _photon_branches(blank, rows):
        if p_out <= 0.0:
            continue
        for p_back, final in _photon_branches(gate @ resent, rows):
            if p_back > 0.0:
                out.append((p_out * p_back, final))
    return out


def intercept_decode_error_exact(basis_policy: str, protocol_id: str = "p1") -> float:
    """Closed-form decode-error probability of an intercept-resend policy.

    Enumerates every encoding case, every attacker angle the policy can
    draw, and every measurement branch on every attacked leg; no sampling.
    Models the same scenario as decode_error_experiment, including the
    outbound blank interception of the round-trip variant.
    """
    if basis_policy not in INTERCEPT_POLICIES:
        raise ConfigError(f"unknown basis policy {basis_policy!r}")
    if protocol_id not in _PROTOCOLS:
        raise ConfigError(f"unknown protocol id {protocol_id!r}")
    if basis_policy == "random":
        angle_weights = [(0.0, 0.5), (np.pi / 4, 0.5)]
    else:
        angle_weights = [(POLICY_ANGLES[basis_policy], 1.0)]

    total = 0.0
    if protocol_id == "p2":
        source = BELL_MATRIX[1]
        for k in (0, 1):
            for theta, weight in angle_weights:
                rows = _measurement_rows(np.array([theta]))[0]
                joint = np.kron(rows, rows)
                branch_p = (joint @ source) ** 2
                for branch in range(4):
                    if branch_p[branch] <= 0.0:
                        continue
                    state = joint[branch]
                    if k:
                        state = PAIR_HADAMARD @ state
                    pz = state.real**2 + state.imag**2
                    err = sum(pz[zz] for zz in range(4)
                              if ((zz >> 1) ^ (zz & 1)) != k)
                    total += 0.5 * weight * branch_p[branch] * err
        return float(total)

    for k, a, b in _CASES_8:
        for theta, weight in angle_weights:
            rows = _measurement_rows(np.array([theta]))[0]
            if protocol_id == "p1":
                branches_a = _photon_branches(PHOTON_AMPS[k, a], rows)
                branches_b = _photon_branches(PHOTON_AMPS[k, b], rows)
            else:
                branches_a = _p3_leg_branches(k + 2 * a, rows)
                branches_b = _p3_leg_branches(k + 2 * b, rows)
            for p_a, resent_a in branches_a:
                for p_b, resent_b in branches_b:
                    if p_a * p_b <= 0.0:
                        continue
                    bell_p = np.abs(BELL_MATRIX @ np.kron(resent_a, resent_b)) ** 2
                    err = sum(bell_p[x] for x in range(4)
                              if DECODE_BITS[k, x] != (a ^ b))
                    total += weight * p_a * p_b * err / len(_CASES_8)
    return float(total)


def guess_accuracy_experiment(basis_policy: str | float, trials: int,
                              rng: np.random.Generator) -> float:
    """Fraction of correct value guesses against uniform draws from the
    four encoding states, measuring at the policy's angle."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if isinstance(basis_policy, str):
        if basis_policy not in POLICY_ANGLES:
            raise ConfigError(f"policy {basis_policy!r} has no fixed angle")
        theta = POLICY_ANGLES[basis_policy]
    else:
        theta = float(basis_policy)
    basis = rng.integers(0, 2, trials)
    bits = rng.integers(0, 2, trials)
    photons = PHOTON_AMPS[basis, bits]
    _, outcomes = _intercept_photons(photons, np.full(trials, theta), rng)
    return float(np.mean(outcomes == bits))


# ---------------------------------------------------------------------------
# Strategy parsing

def parse_strategy(text: str, protocol_id: str,
                   rng: np.random.Generator | None = None) -> AttackStrategy:
    """Build a strategy from its textual form.

    Forms: "passive", "intercept:<z|x|random|breidbart>",
    "malicious_tp:<truthful|uniform|flip|constant>", "probe" or
    "probe:<dim>". Probe construction draws from rng.
    """
    parts = text.strip().split(":")
    head = parts[0]
    if head == "passive" and len(parts) == 1:
        return Passive()
    if head == "intercept":
        if len(parts) != 2:
            raise ConfigError("intercept needs a basis policy, e.g. intercept:z")
        return InterceptResend(parts[1])
    if head == "malicious_tp":
        policy = parts[1] if len(parts) == 2 else "uniform"
        if len(parts) > 2:
            raise ConfigError(f"bad strategy spec {text!r}")
        return MaliciousTP(policy)
    if head == "probe":
        if len(parts) > 2:
            raise ConfigError(f"bad strategy spec {text!r}")
        dim = None
        if len(parts) == 2:
            try:
                dim = int(parts[1])
            except ValueError as exc:
                raise ConfigError(f"bad probe dimension {parts[1]!r}") from exc
        if rng is None:
            raise ConfigError("probe strategies need a random stream to sample from")
        return EntanglingProbe(construct_constrained_probe(protocol_id, rng, dim))
    raise ConfigError(f"unknown adversary spec {text!r}")
