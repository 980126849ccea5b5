"""Session engines for the three relay-mediated key agreement schemes.

Each engine runs one authenticated session end to end: quantum transport
with an attack strategy interposed on every channel, relay announcement,
decode, mutual verification against the universal-hash digests, and
privacy amplification of the agreed secret. Runs are deterministic given
the config, store, strategy, and random stream.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .adversary import EntanglingProbe, MaliciousTP, Passive
from .encoding import CYCLE_MATS, DECODE_BITS, PAIR_HADAMARD, PAIR_PRODUCT, PHOTON_AMPS, RETURN_PAIR
from .errors import ConfigError, MalformedPayloadError
from .keymat import (
    LENGTH_TAG_BITS,
    BitString,
    HashSpec,
    SessionKey,
    expected_key_lengths,
    hash_tagged,
    pa_seed_length,
    privacy_amplify,
    universal_hash,
)
from .metrics import PROTOCOL_IDS, discard_counts
from .qstate import BELL_MATRIX, BellOutcome, batch_bell_probabilities, batch_sample, batch_tensor

ALICE = "alice"
BOB = "bob"
TP = "tp"

ABORT_HASH_MISMATCH = "hash-mismatch"
ABORT_MALFORMED = "malformed"


class MessageKind(str, Enum):
    QUBIT_BATCH = "qubit-batch"
    BELL_RESULTS = "bell-results"
    HASH_DIGEST = "hash-digest"
    ABORT_NOTICE = "abort-notice"


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: str
    receiver: str
    length: int

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "from": self.sender,
                "to": self.receiver, "length": self.length}


@dataclass(frozen=True)
class ProtocolConfig:
    """Session parameters: secret length n, digest length m, amplified key
    length nprime, backup pool length l, and the public digest hash."""

    protocol: str
    n: int
    m: int
    nprime: int
    l: int
    hash_spec: HashSpec

    @classmethod
    def create(cls, protocol: str, n: int, m: int, nprime: int | None = None,
               l: int | None = None, rng=None) -> "ProtocolConfig":
        if protocol not in PROTOCOL_IDS:
            raise ConfigError(f"unknown protocol id {protocol!r}")
        if n < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        if m < 0:
            raise ConfigError(f"m must be >= 0, got {m}")
        if nprime is None:
            nprime = n // 2
        if not 1 <= nprime <= n:
            raise ConfigError(f"nprime must be in 1..{n}, got {nprime}")
        if l is None:
            l = 2 * m
        if l < 0:
            raise ConfigError(f"l must be >= 0, got {l}")
        rng = np.random.default_rng(rng)
        # Variable-length digest inputs get a length tag before hashing, so
        # the pair-source scheme needs the extra capacity.
        capacity = n + LENGTH_TAG_BITS if protocol == "p2" else n
        spec = HashSpec.generate(capacity, m, rng)
        return cls(protocol, n, m, nprime, l, spec)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "n": self.n,
            "m": self.m,
            "nprime": self.nprime,
            "l": self.l,
            "hash_seed": self.hash_spec.seed.to_hex(),
        }


@dataclass(frozen=True)
class Transcript:
    """Everything observable about one session, serializable to JSON lines:
    one record per position, then a single summary record."""

    protocol: str
    positions: dict
    summary: dict

    def position_count(self) -> int:
        return 0 if not self.positions else len(next(iter(self.positions.values())))

    def records(self):
        names = sorted(self.positions)
        for i in range(self.position_count()):
            rec = {"type": "position", "pos": i}
            for name in names:
                rec[name] = int(self.positions[name][i])
            yield rec
        yield {"type": "summary", **self.summary}

    def to_jsonl(self) -> str:
        lines = (json.dumps(rec, sort_keys=True, separators=(",", ":"))
                 for rec in self.records())
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunResult:
    config: ProtocolConfig
    adversary: str
    aborted: bool
    abort_reason: str | None
    alice_pass: bool
    bob_pass: bool
    alice_key: SessionKey | None
    bob_key: SessionKey | None
    transcript: Transcript

    @property
    def keys_match(self) -> bool:
        return (self.alice_key is not None and self.bob_key is not None
                and self.alice_key.bits == self.bob_key.bits)

    def to_dict(self) -> dict:
        return dict(self.transcript.summary)


# ---------------------------------------------------------------------------
# Classical building blocks

def build_frame(secret: BitString, spec: HashSpec) -> BitString:
    """Secret concatenated with its public-hash digest."""
    return secret + universal_hash(spec, secret)


def frame_check(decoded: BitString, n: int, spec: HashSpec) -> bool:
    """Does a decoded frame carry a consistent digest?

    Both participants' verifications reduce to this one condition on the
    shared decode (the hash is linear), which is why either both abort or
    neither does.
    """
    return universal_hash(spec, decoded[:n]) == decoded[n:]


def recover_peer(decoded: BitString, own_secret: BitString, own_digest: BitString,
                 spec: HashSpec) -> tuple[BitString, bool]:
    """One participant's view: strip own bits off the decoded frame, then
    verify the peer's digest. Returns (peer_secret, digest_ok)."""
    n = len(own_secret)
    peer_secret = decoded[:n] ^ own_secret
    peer_digest = decoded[n:] ^ own_digest
    return peer_secret, universal_hash(spec, peer_secret) == peer_digest


def split_by_key(bits: BitString, split_key: BitString) -> tuple[BitString, BitString]:
    """Route bits into the (key=0, key=1) halves, order preserved."""
    if len(bits) != len(split_key):
        raise ConfigError("split key length must match the bit string")
    mask = split_key.bits.astype(bool)
    return BitString(bits.bits[~mask]), BitString(bits.bits[mask])


def decode_announcement(basis_bits: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
    """Per-position message bits from announced Bell outcome indices."""
    basis = np.asarray(basis_bits)
    out = np.asarray(outcomes)
    if basis.shape != out.shape:
        raise ConfigError("basis and outcome arrays must align")
    if out.size and (out.min() < 0 or out.max() > 3):
        raise ConfigError("outcome indices must be in 0..3")
    return DECODE_BITS[basis, out]


# ---------------------------------------------------------------------------
# Shared engine pieces

def _validate_store(config: ProtocolConfig, store) -> None:
    want = expected_key_lengths(config.protocol, config.n, config.m)
    if len(store.key("basis")) != want["basis"]:
        raise ConfigError(
            f"basis key length {len(store.key('basis'))} != required {want['basis']}")
    if want["split"] is None:
        if store.split_key is not None:
            raise ConfigError(f"{config.protocol} does not use a split key")
    else:
        if store.split_key is None:
            raise ConfigError(f"{config.protocol} requires a split key")
        if len(store.key("split")) != want["split"]:
            raise ConfigError(
                f"split key length {len(store.key('split'))} != required {want['split']}")


def _validated_announcement(raw, length: int) -> np.ndarray:
    arr = np.asarray(raw)
    if arr.shape != (length,):
        raise MalformedPayloadError(
            f"announcement must list {length} outcomes, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise MalformedPayloadError("announcement entries must be integers")
    if arr.size and (arr.min() < 0 or arr.max() > 3):
        raise MalformedPayloadError("announcement entries must be Bell outcome indices 0..3")
    return arr.astype(np.uint8)


def _replenish(config: ProtocolConfig, store, aborted: bool) -> dict:
    """Post-run key bookkeeping.

    A detected attack burns part of the pre-shared keys: the leaked prefix
    is discarded and topped up from backup. A clean run reuses the keys in
    full, so nothing moves.
    """
    counts = discard_counts(config.protocol, config.n, config.m)
    applied = {}
    for kind in ("basis", "split"):
        count = counts[kind]
        if count is None:
            applied[kind] = None
        elif not aborted:
            applied[kind] = 0
        else:
            store.replenish(kind, count)
            applied[kind] = count
    return applied


def _summary(config, adversary, store, messages, positions_count, *, aborted,
             reason, alice_pass, bob_pass, alice_key, bob_key, pa_seed,
             replenished, extra=None) -> dict:
    out = {
        "config": config.to_dict(),
        "adversary": adversary.name,
        "positions": positions_count,
        "aborted": aborted,
        "abort_reason": reason,
        "alice_pass": alice_pass,
        "bob_pass": bob_pass,
        "alice_key": None if alice_key is None else alice_key.bits.to_hex(),
        "bob_key": None if bob_key is None else bob_key.bits.to_hex(),
        "pa_seed": None if pa_seed is None else pa_seed.to_hex(),
        "store_digest": store.digest(),
        "replenished": replenished,
        "messages": [msg.to_dict() for msg in messages],
    }
    if extra:
        out.update(extra)
    return out


def run(config: ProtocolConfig, store, adversary=None, rng=None) -> RunResult:
    """Execute one session against a mutated copy of nothing: the store
    passed in is consumed (replenished from backup) whether or not the
    session aborts, so callers wanting pristine state should pass a copy.

    The random stream is drawn in a fixed order (participant secrets,
    channel tampering in transmission order, measurement sampling,
    announcement forgery, amplification seed); equal seeds give
    byte-identical transcripts.
    """
    adversary = Passive() if adversary is None else adversary
    rng = np.random.default_rng(rng)
    if config.protocol == "p2" and isinstance(adversary, MaliciousTP):
        raise ConfigError("the pair-source scheme has no relay announcement to forge")
    if isinstance(adversary, EntanglingProbe) and adversary.probe.protocol != config.protocol:
        raise ConfigError(
            f"probe was built for {adversary.probe.protocol}, run is {config.protocol}")
    _validate_store(config, store)
    if config.protocol == "p2":
        return _run_pair_source(config, store, adversary, rng)
    return _run_relay_decode(config, store, adversary, rng)


# ---------------------------------------------------------------------------
# Relay-decode engines (two-way photons, and the round-trip variant)

def _relay_quantum_phase(config, adversary, ctx, basis, bits_a, bits_b, rng):
    """Outcome indices the relay obtains, with the strategy interposed."""
    if isinstance(adversary, EntanglingProbe):
        return batch_sample(adversary.table.probs[basis, bits_a, bits_b], rng)
    if config.protocol == "p1":
        ph_a = adversary.tamper_photons(PHOTON_AMPS[basis, bits_a], "alice-tp", ctx, rng)
        ph_b = adversary.tamper_photons(PHOTON_AMPS[basis, bits_b], "bob-tp", ctx, rng)
    else:
        total = basis.shape[0]
        blanks = np.zeros((total, 2), dtype=np.complex128)
        blanks[:, 0] = 1.0
        out_a = adversary.tamper_photons(blanks, "tp-alice", ctx, rng)
        out_b = adversary.tamper_photons(blanks.copy(), "tp-bob", ctx, rng)
        mats = CYCLE_MATS.astype(np.complex128)
        enc_a = np.einsum("nij,nj->ni", mats[basis + 2 * bits_a], out_a)
        enc_b = np.einsum("nij,nj->ni", mats[basis + 2 * bits_b], out_b)
        ph_a = adversary.tamper_photons(enc_a, "alice-tp", ctx, rng)
        ph_b = adversary.tamper_photons(enc_b, "bob-tp", ctx, rng)
    return batch_sample(batch_bell_probabilities(batch_tensor(ph_a, ph_b)), rng)


def _run_relay_decode(config, store, adversary, rng) -> RunResult:
    n, m = config.n, config.m
    total = n + m
    basis = store.key("basis").bits
    secret_a = BitString.random(n, rng)
    secret_b = BitString.random(n, rng)
    digest_a = universal_hash(config.hash_spec, secret_a)
    digest_b = universal_hash(config.hash_spec, secret_b)
    frame_a = secret_a + digest_a
    frame_b = secret_b + digest_b

    ctx = adversary.begin_run(total, rng)
    outcomes = _relay_quantum_phase(config, adversary, ctx, basis,
                                    frame_a.bits, frame_b.bits, rng)
    messages = []
    if config.protocol == "p1":
        messages += [Message(MessageKind.QUBIT_BATCH, ALICE, TP, total),
                     Message(MessageKind.QUBIT_BATCH, BOB, TP, total)]
    else:
        messages += [Message(MessageKind.QUBIT_BATCH, TP, ALICE, total),
                     Message(MessageKind.QUBIT_BATCH, TP, BOB, total),
                     Message(MessageKind.QUBIT_BATCH, ALICE, TP, total),
                     Message(MessageKind.QUBIT_BATCH, BOB, TP, total)]
    messages += [Message(MessageKind.BELL_RESULTS, TP, ALICE, total),
                 Message(MessageKind.BELL_RESULTS, TP, BOB, total)]

    positions = {
        "basis": basis,
        "alice_bit": frame_a.bits,
        "bob_bit": frame_b.bits,
        "outcome": outcomes,
    }

    try:
        announced = _validated_announcement(
            adversary.forge_announcement(outcomes, ctx, rng), total)
    except MalformedPayloadError:
        messages += [Message(MessageKind.ABORT_NOTICE, ALICE, BOB, 1),
                     Message(MessageKind.ABORT_NOTICE, BOB, ALICE, 1)]
        replenished = _replenish(config, store, aborted=True)
        summary = _summary(config, adversary, store, messages, total,
                           aborted=True, reason=ABORT_MALFORMED,
                           alice_pass=False, bob_pass=False, alice_key=None,
                           bob_key=None, pa_seed=None, replenished=replenished)
        transcript = Transcript(config.protocol, positions, summary)
        return RunResult(config, adversary.name, True, ABORT_MALFORMED,
                         False, False, None, None, transcript)

    decoded = BitString(DECODE_BITS[basis, announced])
    positions = {**positions, "announced": announced, "decoded": decoded.bits}

    peer_of_alice, alice_pass = recover_peer(decoded, secret_a, digest_a, config.hash_spec)
    peer_of_bob, bob_pass = recover_peer(decoded, secret_b, digest_b, config.hash_spec)

    alice_key = bob_key = pa_seed = None
    reason = None
    if alice_pass and bob_pass:
        # Amplify Alice's secret; Bob holds it as peer_of_bob.
        pa_seed = BitString.random(pa_seed_length(n, config.nprime), rng)
        alice_key = privacy_amplify(secret_a, config.nprime, pa_seed)
        bob_key = privacy_amplify(peer_of_bob, config.nprime, pa_seed)
    else:
        reason = ABORT_HASH_MISMATCH
        if not alice_pass:
            messages.append(Message(MessageKind.ABORT_NOTICE, ALICE, BOB, 1))
        if not bob_pass:
            messages.append(Message(MessageKind.ABORT_NOTICE, BOB, ALICE, 1))

    aborted = reason is not None
    replenished = _replenish(config, store, aborted)
    summary = _summary(config, adversary, store, messages, total,
                       aborted=aborted, reason=reason, alice_pass=alice_pass,
                       bob_pass=bob_pass, alice_key=alice_key, bob_key=bob_key,
                       pa_seed=pa_seed, replenished=replenished)
    transcript = Transcript(config.protocol, positions, summary)
    return RunResult(config, adversary.name, aborted, reason, alice_pass,
                     bob_pass, alice_key, bob_key, transcript)


# ---------------------------------------------------------------------------
# Pair-source engine

def _run_pair_source(config, store, adversary, rng) -> RunResult:
    n = config.n
    k1 = store.key("basis").bits
    k2 = store.key("split").bits

    ctx = adversary.begin_run(n, rng)
    if isinstance(adversary, EntanglingProbe):
        zz = batch_sample(adversary.table.probs[k1], rng)
    else:
        pairs = np.tile(BELL_MATRIX[1].astype(np.complex128), (n, 1))
        pairs = adversary.tamper_pairs(pairs, ctx, rng)
        rotated = np.where((k1 == 1)[:, None],
                           pairs @ PAIR_HADAMARD.T.astype(np.complex128), pairs)
        zz = batch_sample(rotated.real**2 + rotated.imag**2, rng)
    z_alice = (zz >> 1).astype(np.uint8)
    z_bob = (zz & 1).astype(np.uint8)

    # Alice's outcomes are the raw secret; the basis key tells Bob which
    # positions came out anticorrelated.
    r_alice = BitString(z_alice)
    r_bob = BitString(z_bob ^ k1)

    alice0, alice1 = split_by_key(r_alice, store.key("split"))
    bob0, bob1 = split_by_key(r_bob, store.key("split"))

    sent_a = hash_tagged(config.hash_spec, alice0)
    sent_b = hash_tagged(config.hash_spec, bob1)
    bob_pass = hash_tagged(config.hash_spec, bob0) == sent_a
    alice_pass = hash_tagged(config.hash_spec, alice1) == sent_b

    messages = [Message(MessageKind.QUBIT_BATCH, TP, ALICE, n),
                Message(MessageKind.QUBIT_BATCH, TP, BOB, n),
                Message(MessageKind.HASH_DIGEST, ALICE, BOB, config.m),
                Message(MessageKind.HASH_DIGEST, BOB, ALICE, config.m)]

    alice_key = bob_key = pa_seed = None
    reason = None
    if alice_pass and bob_pass:
        pa_seed = BitString.random(pa_seed_length(n, config.nprime), rng)
        alice_key = privacy_amplify(r_alice, config.nprime, pa_seed)
        bob_key = privacy_amplify(r_bob, config.nprime, pa_seed)
    else:
        reason = ABORT_HASH_MISMATCH
        if not alice_pass:
            messages.append(Message(MessageKind.ABORT_NOTICE, ALICE, BOB, 1))
        if not bob_pass:
            messages.append(Message(MessageKind.ABORT_NOTICE, BOB, ALICE, 1))

    positions = {"basis": k1, "split": k2, "z_alice": z_alice, "z_bob": z_bob}
    aborted = reason is not None
    replenished = _replenish(config, store, aborted)
    summary = _summary(config, adversary, store, messages, n,
                       aborted=aborted, reason=reason, alice_pass=alice_pass,
                       bob_pass=bob_pass, alice_key=alice_key, bob_key=bob_key,
                       pa_seed=pa_seed, replenished=replenished,
                       extra={"digest_alice": sent_a.to_hex(),
                              "digest_bob": sent_b.to_hex()})
    transcript = Transcript(config.protocol, positions, summary)
    return RunResult(config, adversary.name, aborted, reason, alice_pass,
                     bob_pass, alice_key, bob_key, transcript)


# ---------------------------------------------------------------------------
# Batch helpers

def simulate_runs(config: ProtocolConfig, store, adversary, trials: int,
                  base_seed) -> list[RunResult]:
    """Independent sessions from per-trial substreams of one seed.

    base_seed is SeedSequence entropy (an int, or a tuple of ints). Every
    trial starts from its own copy of the store, so results do not depend
    on how trials are batched or parallelized.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    results = []
    for trial in range(trials):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=base_seed, spawn_key=(trial,)))
        results.append(run(config, store.copy(), adversary, rng))
    return results


def aggregate_results(results) -> dict:
    trials = len(results)
    aborts = sum(1 for r in results if r.aborted)
    completed = trials - aborts
    matches = sum(1 for r in results if not r.aborted and r.keys_match)
    reasons: dict[str, int] = {}
    for r in results:
        if r.abort_reason is not None:
            reasons[r.abort_reason] = reasons.get(r.abort_reason, 0) + 1
    return {
        "trials": trials,
        "completed": completed,
        "aborts": aborts,
        "success_rate": completed / trials,
        "abort_rate": aborts / trials,
        "key_agreement_rate": matches / completed if completed else None,
        "abort_reasons": reasons,
    }


# ---------------------------------------------------------------------------
# Code-table verification

def _support_row(probs: np.ndarray) -> dict:
    return {BellOutcome(x).label: float(probs[x]) for x in range(4)}


def verify_tables(decode_bits: np.ndarray | None = None) -> dict:
    """Check every published code-table row against simulated states.

    Builds each encoding case from the gate definitions, computes outcome
    probabilities exactly, and confirms the decode table maps every
    reachable outcome to the intended message bit with zero forbidden
    mass. Rows: 8 for the two-way scheme, 4 for the pair-source
    correlations, 16 for the round-trip scheme. An alternative decode
    table can be passed in to confirm the check actually bites.
    """
    if decode_bits is None:
        table = DECODE_BITS
    else:
        table = np.asarray(decode_bits)
        if table.shape != (2, 4):
            raise ConfigError("decode table must have shape (2, 4)")
    rows = []

    for k in (0, 1):
        for a in (0, 1):
            for b in (0, 1):
                amps = BELL_MATRIX @ PAIR_PRODUCT[k, a, b]
                probs = amps.real**2 + amps.imag**2
                bad_mass = float(sum(probs[x] for x in range(4)
                                     if table[k, x] != (a ^ b)))
                rows.append({
                    "table": "two-way-decode",
                    "case": f"basis={k} a={a} b={b}",
                    "ok": bool(bad_mass == 0.0 and abs(probs.sum() - 1.0) < 1e-12),
                    "support": _support_row(probs),
                })

    # Forbidden outcomes must carry exactly zero mass (the amplitudes cancel
    # in float arithmetic, not just approximately). Within the support, the
    # two branches come from identical expressions, so their probabilities
    # are equal floats; 0.5 itself is only representable up to rounding.
    source = BELL_MATRIX[1].astype(np.complex128)
    for k in (0, 1):
        state = PAIR_HADAMARD @ source if k else source
        probs = state.real**2 + state.imag**2
        allowed = (0, 3) if k == 0 else (1, 2)
        others = [x for x in range(4) if x not in allowed]
        for zz in allowed:
            ok = (abs(probs[zz] - 0.5) < 1e-12
                  and probs[allowed[0]] == probs[allowed[1]]
                  and all(probs[x] == 0.0 for x in others)
                  and ((zz >> 1) ^ (zz & 1)) == k)
            rows.append({
                "table": "pair-correlation",
                "case": f"basis={k} outcome={zz >> 1}{zz & 1}",
                "ok": bool(ok),
                "support": {format(x, "02b"): float(probs[x]) for x in range(4)},
            })

    for k in (0, 1):
        for ra in (0, 1):
            for rb in (0, 1):
                amps = BELL_MATRIX @ RETURN_PAIR[k, ra, rb]
                probs = amps.real**2 + amps.imag**2
                reachable = [x for x in range(4) if probs[x] > 0.0]
                bad_mass = float(sum(probs[x] for x in range(4)
                                     if table[k, x] != (ra ^ rb)))
                equal_support = len(reachable) == 2 and \
                    probs[reachable[0]] == probs[reachable[-1]]
                for x in reachable:
                    ok = (abs(probs[x] - 0.5) < 1e-12 and equal_support
                          and bad_mass == 0.0 and table[k, x] == (ra ^ rb))
                    rows.append({
                        "table": "round-trip-decode",
                        "case": f"basis={k} ra={ra} rb={rb} outcome={BellOutcome(x).label}",
                        "ok": bool(ok),
                        "support": _support_row(probs),
                    })

    return {"rows": rows, "total": len(rows), "all_ok": all(r["ok"] for r in rows)}
