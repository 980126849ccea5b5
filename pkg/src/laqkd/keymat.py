"""Bit strings, Toeplitz universal hashing, privacy amplification and the
pre-shared master-key store with its backup/replenish bookkeeping."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, KeyDepletedError

# Width of the length prefix used when hashing variable-length messages.
# Sized so any protocol-scale input length fits.
LENGTH_TAG_BITS = 16


class BitString:
    """Immutable sequence of bits backed by a uint8 array."""

    __slots__ = ("bits",)

    def __init__(self, bits: Iterable[int] | np.ndarray | str):
        if isinstance(bits, str):
            if not re.fullmatch(r"[01]*", bits):
                raise ValueError("bit literals may contain only 0 and 1")
            arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        else:
            arr = np.asarray(bits, dtype=np.uint8)
        if arr.ndim != 1:
            raise ValueError(f"bits must be one-dimensional, got shape {arr.shape}")
        if arr.size and int(arr.max(initial=0)) > 1:
            raise ValueError("bits must be 0 or 1")
        arr = arr.copy()
        arr.setflags(write=False)
        self.bits = arr

    @classmethod
    def zeros(cls, n: int) -> "BitString":
        return cls(np.zeros(n, dtype=np.uint8))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "BitString":
        return cls(rng.integers(0, 2, size=n, dtype=np.uint8))

    def __len__(self) -> int:
        return int(self.bits.size)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return BitString(self.bits[item])
        return int(self.bits[item])

    def __xor__(self, other: "BitString") -> "BitString":
        if len(self) != len(other):
            raise ValueError(f"length mismatch: {len(self)} vs {len(other)}")
        return BitString(np.bitwise_xor(self.bits, other.bits))

    def __add__(self, other: "BitString") -> "BitString":
        return BitString(np.concatenate([self.bits, other.bits]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitString):
            return NotImplemented
        return len(self) == len(other) and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((len(self), self.bits.tobytes()))

    def __repr__(self) -> str:
        shown = self.to01() if len(self) <= 32 else self.to01()[:29] + "..."
        return f"BitString({shown!r}, len={len(self)})"

    def to01(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def to_hex(self) -> str:
        """Hex encoding of the bits packed MSB-first; pads the tail with zeros."""
        if len(self) == 0:
            return ""
        return np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, length: int) -> "BitString":
        if length == 0:
            return cls.zeros(0)
        raw = bytes.fromhex(text)
        arr = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        if arr.size < length or int(arr[length:].max(initial=0)) > 0:
            raise ValueError("hex payload does not match the declared bit length")
        return cls(arr[:length])

    def hamming_weight(self) -> int:
        return int(self.bits.sum())

    def digest(self) -> str:
        """Stable fingerprint for transcripts; never reveals usable key bits."""
        h = hashlib.sha256()
        h.update(len(self).to_bytes(8, "big"))
        h.update(np.packbits(self.bits).tobytes() if len(self) else b"")
        return h.hexdigest()[:16]


def length_tagged(bits: BitString) -> BitString:
    """Prefix a fixed-width big-endian length field.

    Distinct-length inputs map to distinct tagged strings, so hashing the
    tagged form keeps digests collision-resistant across lengths (plain
    zero-padding alone would identify x with x||0).
    """
    n = len(bits)
    if n >= 1 << LENGTH_TAG_BITS:
        raise ValueError(f"input too long for a {LENGTH_TAG_BITS}-bit length tag")
    tag = BitString(np.array([(n >> k) & 1 for k in reversed(range(LENGTH_TAG_BITS))], dtype=np.uint8))
    return tag + bits


@dataclass(frozen=True)
class HashSpec:
    """Parameters of a Toeplitz universal hash.

    The seed defines a Toeplitz matrix T with T[i, j] = seed[capacity-1+i-j],
    which needs exactly input_capacity + out_len - 1 seed bits.
    """

    seed: BitString
    input_capacity: int
    out_len: int

    def __post_init__(self):
        if self.input_capacity < 1 or self.out_len < 1:
            raise ConfigError("input_capacity and out_len must be positive")
        want = self.input_capacity + self.out_len - 1
        if len(self.seed) != want:
            raise ConfigError(f"seed must have {want} bits, got {len(self.seed)}")

    @classmethod
    def generate(cls, input_capacity: int, out_len: int, rng: np.random.Generator) -> "HashSpec":
        return cls(BitString.random(input_capacity + out_len - 1, rng), input_capacity, out_len)


def universal_hash(spec: HashSpec, bits: BitString) -> BitString:
    """Toeplitz hash over GF(2). Zero-pads the input up to the capacity.

    Linear in the input for a fixed seed: h(a ^ b) = h(a) ^ h(b). Inputs
    longer than the capacity are rejected rather than truncated.
    """
    n = len(bits)
    if n > spec.input_capacity:
        raise ValueError(f"input has {n} bits, capacity is {spec.input_capacity}")
    if n == 0:
        return BitString.zeros(spec.out_len)
    # out[i] = sum_j seed[cap-1+i-j] * x[j] = conv(seed, x)[cap-1+i]  (mod 2)
    conv = np.convolve(spec.seed.bits.astype(np.int64), bits.bits.astype(np.int64))
    lo = spec.input_capacity - 1
    return BitString((conv[lo : lo + spec.out_len] & 1).astype(np.uint8))


def hash_tagged(spec: HashSpec, bits: BitString) -> BitString:
    """Hash of the length-tagged input; use for variable-length messages."""
    return universal_hash(spec, length_tagged(bits))


@dataclass(frozen=True)
class SessionKey:
    bits: BitString

    def digest(self) -> str:
        return self.bits.digest()


def pa_seed_length(raw_len: int, out_len: int) -> int:
    return raw_len + out_len - 1


def identity_pa_seed(length: int) -> BitString:
    """Seed whose Toeplitz matrix is the identity (out_len == raw length)."""
    arr = np.zeros(2 * length - 1, dtype=np.uint8)
    arr[length - 1] = 1
    return BitString(arr)


def privacy_amplify(raw: BitString, out_len: int, seed: BitString) -> SessionKey:
    """Compress a raw key with a seeded Toeplitz extractor.

    Deterministic in (raw, seed). out_len must not exceed the raw length;
    there is nothing to extract beyond the bits present.
    """
    if not 1 <= out_len <= len(raw):
        raise ValueError(f"out_len must be in 1..{len(raw)}, got {out_len}")
    spec = HashSpec(seed, input_capacity=len(raw), out_len=out_len)
    return SessionKey(universal_hash(spec, raw))


# ---------------------------------------------------------------------------
# Master-key store

_KEY_KINDS = ("basis", "split")


@dataclass
class MasterKeyStore:
    """Pre-shared keys plus backup pools and consumption cursors.

    basis_key selects per-position encodings; split_key (second and third
    key material, only some protocols use it) routes bits between the two
    digest halves. Replenishing discards a consumed prefix and appends
    fresh bits from the matching backup pool, never reusing backup bits.
    """

    basis_key: BitString
    basis_backup: BitString
    split_key: BitString | None = None
    split_backup: BitString | None = None
    basis_cursor: int = 0
    split_cursor: int = 0
    consumed: dict = field(default_factory=lambda: {"basis": 0, "split": 0})

    def key(self, kind: str) -> BitString:
        self._check_kind(kind)
        if kind == "basis":
            return self.basis_key
        if self.split_key is None:
            raise ConfigError("store has no split key")
        return self.split_key

    def backup_remaining(self, kind: str) -> int:
        self._check_kind(kind)
        if kind == "basis":
            return len(self.basis_backup) - self.basis_cursor
        if self.split_backup is None:
            return 0
        return len(self.split_backup) - self.split_cursor

    def replenish(self, kind: str, discard_count: int) -> None:
        """Drop the first discard_count bits and refill from the backup pool."""
        self._check_kind(kind)
        key = self.key(kind)
        if not 0 <= discard_count <= len(key):
            raise ValueError(f"discard_count must be in 0..{len(key)}, got {discard_count}")
        if discard_count == 0:
            return
        if self.backup_remaining(kind) < discard_count:
            raise KeyDepletedError(
                f"backup depleted: {kind} pool has {self.backup_remaining(kind)} bits, "
                f"need {discard_count}"
            )
        if kind == "basis":
            lo = self.basis_cursor
            fresh = self.basis_backup[lo : lo + discard_count]
            self.basis_key = self.basis_key[discard_count:] + fresh
            self.basis_cursor = lo + discard_count
        else:
            lo = self.split_cursor
            fresh = self.split_backup[lo : lo + discard_count]
            self.split_key = self.split_key[discard_count:] + fresh
            self.split_cursor = lo + discard_count
        self.consumed[kind] += discard_count

    def copy(self) -> "MasterKeyStore":
        return MasterKeyStore(
            basis_key=self.basis_key,
            basis_backup=self.basis_backup,
            split_key=self.split_key,
            split_backup=self.split_backup,
            basis_cursor=self.basis_cursor,
            split_cursor=self.split_cursor,
            consumed=dict(self.consumed),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.basis_key, self.basis_backup, self.split_key, self.split_backup):
            h.update(b"\x00" if part is None else part.digest().encode())
        h.update(f"{self.basis_cursor}:{self.split_cursor}".encode())
        return h.hexdigest()[:16]

    @staticmethod
    def _check_kind(kind: str) -> None:
        if kind not in _KEY_KINDS:
            raise ValueError(f"unknown key kind {kind!r}, expected one of {_KEY_KINDS}")


def expected_key_lengths(protocol_id: str, n: int, m: int) -> dict[str, int | None]:
    """Key-material lengths each protocol variant requires."""
    if protocol_id in ("p1", "p3"):
        return {"basis": n + m, "split": None}
    if protocol_id == "p2":
        return {"basis": n, "split": n}
    raise ConfigError(f"unknown protocol id {protocol_id!r}")


def generate_store(protocol_id: str, n: int, m: int, l: int, rng: np.random.Generator) -> MasterKeyStore:
    """Fresh pre-shared material with backup pools of l bits per key."""
    want = expected_key_lengths(protocol_id, n, m)
    basis = BitString.random(want["basis"], rng)
    basis_backup = BitString.random(l, rng)
    split = split_backup = None
    if want["split"] is not None:
        split = BitString.random(want["split"], rng)
        split_backup = BitString.random(l, rng)
    return MasterKeyStore(basis, basis_backup, split, split_backup)


# ---------------------------------------------------------------------------
# Key files: one header line, then one line per field as "<name> <bits> <hex>".

_HEADER_RE = re.compile(
    r"laqkd-keys v1 protocol=(?P<p>p[123]) n=(?P<n>\d+) m=(?P<m>\d+) l=(?P<l>\d+)"
)


def save_store(store: MasterKeyStore, path, protocol_id: str, n: int, m: int, l: int) -> None:
    lines = [f"laqkd-keys v1 protocol={protocol_id} n={n} m={m} l={l}"]

    def emit(name: str, bits: BitString | None):
        if bits is not None:
            lines.append(f"{name} {len(bits)} {bits.to_hex()}")

    emit("basis_key", store.basis_key)
    emit("basis_backup", store.basis_backup)
    emit("split_key", store.split_key)
    emit("split_backup", store.split_backup)
    lines.append(f"cursors {store.basis_cursor} {store.split_cursor}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_store(path, protocol_id: str, n: int, m: int) -> MasterKeyStore:
    """Load and validate a key file against the active protocol's lengths."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty key file")
    head = _HEADER_RE.fullmatch(lines[0])
    if head is None:
        raise ConfigError(f"{path}: bad key-file header")
    if head.group("p") != protocol_id:
        raise ConfigError(
            f"{path}: key file is for {head.group('p')}, run is configured for {protocol_id}"
        )
    fields: dict[str, BitString] = {}
    cursors = (0, 0)
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "cursors":
            cursors = (int(parts[1]), int(parts[2]))
            continue
        name, nbits, hexdata = parts[0], int(parts[1]), (parts[2] if len(parts) > 2 else "")
        fields[name] = BitString.from_hex(hexdata, nbits)
    want = expected_key_lengths(protocol_id, n, m)
    if "basis_key" not in fields or len(fields["basis_key"]) != want["basis"]:
        raise ConfigError(f"{path}: basis key must have {want['basis']} bits")
    if want["split"] is not None:
        if "split_key" not in fields or len(fields["split_key"]) != want["split"]:
            raise ConfigError(f"{path}: split key must have {want['split']} bits")
    elif "split_key" in fields:
        raise ConfigError(f"{path}: protocol {protocol_id} takes no split key")
    return MasterKeyStore(
        basis_key=fields["basis_key"],
        basis_backup=fields.get("basis_backup", BitString.zeros(0)),
        split_key=fields.get("split_key"),
        split_backup=fields.get("split_backup"),
        basis_cursor=cursors[0],
        split_cursor=cursors[1],
    )
