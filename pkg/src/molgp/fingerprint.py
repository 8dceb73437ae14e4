"""Extended-connectivity (ECFP-style) circular fingerprints.

Each atom starts from a hash of six local invariants.  At every iteration the
identifier is rehashed together with the sorted ``(bond code, neighbor id)``
list, so after ``r`` rounds it describes the radius-``r`` environment.
Environments that cover an atom set already seen (at the same or an earlier
iteration) are dropped, and the survivors are folded into ``n_bits`` by
modular reduction.

All hashing is 64-bit FNV-1a over a fixed little-endian encoding, so the
bits are reproducible across runs and platforms.  They are not meant to
match any other toolkit's ECFP bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .smiles import Molecule, implicit_hydrogens

__all__ = [
    "EmptyMolecule",
    "Fingerprint",
    "FingerprintConfig",
    "atom_invariant",
    "environment_identifiers",
    "fingerprint",
    "fingerprint_batch",
    "fnv1a_64",
    "read_hex_file",
    "ring_atoms",
    "write_hex_file",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EmptyMolecule(ValueError):
    def __init__(self, message: str = "molecule has no atoms", index: int | None = None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _encode(values: Iterable[int]) -> bytes:
    # identifiers are unsigned 64-bit, small fields signed; both fit "<Q" after masking
    return b"".join(struct.pack("<Q", v & _MASK64) for v in values)


@dataclass(frozen=True)
class FingerprintConfig:
    n_bits: int = 2048
    radius: int = 3

    def __post_init__(self):
        if self.n_bits < 64 or self.n_bits & (self.n_bits - 1):
            raise ValueError(f"n_bits must be a power of two >= 64, got {self.n_bits}")
        if self.radius < 0:
            raise ValueError(f"radius must be non-negative, got {self.radius}")


class Fingerprint:
    """Binary fingerprint stored as a ``uint8`` 0/1 vector."""

    __slots__ = ("bits", "popcount")

    def __init__(self, bits):
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("fingerprint bits must be one-dimensional")
        bits = (bits != 0).astype(np.uint8)
        bits.flags.writeable = False
        self.bits = bits
        self.popcount = int(bits.sum())

    @classmethod
    def from_indices(cls, indices: Iterable[int], n_bits: int) -> "Fingerprint":
        bits = np.zeros(n_bits, dtype=np.uint8)
        bits[list(indices)] = 1
        return cls(bits)

    @classmethod
    def from_hex(cls, text: str, n_bits: int) -> "Fingerprint":
        """Decode a hex string; bit ``i`` is bit ``i`` of the big-endian integer."""
        text = text.strip()
        if len(text) != n_bits // 4:
            raise ValueError(f"expected {n_bits // 4} hex characters, got {len(text)}")
        value = int(text, 16)
        raw = np.frombuffer(value.to_bytes(n_bits // 8, "little"), dtype=np.uint8)
        return cls(np.unpackbits(raw, bitorder="little"))

    def to_hex(self) -> str:
        packed = np.packbits(self.bits, bitorder="little").tobytes()
        return f"{int.from_bytes(packed, 'little'):0{self.n_bits // 4}x}"

    @property
    def n_bits(self) -> int:
        return self.bits.shape[0]

    def on_bits(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    def __eq__(self, other):
        if not isinstance(other, Fingerprint):
            return NotImplemented
        return self.n_bits == other.n_bits and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash(self.bits.tobytes())

    def __repr__(self):
        return f"Fingerprint(n_bits={self.n_bits}, popcount={self.popcount})"


def ring_atoms(m: Molecule) -> list[bool]:
    """Flag atoms lying on a cycle (atoms incident to a non-bridge bond)."""
    n = len(m.atoms)
    adj = m.adjacency
    disc = [-1] * n
    low = [0] * n
    bridges: set[frozenset[int]] = set()
    counter = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = counter
        counter += 1
        # iterative DFS; frames are (node, parent, neighbor iterator position)
        stack = [(root, -1, 0)]
        while stack:
            node, parent, k = stack.pop()
            if k < len(adj[node]):
                stack.append((node, parent, k + 1))
                nb = adj[node][k][0]
                if disc[nb] < 0:
                    disc[nb] = low[nb] = counter
                    counter += 1
                    stack.append((nb, node, 0))
                elif nb != parent:
                    low[node] = min(low[node], disc[nb])
            elif parent >= 0:
                low[parent] = min(low[parent], low[node])
                if low[node] > disc[parent]:
                    bridges.add(frozenset((node, parent)))
    in_ring = [False] * n
    for b in m.bonds:
        if frozenset(b.endpoints) not in bridges:
            in_ring[b.begin] = in_ring[b.end] = True
    return in_ring


def _invariant_tuple(m: Molecule, i: int, in_ring: bool) -> tuple[int, ...]:
    atom = m.atoms[i]
    # explicit H atoms written as [H] neighbors count toward the H total
    h_neighbors = sum(1 for j, _ in m.adjacency[i] if m.atoms[j].element == "H")
    total_h = implicit_hydrogens(m, i) + h_neighbors
    return (atom.atomic_number, atom.degree, total_h, atom.formal_charge,
            int(atom.aromatic), int(in_ring))


def atom_invariant(m: Molecule, atom_index: int) -> int:
    """64-bit hash of (atomic number, degree, H count, charge, aromatic, in-ring)."""
    flags = ring_atoms(m)
    return fnv1a_64(_encode(_invariant_tuple(m, atom_index, flags[atom_index])))


def environment_identifiers(m: Molecule, radius: int) -> list[int]:
    """Unfolded identifiers surviving duplicate removal, in generation order.

    Iteration 0 contributes one identifier per atom.  Later iterations keep an
    identifier only if its covered atom set is new; within one iteration the
    numerically smallest identifier wins a tie on the atom set.
    """
    if not m.atoms:
        raise EmptyMolecule()
    n = len(m.atoms)
    adj = m.adjacency
    flags = ring_atoms(m)
    ids = [fnv1a_64(_encode(_invariant_tuple(m, i, flags[i]))) for i in range(n)]
    covered = [frozenset((i,)) for i in range(n)]
    seen_sets: set[frozenset[int]] = set(covered)
    out = list(ids)
    for r in range(1, radius + 1):
        new_ids = []
        new_cov = []
        for i in range(n):
            pairs = sorted((int(order), ids[j]) for j, order in adj[i])
            payload = [r, ids[i]]
            for code, nid in pairs:
                payload.append(code)
                payload.append(nid)
            new_ids.append(fnv1a_64(_encode(payload)))
            cov = covered[i].union(*(covered[j] for j, _ in adj[i]))
            new_cov.append(cov)
        best: dict[frozenset[int], int] = {}
        for ident, cov in zip(new_ids, new_cov):
            if cov in seen_sets:
                continue
            if cov not in best or ident < best[cov]:
                best[cov] = ident
        out.extend(sorted(best.values()))
        seen_sets.update(best)
        ids, covered = new_ids, new_cov
    return out


def fingerprint(m: Molecule, cfg: FingerprintConfig = FingerprintConfig()) -> Fingerprint:
    if not m.atoms:
        raise EmptyMolecule()
    mask = cfg.n_bits - 1
    bits = np.zeros(cfg.n_bits, dtype=np.uint8)
    for ident in environment_identifiers(m, cfg.radius):
        bits[ident & mask] = 1
    return Fingerprint(bits)


def fingerprint_batch(ms: Sequence[Molecule],
                      cfg: FingerprintConfig = FingerprintConfig()) -> list[Fingerprint]:
    out = []
    for idx, m in enumerate(ms):
        if not m.atoms:
            raise EmptyMolecule(index=idx)
        out.append(fingerprint(m, cfg))
    return out


def read_hex_file(path, n_bits: int) -> list[Fingerprint]:
    """One hex-encoded fingerprint per non-blank line."""
    with open(path, encoding="ascii") as fh:
        return [Fingerprint.from_hex(line, n_bits) for line in fh if line.strip()]


def write_hex_file(path, fps: Sequence[Fingerprint]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for fp in fps:
            fh.write(fp.to_hex() + "\n")
