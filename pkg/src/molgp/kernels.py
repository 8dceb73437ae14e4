"""Tanimoto and gap-weighted subsequence string kernels.

The string kernel sums, over common subsequences ``u`` of length 1..n and
over every pair of occurrences of ``u``, the weight

    match_decay ** (2 |u|) * gap_decay ** (gaps in s + gaps in t)

where the gaps of an occurrence are the skipped positions between its first
and last matched index.  The dynamic program below evaluates it in
``O(n |s| |t|)`` per pair.

For hyperparameter search the per-length kernels are also available as
polynomials in ``gap_decay`` (:class:`SskExpansion`); since the
``match_decay`` dependence factors out of each length, any
``(match_decay, gap_decay)`` can then be evaluated without rerunning the DP.
"""

from __future__ import annotations

import itertools
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numba
import numpy as np
from numba import njit, prange

from .fingerprint import Fingerprint

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

__all__ = [
    "EmptySequence",
    "GramMatrix",
    "InputTooLarge",
    "KernelConfig",
    "KernelError",
    "RepresentationMismatch",
    "SskConfig",
    "SskExpansion",
    "TanimotoConfig",
    "WidthMismatch",
    "configure_threads",
    "cross_gram",
    "gram",
    "prior_variance",
    "ssk",
    "ssk_bruteforce",
    "tanimoto",
]


class KernelError(ValueError):
    pass


class WidthMismatch(KernelError):
    pass


class EmptySequence(KernelError):
    pass


class InputTooLarge(KernelError):
    pass


class RepresentationMismatch(KernelError):
    pass


@dataclass(frozen=True)
class TanimotoConfig:
    signal_variance: float = 1.0

    def __post_init__(self):
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")


@dataclass(frozen=True)
class SskConfig:
    """Subsequence string kernel hyperparameters.

    ``sum_lengths=False`` keeps only subsequences of exactly
    ``max_subsequence_length`` symbols.
    """

    match_decay: float = 0.5
    gap_decay: float = 0.5
    max_subsequence_length: int = 5
    signal_variance: float = 1.0
    normalize: bool = True
    sum_lengths: bool = True

    def __post_init__(self):
        if not 0 < self.match_decay <= 1:
            raise ValueError("match_decay must lie in (0, 1]")
        if not 0 < self.gap_decay <= 1:
            raise ValueError("gap_decay must lie in (0, 1]")
        if self.max_subsequence_length < 1:
            raise ValueError("max_subsequence_length must be >= 1")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")


KernelConfig = Union[TanimotoConfig, SskConfig]


@dataclass
class GramMatrix:
    values: np.ndarray
    jitter_applied: float = 0.0

    @property
    def shape(self):
        return self.values.shape


def configure_threads(n: int | None = None) -> int:
    """Cap numba worker threads; ``None`` reads ``MOLGP_THREADS`` (0 = all cores)."""
    if n is None:
        n = int(os.environ.get("MOLGP_THREADS", "0") or 0)
    limit = numba.config.NUMBA_NUM_THREADS
    n = limit if n <= 0 else min(n, limit)
    numba.set_num_threads(n)
    return n


# --------------------------------------------------------------------------
# Tanimoto
# --------------------------------------------------------------------------

def tanimoto(f: Fingerprint, g: Fingerprint, cfg: TanimotoConfig = TanimotoConfig()) -> float:
    if f.n_bits != g.n_bits:
        raise WidthMismatch(f"fingerprint widths differ: {f.n_bits} vs {g.n_bits}")
    inter = float(np.count_nonzero(f.bits & g.bits))
    denom = float(f.popcount) + float(g.popcount) - inter
    if denom == 0.0:
        warnings.warn("Tanimoto kernel evaluated on two empty fingerprints; returning 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return cfg.signal_variance * (inter / denom)


def _bit_matrix(fps: Sequence[Fingerprint]) -> np.ndarray:
    widths = {fp.n_bits for fp in fps}
    if len(widths) > 1:
        raise WidthMismatch(f"mixed fingerprint widths: {sorted(widths)}")
    return np.stack([fp.bits for fp in fps]).astype(np.float64)


def _tanimoto_block(a: np.ndarray, b: np.ndarray, cfg: TanimotoConfig) -> np.ndarray:
    inter = a @ b.T
    denom = a.sum(axis=1)[:, None] + b.sum(axis=1)[None, :] - inter
    empty = denom == 0
    if empty.any():
        warnings.warn("Tanimoto kernel evaluated on two empty fingerprints; returning 0",
                      RuntimeWarning, stacklevel=3)
        denom = np.where(empty, 1.0, denom)
    return cfg.signal_variance * (inter / denom)


# --------------------------------------------------------------------------
# subsequence string kernel: dynamic program
# --------------------------------------------------------------------------

@njit(cache=True)
def _ssk_lengths(s, t, lm, lg, n):
    """Unnormalized per-length kernels k_1..k_n for integer-coded s, t.

    Rows of the per-length K' tables are rolled over positions of ``s`` so
    memory is O(n |t|) and stays cache resident for long strings.
    """
    ls, lt = s.shape[0], t.shape[0]
    acc = np.zeros(n)
    prev = np.zeros((n, lt + 1))  # row p-1 of every length-i table
    cur = np.zeros((n, lt + 1))
    prev[0, :] = 1.0  # length-0 table: 1 everywhere
    cur[0, :] = 1.0
    lm2 = lm * lm
    for p in range(ls):
        sp = s[p]
        for i in range(n):
            row = prev[i]
            for q in range(lt):
                if sp == t[q]:
                    acc[i] += row[q]
        if p == ls - 1:
            break
        for i in range(1, n):
            old = prev[i]
            lower = prev[i - 1]
            new = cur[i]
            new[0] = 0.0
            run = 0.0
            for q in range(1, lt + 1):
                run = lg * run
                if sp == t[q - 1]:
                    run += lm2 * lower[q - 1]
                new[q] = lg * old[q] + run
        prev, cur = cur, prev
    return lm2 * acc


@njit(parallel=True, cache=True)
def _ssk_pairs(flat, offsets, pa, pb, lm, lg, n):
    m = pa.shape[0]
    out = np.zeros((m, n))
    for k in prange(m):
        a, b = pa[k], pb[k]
        out[k] = _ssk_lengths(flat[offsets[a]:offsets[a + 1]],
                              flat[offsets[b]:offsets[b + 1]], lm, lg, n)
    return out


def _combine(lengths: np.ndarray, cfg: SskConfig) -> np.ndarray:
    if cfg.sum_lengths:
        return lengths.sum(axis=-1)
    return lengths[..., -1]


class _Encoder:
    """Maps symbol sequences to a flat int array with per-sequence offsets."""

    def __init__(self, seqs: Sequence[Sequence[str]]):
        vocab: dict[str, int] = {}
        codes = []
        offsets = [0]
        for idx, seq in enumerate(seqs):
            if len(seq) == 0:
                raise EmptySequence(f"empty symbol sequence at index {idx}")
            codes.extend(vocab.setdefault(sym, len(vocab)) for sym in seq)
            offsets.append(len(codes))
        self.flat = np.asarray(codes, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.seqs = [tuple(s) for s in seqs]


def _canonical(pa: np.ndarray, pb: np.ndarray, seqs) -> tuple[np.ndarray, np.ndarray]:
    # order every pair the same way so k(x, y) and k(y, x) share one float path
    swap = np.fromiter((seqs[a] > seqs[b] for a, b in zip(pa, pb)), dtype=bool, count=len(pa))
    return np.where(swap, pb, pa), np.where(swap, pa, pb)


def _check_seq(s, name):
    if len(s) == 0:
        raise EmptySequence(f"{name} is empty")


def _raw_ssk(s, t, cfg: SskConfig) -> float:
    if tuple(s) > tuple(t):
        s, t = t, s
    enc = _Encoder([s, t])
    ks = _ssk_lengths(enc.flat[: enc.offsets[1]], enc.flat[enc.offsets[1]:],
                      cfg.match_decay, cfg.gap_decay, cfg.max_subsequence_length)
    return float(_combine(ks, cfg))


def ssk(s: Sequence[str], t: Sequence[str], cfg: SskConfig = SskConfig()) -> float:
    """Gap-weighted subsequence kernel between two symbol sequences."""
    _check_seq(s, "s")
    _check_seq(t, "t")
    if not cfg.normalize:
        return cfg.signal_variance * _raw_ssk(s, t, cfg)
    if tuple(s) == tuple(t):
        return cfg.signal_variance
    kst = _raw_ssk(s, t, cfg)
    kss = _raw_ssk(s, s, cfg)
    ktt = _raw_ssk(t, t, cfg)
    return cfg.signal_variance * _normalized(kst, kss, ktt)


def _normalized(kst, kss, ktt):
    denom = np.sqrt(kss * ktt)
    if not denom > 0:
        return 0.0
    return float(np.minimum(kst / denom, 1.0))


def ssk_bruteforce(s: Sequence[str], t: Sequence[str], cfg: SskConfig = SskConfig()) -> float:
    """Reference value of :func:`ssk` by enumerating every occurrence pair.

    Exponential cost; restricted to ``len <= 10`` and ``n <= 4``.
    """
    _check_seq(s, "s")
    _check_seq(t, "t")
    n = cfg.max_subsequence_length
    if len(s) > 10 or len(t) > 10 or n > 4:
        raise InputTooLarge("brute-force SSK limited to length <= 10 and n <= 4")

    def raw(a, b):
        lengths = range(1, n + 1) if cfg.sum_lengths else (n,)
        total = 0.0
        for i in lengths:
            occ_a = defaultdict(list)
            for idx in itertools.combinations(range(len(a)), i):
                occ_a[tuple(a[j] for j in idx)].append(idx[-1] - idx[0] + 1 - i)
            for idx in itertools.combinations(range(len(b)), i):
                gaps_b = idx[-1] - idx[0] + 1 - i
                for gaps_a in occ_a.get(tuple(b[j] for j in idx), ()):
                    total += cfg.match_decay ** (2 * i) * cfg.gap_decay ** (gaps_a + gaps_b)
        return total

    if not cfg.normalize:
        return cfg.signal_variance * raw(s, t)
    return cfg.signal_variance * raw(s, t) / np.sqrt(raw(s, s) * raw(t, t))


def _sequence_rank(seqs) -> np.ndarray:
    """Equal sequences share a rank; used to pin normalized self-similarity to 1."""
    order = sorted(range(len(seqs)), key=lambda i: seqs[i])
    rank = np.empty(len(seqs), dtype=np.int64)
    prev, r = None, -1
    for i in order:
        if seqs[i] != prev:
            r += 1
            prev = seqs[i]
        rank[i] = r
    return rank


def _normalize_block(raw, dr, dc, rank_r, rank_c):
    denom = np.sqrt(np.outer(dr, dc))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, raw / denom, 0.0)
    out = np.minimum(out, 1.0)
    out[rank_r[:, None] == rank_c[None, :]] = 1.0
    return out


def _ssk_block(train, test, cfg: SskConfig, symmetric: bool) -> np.ndarray:
    n = cfg.max_subsequence_length
    if symmetric:
        enc = _Encoder(train)
        nrow = ncol = len(train)
        pa, pb = np.triu_indices(nrow)
    else:
        enc = _Encoder(list(test) + list(train))
        nrow, ncol = len(test), len(train)
        ii, jj = np.meshgrid(np.arange(nrow), np.arange(ncol), indexing="ij")
        pa, pb = ii.ravel(), jj.ravel() + nrow
    ca, cb = _canonical(pa, pb, enc.seqs)
    raw = _combine(_ssk_pairs(enc.flat, enc.offsets, ca, cb,
                              cfg.match_decay, cfg.gap_decay, n), cfg)
    out = np.empty((nrow, ncol))
    if symmetric:
        out[pa, pb] = raw
        out[pb, pa] = raw
    else:
        out[pa, pb - nrow] = raw
    if not cfg.normalize:
        return cfg.signal_variance * out
    rank = _sequence_rank(enc.seqs)
    if symmetric:
        diag = np.diag(out).copy()
        return cfg.signal_variance * _normalize_block(out, diag, diag, rank, rank)
    idx = np.arange(len(enc.seqs))
    diag = _combine(_ssk_pairs(enc.flat, enc.offsets, idx, idx,
                               cfg.match_decay, cfg.gap_decay, n), cfg)
    return cfg.signal_variance * _normalize_block(out, diag[:nrow], diag[nrow:],
                                                  rank[:nrow], rank[nrow:])


# --------------------------------------------------------------------------
# Gram matrices
# --------------------------------------------------------------------------

def _check_representation(inputs, cfg) -> None:
    if isinstance(cfg, TanimotoConfig):
        for i, x in enumerate(inputs):
            if not isinstance(x, Fingerprint):
                raise RepresentationMismatch(
                    f"Tanimoto kernel needs fingerprints; input {i} is {type(x).__name__}")
    elif isinstance(cfg, SskConfig):
        for i, x in enumerate(inputs):
            if isinstance(x, (Fingerprint, str)) or not isinstance(x, Sequence):
                raise RepresentationMismatch(
                    f"string kernel needs symbol sequences; input {i} is {type(x).__name__}")
            if len(x) == 0:
                raise EmptySequence(f"empty symbol sequence at index {i}")
    else:
        raise TypeError(f"unknown kernel config {cfg!r}")


def gram(inputs, cfg: KernelConfig) -> GramMatrix:
    """Symmetric kernel matrix over ``inputs`` (upper triangle evaluated once)."""
    if len(inputs) == 0:
        raise ValueError("gram needs at least one input")
    _check_representation(inputs, cfg)
    if isinstance(cfg, TanimotoConfig):
        bits = _bit_matrix(inputs)
        return GramMatrix(_tanimoto_block(bits, bits, cfg))
    return GramMatrix(_ssk_block(inputs, None, cfg, symmetric=True))


def cross_gram(train_inputs, test_inputs, cfg: KernelConfig) -> np.ndarray:
    """Kernel values with rows indexing ``test_inputs`` and columns ``train_inputs``."""
    _check_representation(train_inputs, cfg)
    _check_representation(test_inputs, cfg)
    if len(test_inputs) == 0 or len(train_inputs) == 0:
        return np.zeros((len(test_inputs), len(train_inputs)))
    if isinstance(cfg, TanimotoConfig):
        return _tanimoto_block(_bit_matrix(test_inputs), _bit_matrix(train_inputs), cfg)
    return _ssk_block(train_inputs, test_inputs, cfg, symmetric=False)


def prior_variance(inputs, cfg: KernelConfig) -> np.ndarray:
    """Diagonal ``k(x, x)`` for each input."""
    _check_representation(inputs, cfg)
    if isinstance(cfg, TanimotoConfig):
        pops = np.array([fp.popcount for fp in inputs])
        return np.where(pops > 0, cfg.signal_variance, 0.0)
    if cfg.normalize:
        return np.full(len(inputs), cfg.signal_variance)
    return np.array([ssk(x, x, cfg) for x in inputs])


# --------------------------------------------------------------------------
# polynomial expansion in gap_decay
# --------------------------------------------------------------------------

@njit(cache=True)
def _ssk_poly(s, t, n):
    """Coefficients c[i, g]: k_{i+1} = lm^(2(i+1)) * sum_g c[i, g] * lg^g."""
    ls, lt = s.shape[0], t.shape[0]
    deg = ls + lt - 1
    out = np.zeros((n, deg))
    prev = np.zeros((ls + 1, lt + 1, deg))
    prev[:, :, 0] = 1.0
    cur = np.zeros((ls + 1, lt + 1, deg))
    run = np.zeros(deg)
    for i in range(n):
        for p in range(ls):
            for q in range(lt):
                if s[p] == t[q]:
                    for g in range(min(deg, p + q + 1)):
                        out[i, g] += prev[p, q, g]
        if i == n - 1:
            break
        cur[:, :, :] = 0.0
        for p in range(1, ls + 1):
            run[:] = 0.0
            sp = s[p - 1]
            for q in range(1, lt + 1):
                # degrees at prefix (p, q) never exceed p + q - 2
                gm = min(deg, p + q - 1)
                for g in range(gm - 1, 0, -1):
                    run[g] = run[g - 1]
                run[0] = 0.0
                if sp == t[q - 1]:
                    for g in range(gm):
                        run[g] += prev[p - 1, q - 1, g]
                cur[p, q, 0] = run[0]
                for g in range(1, gm):
                    cur[p, q, g] = cur[p - 1, q, g - 1] + run[g]
        prev, cur = cur, prev
    return out


@njit(parallel=True, cache=True)
def _poly_sizes(offsets, pa, pb, n):
    m = pa.shape[0]
    sizes = np.empty(m, dtype=np.int64)
    for k in prange(m):
        la = offsets[pa[k] + 1] - offsets[pa[k]]
        lb = offsets[pb[k] + 1] - offsets[pb[k]]
        sizes[k] = n * (la + lb - 1)
    return sizes


@njit(parallel=True, cache=True)
def _poly_fill(flat, offsets, pa, pb, n, starts, coeffs):
    for k in prange(pa.shape[0]):
        a, b = pa[k], pb[k]
        c = _ssk_poly(flat[offsets[a]:offsets[a + 1]], flat[offsets[b]:offsets[b + 1]], n)
        deg = c.shape[1]
        base = starts[k]
        for i in range(n):
            for g in range(deg):
                coeffs[base + i * deg + g] = c[i, g]


@njit(cache=True)
def _poly_eval(coeffs, base, deg, n, lm, lg, sum_lengths):
    total = 0.0
    lm2 = lm * lm
    w = 1.0
    for i in range(n):
        w *= lm2
        if not sum_lengths and i != n - 1:
            continue
        acc = 0.0
        start = base + i * deg
        for g in range(deg - 1, -1, -1):
            acc = acc * lg + coeffs[start + g]
        total += w * acc
    return total


@njit(parallel=True, cache=True)
def _poly_gram(coeffs, starts, sizes, pair_id, rows, cols, n, lm, lg, sum_lengths, symmetric):
    nr, nc = rows.shape[0], cols.shape[0]
    out = np.empty((nr, nc))
    for a in prange(nr):
        for b in range(a if symmetric else 0, nc):
            k = pair_id[rows[a], cols[b]]
            out[a, b] = _poly_eval(coeffs, starts[k], sizes[k] // n, n, lm, lg, sum_lengths)
            if symmetric:
                out[b, a] = out[a, b]
    return out


@njit(cache=True)
def _poly_diag(coeffs, starts, sizes, pair_id, idx, n, lm, lg, sum_lengths):
    out = np.empty(idx.shape[0])
    for a in range(idx.shape[0]):
        k = pair_id[idx[a], idx[a]]
        out[a] = _poly_eval(coeffs, starts[k], sizes[k] // n, n, lm, lg, sum_lengths)
    return out


class SskExpansion:
    """All pairwise string-kernel polynomials over a fixed set of sequences.

    Built once per dataset; ``gram`` and ``cross`` then cost one polynomial
    evaluation per pair for any decay values.  Memory grows as
    ``n * N^2 * mean length``, so this is meant for benchmark-sized sets.
    """

    def __init__(self, sequences: Sequence[Sequence[str]], max_subsequence_length: int = 5):
        self.n = int(max_subsequence_length)
        self._enc = _Encoder(sequences)
        self.size = len(sequences)
        pa, pb = np.triu_indices(self.size)
        pa, pb = _canonical(pa, pb, self._enc.seqs)
        self._pair_id = np.empty((self.size, self.size), dtype=np.int64)
        ids = np.arange(len(pa))
        self._pair_id[pa, pb] = ids
        self._pair_id[pb, pa] = ids
        self._sizes = _poly_sizes(self._enc.offsets, pa, pb, self.n)
        self._starts = np.concatenate([[0], np.cumsum(self._sizes)[:-1]]).astype(np.int64)
        self._coeffs = np.zeros(int(self._sizes.sum()))
        _poly_fill(self._enc.flat, self._enc.offsets, pa, pb, self.n, self._starts,
                   self._coeffs)
        self._rank = _sequence_rank(self._enc.seqs)

    @property
    def nbytes(self) -> int:
        return self._coeffs.nbytes

    def _raw(self, rows, cols, cfg: SskConfig, symmetric=False) -> np.ndarray:
        if cfg.max_subsequence_length != self.n:
            raise ValueError("config subsequence length differs from the expansion")
        return _poly_gram(self._coeffs, self._starts, self._sizes, self._pair_id,
                          rows, cols, self.n, cfg.match_decay, cfg.gap_decay,
                          cfg.sum_lengths, symmetric)

    def cross(self, rows, cols, cfg: SskConfig, _symmetric=False) -> np.ndarray:
        """Kernel block between sequence indices ``rows`` and ``cols``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        raw = self._raw(rows, cols, cfg, _symmetric)
        if not cfg.normalize:
            return cfg.signal_variance * raw
        dr, dc = self._diag(rows, cfg), self._diag(cols, cfg)
        return cfg.signal_variance * _normalize_block(raw, dr, dc, self._rank[rows],
                                                      self._rank[cols])

    def _diag(self, idx, cfg: SskConfig) -> np.ndarray:
        return _poly_diag(self._coeffs, self._starts, self._sizes, self._pair_id, idx,
                          self.n, cfg.match_decay, cfg.gap_decay, cfg.sum_lengths)

    def gram(self, rows, cfg: SskConfig) -> np.ndarray:
        return self.cross(rows, rows, cfg, _symmetric=True)


def with_unit_variance(cfg: KernelConfig) -> KernelConfig:
    return replace(cfg, signal_variance=1.0)
