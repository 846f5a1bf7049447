"""Key generation processes, per-edge key banks, and a toy BB84 sampler.

Keys are fungible counters: one key unit encrypts exactly one packet.  The
bank tracks a full ledger (generated / consumed / discarded) so conservation
can be checked after every operation.  The BB84 backend models only basis
sifting and intercept-resend detection; it is an alternative source of
per-slot key counts, not a cryptographic implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "KeyBank",
    "DeterministicKeys",
    "TruncatedPoissonKeys",
    "BB84Toy",
    "KeyProcess",
    "KeySpec",
    "KeySampler",
    "make_key_sampler",
    "generate_keys",
    "BB84Round",
    "bb84_round",
    "otp_xor",
]


# ---------------------------------------------------------------------------
# key bank

@dataclass
class KeyBank:
    """Counter-based store of unconsumed symmetric keys for one edge."""

    residual: int = 0
    generated_total: int = 0
    consumed_total: int = 0
    discarded_total: int = 0

    def deposit(self, count: int) -> None:
        if count < 0:
            raise ValueError(f"deposit count must be >= 0, got {count}")
        self.residual += count
        self.generated_total += count

    def withdraw(self, requested: int) -> int:
        """Grant min(requested, residual); never overdraws."""
        if requested < 0:
            raise ValueError(f"withdraw count must be >= 0, got {requested}")
        granted = min(requested, self.residual)
        self.residual -= granted
        self.consumed_total += granted
        return granted

    def discard_residual(self) -> int:
        """Throw away everything left in the bank (no-storage operation)."""
        dropped = self.residual
        self.residual = 0
        self.discarded_total += dropped
        return dropped

    def check_ledger(self) -> None:
        assert self.residual == self.generated_total - self.consumed_total - self.discarded_total
        assert self.residual >= 0


# ---------------------------------------------------------------------------
# key processes

@dataclass(frozen=True)
class DeterministicKeys:
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("value must be >= 0")

    @property
    def mean(self) -> float:
        return float(self.value)

    @property
    def cap(self) -> int:
        return self.value


@dataclass(frozen=True)
class TruncatedPoissonKeys:
    """Poisson(rate) key counts clipped at ``cap``.

    With the default cap of 20 and rates <= 1 the clipped probability mass
    is below 1e-19, so the mean is the Poisson rate for all practical
    purposes.
    """

    rate: float
    cap: int = 20

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")

    @property
    def mean(self) -> float:
        lam = self.rate
        total = 0.0
        tail = 1.0 - math.exp(-lam)
        pmf = math.exp(-lam)
        for k in range(self.cap):
            total += tail
            pmf = pmf * lam / (k + 1)
            tail -= pmf
        return total


@dataclass(frozen=True)
class BB84Toy:
    """Per-slot key counts from repeated toy BB84 rounds."""

    photons: int = 8
    eavesdrop_prob: float = 0.0
    check_fraction: float = 0.0
    cap: int = 20

    def __post_init__(self):
        if self.photons < 0:
            raise ValueError("photons must be >= 0")
        if not 0.0 <= self.eavesdrop_prob <= 1.0:
            raise ValueError("eavesdrop_prob must be in [0,1]")
        if not 0.0 <= self.check_fraction <= 1.0:
            raise ValueError("check_fraction must be in [0,1]")

    @property
    def mean(self) -> float:
        # Sifting keeps half the photons; checked bits are revealed and, if
        # eavesdropping was detected, the whole round is discarded.
        p_clean_bit = 1.0 - self.eavesdrop_prob * 0.25 * self.check_fraction
        p_round_clean = p_clean_bit ** (self.photons * 0.5)
        return 0.5 * self.photons * (1.0 - self.check_fraction) * p_round_clean


KeyProcess = Union[DeterministicKeys, TruncatedPoissonKeys, BB84Toy]


@dataclass(frozen=True)
class KeySpec:
    """Config-level selection of the per-edge key generation backend.

    ``truncated_poisson`` uses each edge's own mean rate; ``deterministic``
    needs an explicit value; ``bb84`` derives counts from toy protocol
    rounds and ignores the edge rate.  ``overrides`` swaps the backend for
    individual links, keyed by endpoint pair (either direction).
    """

    kind: str = "truncated_poisson"
    k_max: int = 20
    value: int | None = None
    photons: int = 8
    eavesdrop_prob: float = 0.0
    check_fraction: float = 0.0
    overrides: tuple[tuple[tuple[int, int], "KeySpec"], ...] = ()

    def process_for(self, eta: float) -> KeyProcess:
        if self.kind == "truncated_poisson":
            return TruncatedPoissonKeys(rate=eta, cap=self.k_max)
        if self.kind == "deterministic":
            if self.value is None:
                raise ValueError("deterministic key process needs an explicit value")
            return DeterministicKeys(self.value)
        if self.kind == "bb84":
            return BB84Toy(self.photons, self.eavesdrop_prob, self.check_fraction, self.k_max)
        raise ValueError(f"unknown key process kind {self.kind!r}")

    def process_for_edge(self, u: int, v: int, eta: float) -> KeyProcess:
        for (a, b), spec in self.overrides:
            if {a, b} == {u, v}:
                return spec.process_for(eta)
        return self.process_for(eta)


# ---------------------------------------------------------------------------
# BB84

@dataclass(frozen=True)
class BB84Round:
    sifted: int
    checked: int
    mismatches: int
    detected: bool
    sifted_keys: int


def bb84_round(
    photons: int,
    eavesdrop_prob: float,
    check_fraction: float,
    rng: np.random.Generator,
) -> BB84Round:
    """One prepare-and-measure round: sift on basis match, sample-check bits.

    Each photon survives sifting with probability 1/2 (independent uniform
    bases).  An intercept-resend eavesdropper flips each checked sifted bit
    with probability 1/4; any mismatch discards the whole round's key.
    """
    if photons < 0:
        raise ValueError("photons must be >= 0")
    if photons == 0:
        return BB84Round(0, 0, 0, False, 0)
    alice_bases = rng.integers(0, 2, photons)
    bob_bases = rng.integers(0, 2, photons)
    sifted_mask = alice_bases == bob_bases
    n_sifted = int(sifted_mask.sum())
    if n_sifted == 0:
        return BB84Round(0, 0, 0, False, 0)
    # Sifted bits are wrong only when Eve measured in the conjugate basis
    # (prob 1/2 given interception) and Bob's remeasurement came out flipped
    # (prob 1/2): a 1/4 error rate per intercepted bit.
    intercepted = rng.random(n_sifted) < eavesdrop_prob
    eve_wrong_basis = rng.integers(0, 2, n_sifted) == 1
    flipped = rng.integers(0, 2, n_sifted) == 1
    errors = intercepted & eve_wrong_basis & flipped
    checked = rng.random(n_sifted) < check_fraction
    n_checked = int(checked.sum())
    n_mismatch = int((checked & errors).sum())
    detected = n_mismatch > 0
    keys = 0 if detected else n_sifted - n_checked
    return BB84Round(n_sifted, n_checked, n_mismatch, detected, keys)


# ---------------------------------------------------------------------------
# samplers

class KeySampler:
    """Stateful per-edge key stream bound to one seeded generator."""

    def __init__(self, process: KeyProcess, rng: np.random.Generator):
        self.process = process
        self.rng = rng

    def sample(self) -> int:
        p = self.process
        if isinstance(p, DeterministicKeys):
            return p.value
        if isinstance(p, TruncatedPoissonKeys):
            return min(int(self.rng.poisson(p.rate)), p.cap)
        r = bb84_round(p.photons, p.eavesdrop_prob, p.check_fraction, self.rng)
        return min(r.sifted_keys, p.cap)

    def sample_batch(self, nslots: int) -> np.ndarray:
        p = self.process
        if isinstance(p, DeterministicKeys):
            return np.full(nslots, p.value, dtype=np.int64)
        if isinstance(p, TruncatedPoissonKeys):
            return np.minimum(self.rng.poisson(p.rate, nslots), p.cap).astype(np.int64)
        out = np.empty(nslots, dtype=np.int64)
        for t in range(nslots):
            out[t] = self.sample()
        return out


def make_key_sampler(process: KeyProcess, rng: np.random.Generator) -> KeySampler:
    return KeySampler(process, rng)


def generate_keys(process: KeyProcess, rng: np.random.Generator) -> int:
    """Draw one slot's worth of fresh keys for a single edge."""
    return KeySampler(process, rng).sample()


def otp_xor(data: bytes, pad: bytes) -> bytes:
    """Demonstrative one-time-pad XOR; the pad must cover the message."""
    if len(pad) < len(data):
        raise ValueError("pad shorter than message")
    return bytes(a ^ b for a, b in zip(data, pad))
