"""Exact small-N machinery: disorder, Hamiltonians, Gibbs tables, coupled systems.

Spin configurations are encoded as n-bit words; bit i set means sigma_i = -1.
Because sigma_i^2 = 1, every coupling tensor collapses to coefficients on
subsets of {1..n} (the XOR-fold of the index bits picks out the odd-multiplicity
set), so the energy of all 2^n configurations is a single Walsh-Hadamard
transform of the subset-coefficient vector.  Overlap histograms under product
Gibbs measures come from the same transform via XOR-correlation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .model import MixingSpec
from .rng import SeedKey, as_seed_key

# Enumeration caps: 2^n energies are materialized, and order-p coupling
# tensors have n^p entries.
CAP_LOW_ORDER = 20   # only p <= 2 interactions active
CAP_HIGH_ORDER = 12  # some p >= 3 interaction active

_MASK_CACHE: dict = {}
_SCATTER_CACHE: dict = {}


def enumeration_cap(spec: MixingSpec) -> int:
    return CAP_HIGH_ORDER if any(p >= 3 for p in spec.active_orders()) else CAP_LOW_ORDER


def _require_cap(spec: MixingSpec, n: int) -> None:
    cap = enumeration_cap(spec)
    if not 1 <= n <= cap:
        raise ValueError(f"system size n={n} outside enumeration cap [1, {cap}]")


def subset_masks(n: int, p: int) -> np.ndarray:
    """XOR-fold of bit masks over the p-fold index product, C-order raveled.

    Entry for multi-index (i1..ip) is the bit mask of indices appearing an odd
    number of times, i.e. the subset S with sigma_{i1}...sigma_{ip} = chi_S.
    """
    key = (n, p)
    m = _MASK_CACHE.get(key)
    if m is None:
        bits = (np.int64(1) << np.arange(n, dtype=np.int64))
        m = bits
        for _ in range(p - 1):
            m = (m[..., None] ^ bits).reshape(-1)
        _MASK_CACHE[key] = m
    return m


def _scatter_info(n: int, p: int):
    """Sorted gather/segment layout to accumulate tensor entries by mask."""
    key = (n, p)
    info = _SCATTER_CACHE.get(key)
    if info is None:
        masks = subset_masks(n, p)
        perm = np.argsort(masks, kind="stable")
        sorted_masks = masks[perm]
        starts = np.flatnonzero(np.r_[True, sorted_masks[1:] != sorted_masks[:-1]])
        info = (perm, starts, sorted_masks[starts])
        _SCATTER_CACHE[key] = info
    return info


# --------------------------------------------------------------------------
# configurations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinConfiguration:
    """One configuration of n Ising spins packed into an integer word."""

    n: int
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.n):
            raise ValueError("bits out of range for n spins")

    def spins(self) -> np.ndarray:
        """The +/-1 vector (sigma_i = 1 - 2*bit_i)."""
        b = (self.bits >> np.arange(self.n)) & 1
        return 1.0 - 2.0 * b

    @classmethod
    def from_spins(cls, spins) -> "SpinConfiguration":
        spins = np.asarray(spins)
        n = spins.size
        bits = int(np.sum((spins < 0).astype(np.int64) << np.arange(n)))
        return cls(n=n, bits=bits)


def overlap(sigma: SpinConfiguration, tau: SpinConfiguration) -> float:
    """R(sigma, tau) = (1/n) sum_i sigma_i tau_i, via popcount of XOR."""
    if sigma.n != tau.n:
        raise ValueError("size mismatch")
    k = (sigma.bits ^ tau.bits).bit_count()
    return (sigma.n - 2 * k) / sigma.n


def spins_matrix(n: int) -> np.ndarray:
    """All 2^n configurations as a (2^n, n) matrix of +/-1 (row = word)."""
    words = np.arange(1 << n)[:, None]
    return 1.0 - 2.0 * ((words >> np.arange(n)) & 1)


# --------------------------------------------------------------------------
# disorder
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DisorderRealization:
    """One draw of all Gaussian couplings for a size-n system.

    couplings[p] is the order-p tensor (shape (n,)*p) for each active p >= 2;
    field_gaussians are the g_i of the beta_1 * g_i * sigma_i field part.
    Regenerable bit-for-bit from (spec, n, seed).
    """

    spec: MixingSpec
    n: int
    seed: SeedKey
    couplings: dict
    field_gaussians: np.ndarray

    @cached_property
    def interaction_coeffs(self) -> np.ndarray:
        """Subset coefficients of the p>=2 interaction part (X)."""
        return batch_interaction_coeffs(
            self.spec, self.n,
            {p: g.reshape(1, -1) for p, g in self.couplings.items()},
        )[0]

    @cached_property
    def field_part_coeffs(self) -> np.ndarray:
        """Subset coefficients of the Gaussian field part beta_1 g_i sigma_i (Z).

        Named field_part to avoid any collision with the partition function.
        """
        return batch_field_part_coeffs(
            self.spec, self.n, self.field_gaussians.reshape(1, -1)
        )[0]


def external_field_coeffs(spec: MixingSpec, n: int) -> np.ndarray:
    """Subset coefficients of the nonrandom h * sum_i sigma_i term."""
    c = np.zeros(1 << n)
    c[np.int64(1) << np.arange(n)] = spec.h
    return c


def batch_interaction_coeffs(
    spec: MixingSpec, n: int, tensors: dict, batch_size: int | None = None
) -> np.ndarray:
    """Subset-coefficient rows for a batch of interaction draws.

    tensors[p] has shape (B, n**p) (raveled order-p tensors).  Includes the
    1/N^((p-1)/2) normalization and the beta_p weight.
    """
    if batch_size is None:
        batch_size = next(iter(tensors.values())).shape[0] if tensors else 1
    C = np.zeros((batch_size, 1 << n))
    for p, g in sorted(tensors.items()):
        perm, starts, uniq = _scatter_info(n, p)
        scale = spec.beta(p) * n ** (-(p - 1) / 2.0)
        seg = np.add.reduceat(g[:, perm], starts, axis=1)
        C[:, uniq] += scale * seg
    return C


def batch_field_part_coeffs(spec: MixingSpec, n: int, g: np.ndarray) -> np.ndarray:
    """Subset-coefficient rows of beta_1 * g_i at the singleton masks."""
    C = np.zeros((g.shape[0], 1 << n))
    C[:, np.int64(1) << np.arange(n)] = spec.beta1 * g
    return C


def draw_tensors(spec: MixingSpec, n: int, rng, B: int):
    """Draw B interaction tensors per active order plus field Gaussians.

    Fixed draw order (p ascending, then field) so a stream position depends
    only on (spec, n) and the generator key.
    """
    tensors = {}
    for p in spec.active_orders(min_p=2):
        tensors[p] = rng.standard_normal((B, n ** p))
    field = rng.standard_normal((B, n))
    return tensors, field


def sample_disorder(spec: MixingSpec, n: int, seed) -> DisorderRealization:
    """Draw one disorder realization; seed is an int master seed or a SeedKey."""
    _require_cap(spec, n)
    key = as_seed_key(seed)
    rng = key.generator()
    tensors, field = draw_tensors(spec, n, rng, 1)
    couplings = {p: g[0].reshape((n,) * p) for p, g in tensors.items()}
    return DisorderRealization(
        spec=spec, n=n, seed=key, couplings=couplings, field_gaussians=field[0]
    )


def energy(real: DisorderRealization, sigma: SpinConfiguration) -> float:
    """H(sigma) evaluated directly from the coupling tensors."""
    if sigma.n != real.n:
        raise ValueError("size mismatch")
    s = sigma.spins()
    spec, n = real.spec, real.n
    total = float(np.dot(spec.h + spec.beta1 * real.field_gaussians, s))
    for p, g in real.couplings.items():
        contracted = g
        for _ in range(p):
            contracted = contracted @ s
        total += spec.beta(p) * n ** (-(p - 1) / 2.0) * float(contracted)
    return total


def energy_table(real: DisorderRealization) -> np.ndarray:
    """H(sigma) for all 2^n configurations (index = spin word)."""
    c = (
        real.interaction_coeffs
        + real.field_part_coeffs
        + external_field_coeffs(real.spec, real.n)
    )
    return kernels.fwht(c)


# --------------------------------------------------------------------------
# Gibbs tables
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GibbsTable:
    """Energies of all 2^n configurations with the log partition function."""

    n: int
    energies: np.ndarray
    log_partition: float

    @classmethod
    def from_energies(cls, n: int, energies: np.ndarray) -> "GibbsTable":
        return cls(n=n, energies=energies, log_partition=float(logsumexp(energies)))

    @cached_property
    def weights(self) -> np.ndarray:
        """Normalized Gibbs weights exp(H - log Z); they sum to 1 (1e-12)."""
        return np.exp(self.energies - self.log_partition)

    def gibbs_average(self, observable: np.ndarray) -> float:
        return float(np.dot(self.weights, observable))


def free_energy(real: DisorderRealization):
    """(f_N, GibbsTable) with f_N = log sum_sigma exp H(sigma), max-shifted."""
    table = GibbsTable.from_energies(real.n, energy_table(real))
    return table.log_partition, table


# --------------------------------------------------------------------------
# coupled systems
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoupledRealization:
    """Shared disorder plus two independent copies for interpolated systems."""

    spec: MixingSpec
    n: int
    seed: SeedKey
    shared: DisorderRealization
    copy1: DisorderRealization
    copy2: DisorderRealization


def sample_coupled(spec: MixingSpec, n: int, seed) -> CoupledRealization:
    """Draw (shared, copy1, copy2) from one derived stream, in that order."""
    _require_cap(spec, n)
    key = as_seed_key(seed)
    rng = key.generator()
    parts = []
    for _ in range(3):
        tensors, field = draw_tensors(spec, n, rng, 1)
        couplings = {p: g[0].reshape((n,) * p) for p, g in tensors.items()}
        parts.append(
            DisorderRealization(
                spec=spec, n=n, seed=key, couplings=couplings, field_gaussians=field[0]
            )
        )
    return CoupledRealization(
        spec=spec, n=n, seed=key, shared=parts[0], copy1=parts[1], copy2=parts[2]
    )


def _check_ts(t: float, s: float) -> None:
    if not 0.0 <= s <= t <= 1.0:
        raise ValueError("need 0 <= s <= t <= 1")


def coupled_tables_ts(coupled: CoupledRealization, t: float, s: float):
    """Gibbs tables of the two-parameter interpolated Hamiltonians.

    Interaction parts are interpolated at s (sqrt(s) shared + sqrt(1-s) own
    copy), Gaussian field parts at t, the nonrandom field is fixed.
    """
    _check_ts(t, s)
    ch = external_field_coeffs(coupled.spec, coupled.n)
    rs, rs1 = math.sqrt(s), math.sqrt(1.0 - s)
    rt, rt1 = math.sqrt(t), math.sqrt(1.0 - t)
    sh = coupled.shared
    tables = []
    for copy in (coupled.copy1, coupled.copy2):
        c = (
            rs * sh.interaction_coeffs
            + rs1 * copy.interaction_coeffs
            + rt * sh.field_part_coeffs
            + rt1 * copy.field_part_coeffs
            + ch
        )
        tables.append(GibbsTable.from_energies(coupled.n, kernels.fwht(c)))
    return tables[0], tables[1]


def coupled_tables(coupled: CoupledRealization, t: float):
    """Gibbs tables of the one-parameter correlated Hamiltonians (s = t).

    Defined as coupled_tables_ts(coupled, t, t) so the two parameterizations
    coincide exactly, not just in distribution.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("need 0 <= t <= 1")
    return coupled_tables_ts(coupled, t, t)


# --------------------------------------------------------------------------
# product-measure observables
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OverlapHistogram:
    """Exact distribution of the overlap under a product Gibbs measure."""

    n: int
    levels: np.ndarray   # (n+1,) descending from +1 to -1
    masses: np.ndarray   # (n+1,) nonnegative, sums to 1

    def as_dict(self) -> dict:
        return {float(l): float(m) for l, m in zip(self.levels, self.masses)}

    def mean(self) -> float:
        return float(np.dot(self.levels, self.masses))

    def expectation(self, fn) -> float:
        return float(np.dot(fn(self.levels), self.masses))

    def tail_mass(self, center: float, epsilon: float) -> float:
        sel = np.abs(self.levels - center) >= epsilon
        return float(self.masses[sel].sum())


def overlap_histogram(table1: GibbsTable, table2: GibbsTable) -> OverlapHistogram:
    """Exact overlap masses of the product measure, via XOR-correlation."""
    if table1.n != table2.n:
        raise ValueError("size mismatch")
    n = table1.n
    masses = kernels.overlap_masses(table1.weights, table2.weights, n)
    return OverlapHistogram(n=n, levels=kernels.overlap_levels(n), masses=masses)


def product_gibbs_expectation(table1: GibbsTable, table2: GibbsTable, observable) -> float:
    """Exact double sum sum_{sigma,tau} w1(sigma) w2(tau) obs(sigma, tau).

    observable is vectorized over integer spin words (broadcast over a meshgrid
    of all pairs), so this is O(4^n); for observables of the overlap alone use
    overlap_histogram.  Guarded to n <= 10.
    """
    if table1.n != table2.n:
        raise ValueError("size mismatch")
    n = table1.n
    if n > 10:
        raise ValueError("full double enumeration guarded to n <= 10")
    words = np.arange(1 << n)
    obs = observable(words[:, None], words[None, :])
    return float(table1.weights @ obs @ table2.weights)


def overlap_of_words(n: int, w1, w2):
    """Vectorized overlap of integer spin words (for product observables)."""
    x = np.bitwise_xor(w1, w2)
    pc = np.zeros(np.broadcast(w1, w2).shape, dtype=np.int64)
    x = np.array(np.broadcast_to(x, pc.shape))
    while x.any():
        pc += x & 1
        x >>= 1
    return (n - 2.0 * pc) / n


@dataclass(frozen=True)
class RestrictedFreeEnergy:
    """(1/n) log of a restricted double partition sum; empty_set marks a
    structurally empty restriction (value is -inf in that case)."""

    value: float
    empty_set: bool


def restricted_free_energy(
    coupled: CoupledRealization, t: float, u: float, epsilon: float, side: str
) -> RestrictedFreeEnergy:
    """Restricted coupled free energy over {R > u + eps} or {R < u - eps}.

    Built on the s=0 tables (independent interactions, field correlated at t).
    The restricted sum reuses the max shifts of the unrestricted tables; a
    restricted mass that underflows to zero gives value -inf with
    empty_set=False.
    """
    if side not in ("above", "below"):
        raise ValueError("side must be 'above' or 'below'")
    table1, table2 = coupled_tables_ts(coupled, t, 0.0)
    n = coupled.n
    m1 = float(np.max(table1.energies))
    m2 = float(np.max(table2.energies))
    w1 = np.exp(table1.energies - m1)
    w2 = np.exp(table2.energies - m2)
    corr = kernels.xor_correlation(w1, w2)
    per_level = kernels.popcount_hist(corr, n)
    np.clip(per_level, 0.0, None, out=per_level)
    levels = kernels.overlap_levels(n)
    sel = levels > u + epsilon if side == "above" else levels < u - epsilon
    if not np.any(sel):
        return RestrictedFreeEnergy(value=-math.inf, empty_set=True)
    total = float(per_level[sel].sum())
    if total <= 0.0:
        return RestrictedFreeEnergy(value=-math.inf, empty_set=False)
    return RestrictedFreeEnergy(
        value=(m1 + m2 + math.log(total)) / n, empty_set=False
    )
