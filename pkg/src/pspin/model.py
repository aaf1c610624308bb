"""Model parameters and the mixing function.

A mixed p-spin system is specified by interaction weights (beta_1, ...,
beta_pmax) and a nonrandom external field h.  The covariance of the Gaussian
part of the Hamiltonian is N * xi(R) where xi(x) = sum_p beta_p^2 x^p, so all
analytic machinery downstream consumes xi and its first two derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PMAX = 4


@dataclass(frozen=True)
class MixingSpec:
    """Interaction weights (beta_1, beta_2, ...) and external field h.

    betas[p-1] is the weight of the pure p-spin term; the sequence is finite
    (truncated mixture).  Immutable, safe to share across threads.
    """

    betas: tuple = ()
    h: float = 0.0

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if len(betas) < 1:
            raise ValueError("need at least beta_1 (use 0.0 for absent orders)")
        if any(b < 0 for b in betas):
            raise ValueError("interaction weights must be nonnegative")
        if not all(np.isfinite(betas)) or not np.isfinite(self.h):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_dict(cls, d: dict) -> "MixingSpec":
        return cls(betas=tuple(d["beta"]), h=float(d.get("h", 0.0)))

    @property
    def pmax(self) -> int:
        return len(self.betas)

    @property
    def beta1(self) -> float:
        return self.betas[0]

    def beta(self, p: int) -> float:
        """Weight of the pure p-spin term (0 beyond the truncation)."""
        return self.betas[p - 1] if 1 <= p <= len(self.betas) else 0.0

    def active_orders(self, min_p: int = 1) -> list:
        return [p for p in range(min_p, self.pmax + 1) if self.betas[p - 1] > 0]

    @property
    def even_only(self) -> bool:
        """True iff no odd p >= 3 interaction is present."""
        return all(
            self.betas[p - 1] == 0
            for p in range(3, self.pmax + 1)
            if p % 2 == 1
        )

    @property
    def has_external_field(self) -> bool:
        return self.h ** 2 + self.beta1 ** 2 != 0.0

    # --- mixing function -------------------------------------------------

    def _powers(self):
        return np.arange(1, self.pmax + 1)

    def xi(self, x):
        """sum_p beta_p^2 x^p for x in [-1, 1] (scalar or array)."""
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > 1.0 + 1e-12):
            raise ValueError("xi is defined on [-1, 1]")
        b2 = np.asarray(self.betas) ** 2
        out = sum(b2[p - 1] * x ** p for p in self._powers())
        return float(out) if np.isscalar(out) or out.ndim == 0 else out

    def xi_prime(self, x):
        """sum_p p beta_p^2 x^(p-1) for x in [0, 1]."""
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
            raise ValueError("xi_prime is defined on [0, 1]")
        b2 = np.asarray(self.betas) ** 2
        out = sum(p * b2[p - 1] * x ** (p - 1) for p in self._powers())
        return float(out) if np.isscalar(out) or out.ndim == 0 else out

    def xi_second(self, x):
        """sum_p p(p-1) beta_p^2 x^(p-2) for x in [0, 1]; no p=1 contribution."""
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
            raise ValueError("xi_second is defined on [0, 1]")
        b2 = np.asarray(self.betas) ** 2
        out = x * 0.0
        for p in range(2, self.pmax + 1):
            out = out + p * (p - 1) * b2[p - 1] * x ** (p - 2)
        return float(out) if np.isscalar(out) or out.ndim == 0 else out

    def xi_penalty_segment(self, a: float, b: float) -> float:
        """Closed form of int_a^b xi''(q) q dq = sum_p (p-1) beta_p^2 (b^p - a^p)."""
        b2 = np.asarray(self.betas) ** 2
        return float(
            sum((p - 1) * b2[p - 1] * (b ** p - a ** p) for p in self._powers())
        )


@dataclass(frozen=True)
class CltScopeReport:
    """Whether a spec is inside the central-limit-theorem hypotheses."""

    even_only: bool
    has_external_field: bool
    messages: tuple = field(default=())

    @property
    def ok(self) -> bool:
        return self.even_only and self.has_external_field

    def __bool__(self) -> bool:
        return self.ok


def validate_for_clt(spec: MixingSpec) -> CltScopeReport:
    """Report whether the CLT machinery applies to this spec."""
    msgs = []
    if not spec.even_only:
        bad = [
            p
            for p in range(3, spec.pmax + 1)
            if p % 2 == 1 and spec.betas[p - 1] != 0
        ]
        msgs.append(f"odd interaction orders present: {bad}")
    if not spec.has_external_field:
        msgs.append("no external field (h and beta_1 both zero)")
    return CltScopeReport(
        even_only=spec.even_only,
        has_external_field=spec.has_external_field,
        messages=tuple(msgs),
    )
