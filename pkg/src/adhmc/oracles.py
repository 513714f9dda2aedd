"""Stochastic gradient oracles for the target potential.

An oracle is a randomized, unbiased estimator of ``∇U`` whose realizations are
themselves gradients of potentials inside a smoothness class: each draw comes
from some realized function ``U^ω`` with certified ``(ℓ^ω, L^ω, T^ω)`` bounded
almost surely by the oracle's ``certificate_bounds``.  Two implementations are
provided — the degenerate exact oracle (every draw equals ``∇U``, recovering
deterministic HMC) and the mini-batch estimator ``(n/B) Σ_{i∈I} ∇U_i`` over a
uniformly random size-``B`` subset.  Variance-reduced oracles (SVRG, SAG,
control variates) are deliberately not implemented; plug in a custom
:class:`GradientOracle` subclass for those.

Besides ``draw`` (fresh randomness per gradient evaluation, as the sampling
algorithms require), oracles expose ``freeze``/``freeze_batch`` which fix the
randomness ω and hand back the realized potential as a deterministic object.
Freezing is what the error sweeps need: the cubic one-step error bounds
compare a leapfrog step against the exact flow of the *realized* Hamiltonian
``U^ω + V``, conditioning on ω.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OracleConfigurationError
from .models import PotentialModel, SmoothnessCertificate

Array = np.ndarray

_ENUMERATION_LIMIT = 10_000
_MOMENT_MC_DRAWS = 10_000


@dataclass(frozen=True)
class LipschitzMoments:
    """Moments ``E[(L^ω)^k]`` of the realized gradient-Lipschitz constant.

    The powers k = 1 and 3/2 enter the stochastic one-step error bounds; k =
    1/2 and 2 enter the stochastic acceptance-bound constant.
    """

    half: float
    one: float
    three_half: float
    two: float

    @classmethod
    def deterministic(cls, lip: float) -> "LipschitzMoments":
        return cls(half=lip ** 0.5, one=lip, three_half=lip ** 1.5, two=lip ** 2)


@dataclass(frozen=True)
class FrozenGradient:
    """A single realized potential ``U^ω`` (deterministic once frozen).

    Shaped like a potential model as far as certificate probing is concerned:
    ``verify_certificate`` accepts it directly.
    """

    dim: int
    gradient: Callable[[Array], Array]
    energy: Callable[[Array], Array]
    certificate: SmoothnessCertificate


class BatchFrozenGradient:
    """Row-matched realizations: row ``i`` of a query uses realization ``i``.

    ``gradient``/``energy`` evaluate each realized potential at its own row of
    the query array of shape ``(m, d)``.
    """

    def __init__(self, gradient, energy, lipschitz: Array, third: Array):
        self.gradient = gradient
        self.energy = energy
        self.lipschitz = np.asarray(lipschitz, dtype=float)
        self.third = np.asarray(third, dtype=float)


class GradientOracle:
    """Interface shared by all gradient oracles."""

    name: str = "oracle"
    is_exact: bool = False
    certificate_bounds: SmoothnessCertificate
    mean_lip_moments: LipschitzMoments

    def draw(self, q: Array, rng: np.random.Generator) -> Array:
        """One realization of ``∇U^ω(q)`` with fresh randomness."""
        raise NotImplementedError

    def draw_batch(self, Q: Array, rng: np.random.Generator) -> Array:
        """Independent realizations, one per row of ``Q`` of shape (m, d)."""
        raise NotImplementedError

    def freeze(self, rng: np.random.Generator) -> FrozenGradient:
        """Fix ω and return the realized potential."""
        raise NotImplementedError

    def freeze_batch(self, size: int, rng: np.random.Generator) -> BatchFrozenGradient:
        """Fix ``size`` independent realizations for vectorized sweeps."""
        raise NotImplementedError


class ExactOracle(GradientOracle):
    """Degenerate oracle: every draw is the exact gradient."""

    is_exact = True

    def __init__(self, potential: PotentialModel):
        self.name = "exact"
        self.potential = potential
        self.certificate_bounds = potential.certificate
        self.mean_lip_moments = LipschitzMoments.deterministic(potential.certificate.lip)

    def draw(self, q, rng):
        return np.asarray(self.potential.gradient(q), dtype=float)

    def draw_batch(self, Q, rng):
        return np.asarray(self.potential.gradient(Q), dtype=float)

    def freeze(self, rng):
        return FrozenGradient(
            dim=self.potential.dim,
            gradient=self.potential.gradient,
            energy=self.potential.energy,
            certificate=self.potential.certificate,
        )

    def freeze_batch(self, size, rng):
        cert = self.potential.certificate
        return BatchFrozenGradient(
            gradient=self.potential.gradient,
            energy=self.potential.energy,
            lipschitz=np.full(size, cert.lip),
            third=np.full(size, cert.third),
        )


class MinibatchOracle(GradientOracle):
    """Mini-batch estimator over the potential's component decomposition."""

    def __init__(self, potential: PotentialModel, batch: int, rng: np.random.Generator):
        if not potential.components:
            raise OracleConfigurationError(
                f"potential {potential.name!r} has no components; mini-batching needs them"
            )
        n = len(potential.components)
        if not (1 <= batch <= n):
            raise OracleConfigurationError(f"batch must satisfy 1 <= B <= n={n}, got {batch}")
        self.name = f"minibatch(B={batch})"
        self.potential = potential
        self.n = n
        self.batch = batch
        self.scale = n / batch
        self._ell = np.array([c.certificate.ell for c in potential.components])
        self._lip = np.array([c.certificate.lip for c in potential.components])
        self._third = np.array([c.certificate.third for c in potential.components])

        ell_sorted = np.sort(self._ell)
        lip_sorted = np.sort(self._lip)
        third_sorted = np.sort(self._third)
        self.certificate_bounds = SmoothnessCertificate(
            ell=self.scale * float(ell_sorted[:batch].sum()),
            lip=self.scale * float(lip_sorted[-batch:].sum()),
            third=self.scale * float(third_sorted[-batch:].sum()),
        )
        self.mean_lip_moments = self._lip_moments(rng)

    def _lip_moments(self, rng: np.random.Generator) -> LipschitzMoments:
        # Exhaustive over subsets when cheap, otherwise 1e4-sample Monte Carlo.
        if math.comb(self.n, self.batch) <= _ENUMERATION_LIMIT:
            sums = np.array([
                self._lip[list(idx)].sum()
                for idx in itertools.combinations(range(self.n), self.batch)
            ])
        else:
            idx = np.array([
                rng.choice(self.n, size=self.batch, replace=False)
                for _ in range(_MOMENT_MC_DRAWS)
            ])
            sums = self._lip[idx].sum(axis=1)
        lw = self.scale * sums
        return LipschitzMoments(
            half=float(np.mean(lw ** 0.5)),
            one=float(np.mean(lw)),
            three_half=float(np.mean(lw ** 1.5)),
            two=float(np.mean(lw ** 2)),
        )

    # -- subset evaluation ---------------------------------------------------

    def _subset_gradient(self, Q: Array, idx: Array) -> Array:
        if self.potential.subset_gradient is not None:
            return self.potential.subset_gradient(Q, idx)
        Q = np.atleast_2d(Q)
        out = np.zeros_like(Q)
        comps = self.potential.components
        for row, subset in enumerate(idx):
            for i in subset:
                out[row] += np.asarray(comps[int(i)].gradient(Q[row]), dtype=float)
        return self.scale * out

    def _subset_energy(self, Q: Array, idx: Array) -> Array:
        if self.potential.subset_energy is not None:
            return self.potential.subset_energy(Q, idx)
        Q = np.atleast_2d(Q)
        out = np.zeros(Q.shape[0])
        comps = self.potential.components
        for row, subset in enumerate(idx):
            for i in subset:
                out[row] += float(comps[int(i)].energy(Q[row]))
        return self.scale * out

    def _draw_subsets(self, m: int, rng: np.random.Generator) -> Array:
        # Uniform size-B subsets without replacement, one per row.
        return np.array([rng.choice(self.n, size=self.batch, replace=False) for _ in range(m)])

    # -- oracle interface ----------------------------------------------------

    def draw(self, q, rng):
        idx = rng.choice(self.n, size=self.batch, replace=False)
        return self._subset_gradient(np.asarray(q, dtype=float)[None, :], idx[None, :])[0]

    def draw_batch(self, Q, rng):
        Q = np.asarray(Q, dtype=float)
        idx = self._draw_subsets(Q.shape[0], rng)
        return self._subset_gradient(Q, idx)

    def freeze(self, rng):
        idx = rng.choice(self.n, size=self.batch, replace=False)
        subset = np.sort(idx)

        def gradient(q, subset=subset):
            q = np.asarray(q, dtype=float)
            single = q.ndim == 1
            Q = q[None, :] if single else q
            rows = np.broadcast_to(subset, (Q.shape[0], subset.size))
            out = self._subset_gradient(Q, rows)
            return out[0] if single else out

        def energy(q, subset=subset):
            q = np.asarray(q, dtype=float)
            single = q.ndim == 1
            Q = q[None, :] if single else q
            rows = np.broadcast_to(subset, (Q.shape[0], subset.size))
            out = self._subset_energy(Q, rows)
            return out[0] if single else out

        cert = SmoothnessCertificate(
            ell=self.scale * float(self._ell[subset].sum()),
            lip=self.scale * float(self._lip[subset].sum()),
            third=self.scale * float(self._third[subset].sum()),
        )
        return FrozenGradient(dim=self.potential.dim, gradient=gradient,
                              energy=energy, certificate=cert)

    def freeze_batch(self, size, rng):
        idx = self._draw_subsets(size, rng)

        def gradient(Q, idx=idx):
            return self._subset_gradient(np.asarray(Q, dtype=float), idx)

        def energy(Q, idx=idx):
            return self._subset_energy(np.asarray(Q, dtype=float), idx)

        return BatchFrozenGradient(
            gradient=gradient,
            energy=energy,
            lipschitz=self.scale * self._lip[idx].sum(axis=1),
            third=self.scale * self._third[idx].sum(axis=1),
        )


def exact_oracle(potential: PotentialModel) -> ExactOracle:
    """The deterministic oracle; recovers plain (non-stochastic) HMC."""
    return ExactOracle(potential)


def minibatch_oracle(potential: PotentialModel, batch: int,
                     rng: np.random.Generator) -> MinibatchOracle:
    """Uniform size-``batch`` mini-batch oracle over ``potential.components``.

    ``rng`` is consumed once at construction to estimate the Lipschitz moments
    when subset enumeration is too large.
    """
    return MinibatchOracle(potential, batch, rng)


@dataclass(frozen=True)
class UnbiasednessReport:
    """Max standardized deviation of oracle means from the exact gradient."""

    probes: int
    draws_per_probe: int
    max_standardized_deviation: float
    threshold: float = 4.0

    @property
    def passed(self) -> bool:
        return self.max_standardized_deviation < self.threshold


def check_unbiasedness(oracle: GradientOracle, potential: PotentialModel,
                       probes: int, draws_per_probe: int,
                       rng: np.random.Generator, scale: float = 2.0) -> UnbiasednessReport:
    """Standardized test that oracle draws average to ``∇U`` at random probes.

    Per probe the statistic is ``‖mean draw − ∇U(q)‖ / SE`` with
    ``SE = sqrt(tr Cov(draws) / n)``; a zero SE with a nonzero mean gap (a
    deterministic biased oracle) reports an infinite deviation.
    """
    if probes < 1 or draws_per_probe < 1:
        raise ValueError("probes and draws_per_probe must be >= 1")
    worst = 0.0
    for _ in range(probes):
        q = scale * rng.standard_normal(potential.dim)
        grad = np.asarray(potential.gradient(q), dtype=float)
        draws = oracle.draw_batch(np.broadcast_to(q, (draws_per_probe, q.size)).copy(), rng)
        gap = np.linalg.norm(draws.mean(axis=0) - grad)
        se = math.sqrt(float(draws.var(axis=0, ddof=1).sum()) / draws_per_probe) \
            if draws_per_probe > 1 else 0.0
        # Rounding floor: identical draws must read as exact agreement.
        floor = 1e-12 * (1.0 + float(np.linalg.norm(grad)))
        gap = 0.0 if gap < floor else gap
        se = 0.0 if se < floor else se
        if se == 0.0:
            dev = 0.0 if gap == 0.0 else math.inf
        else:
            dev = gap / se
        worst = max(worst, dev)
    return UnbiasednessReport(
        probes=probes, draws_per_probe=draws_per_probe, max_standardized_deviation=worst
    )
