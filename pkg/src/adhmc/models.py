"""Energy models for position and momentum, with smoothness certificates.

A Hamiltonian is split as ``H(q, p) = U(q) + V(p)``: ``U`` is the negative
log-density of the sampling target, ``V`` the negative log-density of a
user-chosen auxiliary (momentum) distribution.  Both carry a
:class:`SmoothnessCertificate` asserting strong convexity, gradient
Lipschitzness and a bound on the third-derivative tensor; every quantitative
bound computed by :mod:`adhmc.diagnostics` is a function of these constants.

Energy and gradient callables are vectorized over a leading batch axis:
``energy`` maps ``(..., d) -> (...)`` and ``gradient`` maps
``(..., d) -> (..., d)``.  They must be pure; samplers receive an explicit
``numpy.random.Generator`` so that independent workers can use independent
streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ModelValidationError

Array = np.ndarray

# Relative slack used when testing certificate inequalities: for models where
# the bound is attained exactly (Gaussians), floating-point rounding must not
# count as a violation.
_CERT_RTOL = 1e-9


@dataclass(frozen=True)
class PhaseState:
    """A position/momentum pair, the state of the symplectic flow."""

    q: Array
    p: Array

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        if q.ndim != 1 or p.ndim != 1 or q.shape != p.shape or q.size < 1:
            raise ModelValidationError(
                f"phase state needs matching 1-d q and p, got {q.shape} and {p.shape}"
            )
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ModelValidationError("phase state entries must be finite")

    @property
    def dim(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class SmoothnessCertificate:
    """Constants ``(ell, lip, third)`` asserted for an energy function.

    ``ell`` is the strong-convexity modulus, ``lip`` the gradient Lipschitz
    constant and ``third`` an upper bound on the operator norm of the
    third-derivative tensor.  Certificates may be loose (valid upper/lower
    bounds) except where a test demands tightness.
    """

    ell: float
    lip: float
    third: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.ell <= self.lip < np.inf):
            raise ModelValidationError(
                f"certificate needs 0 < ell <= lip < inf, got ell={self.ell}, lip={self.lip}"
            )
        if not (0.0 <= self.third < np.inf):
            raise ModelValidationError(f"certificate needs third >= 0, got {self.third}")


@dataclass(frozen=True)
class MomentDescriptors:
    """Moment summary of an auxiliary distribution ``g ∝ exp(-V)``.

    ``mu[i, j] = E[∂_i V ∂_j V]`` and ``sigma[i, j] = E[∂²_{ij} V]``; for any
    smooth ``V`` with integrable decay these matrices coincide (integration by
    parts), which is both a hypothesis of the displacement bound and a
    sampler-correctness check.

    The scalar ``σ_V²`` appears in the TV-rate with an ambiguous power, so both
    readings are stored: ``grad_norm_mean`` is ``E‖∇V‖₂`` and
    ``grad_norm_sq_mean`` is ``E‖∇V‖₂²``.  ``sigma2``/``sigma4`` bound the
    per-coordinate central second/fourth moments, ``sigma_p`` is the RMS norm
    ``(E‖p‖₂²)^{1/2}``.
    """

    mu: Array
    sigma: Array
    grad_norm_mean: float
    grad_norm_sq_mean: float
    sigma2: float
    sigma4: float
    sigma_p: float
    mean: Array
    standard_errors: Optional[dict] = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        if mu.shape != sigma.shape or mu.ndim != 2 or mu.shape[0] != mu.shape[1]:
            raise ModelValidationError("mu and sigma must be square matrices of equal shape")
        for name in ("grad_norm_mean", "grad_norm_sq_mean", "sigma2", "sigma4", "sigma_p"):
            if getattr(self, name) < 0:
                raise ModelValidationError(f"{name} must be nonnegative")

    def sigma_v_sq(self, reading: str = "squared") -> float:
        """The TV-rate constant under the chosen reading (see module docs)."""
        if reading == "squared":
            return self.grad_norm_sq_mean
        if reading == "first_power":
            return self.grad_norm_mean
        raise ValueError(f"unknown sigma_v reading {reading!r}")


@dataclass(frozen=True)
class Component:
    """One summand of a decomposable potential, used for mini-batching."""

    energy: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    certificate: SmoothnessCertificate


@dataclass(frozen=True)
class PotentialModel:
    """Target potential ``U`` with gradient and smoothness certificate.

    ``components``, when present, decompose ``U = Σ_i U_i`` for stochastic
    gradient oracles; ``subset_gradient(Q, idx)`` / ``subset_energy(Q, idx)``
    are optional vectorized fast paths over row-matched index sets of shape
    ``(m, B)``.  ``sampler`` draws exact target samples when the target admits
    one; ``second_moment_sigma_q`` is the RMS norm of ``q`` under
    ``exp(-U)`` (None when only a Monte Carlo estimate makes sense).
    """

    name: str
    dim: int
    energy: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    certificate: SmoothnessCertificate
    hessian: Optional[Callable[[Array], Array]] = None
    components: Optional[tuple] = None
    sampler: Optional[Callable] = None
    second_moment_sigma_q: Optional[float] = None
    subset_gradient: Optional[Callable] = None
    subset_energy: Optional[Callable] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ModelValidationError("dim must be >= 1")


@dataclass(frozen=True)
class KineticModel:
    """Auxiliary energy ``V`` with exact sampler and moment descriptors."""

    name: str
    dim: int
    energy: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    certificate: SmoothnessCertificate
    sampler: Callable
    hessian: Optional[Callable[[Array], Array]] = None
    moments: Optional[MomentDescriptors] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ModelValidationError("dim must be >= 1")


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of probing a certificate on random pairs.

    ``min_convexity_ratio`` is the smallest observed
    ``⟨∇W(x)−∇W(y), x−y⟩ / ‖x−y‖²`` (must stay >= ell) and
    ``max_lipschitz_ratio`` the largest ``‖∇W(x)−∇W(y)‖ / ‖x−y‖``
    (must stay <= lip).
    """

    trials: int
    convexity_violations: int
    lipschitz_violations: int
    min_convexity_ratio: float
    max_lipschitz_ratio: float
    nonfinite_points: tuple = ()

    @property
    def violations(self) -> int:
        return self.convexity_violations + self.lipschitz_violations + len(self.nonfinite_points)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def verify_certificate(model, trials: int, rng: np.random.Generator,
                       scale: float = 3.0) -> CertificateReport:
    """Probe strong convexity and gradient Lipschitzness on random pairs.

    Pairs are drawn i.i.d. Gaussian with the given ``scale``; the two defining
    inequalities of the smoothness class are tested with a small relative
    slack so that certificates attained with equality (Gaussians) do not
    trip on rounding.  Non-finite gradients count as violations and are
    reported with their probe location.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cert = model.certificate
    d = model.dim
    x = scale * rng.standard_normal((trials, d))
    y = scale * rng.standard_normal((trials, d))
    # Avoid degenerate pairs: nudge any coincident draw apart.
    close = np.linalg.norm(x - y, axis=1) < 1e-12
    if np.any(close):
        y[close] += 1.0

    gx = np.asarray(model.gradient(x), dtype=float)
    gy = np.asarray(model.gradient(y), dtype=float)
    finite = np.isfinite(gx).all(axis=1) & np.isfinite(gy).all(axis=1)
    nonfinite_points = tuple(map(tuple, x[~finite]))

    dx = (x - y)[finite]
    dg = (gx - gy)[finite]
    nx2 = np.einsum("ij,ij->i", dx, dx)
    inner = np.einsum("ij,ij->i", dg, dx)
    conv_ratio = inner / nx2
    lip_ratio = np.linalg.norm(dg, axis=1) / np.sqrt(nx2)

    conv_bad = int(np.sum(conv_ratio < cert.ell * (1.0 - _CERT_RTOL) - _CERT_RTOL))
    lip_bad = int(np.sum(lip_ratio > cert.lip * (1.0 + _CERT_RTOL) + _CERT_RTOL))
    return CertificateReport(
        trials=trials,
        convexity_violations=conv_bad,
        lipschitz_violations=lip_bad,
        min_convexity_ratio=float(conv_ratio.min()) if conv_ratio.size else np.nan,
        max_lipschitz_ratio=float(lip_ratio.max()) if lip_ratio.size else np.nan,
        nonfinite_points=nonfinite_points,
    )


def sample_auxiliary(kinetic: KineticModel, rng: np.random.Generator,
                     size: Optional[int] = None) -> Array:
    """Draw momentum distributed as ``exp(-V(p))/Z``.

    With ``size=None`` returns one vector of shape ``(d,)``; otherwise an
    array of shape ``(size, d)``.  Draws are independent across calls given
    independent streams.
    """
    return kinetic.sampler(rng, size)


def estimate_moments(kinetic: KineticModel, trials: int,
                     rng: np.random.Generator) -> MomentDescriptors:
    """Monte Carlo estimate of the auxiliary moment descriptors.

    Returns point estimates with standard errors attached under
    ``standard_errors`` (keys ``mu``, ``sigma``, ``grad_norm_mean``,
    ``grad_norm_sq_mean``, ``sigma2``, ``sigma4``, ``sigma_p``, ``mean``).
    """
    if trials < 1000:
        raise ValueError("moment estimation needs trials >= 1000")
    p = kinetic.sampler(rng, trials)
    g = np.asarray(kinetic.gradient(p), dtype=float)
    if kinetic.hessian is None:
        raise ModelValidationError(f"kinetic {kinetic.name!r} has no hessian; cannot estimate sigma_ij")
    h = np.asarray(kinetic.hessian(p), dtype=float)

    n = trials
    outer = np.einsum("ni,nj->nij", g, g)
    mu = outer.mean(axis=0)
    mu_se = outer.std(axis=0, ddof=1) / np.sqrt(n)
    sigma = h.mean(axis=0)
    sigma_se = h.std(axis=0, ddof=1) / np.sqrt(n)

    gnorm = np.linalg.norm(g, axis=1)
    mean_p = p.mean(axis=0)
    centred = p - mean_p
    var_i = centred.var(axis=0, ddof=1)
    m4_i = (centred ** 4).mean(axis=0)
    i2 = int(np.argmax(var_i))
    i4 = int(np.argmax(m4_i))
    norm_sq = np.einsum("ni,ni->n", p, p)

    def _se(x: Array) -> float:
        return float(x.std(ddof=1) / np.sqrt(n))

    sigma_p_sq = float(norm_sq.mean())
    sigma_p = float(np.sqrt(sigma_p_sq))
    return MomentDescriptors(
        mu=mu,
        sigma=sigma,
        grad_norm_mean=float(gnorm.mean()),
        grad_norm_sq_mean=float((gnorm ** 2).mean()),
        sigma2=float(var_i[i2]),
        sigma4=float(m4_i[i4]),
        sigma_p=sigma_p,
        mean=mean_p,
        standard_errors={
            "mu": mu_se,
            "sigma": sigma_se,
            "grad_norm_mean": _se(gnorm),
            "grad_norm_sq_mean": _se(gnorm ** 2),
            "sigma2": _se((centred[:, i2]) ** 2),
            "sigma4": _se(centred[:, i4] ** 4),
            # Delta method through the square root.
            "sigma_p": _se(norm_sq) / (2.0 * sigma_p) if sigma_p > 0 else 0.0,
            "mean": p.std(axis=0, ddof=1) / np.sqrt(n),
        },
    )


def finite_difference_gradient_check(model, probes: int, rng: np.random.Generator,
                                     h: float = 1e-5, scale: float = 2.0) -> float:
    """Worst relative deviation between central differences and the gradient.

    The step ``h = 1e-5`` balances truncation against roundoff in double
    precision; deviations are measured relative to ``1 + |∂_i W|``.
    """
    d = model.dim
    x = scale * rng.standard_normal((probes, d))
    g = np.asarray(model.gradient(x), dtype=float)
    worst = 0.0
    eye = np.eye(d)
    for i in range(d):
        step = h * eye[i]
        fd = (np.asarray(model.energy(x + step)) - np.asarray(model.energy(x - step))) / (2.0 * h)
        dev = np.abs(fd - g[:, i]) / (1.0 + np.abs(g[:, i]))
        worst = max(worst, float(dev.max()))
    return worst


def check_component_sum(potential: PotentialModel, probes: int,
                        rng: np.random.Generator, scale: float = 2.0) -> float:
    """Worst relative mismatch between ``Σ_i ∇U_i`` and ``∇U`` at random probes."""
    if not potential.components:
        raise ModelValidationError(f"potential {potential.name!r} has no components")
    x = scale * rng.standard_normal((probes, potential.dim))
    total = np.zeros_like(x)
    for comp in potential.components:
        total += np.asarray(comp.gradient(x), dtype=float)
    g = np.asarray(potential.gradient(x), dtype=float)
    denom = 1.0 + np.abs(g)
    return float((np.abs(total - g) / denom).max())
