"""Builtin target potentials and auxiliary kinetics.

Every builtin ships an analytically checkable smoothness certificate:

* ``gauss-iso``       — U(q) = ||q||^2 / 2, certificate (1, 1, 0).
* ``gauss-aniso``     — U(q) = q' diag(lam) q / 2 with eigenvalues geometrically
                        spaced over [1, kappa]; certificate (min lam, max lam, 0).
* ``logistic-ridge``  — ridge-regularised logistic regression on synthetic
                        data, decomposed into n strongly convex components for
                        mini-batching.
* ``kin-gauss``       — V(p) = ||p||^2 / 2, the classical quadratic kinetic.
* ``kin-logcosh``     — V(p) = sum_i [p_i^2/2 + eps*log cosh(p_i - b_i)], a
                        genuinely asymmetric auxiliary (V''(x) = 1 + eps*sech^2
                        lies in [1, 1+eps], and the shift b breaks evenness).

Kinetic moment descriptors for builtins are computed by 1-d quadrature per
coordinate (exact up to quadrature error), except E||grad V|| in d > 1 which
has no separable form and is Monte Carlo estimated with a fixed internal
stream so model construction stays deterministic.
"""

from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import expit as _sigmoid

from .errors import AuxiliarySamplingError, ModelValidationError
from .models import (
    Component,
    KineticModel,
    MomentDescriptors,
    PotentialModel,
    SmoothnessCertificate,
)

Array = np.ndarray

POTENTIAL_IDS = ("gauss-iso", "gauss-aniso", "logistic-ridge")
KINETIC_IDS = ("kin-gauss", "kin-logcosh")

# Entropy prefix for synthetic-data generation; combined with (dim, n) so the
# logistic dataset is a pure function of its shape.
_DATA_ENTROPY = 0x1DB55EED
_MAX_REJECTION_ATTEMPTS = 10 ** 6

# max |d/dx sech^2(x)| = 4/(3*sqrt(3)), attained at tanh^2 = 1/3.
_SECH2_SLOPE_MAX = 4.0 / (3.0 * math.sqrt(3.0))
# max |s(1-s)(1-2s)| for the logistic sigmoid s.
_SIGMOID_THIRD_MAX = 1.0 / (6.0 * math.sqrt(3.0))


def _softplus(x: Array) -> Array:
    return np.logaddexp(0.0, x)


def _logcosh(x: Array) -> Array:
    # log cosh(x) = |x| + log1p(exp(-2|x|)) - log 2, stable for large |x|.
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def make_potential(model_id: str, dim: int, *, kappa: float = 10.0,
                   n_components: int = 100, ridge: float = 0.1) -> PotentialModel:
    """Construct a builtin potential by its stable string identifier."""
    if dim < 1:
        raise ModelValidationError("dim must be >= 1")
    if model_id == "gauss-iso":
        return _gauss_potential(np.ones(dim), "gauss-iso")
    if model_id == "gauss-aniso":
        if kappa < 1.0:
            raise ModelValidationError("gauss-aniso needs kappa >= 1")
        lam = np.geomspace(1.0, float(kappa), dim)
        return _gauss_potential(lam, "gauss-aniso")
    if model_id == "logistic-ridge":
        return _logistic_ridge_potential(dim, n_components, ridge)
    raise ModelValidationError(f"unknown potential id {model_id!r}")


def make_kinetic(model_id: str, dim: int, *, eps: float = 0.5,
                 shift: Union[float, Sequence[float]] = 1.0,
                 centered: bool = False) -> KineticModel:
    """Construct a builtin kinetic by its stable string identifier."""
    if dim < 1:
        raise ModelValidationError("dim must be >= 1")
    if model_id == "kin-gauss":
        return _gauss_kinetic(dim)
    if model_id == "kin-logcosh":
        if eps < 0:
            raise ModelValidationError("kin-logcosh needs eps >= 0")
        shifts = np.broadcast_to(np.asarray(shift, dtype=float), (dim,)).copy()
        return _logcosh_kinetic(dim, float(eps), shifts, centered)
    raise ModelValidationError(f"unknown kinetic id {model_id!r}")


# ---------------------------------------------------------------------------
# Gaussian potentials
# ---------------------------------------------------------------------------

def _gauss_potential(lam: Array, name: str) -> PotentialModel:
    d = lam.size
    lam = lam.astype(float)
    inv_sqrt = 1.0 / np.sqrt(lam)
    hess = np.diag(lam)

    def energy(q):
        q = np.asarray(q, dtype=float)
        return 0.5 * np.einsum("...i,i,...i->...", q, lam, q)

    def gradient(q):
        return np.asarray(q, dtype=float) * lam

    def hessian(q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(hess, q.shape[:-1] + (d, d)).copy()

    def sampler(rng, size=None):
        shape = (d,) if size is None else (int(size), d)
        return rng.standard_normal(shape) * inv_sqrt

    return PotentialModel(
        name=name,
        dim=d,
        energy=energy,
        gradient=gradient,
        hessian=hessian,
        certificate=SmoothnessCertificate(float(lam.min()), float(lam.max()), 0.0),
        sampler=sampler,
        second_moment_sigma_q=float(np.sqrt(np.sum(1.0 / lam))),
    )


# ---------------------------------------------------------------------------
# Logistic regression with per-component ridge
# ---------------------------------------------------------------------------

def _logistic_ridge_potential(dim: int, n: int, ridge: float) -> PotentialModel:
    if n < 1:
        raise ModelValidationError("logistic-ridge needs n_components >= 1")
    if ridge <= 0:
        # Each component must be strongly convex on its own so that realized
        # mini-batch potentials stay inside the smoothness class.
        raise ModelValidationError("logistic-ridge needs ridge > 0")
    rng = np.random.default_rng(np.random.SeedSequence(_DATA_ENTROPY, spawn_key=(dim, n)))
    X = rng.standard_normal((n, dim)) / math.sqrt(dim)
    w_star = rng.standard_normal(dim)
    w_star /= np.linalg.norm(w_star)
    y = np.where(X @ w_star + 0.3 * rng.standard_normal(n) >= 0.0, 1.0, -1.0)

    row_sq = np.einsum("ni,ni->n", X, X)
    comp_lip = ridge + row_sq / 4.0
    comp_third = row_sq ** 1.5 * _SIGMOID_THIRD_MAX

    def energy(q):
        q = np.asarray(q, dtype=float)
        t = q @ X.T
        return _softplus(-y * t).sum(axis=-1) + 0.5 * n * ridge * np.einsum("...i,...i->...", q, q)

    def gradient(q):
        q = np.asarray(q, dtype=float)
        s = _sigmoid(-y * (q @ X.T))
        return -(s * y) @ X + n * ridge * q

    def hessian(q):
        q = np.asarray(q, dtype=float)
        s = _sigmoid(-y * (q @ X.T))
        w = s * (1.0 - s)
        h = np.einsum("...n,ni,nj->...ij", w, X, X)
        return h + n * ridge * np.eye(dim)

    def subset_energy(Q, idx):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        xi, yi = X[idx], y[idx]
        t = np.einsum("mbd,md->mb", xi, Q)
        b = idx.shape[-1]
        scale = n / b
        return scale * (_softplus(-yi * t).sum(axis=1)
                        + 0.5 * b * ridge * np.einsum("md,md->m", Q, Q))

    def subset_gradient(Q, idx):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        xi, yi = X[idx], y[idx]
        t = np.einsum("mbd,md->mb", xi, Q)
        s = _sigmoid(-yi * t)
        b = idx.shape[-1]
        scale = n / b
        return scale * (np.einsum("mb,mbd->md", -s * yi, xi) + b * ridge * Q)

    def _component(i: int) -> Component:
        xi = X[i].copy()
        yi = float(y[i])

        def c_energy(q, xi=xi, yi=yi):
            q = np.asarray(q, dtype=float)
            return _softplus(-yi * (q @ xi)) + 0.5 * ridge * np.einsum("...i,...i->...", q, q)

        def c_gradient(q, xi=xi, yi=yi):
            q = np.asarray(q, dtype=float)
            s = _sigmoid(-yi * (q @ xi))
            return -np.multiply.outer(s * yi, xi).reshape(q.shape) + ridge * q

        return Component(
            energy=c_energy,
            gradient=c_gradient,
            certificate=SmoothnessCertificate(ridge, float(comp_lip[i]), float(comp_third[i])),
        )

    return PotentialModel(
        name="logistic-ridge",
        dim=dim,
        energy=energy,
        gradient=gradient,
        hessian=hessian,
        certificate=SmoothnessCertificate(
            n * ridge, float(n * ridge + row_sq.sum() / 4.0), float(comp_third.sum())
        ),
        components=tuple(_component(i) for i in range(n)),
        sampler=None,
        second_moment_sigma_q=None,
        subset_gradient=subset_gradient,
        subset_energy=subset_energy,
    )


# ---------------------------------------------------------------------------
# Gaussian kinetic
# ---------------------------------------------------------------------------

def _gauss_kinetic(d: int) -> KineticModel:
    eye = np.eye(d)
    # E||p|| for a standard d-dimensional normal.
    grad_norm_mean = math.sqrt(2.0) * math.gamma((d + 1) / 2.0) / math.gamma(d / 2.0)
    moments = MomentDescriptors(
        mu=eye.copy(),
        sigma=eye.copy(),
        grad_norm_mean=grad_norm_mean,
        grad_norm_sq_mean=float(d),
        sigma2=1.0,
        sigma4=3.0,
        sigma_p=math.sqrt(d),
        mean=np.zeros(d),
    )

    def energy(p):
        p = np.asarray(p, dtype=float)
        return 0.5 * np.einsum("...i,...i->...", p, p)

    def gradient(p):
        return np.asarray(p, dtype=float)

    def hessian(p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(eye, p.shape[:-1] + (d, d)).copy()

    def sampler(rng, size=None):
        shape = (d,) if size is None else (int(size), d)
        return rng.standard_normal(shape)

    return KineticModel(
        name="kin-gauss",
        dim=d,
        energy=energy,
        gradient=gradient,
        hessian=hessian,
        certificate=SmoothnessCertificate(1.0, 1.0, 0.0),
        sampler=sampler,
        moments=moments,
    )


# ---------------------------------------------------------------------------
# Shifted-logcosh kinetic
# ---------------------------------------------------------------------------

def _coordinate_quadratures(eps: float, b: float) -> dict:
    """Exact per-coordinate moments of exp(-x^2/2 - eps*log cosh(x - b))."""
    lo, hi = -14.0 - abs(b), 14.0 + abs(b)

    def dens(x):
        return np.exp(-0.5 * x * x - eps * _logcosh(np.asarray(x) - b))

    def v1(x):
        return x + eps * np.tanh(x - b)

    def v2(x):
        return 1.0 + eps / np.cosh(x - b) ** 2

    def integrate(f):
        val, _ = quad(lambda x: f(x) * dens(x), lo, hi, points=[b, 0.0], limit=200)
        return val

    z = integrate(lambda x: 1.0)
    mean = integrate(lambda x: x) / z
    out = {
        "z": z,
        "mean": mean,
        "mu": integrate(lambda x: v1(x) ** 2) / z,
        "sigma": integrate(v2) / z,
        "abs_v1": integrate(lambda x: abs(v1(x))) / z,
        "second": integrate(lambda x: x * x) / z,
        "var": integrate(lambda x: (x - mean) ** 2) / z,
        "fourth_central": integrate(lambda x: (x - mean) ** 4) / z,
    }
    return out


def _rejection_sample_logcosh(eps: float, b: float, count: int,
                              rng: np.random.Generator) -> Array:
    """Sample exp(-x^2/2 - eps*log cosh(x-b)) by rejection from N(0, 1).

    The envelope constant is exp(eps * max(0, -min_x log cosh(x - b))) = 1
    because cosh >= 1, so the acceptance probability of a proposal x is
    exp(-eps * log cosh(x - b)).
    """
    out = np.empty(count)
    filled = 0
    attempts = 0
    while filled < count:
        need = count - filled
        block = max(need + (need // 2), 128)
        attempts += block
        if attempts > _MAX_REJECTION_ATTEMPTS:
            raise AuxiliarySamplingError(
                f"logcosh rejection sampler exceeded {_MAX_REJECTION_ATTEMPTS} attempts",
                attempts=attempts,
            )
        x = rng.standard_normal(block)
        u = rng.random(block)
        keep = x[u < np.exp(-eps * _logcosh(x - b))]
        take = min(keep.size, need)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def _logcosh_kinetic(d: int, eps: float, shifts: Array, centered: bool) -> KineticModel:
    quads = {b: _coordinate_quadratures(eps, b) for b in np.unique(shifts)}
    per = [quads[b] for b in shifts]
    offset = np.array([q["mean"] for q in per]) if centered else np.zeros(d)

    def energy(p):
        x = np.asarray(p, dtype=float) + offset
        return np.sum(0.5 * x * x + eps * _logcosh(x - shifts), axis=-1)

    def gradient(p):
        x = np.asarray(p, dtype=float) + offset
        return x + eps * np.tanh(x - shifts)

    def hessian(p):
        x = np.asarray(p, dtype=float) + offset
        diag = 1.0 + eps / np.cosh(x - shifts) ** 2
        out = np.zeros(x.shape[:-1] + (d, d))
        idx = np.arange(d)
        out[..., idx, idx] = diag
        return out

    def sampler(rng, size=None):
        m = 1 if size is None else int(size)
        draws = np.empty((m, d))
        for j in range(d):
            draws[:, j] = _rejection_sample_logcosh(eps, float(shifts[j]), m, rng)
        draws -= offset
        return draws[0] if size is None else draws

    mu_diag = np.array([q["mu"] for q in per])
    sg_diag = np.array([q["sigma"] for q in per])
    mean = np.array([q["mean"] for q in per]) - offset
    var = np.array([q["var"] for q in per])
    m4 = np.array([q["fourth_central"] for q in per])
    second = np.array([q["second"] for q in per])
    if centered:
        second = var + mean ** 2  # recentred coordinates: E[p^2] with the new origin

    if d == 1:
        grad_norm_mean = float(per[0]["abs_v1"])
    else:
        # No separable form for E||grad V|| in d > 1; estimate once with a
        # fixed stream (2e5 draws keeps the SE below 1e-3 of the value).
        mc = np.random.default_rng(np.random.SeedSequence(_DATA_ENTROPY, spawn_key=(d, 7)))
        samples = np.column_stack(
            [_rejection_sample_logcosh(eps, float(b), 200_000, mc) for b in shifts]
        )
        g = samples + eps * np.tanh(samples - shifts)
        grad_norm_mean = float(np.linalg.norm(g, axis=1).mean())

    moments = MomentDescriptors(
        mu=np.diag(mu_diag),
        sigma=np.diag(sg_diag),
        grad_norm_mean=grad_norm_mean,
        grad_norm_sq_mean=float(mu_diag.sum()),
        sigma2=float(var.max()),
        sigma4=float(m4.max()),
        sigma_p=float(np.sqrt(second.sum())),
        mean=mean,
    )
    name = "kin-logcosh-centered" if centered else "kin-logcosh"
    return KineticModel(
        name=name,
        dim=d,
        energy=energy,
        gradient=gradient,
        hessian=hessian,
        certificate=SmoothnessCertificate(1.0, 1.0 + eps, eps * _SECH2_SLOPE_MAX),
        sampler=sampler,
        moments=moments,
    )


def numeric_coordinate_cdf(energy1d, lo: float, hi: float, n: int = 4001):
    """CDF of exp(-energy1d(x))/Z on a grid, for use as a test oracle.

    ``energy1d`` must be vectorized over a 1-d array of scalars.  Returns a
    callable evaluating the CDF by linear interpolation.
    """
    xs = np.linspace(lo, hi, n)
    dens = np.exp(-np.asarray(energy1d(xs), dtype=float))
    cum = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(xs))])
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, xs, cum)

    return cdf
