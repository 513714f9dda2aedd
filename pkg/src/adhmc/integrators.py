"""Leapfrog integration, a high-accuracy reference flow, and error sweeps.

The leapfrog step for a separable Hamiltonian ``H = U(q) + V(p)`` is the
half-kick / drift / half-kick composition

    p_half = p - (eta/2) grad_U(q)
    q_next = q + eta grad_V(p_half)
    p_next = p_half - (eta/2) grad_U(q_next)

The backward step flips every sign, which is algebraically the forward step
with ``-eta``; composing backward after forward is the exact identity map up
to rounding.  Note the backward map inverts without negating momentum — that
is what lets the alternating-direction sampler remain reversible for
asymmetric auxiliaries.

The reference flow integrates the exact Hamiltonian equations ``dq/dt =
grad_V(p)``, ``dp/dt = -grad_U(q)`` with classical fourth-order Runge-Kutta at
a fixed fine substep and refuses to return (raises) if its own energy drift
exceeds a strict gate, so error sweeps can never silently compare against a
bad reference.

One-step error sweeps measure RMS position/momentum deviations and mean
absolute energy error against the reference over stationary draws
``(q, p) ~ exp(-U) x exp(-V)`` and fit the log-log order of convergence.
With a stochastic gradient oracle, the oracle randomness is frozen per sample
and the same realized gradient drives both the leapfrog step and the
reference flow: the measured quantity is the conditional one-step error
averaged over realizations, which is what the cubic stochastic error bounds
control.  (The sampling algorithms themselves re-draw at every gradient
evaluation; see :func:`leapfrog_trajectory`.)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .errors import IntegrationError, ReferenceFlowError
from .models import KineticModel, PhaseState, PotentialModel

Array = np.ndarray

_DRIFT_GATE = 1e-10
DEFAULT_ETAS = (0.02, 0.04, 0.08, 0.16)


@dataclass(frozen=True)
class LeapfrogConfig:
    """Step size, step count and direction for a leapfrog trajectory."""

    eta: float
    steps: int
    direction: str = "forward"

    def __post_init__(self):
        if not (self.eta > 0 and np.isfinite(self.eta)):
            raise ValueError(f"eta must be positive and finite, got {self.eta}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {self.direction!r}")

    @property
    def signed_eta(self) -> float:
        return self.eta if self.direction == "forward" else -self.eta


def _leapfrog_arrays(q: Array, p: Array, grad_U, grad_V, eta: float):
    """One unchecked leapfrog step, batched; negative ``eta`` runs backward."""
    p_half = p - (0.5 * eta) * grad_U(q)
    q_next = q + eta * grad_V(p_half)
    p_next = p_half - (0.5 * eta) * grad_U(q_next)
    return q_next, p_next


def leapfrog_step(state: PhaseState, grad_U, grad_V, eta: float,
                  direction: str = "forward") -> PhaseState:
    """One leapfrog step with per-stage finiteness checks."""
    if not (eta > 0 and np.isfinite(eta)):
        raise ValueError(f"eta must be positive and finite, got {eta}")
    h = eta if direction == "forward" else -eta
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    p_half = state.p - (0.5 * h) * np.asarray(grad_U(state.q), dtype=float)
    if not np.all(np.isfinite(p_half)):
        raise IntegrationError("non-finite momentum after half kick", stage="half_kick")
    q_next = state.q + h * np.asarray(grad_V(p_half), dtype=float)
    if not np.all(np.isfinite(q_next)):
        raise IntegrationError("non-finite position after drift", stage="drift")
    p_next = p_half - (0.5 * h) * np.asarray(grad_U(q_next), dtype=float)
    if not np.all(np.isfinite(p_next)):
        raise IntegrationError("non-finite momentum after full kick", stage="full_kick")
    return PhaseState(q=q_next, p=p_next)


def leapfrog_trajectory(state: PhaseState, oracle, kinetic: KineticModel,
                        config: LeapfrogConfig, rng: np.random.Generator) -> list:
    """Run ``config.steps`` leapfrog steps with fresh oracle draws.

    One gradient draw is made per distinct position and reused across the
    half-step boundary: the closing half kick of step ``k`` and the opening
    half kick of step ``k+1`` share the draw made at ``q_{k+1}``.
    """
    h = config.signed_eta
    grad_V = kinetic.gradient
    q, p = state.q, state.p
    g = np.asarray(oracle.draw(q, rng), dtype=float)
    out = [state]
    for _ in range(config.steps):
        p_half = p - (0.5 * h) * g
        q = q + h * np.asarray(grad_V(p_half), dtype=float)
        if not np.all(np.isfinite(q)):
            raise IntegrationError("non-finite position after drift", stage="drift")
        g = np.asarray(oracle.draw(q, rng), dtype=float)
        p = p_half - (0.5 * h) * g
        if not np.all(np.isfinite(p)):
            raise IntegrationError("non-finite momentum after full kick", stage="full_kick")
        out.append(PhaseState(q=q, p=p))
    return out


def _rk4_flow(q: Array, p: Array, grad_U, grad_V, t: float, substeps: int):
    """Classical RK4 on the Hamiltonian equations; batched, no checks."""
    h = t / substeps
    for _ in range(substeps):
        k1q = grad_V(p)
        k1p = -grad_U(q)
        k2q = grad_V(p + 0.5 * h * k1p)
        k2p = -grad_U(q + 0.5 * h * k1q)
        k3q = grad_V(p + 0.5 * h * k2p)
        k3p = -grad_U(q + 0.5 * h * k2q)
        k4q = grad_V(p + h * k3p)
        k4p = -grad_U(q + h * k3q)
        q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return q, p


def _checked_reference(q, p, grad_U, grad_V, energy_U, energy_V, t, substeps):
    h0 = np.asarray(energy_U(q)) + np.asarray(energy_V(p))
    q1, p1 = _rk4_flow(q, p, grad_U, grad_V, t, substeps)
    h1 = np.asarray(energy_U(q1)) + np.asarray(energy_V(p1))
    drift = np.abs(h1 - h0)
    gate = _DRIFT_GATE * (1.0 + np.abs(h0))
    if np.any(drift > gate):
        worst = float(np.max(drift / gate))
        raise ReferenceFlowError(
            f"reference flow energy drift exceeded its gate by factor {worst:.3g} "
            f"(t={t}, substeps={substeps})"
        )
    return q1, p1


def reference_flow(state: PhaseState, potential: PotentialModel,
                   kinetic: KineticModel, t: float, substeps: int = 256) -> PhaseState:
    """High-accuracy Hamiltonian flow at time ``t`` with an energy-drift gate.

    Uses RK4 with fixed substep ``t/substeps`` (local error O(h^5)); raises
    :class:`ReferenceFlowError` if |H(end) - H(start)| exceeds
    ``1e-10 * (1 + |H(start)|)``.  Exact gradients only — stochastic oracles
    are not accepted here.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0.0:
        return state
    q, p = _checked_reference(
        state.q, state.p, potential.gradient, kinetic.gradient,
        potential.energy, kinetic.energy, t, substeps,
    )
    return PhaseState(q=q, p=p)


@dataclass(frozen=True)
class ErrorSweepResult:
    """Per-step-size one-step errors against the reference flow.

    ``q_errors``/``p_errors`` are RMS-norm estimates ``sqrt(E ||diff||^2)``,
    ``h_errors`` the mean absolute energy error of the step,
    ``u_errors``/``v_errors`` the mean absolute potential/kinetic energy
    mismatch at the endpoints (the quantities the acceptance bound controls).
    ``slopes`` maps series name to a fitted ``(slope, standard error)`` pair
    from weighted least squares on the log-log points.
    """

    etas: tuple
    q_errors: tuple
    q_ses: tuple
    p_errors: tuple
    p_ses: tuple
    h_errors: tuple
    h_ses: tuple
    u_errors: tuple
    u_ses: tuple
    v_errors: tuple
    v_ses: tuple
    slopes: dict
    samples: int

    def __post_init__(self):
        e = np.asarray(self.etas)
        if np.any(np.diff(e) <= 0):
            raise ValueError("etas must be strictly increasing")
        for name in ("q_errors", "p_errors", "h_errors", "u_errors", "v_errors"):
            vals = np.asarray(getattr(self, name))
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ValueError(f"{name} must be finite and nonnegative")


def fit_loglog_slope(etas: Sequence[float], errors: Sequence[float],
                     ses: Sequence[float]):
    """Weighted least-squares slope of log(error) against log(eta).

    Weights come from the per-point relative standard errors (the delta-method
    standard deviation of log error); returns ``(slope, slope_se)``.
    """
    x = np.log(np.asarray(etas, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    rel = np.asarray(ses, dtype=float) / np.asarray(errors, dtype=float)
    w = 1.0 / np.maximum(rel, 1e-12) ** 2
    xbar = np.sum(w * x) / np.sum(w)
    ybar = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xbar) ** 2)
    slope = float(np.sum(w * (x - xbar) * (y - ybar)) / sxx)
    return slope, float(1.0 / np.sqrt(sxx))


def _rms_and_se(diff: Array):
    """RMS norm of per-sample vector differences with a delta-method SE."""
    sq = np.einsum("ij,ij->i", diff, diff)
    m = float(sq.mean())
    se_m = float(sq.std(ddof=1) / np.sqrt(sq.size))
    rms = float(np.sqrt(m))
    return rms, (se_m / (2.0 * rms) if rms > 0 else 0.0)


def _mean_abs_and_se(vals: Array):
    a = np.abs(vals)
    return float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size))


def one_step_error_sweep(potential: PotentialModel, kinetic: KineticModel,
                         etas: Sequence[float], samples: int,
                         rng: np.random.Generator, oracle=None,
                         substeps: int = 256) -> ErrorSweepResult:
    """Measure one-step leapfrog errors over a grid of step sizes.

    For each eta, draws ``samples`` stationary pairs ``(q, p)``, runs one
    leapfrog step and the gated reference flow, and records position, momentum
    and energy errors with standard errors; finally fits log-log slopes.
    With a stochastic ``oracle``, each sample freezes one oracle realization
    that drives both integrators (see module docs).
    """
    etas = tuple(sorted(float(e) for e in etas))
    if len(etas) < 3:
        raise ValueError("slope fitting needs at least 3 eta points")
    if len(set(etas)) != len(etas):
        raise ValueError("etas must be distinct")
    if not all(0.0 < e <= 0.5 for e in etas):
        raise ValueError("etas must lie in (0, 0.5]")
    if samples < 1000:
        raise ValueError("samples must be >= 1000")

    from .ensemble import position_sampler  # deferred: ensemble builds on this module

    draw_q = position_sampler(potential)
    rows = {k: [] for k in ("q", "p", "h", "u", "v")}
    for eta in etas:
        q0 = draw_q(rng, samples)
        p0 = kinetic.sampler(rng, samples)
        if oracle is None or oracle.is_exact:
            grad_U, energy_U = potential.gradient, potential.energy
        else:
            frozen = oracle.freeze_batch(samples, rng)
            grad_U, energy_U = frozen.gradient, frozen.energy

        q_lf, p_lf = _leapfrog_arrays(q0, p0, grad_U, kinetic.gradient, eta)
        q_ref, p_ref = _checked_reference(
            q0, p0, grad_U, kinetic.gradient, energy_U, kinetic.energy, eta, substeps
        )
        h_start = np.asarray(energy_U(q0)) + np.asarray(kinetic.energy(p0))
        h_lf = np.asarray(energy_U(q_lf)) + np.asarray(kinetic.energy(p_lf))

        rows["q"].append(_rms_and_se(q_lf - q_ref))
        rows["p"].append(_rms_and_se(p_lf - p_ref))
        rows["h"].append(_mean_abs_and_se(h_lf - h_start))
        rows["u"].append(_mean_abs_and_se(
            np.asarray(potential.energy(q_lf)) - np.asarray(potential.energy(q_ref))))
        rows["v"].append(_mean_abs_and_se(
            np.asarray(kinetic.energy(p_lf)) - np.asarray(kinetic.energy(p_ref))))

    series = {k: tuple(v[0] for v in rows[k]) for k in rows}
    ses = {k: tuple(v[1] for v in rows[k]) for k in rows}
    slopes = {k: fit_loglog_slope(etas, series[k], ses[k]) for k in rows}
    return ErrorSweepResult(
        etas=etas,
        q_errors=series["q"], q_ses=ses["q"],
        p_errors=series["p"], p_ses=ses["p"],
        h_errors=series["h"], h_ses=ses["h"],
        u_errors=series["u"], u_ses=ses["u"],
        v_errors=series["v"], v_ses=ses["v"],
        slopes=slopes,
        samples=samples,
    )


def _derivative_fourth_order(fvals: Array, h: float) -> Array:
    """Fourth-order finite-difference derivative on a uniform grid."""
    n = fvals.size
    if n < 5:
        raise ValueError("need at least 5 grid nodes")
    d = np.empty(n)
    d[2:-2] = (-fvals[4:] + 8.0 * fvals[3:-1] - 8.0 * fvals[1:-3] + fvals[:-4]) / (12.0 * h)
    d[0] = (-25.0 * fvals[0] + 48.0 * fvals[1] - 36.0 * fvals[2]
            + 16.0 * fvals[3] - 3.0 * fvals[4]) / (12.0 * h)
    d[1] = (-3.0 * fvals[0] - 10.0 * fvals[1] + 18.0 * fvals[2]
            - 6.0 * fvals[3] + fvals[4]) / (12.0 * h)
    d[-2] = (3.0 * fvals[-1] + 10.0 * fvals[-2] - 18.0 * fvals[-3]
             + 6.0 * fvals[-4] - fvals[-5]) / (12.0 * h)
    d[-1] = (25.0 * fvals[-1] - 48.0 * fvals[-2] + 36.0 * fvals[-3]
             - 16.0 * fvals[-4] + 3.0 * fvals[-5]) / (12.0 * h)
    return d


def quadrature_identity_check(f: Callable[[float], float], eta: float,
                              grid: int) -> float:
    """Residual of the double-integral rearrangement identity.

    Evaluates both sides of

        int_0^eta int_0^t f ds dt - (1/2) int_0^eta int_0^eta f ds dt
            = int_0^eta (tau/2)(tau - eta) f'(tau) d tau

    by composite quadrature on ``grid`` nodes, with f' from fourth-order
    finite differences, and returns the absolute residual.  The two sides are
    computed through genuinely different discretizations, so the residual is a
    real check rather than an algebraic tautology.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if grid < 5:
        raise ValueError("grid must be >= 5")
    xs = np.linspace(0.0, eta, grid)
    try:
        fv = np.asarray(f(xs), dtype=float)
        if fv.shape != xs.shape:
            raise TypeError
    except Exception:
        fv = np.array([float(f(x)) for x in xs])
    inner = cumulative_simpson(fv, x=xs, initial=0.0)
    lhs = float(simpson(inner, x=xs)) - 0.5 * eta * float(inner[-1])
    fp = _derivative_fourth_order(fv, xs[1] - xs[0])
    rhs = float(simpson(0.5 * xs * (xs - eta) * fp, x=xs))
    return abs(lhs - rhs)


def leapfrog_jacobian_determinant(potential: PotentialModel, kinetic: KineticModel,
                                  state: PhaseState, eta: float,
                                  fd_step: float = 1e-5) -> float:
    """|det| of the numerically differentiated one-step forward map.

    Central differences on the 2d-dimensional phase map; volume preservation
    of the symplectic update means the result must be 1 up to the
    finite-difference error.
    """
    d = state.dim

    def flat_map(z: Array) -> Array:
        q, p = z[:d], z[d:]
        qn, pn = _leapfrog_arrays(q, p, potential.gradient, kinetic.gradient, eta)
        return np.concatenate([qn, pn])

    z0 = np.concatenate([state.q, state.p])
    jac = np.empty((2 * d, 2 * d))
    for j in range(2 * d):
        step = np.zeros(2 * d)
        step[j] = fd_step
        jac[:, j] = (flat_map(z0 + step) - flat_map(z0 - step)) / (2.0 * fd_step)
    return float(abs(np.linalg.det(jac)))
