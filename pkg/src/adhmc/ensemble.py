"""Vectorized many-chain kernels and stationary position draws.

The single-chain samplers in :mod:`adhmc.samplers` are strictly sequential;
experiments that evolve thousands of independent chains in lockstep (total
variation decay curves, warmup-based stationary sampling for targets without
an exact sampler) use the batched kernels here instead.  All kernels take and
return position matrices of shape ``(m, d)`` and consume one shared stream,
so results are reproducible for a fixed ``(seed, path)``.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .models import KineticModel, PotentialModel

Array = np.ndarray

# Warmup-sampler defaults: an ensemble of chains run for enough sweeps that
# strongly log-concave targets equilibrate with a wide margin (trajectory
# length 1.0 per sweep, several hundred sweeps of burn-in).
_WARMUP_CHAINS = 256
_WARMUP_SWEEPS = 300
_WARMUP_THIN = 2
_WARMUP_ETA = 0.2
_WARMUP_STEPS = 5


def _batched_trajectory(Q: Array, P: Array, grad_U, grad_V, eta: float, steps: int):
    # One gradient draw per distinct position, shared across the half-step
    # boundary — required so stochastic oracles match the algorithm listing.
    q, p = Q, P
    g = grad_U(q)
    half = 0.5 * eta
    for _ in range(steps):
        p_half = p - half * g
        q = q + eta * grad_V(p_half)
        g = grad_U(q)
        p = p_half - half * g
    return q, p


def ensemble_step(Q: Array, potential: PotentialModel, kinetic: KineticModel,
                  eta: float, steps: int, algorithm: str,
                  rng: np.random.Generator, oracle=None):
    """Advance every chain in ``Q`` by one sampler iteration.

    Returns ``(Q_next, accepted)`` where ``accepted`` is a boolean mask.
    Non-finite proposal energies reject their chain's move.
    """
    m = Q.shape[0]
    if oracle is None or getattr(oracle, "is_exact", False):
        grad_U = potential.gradient
    else:
        def grad_U(X):
            return oracle.draw_batch(X, rng)
    grad_V = kinetic.gradient

    P0 = kinetic.sampler(rng, m)
    if algorithm == "sghmc":
        Qk, Pk = _batched_trajectory(Q, P0, grad_U, grad_V, eta, steps)
        log_ratio = (np.asarray(potential.energy(Q)) + np.asarray(kinetic.energy(P0))
                     - np.asarray(potential.energy(Qk)) - np.asarray(kinetic.energy(Pk)))
        proposal = Qk
    elif algorithm == "adhmc":
        Q1, Pk = _batched_trajectory(Q, P0, grad_U, grad_V, eta, steps)
        P0b = kinetic.sampler(rng, m)
        Q2, Pkb = _batched_trajectory(Q1, P0b, grad_U, grad_V, -eta, steps)
        log_ratio = (np.asarray(potential.energy(Q)) + np.asarray(kinetic.energy(P0))
                     + np.asarray(kinetic.energy(P0b))
                     - np.asarray(potential.energy(Q2)) - np.asarray(kinetic.energy(Pk))
                     - np.asarray(kinetic.energy(Pkb)))
        proposal = Q2
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    log_ratio = np.where(np.isfinite(log_ratio), np.minimum(0.0, log_ratio), -np.inf)
    accepted = np.log(rng.random(m)) <= log_ratio
    Q_next = np.where(accepted[:, None], proposal, Q)
    return Q_next, accepted


def run_ensemble(Q0: Array, potential: PotentialModel, kinetic: KineticModel,
                 eta: float, steps: int, algorithm: str, n_sweeps: int,
                 rng: np.random.Generator,
                 callback: Optional[Callable[[int, Array], None]] = None,
                 oracle=None) -> Array:
    """Iterate :func:`ensemble_step`; ``callback(t, Q)`` sees each sweep."""
    Q = np.array(Q0, dtype=float, copy=True)
    if callback is not None:
        callback(0, Q)
    for t in range(1, n_sweeps + 1):
        Q, _ = ensemble_step(Q, potential, kinetic, eta, steps, algorithm, rng)
        if callback is not None:
            callback(t, Q)
    return Q


def position_sampler(potential: PotentialModel) -> Callable:
    """Return a draw function for positions distributed as ``exp(-U)/Z``.

    Uses the model's exact sampler when available; otherwise builds draws from
    a warmed-up ensemble of chains with a Gaussian auxiliary (the sweep budget
    matches a single long warmup chain, run as parallel chains for wall-clock).
    The returned callable has the signature ``draw(rng, size=None)``.
    """
    if potential.sampler is not None:
        return potential.sampler

    from .zoo import make_kinetic  # deferred: zoo never imports this module

    kinetic = make_kinetic("kin-gauss", potential.dim)
    d = potential.dim
    state: dict = {"Q": None}

    def draw(rng: np.random.Generator, size: Optional[int] = None) -> Array:
        m = 1 if size is None else int(size)
        if state["Q"] is None:
            Q = rng.standard_normal((_WARMUP_CHAINS, d)) / math.sqrt(potential.certificate.ell)
            state["Q"] = run_ensemble(Q, potential, kinetic, _WARMUP_ETA, _WARMUP_STEPS,
                                      "sghmc", _WARMUP_SWEEPS, rng)
        Q = state["Q"]
        pools = []
        collected = 0
        while collected < m:
            Q = run_ensemble(Q, potential, kinetic, _WARMUP_ETA, _WARMUP_STEPS,
                             "sghmc", _WARMUP_THIN, rng)
            pools.append(Q.copy())
            collected += Q.shape[0]
        state["Q"] = Q
        out = np.concatenate(pools, axis=0)[:m]
        return out[0] if size is None else out

    return draw


def estimate_position_rms(potential: PotentialModel, draws: int,
                          rng: np.random.Generator) -> float:
    """Monte Carlo estimate of ``sqrt(E ||q||^2)`` under the target."""
    if potential.second_moment_sigma_q is not None:
        return potential.second_moment_sigma_q
    q = position_sampler(potential)(rng, draws)
    return float(np.sqrt(np.einsum("ij,ij->i", q, q).mean()))
