"""QoS-constrained transmit power minimization for a fixed RIS configuration.

Each SINR constraint is written in its second-order cone form

    sqrt(sum_{j != k} |g_k w_j|^2 + 1) <= Re(g_k w_k) / sqrt(gamma_k),

with ``g_k = h_k^H / sigma_k``. Fixing the real part of ``g_k w_k`` is
free because a common phase rotation of ``w_k`` leaves every SINR
unchanged.
"""

from __future__ import annotations

import numpy as np

from . import conic
from .netmodel import (
    BeamformingSolution,
    BeamformingStatus,
    ChannelRealization,
    RisConfiguration,
    SystemConfig,
    effective_channels,
)

__all__ = ["solve_beamforming", "beamform_effective", "max_min_sinr"]


def _complex_rows(g: np.ndarray, num_users: int, num_antennas: int, j: int):
    """Real-coordinate rows of Re(g w_j) and Im(g w_j) over x = [Re W, Im W]."""
    KM = num_users * num_antennas
    re = np.zeros(2 * KM)
    im = np.zeros(2 * KM)
    cols = j * num_antennas + np.arange(num_antennas)
    re[cols], re[KM + cols] = g.real, -g.imag
    im[cols], im[KM + cols] = g.imag, g.real
    return re, im


def beamform_effective(H: np.ndarray, sinr_threshold, noise_power_mw, max_power_mw: float,
                       tol: conic.SolverTolerances | None = None) -> BeamformingSolution:
    """Minimize sum ||w_k||^2 given effective channel rows ``H`` (K, M)."""
    H = np.asarray(H, dtype=complex)
    K, M = H.shape
    gamma = np.broadcast_to(np.asarray(sinr_threshold, float), (K,))
    noise = np.broadcast_to(np.asarray(noise_power_mw, float), (K,))
    # work in units of the typical single-user power so solver tolerances are relative
    norms = np.sum(np.abs(H) ** 2, axis=1)
    ref = gamma * noise / np.where(norms > 0, norms, 1.0)
    scale = float(np.sqrt(np.mean(ref))) if np.all(norms > 0) and np.mean(ref) > 0 else 1.0
    G = H * scale / np.sqrt(noise)[:, None]
    KM = K * M

    prob = conic.ConicProblem()
    x = prob.add_variable("w", 2 * KM)
    for k in range(K):
        rows = []
        re_kk, _ = _complex_rows(G[k], K, M, k)
        rows.append(re_kk / np.sqrt(gamma[k]))
        for j in range(K):
            if j != k:
                rows.extend(_complex_rows(G[k], K, M, j))
        rows.append(np.zeros(2 * KM))
        const = np.zeros(len(rows))
        const[-1] = 1.0
        prob.add_constraint(conic.ConeKind.SOC, [(x, np.array(rows))], const)
    if np.isfinite(max_power_mw):
        power_rows = np.vstack([np.zeros(2 * KM), np.eye(2 * KM)])
        const = np.zeros(2 * KM + 1)
        const[0] = np.sqrt(max_power_mw) / scale
        prob.add_constraint(conic.ConeKind.SOC, [(x, power_rows)], const)
    prob.set_objective([(x, 0.0)])
    prob.set_quadratic(x, 2.0)

    sol = conic.solve(prob, tol)
    if sol.status is conic.ConicStatus.PRIMAL_INFEASIBLE:
        return BeamformingSolution.failed(K, M, BeamformingStatus.INFEASIBLE)
    if not sol.optimal:
        return BeamformingSolution.failed(K, M, BeamformingStatus.SOLVER_FAILURE)
    v = scale * sol.value("w")
    W = (v[:KM] + 1j * v[KM:]).reshape(K, M)
    return BeamformingSolution(W, BeamformingStatus.OPTIMAL)


def solve_beamforming(channels: ChannelRealization, ris: RisConfiguration, config: SystemConfig,
                      tol: conic.SolverTolerances | None = None) -> BeamformingSolution:
    """Optimal beamformers for the configuration, or an infeasible marker."""
    H = effective_channels(channels, ris)
    return beamform_effective(H, config.sinr_threshold, config.noise_power_mw,
                              config.max_transmit_power_mw, tol)


def max_min_sinr(H: np.ndarray, sinr_threshold, noise_power_mw, max_power_mw: float,
                 rel_tol: float = 1e-3, tol: conic.SolverTolerances | None = None):
    """Largest common fraction ``t`` of the SINR targets reachable within the budget.

    Bisection (geometric) on ``t`` with a power-minimization feasibility
    solve at every step. ``t = 1`` is tried first and returned as soon as it
    is feasible. Returns ``(t, BeamformingSolution)`` for the best feasible
    ``t`` (``t = 0`` and a failed solution if none is).
    """
    H = np.asarray(H, dtype=complex)
    K, M = H.shape
    gamma = np.broadcast_to(np.asarray(sinr_threshold, float), (K,))
    noise = np.broadcast_to(np.asarray(noise_power_mw, float), (K,))
    sol = beamform_effective(H, gamma, noise, max_power_mw, tol)
    if sol.feasible:
        return 1.0, sol
    # single-user bound: no user can exceed P_max ||h_k||^2 / sigma_k^2
    hi = float(np.min(max_power_mw * np.sum(np.abs(H) ** 2, axis=1) / (noise * gamma)))
    hi = min(hi, 1.0)
    if not hi > 0:
        return 0.0, BeamformingSolution.failed(K, M, BeamformingStatus.INFEASIBLE)
    lo, best = 0.0, BeamformingSolution.failed(K, M, BeamformingStatus.INFEASIBLE)
    floor = 1e-9 * hi
    while hi - lo > rel_tol * hi and hi > floor:
        t = 0.5 * (lo + hi)
        trial = beamform_effective(H, t * gamma, noise, max_power_mw, tol)
        if trial.feasible:
            lo, best = t, trial
        elif trial.status is BeamformingStatus.INFEASIBLE:
            hi = t
        else:
            break
    return lo, best
