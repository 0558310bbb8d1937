"""Zero-forcing style phase design with exhaustive active-set search.

Each user gets its own slice of every active RIS. On that slice the
phases are chosen to cancel the interfering streams while adding the
intended one coherently: maximize ``Re(v^H a_kk)`` over unit-modulus
``v`` lying in the orthogonal complement of the interferer vectors. The
subspace constraint is relaxed into a quadratic barrier and handled by
alternating two closed-form updates.

Vectors follow the lifted convention of :mod:`risgreen.ris_select`: ``v``
is the conjugate of the reflection coefficients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import conic
from .beamform import solve_beamforming
from .netmodel import (
    BeamformingSolution,
    BeamformingStatus,
    ChannelRealization,
    PowerBreakdown,
    RisConfiguration,
    SystemConfig,
    effective_channels,
    network_power,
)
from .ris_select import build_lifting, matched_filter

__all__ = [
    "ZfParams",
    "ZfPhaseResult",
    "ZfResult",
    "partition_elements",
    "zf_feasible",
    "projector",
    "zf_phase_opt",
    "zf_minimize_power",
]

MAX_ENUMERATED_RIS = 12
RESTART_BATCH = 16  # restarts run together; the schedule is the same either way


@dataclass(frozen=True)
class ZfParams:
    """``barrier=None`` picks ``10 * max|a_kk|`` per user."""

    barrier: float | None = None
    max_alt_iters: int = 2000
    interference_tol: float = 1e-3  # relative to ||a_kk||
    max_restarts: int = 30
    max_rounds: int = 5  # beamforming / phase alternations per candidate set
    seed: int = 0  # random starting phases of the restarts

    def __post_init__(self) -> None:
        if self.barrier is not None and not self.barrier > 0:
            raise ValueError("barrier must be positive")
        if self.max_alt_iters < 1 or self.max_restarts < 0 or self.max_rounds < 1:
            raise ValueError("iteration limits must be positive")
        if not self.interference_tol > 0:
            raise ValueError("interference_tol must be positive")


def partition_elements(config_or_elements, num_users: int | None = None, active=None) -> list[np.ndarray]:
    """Split every RIS into ``K`` contiguous near-equal parts, one per user.

    Earlier users take the remainder. Indices refer to the stacked element
    vector of the RISs in ``active`` (all RISs by default), in RIS order.
    If some user would receive nothing, the stacked elements are split
    globally instead.
    """
    if num_users is None:
        elements = tuple(config_or_elements.elements_per_ris)
        num_users = config_or_elements.num_users
    else:
        elements = tuple(config_or_elements)
    if active is not None:
        elements = tuple(elements[l] for l in sorted(active))
    total = sum(elements)
    if total < num_users:
        raise ValueError("fewer RIS elements than users")
    parts: list[list[int]] = [[] for _ in range(num_users)]
    start = 0
    for n in elements:
        for k, chunk in enumerate(np.array_split(np.arange(start, start + n), num_users)):
            parts[k].extend(chunk.tolist())
        start += n
    if any(not p for p in parts):
        return [np.asarray(c) for c in np.array_split(np.arange(total), num_users)]
    return [np.asarray(p, dtype=int) for p in parts]


def zf_feasible(a_vectors) -> bool:
    """Necessary condition for exact unit-modulus cancellation of every interferer.

    A sum of terms with fixed magnitudes and free phases can vanish only
    if the largest magnitude is at most the sum of the others.
    """
    for a in a_vectors:
        mag = np.abs(np.asarray(a, complex))
        if mag.size == 0:
            continue
        total = mag.sum()
        if 2.0 * mag.max() > total * (1.0 + 1e-12):
            return False
    return True


def projector(A: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the complement of ``span(columns of A)``."""
    A = np.asarray(A, complex)
    if A.ndim == 1:
        A = A[:, None]
    n = A.shape[0]
    Q = np.eye(n) - A @ np.linalg.pinv(A.conj().T @ A) @ A.conj().T
    return 0.5 * (Q + Q.conj().T)


def _phase(x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x, dtype=complex)
    nz = np.abs(x) > 0
    out[nz] = x[nz] / np.abs(x[nz])
    return out


@dataclass(frozen=True)
class ZfPhaseResult:
    v: np.ndarray  # unit modulus, lifted convention
    residuals: np.ndarray  # |v^H a_kj| per interferer
    objective_trace: tuple
    barrier: float
    restarts: int


def _barrier_objective(v, d, a_kk, Q, delta) -> float:
    return float(np.real(np.vdot(v, a_kk)) - delta * np.linalg.norm(v - Q @ d) ** 2)


def _alternate(a_kk, Q, deltas, iters, D):
    """Run the closed-form alternation on every column of ``D`` at once.

    Column ``j`` uses barrier weight ``deltas[j]`` and stops on its own
    once its objective settles. Returns the phases (one column per start)
    and each column's objective trace.
    """
    C = a_kk[:, None] / (2 * deltas[None, :])

    def step(QD):
        X = C + QD
        mag = np.abs(X)
        V = np.where(mag > 0, X / np.where(mag > 0, mag, 1.0), 1.0)
        R = V - QD
        obj = np.real(a_kk.conj() @ V) - deltas * np.real(np.sum(R.conj() * R, axis=0))
        return V, obj

    V, obj = step(Q @ D)
    objs = [obj]
    stop = np.full(deltas.size, iters, dtype=int)
    running = np.ones(deltas.size, dtype=bool)
    for it in range(1, iters + 1):
        V_new, obj_new = step(Q @ (Q @ V))
        V = np.where(running[None, :], V_new, V)
        obj_new = np.where(running, obj_new, obj)
        settled = running & (np.abs(obj_new - obj) <= 1e-13 * np.maximum(1.0, np.abs(obj_new)))
        stop[settled] = it
        running &= ~settled
        obj = obj_new
        objs.append(obj)
        if not running.any():
            break
    objs = np.array(objs)
    return V, [tuple(float(x) for x in objs[:stop[j] + 1, j]) for j in range(deltas.size)]


def zf_phase_opt(a_kk: np.ndarray, Q: np.ndarray, params: ZfParams | None = None,
                 interferers: np.ndarray | None = None) -> ZfPhaseResult:
    """Alternating closed-form updates for the barrier-relaxed ZF phase problem.

    ``interferers`` (columns ``a_kj``) is only used to measure the residual
    interference; when it exceeds the tolerance the barrier weight is
    doubled and the alternation restarted. The first run starts from
    ``d = Q phase(a_kk)``, restarts from ``Q`` applied to random phases,
    since the alternation often stalls at the same point otherwise.
    Restarts do not depend on each other, so they are run in batches;
    the result is the one the sequential schedule would return.
    """
    params = params or ZfParams()
    a_kk = np.asarray(a_kk, complex)
    n = a_kk.size
    A = np.zeros((n, 0), complex) if interferers is None else np.asarray(interferers, complex).reshape(n, -1)
    scale = float(np.max(np.abs(a_kk), initial=0.0))
    delta0 = params.barrier if params.barrier is not None else 10.0 * (scale if scale > 0 else 1.0)
    target = params.interference_tol * float(np.linalg.norm(a_kk))
    rng = np.random.default_rng(params.seed)
    starts = [_phase(a_kk)] + [np.exp(2j * np.pi * rng.uniform(size=n)) for _ in range(params.max_restarts)]
    best = None
    for lo in range(0, len(starts), RESTART_BATCH):
        idx = np.arange(lo, min(lo + RESTART_BATCH, len(starts)))
        deltas = delta0 * 2.0 ** idx
        V, traces = _alternate(a_kk, Q, deltas, params.max_alt_iters, Q @ np.column_stack([starts[i] for i in idx]))
        res = np.abs(A.conj().T @ V)
        worst = res.max(axis=0, initial=0.0)
        for j, restart in enumerate(idx):
            if best is None or worst[j] < best[1]:
                best = (ZfPhaseResult(V[:, j].copy(), res[:, j].copy(), traces[j], float(deltas[j]), int(restart)),
                        float(worst[j]))
            if worst[j] <= target:
                return best[0]
    return best[0]


@dataclass
class ZfResult:
    ris: RisConfiguration
    beamforming: BeamformingSolution
    power: PowerBreakdown | None
    candidates: list

    @property
    def feasible(self) -> bool:
        return self.beamforming.feasible

    def __iter__(self):
        return iter((self.ris, self.beamforming, self.power))


def _null_space_admits_unit_modulus(A: np.ndarray) -> bool:
    """False when ``A^H v = 0`` has no unit-modulus solution for structural reasons.

    A trivial null space leaves only ``v = 0``; a one-dimensional one
    holds a unit-modulus vector only if its basis vector has constant
    modulus.
    """
    n = A.shape[0]
    if A.shape[1] == 0:
        return True
    _, s, Vh = np.linalg.svd(A.conj().T)
    rank = int(np.sum(s > s.max(initial=0.0) * max(A.shape) * np.finfo(float).eps))
    dim = n - rank
    if dim == 0:
        return False
    if dim == 1:
        mag = np.abs(Vh[-1])
        return bool(mag.min() >= mag.max() * (1.0 - 1e-6))
    return True


def _zf_phases(lifting, parts, params):
    """Per-user ZF phases on the restricted lifting, or ``None`` if some interferer set cannot be cancelled."""
    K = lifting.num_users
    v = np.ones(lifting.total_elements, complex)
    for k, idx in enumerate(parts):
        a_kk = lifting.a[k, k, idx]
        A = np.column_stack([lifting.a[k, j, idx] for j in range(K) if j != k]) if K > 1 \
            else np.zeros((idx.size, 0), complex)
        if not zf_feasible(A.T) or not _null_space_admits_unit_modulus(A):
            return None
        res = zf_phase_opt(a_kk, projector(A) if A.shape[1] else np.eye(idx.size), params, A)
        v[idx] = res.v
    return v


def _evaluate_set(channels, config, active, params, tol):
    """ZF phases on ``active`` alternated with beamforming; best feasible round wins."""
    order = sorted(active)
    base = RisConfiguration.all_active(channels.elements_per_ris).with_active(active)
    W = solve_beamforming(channels, base, config, tol)
    if not order:
        return base, W
    failed = BeamformingSolution.failed(channels.num_users, channels.num_antennas, BeamformingStatus.INFEASIBLE)
    # interferer vectors need some beamformers; an infeasible start uses matched filters
    current = W.vectors if W.feasible else matched_filter(effective_channels(channels, base),
                                                          config.max_transmit_power_mw)
    parts = partition_elements(channels.elements_per_ris, channels.num_users, active)
    best = None
    for _ in range(params.max_rounds):
        lifting = build_lifting(channels, current).restrict(order)
        v = _zf_phases(lifting, parts, params)
        if v is None:
            break
        phases = list(base.phases)
        for l, idx in zip(order, lifting.element_sets):
            phases[l] = np.conj(v[idx])
        ris = RisConfiguration(frozenset(active), tuple(phases))
        W_new = solve_beamforming(channels, ris, config, tol)
        if not W_new.feasible:
            break
        p = network_power(ris, W_new, config).total_mw
        if best is not None and p >= best[2] - 1e-9:
            break
        best = (ris, W_new, p)
        current = W_new.vectors
    if best is None:
        return base, failed
    return best[0], best[1]


def zf_minimize_power(channels: ChannelRealization, config: SystemConfig, params: ZfParams | None = None,
                      tol: conic.SolverTolerances | None = None) -> ZfResult:
    """Least network power over all active sets, ZF phases on each.

    Sets are visited in ascending RIS power; since transmit power is
    non-negative, the scan stops once a set's RIS power alone reaches the
    incumbent's total.
    """
    params = params or ZfParams()
    L = channels.num_ris
    if L > MAX_ENUMERATED_RIS:
        raise ValueError(f"exhaustive search limited to {MAX_ENUMERATED_RIS} RISs")
    ris_power = config.ris_power_mw
    subsets = [frozenset(c) for r in range(L + 1) for c in itertools.combinations(range(L), r)]
    subsets.sort(key=lambda s: (float(sum(ris_power[l] for l in s)), len(s), sorted(s)))
    best = None
    log = []
    for active in subsets:
        rp = float(sum(ris_power[l] for l in active))
        if best is not None and rp + config.static_power_mw >= best[2].total_mw:
            break
        ris, W = _evaluate_set(channels, config, active, params, tol)
        power = network_power(ris, W, config) if W.feasible else None
        log.append({"active": sorted(active), "feasible": W.feasible,
                    "total_mw": power.total_mw if power else None})
        if power is not None and (best is None or power.total_mw < best[2].total_mw):
            best = (ris, W, power)
    if best is None:
        ris = RisConfiguration.all_active(channels.elements_per_ris)
        W = BeamformingSolution.failed(channels.num_users, channels.num_antennas, BeamformingStatus.INFEASIBLE)
        return ZfResult(ris, W, None, log)
    return ZfResult(best[0], best[1], best[2], log)
