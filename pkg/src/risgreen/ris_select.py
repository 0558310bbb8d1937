"""Active-RIS selection and phase design for fixed beamformers.

With the beamformers fixed, the received amplitude of stream ``j`` at user
``k`` is affine in the stacked reflection vector. Writing
``v = conj(beta * theta)`` (one entry per RIS element) gives

    h_k^H w_j = v^H a[k, j] + b[k, j],

and with ``v_hat = [v; 1]`` and ``Theta = v_hat v_hat^H`` every SINR
constraint becomes linear in ``Theta``. Dropping ``rank(Theta) = 1`` gives
the semidefinite relaxation; the DC program instead penalizes
``Tr(Theta) - ||Theta||_2`` and linearizes the spectral norm at the current
iterate.

``minimize_network_power`` wraps this into the alternating loop
(beamformers, then RIS set and phases, then beamformers again) together
with the binary search over how many low-importance RISs can be switched
off.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import conic
from .beamform import max_min_sinr, solve_beamforming
from .netmodel import (
    BeamformingSolution,
    ChannelRealization,
    PowerBreakdown,
    RisConfiguration,
    SystemConfig,
    effective_channels,
    network_power,
    sinr,
)

log = logging.getLogger(__name__)

__all__ = [
    "InfeasibleError",
    "LiftedData",
    "DcParams",
    "DcIterate",
    "DcResult",
    "RankOneFactor",
    "NetworkPowerResult",
    "build_lifting",
    "sdr_solve",
    "spectral_subgradient",
    "rank_gap",
    "gaussian_randomization",
    "dc_phase_selection",
    "extract_rank_one",
    "recover_phases",
    "lifted_sinr",
    "set_feasibility",
    "binary_search_active_set",
    "minimize_network_power",
    "optimize_fixed_set",
]

# relative SINR slack when re-checking recovered phases against fixed beamformers
RECHECK_TOL = 1e-3
ACTIVE_THRESHOLD = 1e-4


class InfeasibleError(RuntimeError):
    """The constraints admit no solution (certificate or failed re-check)."""


class SolverError(RuntimeError):
    """The conic solver broke down; the outcome is unknown."""


@dataclass(frozen=True)
class LiftedData:
    """Affine amplitude data ``a[k, j]`` (K, K, N) and ``b[k, j]`` (K, K)."""

    a: np.ndarray
    b: np.ndarray
    element_sets: tuple  # index arrays into the stacked element vector, one per RIS

    @property
    def num_users(self) -> int:
        return self.b.shape[0]

    @property
    def total_elements(self) -> int:
        return self.a.shape[2]

    @property
    def side(self) -> int:
        return self.total_elements + 1

    def R(self, k: int, j: int) -> np.ndarray:
        """Bordered matrix ``[[a a^H, a b*], [b a^H, 0]]``."""
        a, b = self.a[k, j], self.b[k, j]
        n = a.size
        out = np.zeros((n + 1, n + 1), complex)
        out[:n, :n] = np.outer(a, a.conj())
        out[:n, n] = a * np.conj(b)
        out[n, :n] = b * a.conj()
        return out

    def restrict(self, ris_indices: Sequence[int]) -> "LiftedData":
        """Lifting over the elements of the given RISs only."""
        keep = [int(l) for l in sorted(ris_indices)]
        idx = np.concatenate([self.element_sets[l] for l in keep]) if keep else np.zeros(0, int)
        sets, start = [], 0
        for l in keep:
            n = self.element_sets[l].size
            sets.append(np.arange(start, start + n))
            start += n
        return LiftedData(self.a[:, :, idx], self.b, tuple(sets))


def build_lifting(channels: ChannelRealization, W) -> LiftedData:
    V = np.asarray(getattr(W, "vectors", W), dtype=complex)
    K = channels.num_users
    blocks, sets, start = [], [], 0
    for l in range(channels.num_ris):
        TW = channels.bs_to_ris[l] @ V.T  # (N_l, K), column j is T_l w_j
        # a[k, j] = conj(h_lk) * (T_l w_j)
        blocks.append(channels.ris_to_user[l].conj()[:, None, :] * TW.T[None, :, :])
        n = TW.shape[0]
        sets.append(np.arange(start, start + n))
        start += n
    a = np.concatenate(blocks, axis=2) if blocks else np.zeros((K, K, 0), complex)
    b = channels.direct.conj() @ V.T
    return LiftedData(a, b, tuple(sets))


def lifted_sinr(lifting: LiftedData, v: np.ndarray, noise_power_mw) -> np.ndarray:
    """SINR of every user for the lifted reflection vector ``v``."""
    amp = lifting.a @ np.conj(v) + lifting.b  # [k, j]
    gains = np.abs(amp) ** 2
    signal = np.diag(gains)
    return signal / (gains.sum(axis=1) - signal + np.asarray(noise_power_mw, float))


def _qos_rows(lifting: LiftedData, gamma, noise):
    """SINR constraints ``Re Tr(C_k Theta) + c_k >= 0``, scaled by ``1/sigma_k^2``."""
    K, n = lifting.num_users, lifting.side
    Cs = np.empty((K, n, n), complex)
    consts = np.empty(K)
    for k in range(K):
        C = lifting.R(k, k).copy()
        c = abs(lifting.b[k, k]) ** 2
        for j in range(K):
            if j != k:
                C -= gamma[k] * lifting.R(k, j)
                c -= gamma[k] * abs(lifting.b[k, j]) ** 2
        Cs[k] = C / noise[k]
        consts[k] = c / noise[k] - gamma[k]
    return Cs, consts


def qos_margins(lifting: LiftedData, Theta: np.ndarray, gamma, noise) -> np.ndarray:
    Cs, consts = _qos_rows(lifting, gamma, noise)
    return np.real(np.einsum("kij,ji->k", Cs, Theta)) + consts


@dataclass
class _PhaseSolve:
    Theta: np.ndarray
    u: np.ndarray | None
    margin: float | None
    solution: conic.ConicSolution


def _solve_phase_sdp(lifting: LiftedData, gamma, noise, *, ris_power=None, fixed_beta=None,
                     penalty_matrix=None, maximize_margin=False, margin_floor=0.0, proximal=None,
                     tol: conic.SolverTolerances | None = None) -> _PhaseSolve:
    """Shared SDP over ``Theta`` (side N+1).

    With ``fixed_beta`` the diagonal is pinned to ``beta**2``; otherwise the
    per-RIS variable ``u = beta**2`` is free in [0, 1] and ``ris_power @ u``
    is minimized. ``penalty_matrix`` adds ``Re Tr(P Theta)``; ``proximal`` is
    ``(alpha, Theta_prev)`` adding ``alpha/2 ||Theta - Theta_prev||_F^2``.
    The maximized margin is bounded below by ``margin_floor``, which must
    be attainable (keeping the margin variable sign-constrained).
    """
    n = lifting.side
    L = len(lifting.element_sets)
    prob = conic.ConicProblem()
    X = prob.add_hermitian("Theta", n)
    objective = []
    if fixed_beta is None:
        u = prob.add_variable("u", L, nonneg=True)
        u_power = np.asarray(ris_power, float)
        objective.append((u, u_power))
        prob.add_constraint(conic.ConeKind.NONNEG, [(u, -np.eye(L))], np.ones(L))
    for l, idx in enumerate(lifting.element_sets):
        if idx.size == 0:
            continue
        rows = np.zeros((idx.size, X.size))
        rows[np.arange(idx.size), X.diag_local[idx]] = 1.0
        if fixed_beta is None:
            col = np.zeros((idx.size, L)); col[:, l] = -1.0
            prob.add_constraint(conic.ConeKind.ZERO, [(X.indices, rows), (u, col)], 0.0)
        else:
            prob.add_constraint(conic.ConeKind.ZERO, [(X.indices, rows)], -float(fixed_beta[l]) ** 2)
    diag_last = np.zeros(X.size); diag_last[X.diag_local[-1]] = 1.0
    prob.add_constraint(conic.ConeKind.ZERO, [(X.indices, diag_last)], -1.0)

    Cs, consts = _qos_rows(lifting, gamma, noise)
    rows = X.trace_coeffs(Cs)
    if maximize_margin:
        t = prob.add_variable("margin", 1, nonneg=True)
        prob.add_constraint(conic.ConeKind.NONNEG, [(X.indices, rows), (t, -np.ones((len(consts), 1)))],
                            consts - margin_floor)
        objective.append((t, -1.0))
    else:
        prob.add_constraint(conic.ConeKind.NONNEG, [(X.indices, rows)], consts)
    if penalty_matrix is not None:
        objective.append((X.indices, X.trace_coeffs(penalty_matrix)))
    if proximal is not None:
        alpha, prev = proximal
        w2 = X.frobenius_weights() ** 2
        prob.set_quadratic(X.indices, alpha * w2)
        objective.append((X.indices, -alpha * w2 * X.from_matrix(prev)))
    if not objective:
        objective.append((X.indices, 0.0))
    prob.set_objective(objective)

    sol = conic.solve(prob, tol)
    if sol.status is conic.ConicStatus.PRIMAL_INFEASIBLE:
        raise InfeasibleError("phase subproblem is infeasible for the fixed beamformers")
    if not sol.optimal:
        raise SolverError(f"phase subproblem solve failed: {sol.status.value}")
    Theta = sol.matrix("Theta")
    Theta = 0.5 * (Theta + Theta.conj().T)
    u_val = np.clip(sol.value("u"), 0.0, 1.0) if fixed_beta is None else None
    margin = margin_floor + float(sol.value("margin")[0]) if maximize_margin else None
    return _PhaseSolve(Theta, u_val, margin, sol)


def sdr_solve(lifting: LiftedData, config: SystemConfig, relaxed_beta_fixed=None,
              tol: conic.SolverTolerances | None = None):
    """Semidefinite relaxation of the RIS selection / phase problem.

    Returns ``(Theta, beta)``. With ``relaxed_beta_fixed`` the RIS set is
    pinned and, since the RIS power is then constant, the minimum QoS
    margin is maximized instead.
    """
    gamma, noise = config.sinr_threshold, config.noise_power_mw
    if relaxed_beta_fixed is None:
        res = _solve_phase_sdp(lifting, gamma, noise, ris_power=_ris_power(lifting, config), tol=tol)
        return res.Theta, np.sqrt(res.u)
    beta = np.asarray(relaxed_beta_fixed, float)
    res = _solve_phase_sdp(lifting, gamma, noise, fixed_beta=beta, maximize_margin=True, tol=tol)
    return res.Theta, beta.copy()


def _ris_power(lifting: LiftedData, config: SystemConfig) -> np.ndarray:
    per_element = config.per_element_power_mw
    return np.array([idx.size * per_element for idx in lifting.element_sets], float)


def _leading_eig(Theta: np.ndarray):
    w, U = np.linalg.eigh(0.5 * (Theta + Theta.conj().T))
    u1 = U[:, -1]
    nz = np.flatnonzero(np.abs(u1) > 1e-12)
    if nz.size:
        u1 = u1 * np.exp(-1j * np.angle(u1[nz[0]]))
    return w[-1], u1, w


def spectral_subgradient(Theta: np.ndarray) -> np.ndarray:
    """``u1 u1^H`` for the leading unit eigenvector (first nonzero entry real positive)."""
    _, u1, _ = _leading_eig(Theta)
    return np.outer(u1, u1.conj())


def rank_gap(Theta: np.ndarray) -> float:
    lam, _, _ = _leading_eig(Theta)
    return float(np.real(np.trace(Theta)) - lam)


@dataclass(frozen=True)
class RankOneFactor:
    vector: np.ndarray
    approximate: bool


def extract_rank_one(Theta: np.ndarray, rank_tol: float | None = None) -> RankOneFactor:
    """Leading-eigenpair factor ``sqrt(lambda_1) u_1`` of a PSD matrix."""
    Theta = np.asarray(Theta, complex)
    lam, u1, w = _leading_eig(Theta)
    if w[0] < -1e-6 * max(1.0, abs(lam)):  # eigen-level noise from the solver is tolerated
        raise ValueError("matrix is not positive semidefinite")
    tr = float(np.real(np.trace(Theta)))
    tol = 1e-6 * tr if rank_tol is None else rank_tol
    return RankOneFactor(np.sqrt(max(lam, 0.0)) * u1, tr - lam > tol)


def recover_phases(theta_hat: np.ndarray) -> np.ndarray:
    """Normalize by the last entry and drop it."""
    theta_hat = np.asarray(theta_hat, complex)
    last = theta_hat[-1]
    if abs(last) <= 1e-9:
        raise ValueError("last entry of the lifted vector vanishes")
    return theta_hat[:-1] / last


def unit_phases(v: np.ndarray) -> np.ndarray:
    """Reflection coefficients ``exp(i arg theta)`` from a lifted vector ``v = conj(theta)``."""
    return np.exp(-1j * np.angle(v))


def gaussian_randomization(Theta: np.ndarray, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Samples ``xi ~ CN(0, Theta)``, one per row, normalized to last entry 1."""
    w, U = np.linalg.eigh(0.5 * (Theta + Theta.conj().T))
    F = U * np.sqrt(np.clip(w, 0.0, None))
    n = Theta.shape[0]
    r = (rng.standard_normal((trials, n)) + 1j * rng.standard_normal((trials, n))) / np.sqrt(2)
    xi = r @ F.T
    last = xi[:, -1:]
    last = np.where(np.abs(last) < 1e-12, 1.0, last)
    return xi / last


@dataclass
class DcParams:
    """DC iteration settings; ``penalty=None`` means the largest RIS power."""

    penalty: float | None = None
    strong_convexity: float = 1e-3
    rank_gap_tol: float = 1e-6  # relative to Tr(Theta)
    objective_stall_tol: float = 1e-3  # mW
    max_dc_iters: int = 30
    randomization_trials: int = 100
    max_penalty_factor: float = 8.0
    proximal: bool = False
    max_outer_iters: int = 20
    outer_stall_tol: float = 1e-3  # relative decrease of the network power
    refine_phases: bool = True  # phase-only refinement at the start and on the final RIS set
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("strong_convexity", "rank_gap_tol", "objective_stall_tol",
                     "max_dc_iters", "randomization_trials", "max_outer_iters", "outer_stall_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.penalty is not None and not self.penalty > 0:
            raise ValueError("penalty must be positive")
        if self.max_penalty_factor < 1:
            raise ValueError("max_penalty_factor must be at least 1")

    def penalty_for(self, config: SystemConfig) -> float:
        if self.penalty is not None:
            return float(self.penalty)
        p = float(np.max(config.ris_power_mw, initial=0.0))
        return p if p > 0 else 1.0


@dataclass
class DcIterate:
    iteration: int
    objective: float
    rank_gap: float
    penalty: float
    step_sq: float
    status: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DcResult:
    Theta: np.ndarray
    beta: np.ndarray
    log: list = field(default_factory=list)
    converged: bool = False

    def __iter__(self):
        return iter((self.Theta, self.beta, self.log))

    def log_jsonl(self) -> str:
        return "".join(rec.to_json() + "\n" for rec in self.log)


def dc_objective(Theta: np.ndarray, u, ris_power, penalty: float) -> float:
    base = float(np.dot(ris_power, u)) if u is not None else 0.0
    return base + penalty * rank_gap(Theta)


def _lift(v: np.ndarray) -> np.ndarray:
    vh = np.append(v, 1.0)
    return np.outer(vh, vh.conj())


def _rank_one_candidates(lifting, config, Theta, u, params, rng, fixed_beta=None, warm=()):
    """Feasible rank-one points from randomization plus warm starts.

    Returns a list of ``(score, v, u)`` sorted best first; ``score`` is the
    RIS power for selection, or minus the worst QoS margin for a fixed set.
    """
    gamma, noise = config.sinr_threshold, config.noise_power_mw
    sets = lifting.element_sets
    ris_power = _ris_power(lifting, config)
    if fixed_beta is None:
        active = np.asarray(u) > ACTIVE_THRESHOLD
    else:
        active = np.asarray(fixed_beta) > 0.5
    mask = np.zeros(lifting.total_elements, bool)
    for l, idx in enumerate(sets):
        mask[idx] = active[l]
    draws = gaussian_randomization(Theta, params.randomization_trials, rng)[:, :-1]
    vs = [np.where(mask, np.exp(1j * np.angle(d)), 0.0) for d in draws]
    vs = list(warm) + vs
    out = []
    for i, v in enumerate(vs):
        s = lifted_sinr(lifting, v, noise)
        margin = float(np.min(s / gamma - 1.0))
        if margin < -1e-9:
            continue
        beta = np.array([float(np.any(np.abs(v[idx]) > 0.5)) for idx in sets])
        score = float(ris_power @ beta) if fixed_beta is None else -margin
        out.append((score, i, v, beta))
    out.sort(key=lambda item: (item[0], item[1]))
    return [(score, v, beta) for score, _, v, beta in out]


def dc_phase_selection(lifting: LiftedData, config: SystemConfig, params: DcParams | None = None,
                       init: np.ndarray | None = None, fixed_beta=None, warm_start=None,
                       tol: conic.SolverTolerances | None = None) -> DcResult:
    """DC iterations for the rank-one constrained phase problem.

    Each step minimizes ``ris_power @ u + rho (Tr(Theta) - <Theta, Y>)``
    with ``Y`` the spectral subgradient at the previous iterate. With
    ``fixed_beta`` the RIS set is pinned and only the rank penalty remains.
    ``init`` is a starting ``Theta``; by default the SDR solution is used,
    replaced by the best feasible Gaussian-randomization (or ``warm_start``)
    candidate when one exists.
    """
    params = params or DcParams()
    gamma, noise = config.sinr_threshold, config.noise_power_mw
    ris_power = _ris_power(lifting, config)
    L = len(lifting.element_sets)
    rho0 = params.penalty_for(config)
    rng = np.random.default_rng(params.seed)
    selecting = fixed_beta is None

    if init is None:
        if selecting:
            res0 = _solve_phase_sdp(lifting, gamma, noise, ris_power=ris_power, tol=tol)
        else:
            res0 = _solve_phase_sdp(lifting, gamma, noise, fixed_beta=fixed_beta, maximize_margin=True, tol=tol)
        Theta = res0.Theta
        u = res0.u if selecting else None
        warm = [] if warm_start is None else [np.asarray(warm_start, complex)]
        cands = _rank_one_candidates(lifting, config, Theta, res0.u if selecting else None,
                                     params, rng, fixed_beta, warm)
        if cands and (not selecting or cands[0][0] <= ris_power @ u + rho0 * rank_gap(Theta)):
            _, v, beta = cands[0]
            Theta = _lift(v)
            u = beta ** 2 if selecting else None
    else:
        Theta = np.asarray(init, complex)
        u = np.array([np.mean(np.real(np.diag(Theta))[idx]) if idx.size else 0.0
                      for idx in lifting.element_sets]) if selecting else None

    rho = rho0
    logrec: list[DcIterate] = []
    best_obj, best = dc_objective(Theta, u, ris_power, rho), (Theta, u)
    prev_obj = best_obj
    converged = False
    for it in range(1, params.max_dc_iters + 1):
        Y = spectral_subgradient(Theta)
        P = rho * (np.eye(lifting.side) - Y)
        prox = (params.strong_convexity, Theta) if params.proximal else None
        try:
            res = _solve_phase_sdp(lifting, gamma, noise, ris_power=ris_power if selecting else None,
                                   fixed_beta=fixed_beta, penalty_matrix=P, proximal=prox, tol=tol)
        except SolverError as exc:
            log.debug("DC step %d failed: %s", it, exc)
            logrec.append(DcIterate(it, float("nan"), float("nan"), rho, float("nan"), "numerical_failure"))
            break
        obj = dc_objective(res.Theta, res.u, ris_power, rho)
        gap = rank_gap(res.Theta)
        step = float(np.linalg.norm(res.Theta - Theta) ** 2)
        logrec.append(DcIterate(it, obj, gap, rho, step, "optimal"))
        Theta, u = res.Theta, res.u
        if obj <= best_obj:
            best_obj, best = obj, (Theta, u)
        rank_ok = gap <= params.rank_gap_tol * float(np.real(np.trace(Theta)))
        stalled = prev_obj - obj < params.objective_stall_tol
        prev_obj = obj
        if stalled and rank_ok:
            converged = True
            break
        if stalled:
            if rho >= params.max_penalty_factor * rho0 * (1 - 1e-12):
                break
            # rank gap stuck above tolerance: raise the penalty and restart the stage
            rho = min(2 * rho, params.max_penalty_factor * rho0)
            prev_obj = best_obj = dc_objective(Theta, u, ris_power, rho)
            best = (Theta, u)
    Theta, u = best
    tr = float(np.real(np.trace(Theta)))
    converged = converged or rank_gap(Theta) <= params.rank_gap_tol * tr
    if selecting:
        beta = np.sqrt(np.clip(u, 0.0, 1.0))
    else:
        beta = np.asarray(fixed_beta, float).copy()
    return DcResult(Theta, beta, logrec, converged)


def _phase_config(v: np.ndarray, lifting: LiftedData, active, base: RisConfiguration | None) -> RisConfiguration:
    phases = []
    for l, idx in enumerate(lifting.element_sets):
        seg = v[idx]
        ph = unit_phases(seg)
        if l not in active and base is not None and np.all(np.abs(seg) < 1e-9):
            ph = base.phases[l]
        phases.append(ph)
    return RisConfiguration(frozenset(active), tuple(phases))


def _config_from_lift(v: np.ndarray, lifting: LiftedData, active) -> np.ndarray:
    out = np.zeros_like(v)
    for l in active:
        idx = lifting.element_sets[l]
        out[idx] = np.exp(1j * np.angle(v[idx]))
    return out


def set_feasibility(lifting: LiftedData, config: SystemConfig, ris: RisConfiguration,
                    params: DcParams | None = None, tol: conic.SolverTolerances | None = None,
                    rng: np.random.Generator | None = None) -> RisConfiguration | None:
    """Phases under which the fixed beamformers meet every SINR target on ``ris.active``.

    Solves the max-margin relaxation for the fixed set (its infeasibility
    certificate settles the question) and draws randomized rank-one points
    from it, the given phases included; the candidate with the largest
    worst-case margin wins. Without any active RIS only the direct link is
    checked. Returns ``None`` when nothing passes the re-check.
    """
    gamma, noise = config.sinr_threshold, config.noise_power_mw

    def passes(cfg: RisConfiguration) -> bool:
        s = lifted_sinr(lifting, np.conj(cfg.stacked_phases()), noise)
        return bool(np.all(s >= gamma * (1.0 - RECHECK_TOL)))

    if not ris.active:
        return ris if passes(ris) else None
    params = params or DcParams()
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    order = sorted(ris.active)
    sub = lifting.restrict(order)
    ones = np.ones(len(order))
    try:
        Theta, _ = sdr_solve(sub, config, relaxed_beta_fixed=ones, tol=tol)
    except InfeasibleError:
        return None
    except SolverError:
        return ris if passes(ris) else None
    warm = np.conj(np.concatenate([ris.phases[l] for l in order]))
    cands = _rank_one_candidates(sub, config, Theta, None, params, rng, ones, [warm])
    if not cands:
        return ris if passes(ris) else None
    v = cands[0][1]
    phases = list(ris.phases)
    for l, idx in zip(order, sub.element_sets):
        phases[l] = unit_phases(v[idx])
    found = RisConfiguration(ris.active, tuple(phases))
    if passes(found):
        return found
    return ris if passes(ris) else None


def binary_search_active_set(beta, theta_hat, lifting: LiftedData, config: SystemConfig,
                             feasible: Callable | None = None,
                             base: RisConfiguration | None = None,
                             params: DcParams | None = None,
                             tol: conic.SolverTolerances | None = None):
    """Switch off as many low-``beta`` RISs as the fixed beamformers allow.

    RISs are sorted by ascending ``beta`` (stable, so lower indices go
    first on ties) and a prefix of ``J0`` of them is deactivated; the
    largest feasible ``J0`` in ``0..L`` is found by bisection. Active RISs
    start from the unit-modulus projection of the recovered phases.

    ``feasible(ris)`` may return a bool or a (re-phased) configuration; the
    default is :func:`set_feasibility`. Returns ``(active_set,
    RisConfiguration)`` and raises :class:`InfeasibleError` when no tested
    ``J0`` is feasible.
    """
    beta = np.asarray(beta, float)
    L = beta.size
    order = np.argsort(beta, kind="stable")
    v = recover_phases(theta_hat)
    if feasible is None:
        rng = np.random.default_rng((params or DcParams()).seed)

        def feasible(ris):
            return set_feasibility(lifting, config, ris, params, tol, rng)

    def candidate(j0: int) -> RisConfiguration:
        active = frozenset(int(l) for l in order[j0:])
        return _phase_config(_config_from_lift(v, lifting, active), lifting, active, base)

    lo, hi = -1, L + 1  # lo: largest J0 known feasible, hi: smallest known infeasible
    found = None
    while hi - lo > 1:
        j0 = (lo + hi) // 2
        ris = candidate(j0)
        verdict = feasible(ris)
        if isinstance(verdict, RisConfiguration):
            lo, found = j0, verdict
        elif verdict:
            lo, found = j0, ris
        else:
            hi = j0
    if found is None:
        raise InfeasibleError("no active set passes the feasibility check")
    return found.active, found


@dataclass
class NetworkPowerResult:
    ris: RisConfiguration
    beamforming: BeamformingSolution
    power: PowerBreakdown | None
    trace: list = field(default_factory=list)
    dc_logs: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.beamforming.feasible

    def __iter__(self):
        return iter((self.ris, self.beamforming, self.power, self.trace))


def _trace_entry(it, ris, power, extra=None):
    rec = {"iteration": it, "active": sorted(ris.active), "transmit_mw": power.transmit_mw,
           "ris_mw": power.ris_mw, "total_mw": power.total_mw}
    rec.update(extra or {})
    return rec


def _qos_ok(channels, ris, W, config, rel=1e-6) -> bool:
    s = sinr(channels, ris, W, config)
    return bool(np.all(s >= config.sinr_threshold * (1.0 - rel)))


def _liftvec(ris: RisConfiguration) -> np.ndarray:
    return np.conj(ris.stacked_phases())


def minimize_network_power(channels: ChannelRealization, config: SystemConfig,
                           params: DcParams | None = None, method: str = "dc",
                           tol: conic.SolverTolerances | None = None,
                           initial: RisConfiguration | None = None) -> NetworkPowerResult:
    """Alternate beamforming with RIS set/phase selection until power stalls.

    ``method`` picks the phase step: ``"dc"`` (DC iterations) or ``"sdr"``
    (relaxation plus Gaussian randomization). A step is kept only when it
    lowers the network power. When the first beamforming solve is
    infeasible, :func:`find_feasible_configuration` looks for a feasible
    start with every RIS on; failing that the infeasible result is
    returned, for the admission-control fallback. ``initial`` replaces the
    all-active, all-ones starting configuration. With
    ``params.refine_phases`` the final set (if it changed) gets a
    phase-only refinement (:func:`optimize_fixed_set`), and the result is
    compared with the same refinement of the starting set, so it is never
    worse than that baseline.
    """
    if method not in ("dc", "sdr"):
        raise ValueError(f"unknown method {method!r}")
    params = params or DcParams()
    ris = initial if initial is not None else RisConfiguration.all_active(channels.elements_per_ris)
    W = solve_beamforming(channels, ris, config, tol)
    if not W.feasible and channels.num_ris:
        found = find_feasible_configuration(channels, config, range(channels.num_ris), params, ris, tol=tol)
        if found is not None:
            ris, W = found.ris, found.beamforming
    if not W.feasible:
        return NetworkPowerResult(ris, W, None)
    power = network_power(ris, W, config)
    trace = [_trace_entry(0, ris, power)]
    anchor = None
    if params.refine_phases and ris.active:
        anchor = _refine(channels, config, ris, W, power, params, tol, [])
    dc_logs = []
    start_active = ris.active
    rng = np.random.default_rng(params.seed)
    for it in range(1, params.max_outer_iters + 1):
        if channels.num_ris == 0:
            break
        lifting = build_lifting(channels, W)
        try:
            if method == "dc":
                res = dc_phase_selection(lifting, config, params, warm_start=_liftvec(ris), tol=tol)
                dc_logs.append(res.log)
                beta = res.beta
                theta_hat = extract_rank_one(res.Theta).vector
            else:
                Theta, beta = sdr_solve(lifting, config, tol=tol)
                cands = _rank_one_candidates(lifting, config, Theta, beta ** 2, params, rng)
                theta_hat = np.append(cands[0][1], 1.0) if cands else extract_rank_one(Theta).vector
            _, new_ris = binary_search_active_set(beta, theta_hat, lifting, config, base=ris,
                                                  params=params, tol=tol)
        except (InfeasibleError, SolverError, ValueError) as exc:
            log.debug("phase step stopped the loop: %s", exc)
            break
        new_W = solve_beamforming(channels, new_ris, config, tol)
        if not new_W.feasible:
            break
        new_power = network_power(new_ris, new_W, config)
        decrease = power.total_mw - new_power.total_mw
        trace.append(_trace_entry(it, new_ris, new_power, {"accepted": decrease > 0}))
        if decrease > 0:
            ris, W, power = new_ris, new_W, new_power
        if decrease < params.outer_stall_tol * power.total_mw:
            break
    if params.refine_phases and ris.active and ris.active != start_active:
        ris, W, power = _refine(channels, config, ris, W, power, params, tol, trace)
    if anchor is not None and anchor[2].total_mw < power.total_mw:
        ris, W, power = anchor
        trace.append(_trace_entry(len(trace), ris, power, {"accepted": True, "refined": True}))
    if channels.num_ris and ris.active:
        # fixed-beamformer checks can never certify switching every RIS off
        off = ris.with_active(())
        W_off = solve_beamforming(channels, off, config, tol)
        if W_off.feasible:
            p_off = network_power(off, W_off, config)
            trace.append(_trace_entry(len(trace), off, p_off, {"accepted": p_off.total_mw < power.total_mw,
                                                               "all_off_check": True}))
            if p_off.total_mw < power.total_mw:
                ris, W, power = off, W_off, p_off
    return NetworkPowerResult(ris, W, power, trace, dc_logs)


def _refine(channels, config, ris, W, power, params, tol, trace):
    """Phase-only refinement on the current set; kept when it lowers the power."""
    res = optimize_fixed_set(channels, config, ris.active, params, phases=ris.phases, tol=tol)
    if res.feasible and res.power.total_mw < power.total_mw:
        trace.append(_trace_entry(len(trace), res.ris, res.power, {"accepted": True, "refined": True}))
        return res.ris, res.beamforming, res.power
    return ris, W, power


def _worst_ratio(lifting: LiftedData, v: np.ndarray, config: SystemConfig) -> float:
    return float(np.min(lifted_sinr(lifting, v, config.noise_power_mw) / config.sinr_threshold))


def find_feasible_configuration(channels: ChannelRealization, config: SystemConfig, active,
                                params: DcParams | None = None, start: RisConfiguration | None = None,
                                max_rounds: int = 10,
                                tol: conic.SolverTolerances | None = None) -> NetworkPowerResult | None:
    """Search for phases on ``active`` under which every SINR target is reachable.

    Alternates the max-min SINR beamformers (largest common fraction of
    the targets) with phases maximizing the worst QoS margin for those
    beamformers (relaxation plus randomization, current phases included).
    The reachable fraction never decreases; the search ends once it
    reaches 1 or stalls. Returns the feasible power-minimizing solution or
    ``None``.
    """
    params = params or DcParams()
    active = frozenset(int(l) for l in active)
    ris = (start or RisConfiguration.all_active(channels.elements_per_ris)).with_active(active)
    order = sorted(active)
    rng = np.random.default_rng(params.seed)
    gamma, noise = config.sinr_threshold, config.noise_power_mw
    ones = np.ones(len(order))
    prev = -np.inf
    for _ in range(max_rounds):
        t, W = max_min_sinr(effective_channels(channels, ris), gamma, noise, config.max_transmit_power_mw,
                            tol=tol)
        if t >= 1.0:
            return NetworkPowerResult(ris, W, network_power(ris, W, config))
        if not order or not W.feasible or t <= prev * (1 + 1e-3):
            return None
        prev = t
        lifting = build_lifting(channels, W).restrict(order)
        warm = np.conj(np.concatenate([ris.phases[l] for l in order]))
        floor = float(np.min(qos_margins(lifting, _lift(warm), gamma, noise)))
        try:
            Theta = _solve_phase_sdp(lifting, gamma, noise, fixed_beta=ones, maximize_margin=True,
                                     margin_floor=floor, tol=tol).Theta
        except (InfeasibleError, SolverError) as exc:
            log.debug("feasibility search phase step failed: %s", exc)
            return None
        draws = gaussian_randomization(Theta, params.randomization_trials, rng)[:, :-1]
        cands = [warm] + [np.exp(1j * np.angle(d)) for d in draws]
        scores = [_worst_ratio(lifting, v, config) for v in cands]
        v = cands[int(np.argmax(scores))]
        phases = list(ris.phases)
        for l, idx in zip(order, lifting.element_sets):
            phases[l] = unit_phases(v[idx])
        ris = RisConfiguration(active, tuple(phases))
    return None


def matched_filter(H: np.ndarray, max_power_mw: float) -> np.ndarray:
    """Unit-direction matched filters sharing ``max_power_mw`` equally."""
    K = H.shape[0]
    norms = np.linalg.norm(H, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    return np.sqrt(max_power_mw / K) * (H.conj() / norms[:, None])


def optimize_fixed_set(channels: ChannelRealization, config: SystemConfig, active,
                       params: DcParams | None = None, phases=None,
                       tol: conic.SolverTolerances | None = None) -> NetworkPowerResult:
    """Alternating beamforming / phase design with the RIS set held fixed.

    The phase step maximizes the worst QoS margin (SDR plus randomization,
    falling back to DC rank reduction when no randomized point is
    feasible), which leaves the next beamforming solve room to cut power.
    An infeasible start goes through :func:`find_feasible_configuration`
    first.
    """
    params = params or DcParams()
    active = frozenset(int(l) for l in active)
    base = RisConfiguration.all_active(channels.elements_per_ris)
    if phases is not None:
        base = RisConfiguration(frozenset(range(channels.num_ris)), tuple(phases))
    ris = base.with_active(active)
    W = solve_beamforming(channels, ris, config, tol)
    if not W.feasible and active:
        found = find_feasible_configuration(channels, config, active, params, ris, tol=tol)
        if found is not None:
            ris, W = found.ris, found.beamforming
    if not W.feasible:
        return NetworkPowerResult(ris, W, None)
    power = network_power(ris, W, config)
    trace = [_trace_entry(0, ris, power)]
    rng = np.random.default_rng(params.seed)
    if not active:
        return NetworkPowerResult(ris, W, power, trace)
    order = sorted(active)
    beta_fixed = np.ones(len(order))
    current_W = W.vectors
    for it in range(1, params.max_outer_iters + 1):
        lifting = build_lifting(channels, current_W).restrict(order)
        warm = np.conj(np.concatenate([ris.phases[l] for l in order]))
        try:
            Theta, _ = sdr_solve(lifting, config, relaxed_beta_fixed=beta_fixed, tol=tol)
            cands = _rank_one_candidates(lifting, config, Theta, None, params, rng, beta_fixed, [warm])
            if cands:
                v = cands[0][1]
            else:
                res = dc_phase_selection(lifting, config, params, fixed_beta=beta_fixed, tol=tol)
                v = np.exp(1j * np.angle(recover_phases(extract_rank_one(res.Theta).vector)))
        except (InfeasibleError, SolverError, ValueError) as exc:
            log.debug("fixed-set phase step stopped: %s", exc)
            break
        phases_new = list(ris.phases)
        for l, idx in zip(order, lifting.element_sets):
            phases_new[l] = unit_phases(v[idx])
        new_ris = RisConfiguration(active, tuple(phases_new))
        new_W = solve_beamforming(channels, new_ris, config, tol)
        if not new_W.feasible:
            break
        new_power = network_power(new_ris, new_W, config)
        decrease = power.total_mw - new_power.total_mw
        trace.append(_trace_entry(it, new_ris, new_power, {"accepted": decrease > 0}))
        if decrease > 0:
            ris, W, power = new_ris, new_W, new_power
            current_W = W.vectors
        if decrease < params.outer_stall_tol * power.total_mw:
            break
    return NetworkPowerResult(ris, W, power, trace)
