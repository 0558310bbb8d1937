"""User admission control with slack-augmented QoS constraints.

Every SINR constraint gets a nonnegative slack ``v_k`` measured in
received power,

    gamma_k (sum_{j != k} |h_k^H w_j|^2 + sigma_k^2) <= |h_k^H w_k|^2 + v_k,

so the joint problem is always feasible and a heavy price on ``sum v_k``
exposes the users that cannot be served. The beamformers are lifted to
``W_k = w_k w_k^H`` and the phases to ``Theta = theta_hat theta_hat^H``;
both rank-one constraints are handled with the same DC penalty as in
:mod:`risgreen.ris_select`. Users with the largest slack are dropped one
at a time until every remaining user meets its target.

Slacks are solved for in units of ``sigma_k^2`` internally and reported in
mW.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .beamform import solve_beamforming
from .netmodel import (
    BeamformingSolution,
    BeamformingStatus,
    ChannelRealization,
    RisConfiguration,
    SystemConfig,
    effective_channels,
    network_power,
    sinr,
)
from .ris_select import (
    DcIterate,
    DcParams,
    InfeasibleError,
    NetworkPowerResult,
    SolverError,
    _lift,
    _qos_rows,
    build_lifting,
    extract_rank_one,
    gaussian_randomization,
    minimize_network_power,
    rank_gap,
    recover_phases,
    spectral_subgradient,
    unit_phases,
)

log = logging.getLogger(__name__)

__all__ = [
    "AdmissionParams",
    "SlackBeamforming",
    "PhaseFeasibility",
    "AlternationResult",
    "AdmissionOutcome",
    "UnifiedResult",
    "solve_beamforming_slack",
    "solve_phase_feasibility_slack",
    "alternate_slack_steps",
    "run_algorithm2",
    "admission_control",
    "unified_entry",
]


@dataclass(frozen=True)
class AdmissionParams:
    """Penalties and loop limits.

    ``slack_penalty=None`` resolves to ``1e3 (P_max/eta) / (K min gamma sigma^2)``
    per :meth:`resolve`; ``rank_penalty=None`` to ``1e3 / eta`` (per mW of
    rank gap, see :meth:`resolve`).
    """

    slack_penalty: float | None = None
    rank_penalty: float | None = None
    qos_violation_tol: float = 1e-3
    max_outer_iters: int = 10
    max_dc_iters: int = 30
    rank_gap_tol: float = 1e-6  # relative to the trace
    dc_stall_tol: float = 1e-7  # relative to the objective
    outer_tol: float = 1e-3  # relative decrease of the beamforming objective
    randomization_trials: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("slack_penalty", "rank_penalty"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("qos_violation_tol", "max_outer_iters", "max_dc_iters", "rank_gap_tol",
                     "dc_stall_tol", "outer_tol", "randomization_trials"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def resolve(self, config: SystemConfig) -> tuple[float, float]:
        """``(slack_penalty, rank_penalty)`` for a scenario."""
        if self.slack_penalty is not None:
            delta = float(self.slack_penalty)
        else:
            budget = config.max_transmit_power_mw
            budget = budget if np.isfinite(budget) and budget > 0 else 1.0
            floor = float(np.min(config.sinr_threshold * config.noise_power_mw))
            delta = 1e3 * (budget / config.amplifier_efficiency) / (config.num_users * floor)
        zeta = float(self.rank_penalty) if self.rank_penalty is not None else 1e3 / config.amplifier_efficiency
        return delta, zeta


# ---------------------------------------------------------------------------
# beamforming with slacks


@dataclass
class SlackBeamforming:
    W: np.ndarray  # (K, M, M) lifted beamformers
    vectors: np.ndarray  # (K, M) leading-eigenpair beamformers
    slacks: np.ndarray  # v_k in mW
    objective: float
    log: list = field(default_factory=list)
    converged: bool = False

    def __iter__(self):
        return iter((self.W, self.slacks, self.objective))


def _lifted_rank_gap(W: np.ndarray) -> float:
    return float(sum(rank_gap(Wk) for Wk in W))


def _slack_objective(W, slacks, fixed_mw, eta, delta, zeta) -> float:
    transmit = float(sum(np.real(np.trace(Wk)) for Wk in W)) / eta
    return transmit + fixed_mw + delta * float(np.sum(slacks)) + zeta * _lifted_rank_gap(W)


def _slack_sdp(H, gamma, noise, max_power, eta, delta, zeta, subgrads, tol):
    """One convex step; ``subgrads=None`` drops the rank penalty (plain relaxation)."""
    K, M = H.shape
    prob = conic.ConicProblem()
    blocks = [prob.add_hermitian(f"W{k}", M) for k in range(K)]
    s = prob.add_variable("s", K, nonneg=True)
    outer = np.einsum("ki,kj->kij", H.conj(), H)  # h_k h_k^H, so Tr(H_k W) = |h_k^H w|^2
    for k in range(K):
        terms = []
        for j, blk in enumerate(blocks):
            coef = 1.0 if j == k else -gamma[k]
            terms.append((blk.indices, coef * blk.trace_coeffs(outer[k]) / noise[k]))
        unit = np.zeros((1, K)); unit[0, k] = 1.0
        terms.append((s, unit))
        prob.add_constraint(conic.ConeKind.NONNEG, terms, -gamma[k])
    if np.isfinite(max_power):
        eye = np.eye(M)
        prob.add_constraint(conic.ConeKind.NONNEG,
                            [(blk.indices, -blk.trace_coeffs(eye)) for blk in blocks], max_power)
    objective = []
    for k, blk in enumerate(blocks):
        C = np.eye(M) / eta
        if subgrads is not None:
            C = C + zeta * (np.eye(M) - subgrads[k])
        objective.append((blk.indices, blk.trace_coeffs(C)))
    objective.append((s, delta * noise))
    prob.set_objective(objective)
    sol = conic.solve(prob, tol)
    if not sol.optimal:
        raise SolverError(f"slack beamforming solve failed: {sol.status.value}")
    W = np.stack([sol.matrix(f"W{k}") for k in range(K)])
    W = 0.5 * (W + np.conj(np.transpose(W, (0, 2, 1))))
    return W, np.clip(sol.value("s"), 0.0, None) * noise


def _leading_vectors(W: np.ndarray) -> np.ndarray:
    """Row ``k`` is ``sqrt(lambda_1) u_1`` of ``W_k``."""
    out = []
    for Wk in W:
        w, U = np.linalg.eigh(Wk)
        out.append(np.sqrt(max(w[-1], 0.0)) * U[:, -1])
    return np.array(out)


def solve_beamforming_slack(channels: ChannelRealization, ris: RisConfiguration, config: SystemConfig,
                            params: AdmissionParams | None = None,
                            tol: conic.SolverTolerances | None = None) -> SlackBeamforming:
    """Slack-augmented power minimization over lifted beamformers, by DC iterations.

    Starts from the semidefinite relaxation and then minimizes
    ``sum Tr(W_k)/eta + P_RIS + delta sum v_k + zeta sum <W_k, I - Y_k>``
    with ``Y_k`` the spectral subgradient at the previous iterate. The
    logged objective is the exact DC objective (with ``Tr - ||.||_2``).
    """
    params = params or AdmissionParams()
    delta, zeta = params.resolve(config)
    H = effective_channels(channels, ris)
    K, M = H.shape
    gamma, noise = config.sinr_threshold, config.noise_power_mw
    eta = config.amplifier_efficiency
    fixed = network_power(ris, np.zeros((K, M)), config)
    fixed_mw = fixed.ris_mw + fixed.static_mw
    pmax = config.max_transmit_power_mw

    if pmax == 0.0:
        # nothing can be radiated: every slack covers its user's whole target
        W = np.zeros((K, M, M), complex)
        slacks = gamma * noise
        obj = _slack_objective(W, slacks, fixed_mw, eta, delta, zeta)
        return SlackBeamforming(W, np.zeros((K, M), complex), slacks, obj, [], True)

    W, slacks = _slack_sdp(H, gamma, noise, pmax, eta, delta, zeta, None, tol)
    obj = _slack_objective(W, slacks, fixed_mw, eta, delta, zeta)
    logrec: list[DcIterate] = []
    converged = False

    def rank_ok(X):
        return all(rank_gap(Xk) <= params.rank_gap_tol * max(float(np.real(np.trace(Xk))), 1e-300)
                   for Xk in X)

    if rank_ok(W):
        converged = True
    else:
        for it in range(1, params.max_dc_iters + 1):
            Y = [spectral_subgradient(Wk) for Wk in W]
            try:
                W_new, s_new = _slack_sdp(H, gamma, noise, pmax, eta, delta, zeta, Y, tol)
            except SolverError as exc:
                log.debug("slack DC step %d failed: %s", it, exc)
                logrec.append(DcIterate(it, float("nan"), float("nan"), zeta, float("nan"), "numerical_failure"))
                break
            new_obj = _slack_objective(W_new, s_new, fixed_mw, eta, delta, zeta)
            step = float(sum(np.linalg.norm(a - b) ** 2 for a, b in zip(W_new, W)))
            logrec.append(DcIterate(it, new_obj, _lifted_rank_gap(W_new), zeta, step, "optimal"))
            stalled = obj - new_obj <= params.dc_stall_tol * max(1.0, abs(obj))
            W, slacks, obj = W_new, s_new, new_obj
            if rank_ok(W):
                converged = True
                break
            if stalled:
                break
    return SlackBeamforming(W, _leading_vectors(W), slacks, obj, logrec, converged)


# ---------------------------------------------------------------------------
# phase feasibility with slacks


@dataclass
class PhaseFeasibility:
    Theta: np.ndarray
    ris: RisConfiguration
    log: list = field(default_factory=list)
    converged: bool = False


def _margin_rows(lifting, gamma, noise, slacks):
    Cs, consts = _qos_rows(lifting, gamma, noise)
    return Cs, consts + np.asarray(slacks, float) / noise


def _unit_diag_sdp(lifting, Cs, consts, *, penalty=None, maximize_margin=False, margin_floor=0.0, tol=None):
    """``margin_floor`` must be attainable, so that the margin variable can stay nonnegative."""
    n = lifting.side
    prob = conic.ConicProblem()
    X = prob.add_hermitian("Theta", n)
    rows = np.zeros((n, X.size))
    rows[np.arange(n), X.diag_local] = 1.0
    prob.add_constraint(conic.ConeKind.ZERO, [(X.indices, rows)], -1.0)
    qos = X.trace_coeffs(Cs)
    if maximize_margin:
        t = prob.add_variable("margin", 1, nonneg=True)
        prob.add_constraint(conic.ConeKind.NONNEG, [(X.indices, qos), (t, -np.ones((len(consts), 1)))],
                            consts - margin_floor)
        prob.set_objective([(t, -1.0)])
    else:
        prob.add_constraint(conic.ConeKind.NONNEG, [(X.indices, qos)], consts)
        prob.set_objective([(X.indices, X.trace_coeffs(penalty))])
    sol = conic.solve(prob, tol)
    if sol.status is conic.ConicStatus.PRIMAL_INFEASIBLE:
        raise InfeasibleError("no phases meet the slack-augmented QoS constraints")
    if not sol.optimal:
        raise SolverError(f"phase feasibility solve failed: {sol.status.value}")
    Theta = sol.matrix("Theta")
    Theta = 0.5 * (Theta + Theta.conj().T)
    margin = margin_floor + float(sol.value("margin")[0]) if maximize_margin else None
    return Theta, margin


def _phases_to_ris(v: np.ndarray, lifting, ris: RisConfiguration) -> RisConfiguration:
    phases = list(ris.phases)
    for l, idx in enumerate(lifting.element_sets):
        phases[l] = unit_phases(v[idx])
    return RisConfiguration(frozenset(range(len(phases))), tuple(phases))


def solve_phase_feasibility_slack(channels: ChannelRealization, W, slacks, config: SystemConfig,
                                  params: AdmissionParams | None = None,
                                  start: RisConfiguration | None = None,
                                  tol: conic.SolverTolerances | None = None) -> PhaseFeasibility:
    """Unit-modulus phases (all RISs on) meeting the slack-augmented QoS constraints.

    The relaxation is first solved for the largest worst-case margin; a
    Gaussian-randomized rank-one point meeting every constraint (the
    ``start`` phases included) is taken directly, otherwise DC steps on
    ``Tr(Theta) - ||Theta||_2`` run from the relaxed point. Raises
    :class:`InfeasibleError` when the relaxation is infeasible or no
    rank-one point passing the exact re-check is reached.
    """
    params = params or AdmissionParams()
    gamma, noise = config.sinr_threshold, config.noise_power_mw
    lifting = build_lifting(channels, W)
    ris = start if start is not None else RisConfiguration.all_active(channels.elements_per_ris)
    Cs, consts = _margin_rows(lifting, gamma, noise, slacks)
    rel = params.qos_violation_tol

    def passes(v) -> bool:
        margins = np.real(np.einsum("kij,ji->k", Cs, _lift(v))) + consts
        # the re-check uses the same relative tolerance as the final QoS test
        return bool(np.all(margins >= -rel * gamma))

    if channels.num_ris == 0:
        v = np.zeros(0, complex)
        if not passes(v):
            raise InfeasibleError("direct link misses the slack-augmented targets")
        return PhaseFeasibility(_lift(v), ris, [], True)

    warm = np.conj(ris.stacked_phases())
    # the start phases bound the best margin from below; a sign-free margin
    # would keep the problem out of the faster standard-form path
    floor = float(np.min(np.real(np.einsum("kij,ji->k", Cs, _lift(warm))) + consts))
    Theta0, best_margin = _unit_diag_sdp(lifting, Cs, consts, maximize_margin=True, margin_floor=floor, tol=tol)
    if best_margin < -rel * float(np.min(gamma)):
        raise InfeasibleError("no phases meet the slack-augmented QoS constraints")
    dc = DcParams(randomization_trials=params.randomization_trials, seed=params.seed)
    # score the candidates on the slack-augmented margins via an equivalent shifted target
    cands = _slack_candidates(lifting, Cs, consts, Theta0, dc, warm, rel * gamma)
    if cands:
        v = cands[0]
        Theta = _lift(v)
        # a feasible rank-one start is a DC fixed point: one step confirms it
        it_log = [DcIterate(1, 0.0, rank_gap(Theta), 1.0, 0.0, "optimal")]
        return PhaseFeasibility(Theta, _phases_to_ris(v, lifting, ris), it_log, True)

    Theta = Theta0
    obj = rank_gap(Theta)
    logrec: list[DcIterate] = []
    n = lifting.side
    for it in range(1, params.max_dc_iters + 1):
        P = np.eye(n) - spectral_subgradient(Theta)
        try:
            Theta_new, _ = _unit_diag_sdp(lifting, Cs, consts, penalty=P, tol=tol)
        except SolverError as exc:
            logrec.append(DcIterate(it, float("nan"), float("nan"), 1.0, float("nan"), "numerical_failure"))
            err = InfeasibleError(f"DC phase step failed: {exc}")
            err.log = logrec
            raise err from exc
        new_obj = rank_gap(Theta_new)
        logrec.append(DcIterate(it, new_obj, new_obj, 1.0, float(np.linalg.norm(Theta_new - Theta) ** 2),
                                "optimal"))
        stalled = obj - new_obj <= params.dc_stall_tol * max(1.0, n)
        Theta, obj = Theta_new, new_obj
        if obj <= params.rank_gap_tol * n or stalled:
            break
    if obj <= params.rank_gap_tol * n:
        v = np.exp(1j * np.angle(recover_phases(extract_rank_one(Theta).vector)))
        if passes(v):
            return PhaseFeasibility(Theta, _phases_to_ris(v, lifting, ris), logrec, True)
    err = InfeasibleError("DC phase search did not reach a feasible rank-one point")
    err.log = logrec  # kept for auditing the iterations
    raise err


def _slack_candidates(lifting, Cs, consts, Theta, dc: DcParams, warm, allowance):
    """Unit-modulus points meeting the slack-augmented rows, best worst-margin first."""
    rng = np.random.default_rng(dc.seed)
    draws = gaussian_randomization(Theta, dc.randomization_trials, rng)[:, :-1]
    vs = [np.asarray(warm, complex)] + [np.exp(1j * np.angle(d)) for d in draws]
    scored = []
    for i, v in enumerate(vs):
        margins = np.real(np.einsum("kij,ji->k", Cs, _lift(v))) + consts
        if np.all(margins >= -allowance):
            scored.append((-float(np.min(margins)), i, v))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [v for _, _, v in scored]


# ---------------------------------------------------------------------------
# alternation and user dropping


@dataclass
class AlternationResult:
    vectors: np.ndarray
    ris: RisConfiguration
    slacks: np.ndarray
    objectives: list = field(default_factory=list)
    beamforming_logs: list = field(default_factory=list)
    phase_logs: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.vectors, self.ris, self.slacks))


def alternate_slack_steps(channels: ChannelRealization, config: SystemConfig, params: AdmissionParams | None = None,
                   start: RisConfiguration | None = None,
                   tol: conic.SolverTolerances | None = None) -> AlternationResult:
    """Alternate slack beamforming and slack phase feasibility.

    Stops when the beamforming objective decreases by less than
    ``outer_tol`` or the phase step is infeasible, returning the last
    successful iterates.
    """
    params = params or AdmissionParams()
    ris = start if start is not None else RisConfiguration.all_active(channels.elements_per_ris)
    objectives, bf_logs, ph_logs = [], [], []
    best = None
    for t in range(params.max_outer_iters):
        bf = solve_beamforming_slack(channels, ris, config, params, tol)
        bf_logs.append(bf.log)
        if best is not None and bf.objective > best.objectives[-1]:
            # the previous point stays feasible after the phase step, so a rise is a worse local point
            log.debug("outer objective rose from %g to %g", best.objectives[-1], bf.objective)
            break
        objectives.append(bf.objective)
        best = AlternationResult(bf.vectors, ris, bf.slacks, list(objectives), list(bf_logs), list(ph_logs))
        if len(objectives) > 1 and objectives[-2] - objectives[-1] < params.outer_tol * abs(objectives[-2]):
            break
        if channels.num_ris == 0:
            break
        try:
            ph = solve_phase_feasibility_slack(channels, bf.vectors, bf.slacks, config, params, ris, tol)
        except InfeasibleError as exc:
            log.debug("phase step infeasible: %s", exc)
            break
        ph_logs.append(ph.log)
        ris = ph.ris
    best.beamforming_logs, best.phase_logs = bf_logs, ph_logs
    return best


run_algorithm2 = alternate_slack_steps


@dataclass
class AdmissionOutcome:
    admitted: tuple
    beamforming: BeamformingSolution  # rows for admitted users, in admitted order
    ris: RisConfiguration
    slack_history: list = field(default_factory=list)
    dropped_order: list = field(default_factory=list)
    rounds: int = 0

    @property
    def admitted_count(self) -> int:
        return len(self.admitted)

    def to_dict(self) -> dict:
        return {
            "admitted": list(self.admitted),
            "admitted_count": self.admitted_count,
            "dropped_order": list(self.dropped_order),
            "slack_history": self.slack_history,
            "active_ris": sorted(self.ris.active),
            "transmit_mw": self.beamforming.transmit_power_mw,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _meets_qos(channels, ris, vectors, config, rel) -> bool:
    if channels.num_users == 0:
        return True
    s = sinr(channels, ris, vectors, config)
    return bool(np.all(s >= config.sinr_threshold * (1.0 - rel)))


def admission_control(channels: ChannelRealization, config: SystemConfig,
                      params: AdmissionParams | None = None, optimize_phases: bool = True,
                      ris: RisConfiguration | None = None,
                      tol: conic.SolverTolerances | None = None) -> AdmissionOutcome:
    """Drop the user with the largest slack until everyone left is served.

    Each round re-solves from scratch on the remaining users. A round
    succeeds when the rank-one beamformers meet every target within
    ``qos_violation_tol``, or when plain power minimization with the
    round's phases does. ``optimize_phases=False`` keeps ``ris`` fixed.
    """
    params = params or AdmissionParams()
    K = channels.num_users
    base = ris if ris is not None else RisConfiguration.all_active(channels.elements_per_ris)
    candidates = list(range(K))
    dropped: list[int] = []
    history = []
    rounds = 0
    while candidates:
        rounds += 1
        sub_ch = channels.subset_users(candidates)
        sub_cfg = config.subset_users(candidates)
        if optimize_phases and channels.num_ris:
            res = alternate_slack_steps(sub_ch, sub_cfg, params, tol=tol)
            vectors, round_ris, slacks = res.vectors, res.ris, res.slacks
        else:
            bf = solve_beamforming_slack(sub_ch, base, sub_cfg, params, tol)
            vectors, round_ris, slacks = bf.vectors, base, bf.slacks
        history.append({"round": rounds, "candidates": list(candidates),
                        "slacks": [float(x) for x in slacks]})
        final = BeamformingSolution(vectors, BeamformingStatus.OPTIMAL)
        ok = _meets_qos(sub_ch, round_ris, vectors, sub_cfg, params.qos_violation_tol)
        W = solve_beamforming(sub_ch, round_ris, sub_cfg, tol)
        if W.feasible:
            ok, final = True, W
        if ok:
            return AdmissionOutcome(tuple(candidates), final, round_ris, history, dropped, rounds)
        worst = int(np.argmax(slacks))  # first maximum, i.e. the lowest index on ties
        dropped.append(candidates.pop(worst))
    M = channels.num_antennas
    empty = BeamformingSolution(np.zeros((0, M), complex), BeamformingStatus.OPTIMAL)
    return AdmissionOutcome((), empty, base, history, dropped, rounds)


@dataclass
class UnifiedResult:
    mode: str  # "power_min" or "admission"
    power: NetworkPowerResult | None
    admission: AdmissionOutcome | None = None

    @property
    def admitted(self) -> tuple:
        if self.admission is None:
            return tuple(range(self.power.beamforming.vectors.shape[0]))
        return self.admission.admitted


def unified_entry(channels: ChannelRealization, config: SystemConfig, dc_params: DcParams | None = None,
                  admission_params: AdmissionParams | None = None,
                  tol: conic.SolverTolerances | None = None) -> UnifiedResult:
    """Power minimization, falling back to admission control when infeasible.

    After admission the power minimization is re-run on the admitted users,
    starting from the phases admission found.
    """
    first = minimize_network_power(channels, config, dc_params, tol=tol)
    if first.feasible:
        return UnifiedResult("power_min", first)
    outcome = admission_control(channels, config, admission_params, tol=tol)
    if not outcome.admitted:
        return UnifiedResult("admission", None, outcome)
    users = list(outcome.admitted)
    again = minimize_network_power(channels.subset_users(users), config.subset_users(users), dc_params,
                                   tol=tol, initial=outcome.ris)
    if not again.feasible:
        # admission certified these users with its own beamformers; keep them
        power = network_power(outcome.ris, outcome.beamforming, config)
        again = NetworkPowerResult(outcome.ris, outcome.beamforming, power)
    return UnifiedResult("admission", again, outcome)
