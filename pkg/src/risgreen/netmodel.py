"""Scenario configuration, channel generation and the network power model.

All optimization code downstream works in linear units: powers in mW,
SINR as a plain ratio. Conversions from the dB/dBm values carried by
:class:`SystemConfig` happen here and nowhere else.

Channel conventions
-------------------
For user ``k`` and RIS ``l``:

* ``direct[k]``       -- BS to user, length ``M`` (``h_{d,k}``)
* ``bs_to_ris[l]``    -- BS to RIS, shape ``(N_l, M)`` (``T_l``)
* ``ris_to_user[l][k]`` -- RIS to user, length ``N_l`` (``h_{l,k}``)

The effective channel is returned as the row ``h_k^H`` so that the
received amplitude of stream ``j`` at user ``k`` is ``row @ w_j``.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "SystemConfig",
    "ChannelRealization",
    "RisConfiguration",
    "BeamformingStatus",
    "BeamformingSolution",
    "PowerBreakdown",
    "db_to_linear",
    "linear_to_db",
    "dbm_to_mw",
    "large_scale_gain",
    "generate_channels",
    "effective_channel",
    "effective_channels",
    "sinr",
    "network_power",
    "energy_efficiency",
    "load_config",
]

UNIT_MODULUS_TOL = 1e-9


class ConfigError(ValueError):
    """Raised for an invalid scenario description."""


def db_to_linear(value_db):
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_mw(value_dbm):
    # 0 dBm == 1 mW, so the conversion is the plain dB one
    return db_to_linear(value_dbm)


def large_scale_gain(distance_m, exponent: float, ref_db: float):
    """Power gain ``10^((ref_db - 10*exponent*log10(d)) / 10)``."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 1e-3)
    return db_to_linear(ref_db - 10.0 * exponent * np.log10(d))


def _per_user(value, num_users: int, name: str) -> tuple[float, ...]:
    if np.isscalar(value):
        return (float(value),) * num_users
    values = tuple(float(v) for v in value)
    if len(values) != num_users:
        raise ConfigError(f"{name} has {len(values)} entries, expected {num_users}")
    return values


def _point(value, name: str) -> tuple[float, float, float]:
    p = tuple(float(v) for v in value)
    if len(p) != 3:
        raise ConfigError(f"{name} must be a 3-D coordinate")
    return p  # type: ignore[return-value]


@dataclass(frozen=True)
class SystemConfig:
    """All constants of one scenario.

    Scalars given for ``sinr_threshold_db`` / ``noise_power_dbm`` are
    broadcast to every user; an int for ``elements_per_ris`` to every RIS.
    RIS and user indices are 0-based throughout the package.
    """

    num_antennas: int = 4
    num_users: int = 4
    num_ris: int = 3
    elements_per_ris: Any = (8, 8, 8)
    sinr_threshold_db: Any = 1.0
    noise_power_dbm: Any = -80.0
    amplifier_efficiency: float = 0.6
    max_transmit_power_mw: float = 1000.0
    per_element_power_mw: float = 10.0
    static_power_mw: float = 0.0
    bandwidth_hz: float = 1e6
    bs_position: Any = (0.0, 0.0, 10.0)
    ris_positions: Any = ((0.0, 30.0, 10.0), (30.0, 70.0, 10.0), (70.0, 0.0, 10.0))
    user_center: Any = (70.0, 40.0, 0.0)
    user_radius: float = 15.0
    pathloss_exponent_bu: float = 3.67
    pathloss_exponent_br: float = 2.2
    pathloss_exponent_ru: float = 2.0
    pathloss_ref_db: float = -30.0
    seed: int = 0

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        if int(self.num_antennas) < 1 or int(self.num_users) < 1:
            raise ConfigError("num_antennas and num_users must be positive")
        if int(self.num_ris) < 0:
            raise ConfigError("num_ris must be non-negative")
        set_(self, "num_antennas", int(self.num_antennas))
        set_(self, "num_users", int(self.num_users))
        set_(self, "num_ris", int(self.num_ris))
        K, L = self.num_users, self.num_ris

        elements = self.elements_per_ris
        if np.isscalar(elements):
            elements = (int(elements),) * L
        elements = tuple(int(n) for n in elements)
        if len(elements) != L:
            raise ConfigError(f"elements_per_ris has {len(elements)} entries, expected {L}")
        if any(n < 1 for n in elements):
            raise ConfigError("every RIS needs at least one element")
        set_(self, "elements_per_ris", elements)

        set_(self, "sinr_threshold_db", _per_user(self.sinr_threshold_db, K, "sinr_threshold_db"))
        set_(self, "noise_power_dbm", _per_user(self.noise_power_dbm, K, "noise_power_dbm"))
        if not all(np.isfinite(self.sinr_threshold_db)):
            raise ConfigError("SINR thresholds must be finite")
        if not all(np.isfinite(self.noise_power_dbm)):
            raise ConfigError("noise powers must be finite")

        if not 0.0 < self.amplifier_efficiency <= 1.0:
            raise ConfigError("amplifier_efficiency must lie in (0, 1]")
        # P_max = 0 is accepted as the degenerate "BS silent" scenario
        if not self.max_transmit_power_mw >= 0.0:
            raise ConfigError("max_transmit_power_mw must be non-negative")
        if self.per_element_power_mw < 0 or self.static_power_mw < 0:
            raise ConfigError("power constants must be non-negative")
        if not self.bandwidth_hz > 0:
            raise ConfigError("bandwidth_hz must be positive")
        if self.user_radius < 0:
            raise ConfigError("user_radius must be non-negative")

        set_(self, "bs_position", _point(self.bs_position, "bs_position"))
        set_(self, "user_center", _point(self.user_center, "user_center"))
        positions = tuple(_point(p, "ris_positions") for p in self.ris_positions)
        if len(positions) != L:
            raise ConfigError(f"ris_positions has {len(positions)} entries, expected {L}")
        set_(self, "ris_positions", positions)
        set_(self, "seed", int(self.seed))

    # ---- derived quantities (linear units) ----
    @property
    def sinr_threshold(self) -> np.ndarray:
        return db_to_linear(self.sinr_threshold_db)

    @property
    def noise_power_mw(self) -> np.ndarray:
        return dbm_to_mw(self.noise_power_dbm)

    @property
    def total_elements(self) -> int:
        return int(sum(self.elements_per_ris))

    @property
    def ris_power_mw(self) -> np.ndarray:
        """``P_RIS(N_l) = N_l * P_RE`` for every RIS."""
        return np.asarray(self.elements_per_ris, dtype=float) * self.per_element_power_mw

    def element_slices(self) -> list[slice]:
        """Index range of each RIS inside the stacked element vector."""
        out, start = [], 0
        for n in self.elements_per_ris:
            out.append(slice(start, start + n))
            start += n
        return out

    # ---- variants ----
    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def with_sinr_threshold_db(self, value) -> "SystemConfig":
        return self.replace(sinr_threshold_db=value)

    def with_num_users(self, num_users: int) -> "SystemConfig":
        """Resize the per-user lists (first user's values are repeated)."""
        return self.replace(
            num_users=num_users,
            sinr_threshold_db=_resize(self.sinr_threshold_db, num_users),
            noise_power_dbm=_resize(self.noise_power_dbm, num_users),
        )

    def with_num_ris(self, num_ris: int, radius: float = 25.0) -> "SystemConfig":
        """Keep the first RISs; extra ones go on a circle around the user disc.

        Extra positions are drawn from the scenario seed, at the height of
        the first RIS (10 m if there is none).
        """
        positions = list(self.ris_positions[:num_ris])
        elements = list(self.elements_per_ris[:num_ris])
        n_default = self.elements_per_ris[0] if self.elements_per_ris else 8
        height = self.ris_positions[0][2] if self.ris_positions else 10.0
        rng = np.random.default_rng([self.seed, 0x5215])
        angles = rng.uniform(0.0, 2 * np.pi, size=max(num_ris, 1))
        cx, cy, _ = self.user_center
        for l in range(len(positions), num_ris):
            positions.append((cx + radius * np.cos(angles[l]), cy + radius * np.sin(angles[l]), height))
            elements.append(n_default)
        return self.replace(num_ris=num_ris, ris_positions=tuple(positions), elements_per_ris=tuple(elements))

    def subset_users(self, users: Sequence[int]) -> "SystemConfig":
        users = list(users)
        return self.replace(
            num_users=len(users),
            sinr_threshold_db=tuple(self.sinr_threshold_db[k] for k in users),
            noise_power_dbm=tuple(self.noise_power_dbm[k] for k in users),
        )

    # ---- serialization ----
    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _resize(values: tuple, n: int) -> tuple:
    values = tuple(values)
    return (values + (values[0],) * n)[:n] if values else values


def load_config(path: str | Path) -> SystemConfig:
    """Read a JSON scenario file (either flat or under a ``"scenario"`` key)."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "scenario" in data:
        data = data["scenario"]
    return SystemConfig.from_dict(data)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChannelRealization:
    direct: np.ndarray  # (K, M)
    bs_to_ris: tuple  # L x (N_l, M)
    ris_to_user: tuple  # L x (K, N_l)
    user_positions: np.ndarray | None = None

    def __post_init__(self) -> None:
        K, M = self.direct.shape
        if len(self.bs_to_ris) != len(self.ris_to_user):
            raise ValueError("bs_to_ris and ris_to_user disagree on the number of RISs")
        for T, G in zip(self.bs_to_ris, self.ris_to_user):
            if T.shape[1] != M or G.shape != (K, T.shape[0]):
                raise ValueError("inconsistent channel dimensions")
        arrays = [self.direct, *self.bs_to_ris, *self.ris_to_user]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("channel entries must be finite")

    @property
    def num_users(self) -> int:
        return self.direct.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.direct.shape[1]

    @property
    def num_ris(self) -> int:
        return len(self.bs_to_ris)

    @property
    def elements_per_ris(self) -> tuple[int, ...]:
        return tuple(T.shape[0] for T in self.bs_to_ris)

    def subset_users(self, users: Sequence[int]) -> "ChannelRealization":
        users = list(users)
        pos = None if self.user_positions is None else _frozen(self.user_positions[users])
        return ChannelRealization(
            direct=_frozen(self.direct[users]),
            bs_to_ris=self.bs_to_ris,
            ris_to_user=tuple(_frozen(G[users]) for G in self.ris_to_user),
            user_positions=pos,
        )

    def without_ris(self) -> "ChannelRealization":
        return ChannelRealization(self.direct, (), (), self.user_positions)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_channels(config: SystemConfig, trial_index: int) -> ChannelRealization:
    """Draw one channel realization.

    Rayleigh small-scale fading scaled by the distance-based path loss of
    each link. Users are uniform in the configured disc at height 0. The
    draw depends only on ``(config.seed, trial_index)`` and the geometry.
    """
    if trial_index < 0:
        raise ValueError("trial_index must be non-negative")
    rng = np.random.default_rng([config.seed, trial_index])
    K, M = config.num_users, config.num_antennas

    radius = config.user_radius * np.sqrt(rng.uniform(size=K))
    angle = rng.uniform(0.0, 2 * np.pi, size=K)
    cx, cy, _ = config.user_center
    users = np.column_stack([cx + radius * np.cos(angle), cy + radius * np.sin(angle), np.zeros(K)])
    bs = np.asarray(config.bs_position)

    ref = config.pathloss_ref_db
    d_bu = np.linalg.norm(users - bs, axis=1)
    direct = np.sqrt(large_scale_gain(d_bu, config.pathloss_exponent_bu, ref))[:, None] * _cn(rng, (K, M))

    bs_to_ris, ris_to_user = [], []
    for pos, n in zip(config.ris_positions, config.elements_per_ris):
        pos = np.asarray(pos)
        g_br = large_scale_gain(np.linalg.norm(pos - bs), config.pathloss_exponent_br, ref)
        bs_to_ris.append(_frozen(np.sqrt(g_br) * _cn(rng, (n, M))))
    for pos, n in zip(config.ris_positions, config.elements_per_ris):
        d_ru = np.linalg.norm(users - np.asarray(pos), axis=1)
        g_ru = large_scale_gain(d_ru, config.pathloss_exponent_ru, ref)
        ris_to_user.append(_frozen(np.sqrt(g_ru)[:, None] * _cn(rng, (K, n))))

    return ChannelRealization(_frozen(direct), tuple(bs_to_ris), tuple(ris_to_user), _frozen(users))


@dataclass(frozen=True)
class RisConfiguration:
    """Active RIS set plus the reflection coefficients of every RIS.

    Phases of inactive RISs are kept (so a configuration can be toggled)
    but never enter an effective channel.
    """

    active: frozenset
    phases: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "active", frozenset(int(l) for l in self.active))
        phases = tuple(_frozen(np.asarray(p, dtype=complex)) for p in self.phases)
        object.__setattr__(self, "phases", phases)
        for l in self.active:
            if not 0 <= l < len(phases):
                raise ValueError(f"active RIS index {l} out of range")
            if np.max(np.abs(np.abs(phases[l]) - 1.0), initial=0.0) > UNIT_MODULUS_TOL:
                raise ValueError(f"RIS {l} phases are not unit modulus")

    @classmethod
    def all_active(cls, elements_per_ris: Iterable[int]) -> "RisConfiguration":
        elements = tuple(elements_per_ris)
        return cls(frozenset(range(len(elements))), tuple(np.ones(n, complex) for n in elements))

    @classmethod
    def none_active(cls, elements_per_ris: Iterable[int]) -> "RisConfiguration":
        elements = tuple(elements_per_ris)
        return cls(frozenset(), tuple(np.ones(n, complex) for n in elements))

    @property
    def num_ris(self) -> int:
        return len(self.phases)

    @property
    def beta(self) -> np.ndarray:
        b = np.zeros(self.num_ris)
        b[list(self.active)] = 1.0
        return b

    def with_active(self, active: Iterable[int]) -> "RisConfiguration":
        return RisConfiguration(frozenset(active), self.phases)

    def stacked_phases(self) -> np.ndarray:
        """Reflection coefficients of all elements, zero for inactive RISs."""
        parts = [p if l in self.active else np.zeros_like(p) for l, p in enumerate(self.phases)]
        return np.concatenate(parts) if parts else np.zeros(0, complex)


class BeamformingStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    SOLVER_FAILURE = "solver_failure"


@dataclass(frozen=True)
class BeamformingSolution:
    vectors: np.ndarray  # (K, M), row k is w_k
    status: BeamformingStatus = BeamformingStatus.OPTIMAL

    @property
    def transmit_power_mw(self) -> float:
        return float(np.sum(np.abs(self.vectors) ** 2))

    @property
    def feasible(self) -> bool:
        return self.status is BeamformingStatus.OPTIMAL

    @classmethod
    def failed(cls, num_users: int, num_antennas: int, status: BeamformingStatus) -> "BeamformingSolution":
        return cls(np.zeros((num_users, num_antennas), complex), status)


@dataclass(frozen=True)
class PowerBreakdown:
    transmit_mw: float
    ris_mw: float
    static_mw: float = 0.0
    total_mw: float = field(init=False)

    def __post_init__(self) -> None:
        if min(self.transmit_mw, self.ris_mw, self.static_mw) < 0:
            raise ValueError("power components must be non-negative")
        object.__setattr__(self, "total_mw", self.transmit_mw + self.ris_mw + self.static_mw)

    @property
    def optimized_mw(self) -> float:
        """Network power without the constant static term."""
        return self.transmit_mw + self.ris_mw


def _vectors(W) -> np.ndarray:
    return np.asarray(getattr(W, "vectors", W), dtype=complex)


def effective_channel(channels: ChannelRealization, ris: RisConfiguration, k: int) -> np.ndarray:
    """Row ``h_k^H`` combining the direct and all active reflected paths."""
    if ris.num_ris != channels.num_ris:
        raise ValueError("RIS configuration does not match the channel realization")
    row = channels.direct[k].conj()
    for l in sorted(ris.active):
        theta = ris.phases[l]
        if theta.shape[0] != channels.bs_to_ris[l].shape[0]:
            raise ValueError(f"RIS {l} phase vector has the wrong length")
        row = row + (channels.ris_to_user[l][k].conj() * theta) @ channels.bs_to_ris[l]
    return row


def effective_channels(channels: ChannelRealization, ris: RisConfiguration) -> np.ndarray:
    """Stack of all rows ``h_k^H``, shape ``(K, M)``."""
    return np.vstack([effective_channel(channels, ris, k) for k in range(channels.num_users)])


def sinr(channels: ChannelRealization, ris: RisConfiguration, W, noise) -> np.ndarray:
    """Linear SINR of every user.

    ``noise`` is a :class:`SystemConfig` or the per-user noise powers in mW.
    """
    noise_power_mw = getattr(noise, "noise_power_mw", noise)
    V = _vectors(W)
    H = effective_channels(channels, ris)
    if V.shape != H.shape:
        raise ValueError("need one beamformer per user")
    gains = np.abs(H @ V.T) ** 2  # [k, j] = |h_k^H w_j|^2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + np.broadcast_to(np.asarray(noise_power_mw, float), signal.shape))


def network_power(ris: RisConfiguration, W, config: SystemConfig) -> PowerBreakdown:
    V = _vectors(W)
    transmit = float(np.sum(np.abs(V) ** 2)) / config.amplifier_efficiency
    ris_mw = float(sum(config.ris_power_mw[l] for l in ris.active))
    return PowerBreakdown(transmit, ris_mw, float(config.static_power_mw))


def energy_efficiency(channels: ChannelRealization, ris: RisConfiguration, W, config: SystemConfig) -> float:
    """Sum rate over total network power, in bits per joule.

    Powers are in mW internally, hence the factor 1e3 to get watts.
    """
    total_w = network_power(ris, W, config).total_mw * 1e-3
    if not total_w > 0:
        raise ValueError("energy efficiency undefined for zero total power")
    rates = config.bandwidth_hz * np.log2(1.0 + sinr(channels, ris, W, config))
    return float(np.sum(rates) / total_w)
