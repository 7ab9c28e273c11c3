"""Multi-source M/M/1 status-update queues under three LCFS disciplines.

``N`` Poisson sources (rates ``lambdas``) share one exponential server (rate
``mu``). The SHS has discrete states ``0 .. N`` (0 = idle, ``i`` = serving an
update from source ``i``) and ages ``x_0 .. x_N`` where ``x_0`` is the age of
the update in service and ``x_k`` is source ``k``'s AoI at the monitor. Source
``k`` therefore sits at age position ``k``.

Closed forms take the raw MGF argument ``s`` (units 1/time). The
``*_normalized`` helpers take ``s_bar = s / mu``, as the two-source and
marginal expressions are usually written.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import bisect

from .errors import ConfigError, OutOfRegionError
from .shs_model import ResetMap, ShsModel, Transition

MAX_SOURCES = 6


class Discipline(str, enum.Enum):
    LCFS_NP = "np"
    LCFS_PS = "ps"
    LCFS_SA = "sa"

    @classmethod
    def parse(cls, value: "str | Discipline") -> "Discipline":
        if isinstance(value, Discipline):
            return value
        key = str(value).strip().lower().replace("lcfs-", "").replace("lcfs_", "")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown discipline {value!r}; expected one of np, ps, sa") from None


@dataclass(frozen=True)
class MultiSourceParams:
    lambdas: tuple[float, ...]
    mu: float

    def __post_init__(self) -> None:
        lambdas = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "mu", float(self.mu))
        if not lambdas:
            raise ConfigError("at least one source rate is required")
        if len(lambdas) > MAX_SOURCES:
            raise ConfigError(f"N={len(lambdas)} exceeds the cap of {MAX_SOURCES} sources")
        for i, lam in enumerate(lambdas, start=1):
            if not (math.isfinite(lam) and lam > 0):
                raise ConfigError(f"lambda_{i} must be positive and finite, got {lam}")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ConfigError(f"mu must be positive and finite, got {self.mu}")

    @property
    def n_sources(self) -> int:
        return len(self.lambdas)

    @property
    def lam(self) -> float:
        return math.fsum(self.lambdas)

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    def lam_of(self, k: int) -> float:
        self._check_source(k)
        return self.lambdas[k - 1]

    def rho_of(self, k: int) -> float:
        return self.lam_of(k) / self.mu

    def lam_set(self, z: Iterable[int]) -> float:
        return math.fsum(self.lam_of(k) for k in set(z))

    def lam_minus(self, z: Iterable[int]) -> float:
        z = set(z)
        for k in z:
            self._check_source(k)
        return math.fsum(lam for k, lam in enumerate(self.lambdas, start=1) if k not in z)

    def rho_set(self, z: Iterable[int]) -> float:
        return self.lam_set(z) / self.mu

    def rho_minus(self, z: Iterable[int]) -> float:
        return self.lam_minus(z) / self.mu

    def _check_source(self, k: int) -> None:
        if not 1 <= k <= self.n_sources:
            raise ConfigError(f"source index {k} outside 1..{self.n_sources}")


# ---------------------------------------------------------------------------
# SHS model builders


def _arrival_columns(n_sources: int) -> list[Optional[int]]:
    # x' = [0, x_1, ..., x_N]
    return [None] + list(range(1, n_sources + 1))


def _delivery_columns(n_sources: int, i: int) -> list[Optional[int]]:
    # x' = [0, x_1, ..., x_{i-1}, x_0, x_{i+1}, ..., x_N]
    cols = _arrival_columns(n_sources)
    cols[i] = 0
    return cols


def build_model(params: MultiSourceParams, discipline: "Discipline | str") -> ShsModel:
    """SHS of the queue, with transition ids numbered as in the usual tables."""
    discipline = Discipline.parse(discipline)
    n = params.n_sources
    mu = params.mu
    arrive = ResetMap.from_columns(_arrival_columns(n))
    rows: list[Transition] = []
    for i in range(1, n + 1):
        lam_i = params.lam_of(i)
        deliver = ResetMap.from_columns(_delivery_columns(n, i))
        if discipline is Discipline.LCFS_NP:
            rows.append(Transition(2 * i - 1, 0, i, lam_i, arrive))
            rows.append(Transition(2 * i, i, 0, mu, deliver))
        elif discipline is Discipline.LCFS_PS:
            base = (2 + n) * i
            rows.append(Transition(base - (n + 1), 0, i, lam_i, arrive))
            rows.append(Transition(base - n, i, 0, mu, deliver))
            for j in range(1, n + 1):
                rows.append(Transition(base - n + j, i, j, params.lam_of(j), arrive))
        else:
            rows.append(Transition(3 * i - 2, 0, i, lam_i, arrive))
            rows.append(Transition(3 * i - 1, i, 0, mu, deliver))
            rows.append(Transition(3 * i, i, i, lam_i, arrive))
    rows.sort(key=lambda t: t.id)
    return ShsModel(n + 1, n + 1, tuple(rows))


# ---------------------------------------------------------------------------
# Closed forms


def _check_index_set(params: MultiSourceParams, k_set: Sequence[int], s: Sequence[float]) -> None:
    if len(k_set) != len(s):
        raise ConfigError(f"K has {len(k_set)} entries but s has {len(s)}")
    if len(set(k_set)) != len(k_set):
        raise ConfigError(f"K contains repeated sources: {list(k_set)}")
    if not k_set:
        raise ConfigError("K must contain at least one source")
    for k in k_set:
        params._check_source(k)


def c_z(params: MultiSourceParams, z: Sequence[int], s: Sequence[float]) -> float:
    """``(lam - sum s)(mu - sum s) - mu * lam_{-Z}``; ``s`` aligned with ``z``."""
    total = math.fsum(s)
    return (params.lam - total) * (params.mu - total) - params.mu * params.lam_minus(z)


def c_of_p(params: MultiSourceParams, p: Sequence[int], s_by_source: dict[int, float]) -> float:
    """Product of ``c`` over the suffix sets ``P[i:]`` of the ordered sequence ``p``."""
    out = 1.0
    for i in range(len(p)):
        suffix = p[i:]
        out *= c_z(params, suffix, [s_by_source[k] for k in suffix])
    return out


def cprime_of_p(params: MultiSourceParams, p: Sequence[int], s_by_source: dict[int, float]) -> float:
    """The source-aware correction factor ``C'(P)``."""
    mu = params.mu
    last = p[-1]
    lam_last = params.lam_of(last)
    out = (lam_last + mu) / mu / (mu + lam_last - s_by_source[last])
    for i in range(len(p) - 1):
        lam_i = params.lam_of(p[i])
        tail = math.fsum(s_by_source[k] for k in p[i + 1 :])
        out *= (mu + lam_i - tail) / (mu + lam_i - tail - s_by_source[p[i]])
    return out


def validity_problems(
    params: MultiSourceParams, discipline: "Discipline | str", k_set: Sequence[int], s: Sequence[float]
) -> list[str]:
    """Non-positive factors of the closed form at ``s``; empty means valid.

    Every suffix factor ``c`` over every permutation must be positive, plus the
    ``mu - sum s`` prefactor (NP, SA) and the ``C'`` denominators (SA).
    """
    discipline = Discipline.parse(discipline)
    _check_index_set(params, k_set, s)
    s_by = dict(zip(k_set, (float(v) for v in s)))
    out = []
    seen: set[frozenset[int]] = set()
    for p in permutations(k_set):
        for i in range(len(p)):
            key = frozenset(p[i:])
            if key in seen:
                continue
            seen.add(key)
            z = sorted(key)
            value = c_z(params, z, [s_by[k] for k in z])
            if not value > 0:
                out.append(f"c_{{{','.join(map(str, z))}}} = {value:.6g} <= 0")
    total = math.fsum(s_by.values())
    if discipline is not Discipline.LCFS_PS and not params.mu - total > 0:
        out.append(f"mu - sum(s) = {params.mu - total:.6g} <= 0")
    if discipline is Discipline.LCFS_SA:
        for k in k_set:
            # any suffix containing k as its head; checking all subsets is conservative
            others = [j for j in k_set if j != k]
            for mask in range(1 << len(others)):
                tail = math.fsum(s_by[others[b]] for b in range(len(others)) if mask >> b & 1)
                value = params.mu + params.lam_of(k) - tail - s_by[k]
                if not value > 0:
                    out.append(f"mu + lambda_{k} - (partial sum of s) = {value:.6g} <= 0")
                    break
    return out


def in_region(params: MultiSourceParams, discipline: "Discipline | str", k_set: Sequence[int], s: Sequence[float]) -> bool:
    return not validity_problems(params, discipline, k_set, s)


def joint_mgf(
    params: MultiSourceParams, discipline: "Discipline | str", k_set: Sequence[int], s: Sequence[float]
) -> float:
    """Stationary joint MGF ``E[exp(sum_j s_j x_{K_j})]`` of the AoIs in ``k_set``.

    ``s`` is the raw argument aligned with ``k_set``. Raises
    :class:`OutOfRegionError` when any factor of the closed form is non-positive.
    """
    discipline = Discipline.parse(discipline)
    problems = validity_problems(params, discipline, k_set, s)
    if problems:
        raise OutOfRegionError(f"s={list(s)} outside the validity region: {problems[0]}")
    s_by = dict(zip(k_set, (float(v) for v in s)))
    lam, mu = params.lam, params.mu
    total = math.fsum(s_by.values())
    scale = mu ** len(k_set) * math.prod(params.lam_of(k) for k in k_set)
    if discipline is Discipline.LCFS_SA:
        acc = math.fsum(cprime_of_p(params, p, s_by) / c_of_p(params, p, s_by) for p in permutations(k_set))
        return scale * (mu / (lam + mu)) * (lam + mu - total) * acc
    acc = math.fsum(1.0 / c_of_p(params, p, s_by) for p in permutations(k_set))
    if discipline is Discipline.LCFS_NP:
        return scale * (mu / (lam + mu)) * (1.0 + lam / (mu - total)) * acc
    return scale * acc


def marginal_mgf(params: MultiSourceParams, discipline: "Discipline | str", k: int, s_bar: float) -> float:
    """Marginal MGF of source ``k``'s AoI at the normalized argument ``s_bar = s/mu``."""
    discipline = Discipline.parse(discipline)
    problems = validity_problems(params, discipline, [k], [s_bar * params.mu])
    if problems:
        raise OutOfRegionError(f"s_bar={s_bar} outside the validity region: {problems[0]}")
    rho, rk, rmk = params.rho, params.rho_of(k), params.rho_minus([k])
    core = (1 - s_bar) * (rho - s_bar) - rmk
    if discipline is Discipline.LCFS_PS:
        return rk / core
    if discipline is Discipline.LCFS_NP:
        return rk * (1 + rho - s_bar) / ((1 + rho) * (1 - s_bar) * core)
    return rk * (1 + rk) * (1 + rho - s_bar) / ((1 + rho) * (1 + rk - s_bar) * core)


def joint_mgf_two_normalized(
    params: MultiSourceParams, discipline: "Discipline | str", k1: int, k2: int, s1_bar: float, s2_bar: float
) -> float:
    """Explicit two-source joint MGF in the normalized variables."""
    discipline = Discipline.parse(discipline)
    problems = validity_problems(params, discipline, [k1, k2], [s1_bar * params.mu, s2_bar * params.mu])
    if problems:
        raise OutOfRegionError(f"s_bar=({s1_bar}, {s2_bar}) outside the validity region: {problems[0]}")
    rho = params.rho
    r1, r2 = params.rho_of(k1), params.rho_of(k2)
    rm12 = params.rho_minus([k1, k2])
    both = s1_bar + s2_bar
    pair = (rho - both) * (1 - both) - rm12

    def single(i: int, si: float) -> float:
        return (1 - si) * (rho - si) - params.rho_minus([i])

    if discipline is Discipline.LCFS_PS:
        return r1 * r2 / pair * (1 / single(k1, s1_bar) + 1 / single(k2, s2_bar))
    if discipline is Discipline.LCFS_NP:
        lead = r1 * r2 * (1 + rho - both) / ((1 + rho) * pair * (1 - both))
        return lead * (1 / single(k1, s1_bar) + 1 / single(k2, s2_bar))
    lead = r1 * r2 * (1 + rho - both) / ((1 + rho) * pair)
    acc = 0.0
    for i, si, other in ((k1, s1_bar, k2), (k2, s2_bar, k1)):
        ri, ro = params.rho_of(i), params.rho_of(other)
        acc += (1 + ri) * (1 + ro - si) / ((1 + ri - si) * (1 + ro - both) * single(i, si))
    return lead * acc


@dataclass(frozen=True)
class Moments:
    mean: float
    second_moment: float
    cross_moment: Optional[float] = None
    mean_other: Optional[float] = None
    second_moment_other: Optional[float] = None


def mean_aoi(params: MultiSourceParams, discipline: "Discipline | str", k: int) -> float:
    discipline = Discipline.parse(discipline)
    mu, rho, rk, rmk = params.mu, params.rho, params.rho_of(k), params.rho_minus([k])
    if discipline is Discipline.LCFS_PS:
        return (1 + rho) / (mu * rk)
    if discipline is Discipline.LCFS_NP:
        return (1 + rho) / (mu * rk) + rho / (mu * (1 + rho))
    return ((1 + rho) ** 2 * (1 + rk) + rk * rmk) / (mu * rk * (1 + rk) * (1 + rho))


def second_moment_aoi(params: MultiSourceParams, discipline: "Discipline | str", k: int) -> float:
    discipline = Discipline.parse(discipline)
    mu, rho, rk = params.mu, params.rho, params.rho_of(k)
    if discipline is Discipline.LCFS_PS:
        return 2 * ((1 + rho) ** 2 - rk) / (mu**2 * rk**2)
    if discipline is Discipline.LCFS_NP:
        return 2 * (rk**2 * rho + rk * (rho**2 - 1) + (1 + rho) ** 3) / (mu**2 * rk**2 * (1 + rho))
    num = (
        -(rk**3) * (3 + 2 * rho)
        + rk**2 * (rho**3 + 4 * rho**2 + 2 * rho - 2)
        + rk * (1 + rho) * (2 * rho**2 + 5 * rho + 1)
        + (1 + rho) ** 3
    )
    return 2 * num / (mu**2 * rk**2 * (1 + rk) ** 2 * (1 + rho))


def cross_moment_aoi(params: MultiSourceParams, discipline: "Discipline | str", k1: int, k2: int) -> float:
    """``E[x_{k1} x_{k2}]`` for two distinct sources."""
    discipline = Discipline.parse(discipline)
    if k1 == k2:
        raise ConfigError("cross moment needs two distinct sources")
    mu, rho = params.mu, params.rho
    r1, r2 = params.rho_of(k1), params.rho_of(k2)
    a, p = r1 + r2, r1 * r2
    if discipline is Discipline.LCFS_PS:
        return ((1 + rho) ** 2 * a - 2 * p) / (mu**2 * p * a)
    if discipline is Discipline.LCFS_NP:
        num = rho * (1 + rho) * a**2 + a * ((1 + rho) ** 3 + 2 * rho * p) - 2 * p * (1 + rho)
        return num / (mu**2 * p * (1 + rho) * a)
    alpha3 = -2 * (1 + rho)
    alpha2 = a * (-(2 + rho) * a + (rho**3 + 5 * rho**2 + 5 * rho - 1))
    alpha1 = (
        -(2 * rho + 3) * a**3
        + a**2 * (2 * rho**3 + 9 * rho**2 + 9 * rho - 1)
        + 2 * a * rho * (rho + 2) ** 2
        - 2 * (1 + rho)
    )
    alpha0 = (1 + rho) * a * (1 + a) * (-(a**2) + a * ((1 + rho) ** 2 + rho) + (1 + rho) ** 2)
    num = alpha0 + alpha1 * p + alpha2 * p**2 + alpha3 * p**3
    return num / (mu**2 * p * (1 + r1) ** 2 * (1 + r2) ** 2 * (1 + rho) * a)


def moments(
    params: MultiSourceParams, discipline: "Discipline | str", k: int, k2: Optional[int] = None
) -> Moments:
    """Closed-form mean and second moment of source ``k``; with ``k2`` also the cross moment."""
    if k2 is None:
        return Moments(mean_aoi(params, discipline, k), second_moment_aoi(params, discipline, k))
    return Moments(
        mean=mean_aoi(params, discipline, k),
        second_moment=second_moment_aoi(params, discipline, k),
        cross_moment=cross_moment_aoi(params, discipline, k, k2),
        mean_other=mean_aoi(params, discipline, k2),
        second_moment_other=second_moment_aoi(params, discipline, k2),
    )


def pearson(mean1: float, second1: float, mean2: float, second2: float, cross: float) -> float:
    var1 = second1 - mean1**2
    var2 = second2 - mean2**2
    if not (var1 > 0 and var2 > 0):
        raise ValueError(f"degenerate variance ({var1}, {var2})")
    return (cross - mean1 * mean2) / math.sqrt(var1 * var2)


def correlation_from_moments(params: MultiSourceParams, discipline: "Discipline | str", k1: int, k2: int) -> float:
    m = moments(params, discipline, k1, k2)
    return pearson(m.mean, m.second_moment, m.mean_other, m.second_moment_other, m.cross_moment)


def _sa_g(r1: float, r2: float, rho: float) -> float:
    a, p = r1 + r2, r1 * r2
    return (
        p**2 * (a + 2 * (1 + rho) ** 2)
        + p * a * (2 * a + 3 * rho**2 + 6 * rho + 5)
        + a**3
        + 2 * a**2 * (rho**2 + 2 * rho + 2)
        + a * (3 * rho**2 + 6 * rho + 4)
        + 2 * (1 + rho) ** 2
    )


def _sa_f(ri: float, rmi: float, rho: float) -> float:
    return (
        ri**3 * (rho + rmi)
        + ri**2 * (rho**3 * (rho + 2) + rmi * (2 * rho**2 + 9 * rho + 8))
        + ri * (rho * (2 * rho + 1) * (1 + rho) ** 2 + rmi * (2 * rho + 3) + rmi**2 * (3 * rho + 4))
        + (1 + rho) ** 4
    )


def correlation(params: MultiSourceParams, discipline: "Discipline | str", k1: int, k2: int) -> float:
    """Closed-form Pearson correlation of the AoIs of sources ``k1`` and ``k2``."""
    discipline = Discipline.parse(discipline)
    if k1 == k2:
        raise ConfigError("correlation needs two distinct sources")
    rho = params.rho
    r1, r2 = params.rho_of(k1), params.rho_of(k2)
    rm1, rm2 = params.rho_minus([k1]), params.rho_minus([k2])
    a = r1 + r2
    if discipline is Discipline.LCFS_PS:
        return -2 * r1 * r2 / (a * math.sqrt((rho**2 + 2 * rm1 + 1) * (rho**2 + 2 * rm2 + 1)))
    if discipline is Discipline.LCFS_NP:
        # the complement utilization enters only through rho
        num = r1 * r2 * (rho * a * (rho + 2) - 2 * (1 + rho) ** 2)
        den = a
        for ri, rmi in ((r1, rm1), (r2, rm2)):
            den *= math.sqrt((1 + rho) ** 2 * (rho**2 + 2 * rmi + 1) + ri**2 * rho * (rho + 2))
        return num / den
    g = _sa_g(r1, r2, rho)
    den = a * (1 + r1) * (1 + r2) * math.sqrt(_sa_f(r1, rm1, rho) * _sa_f(r2, rm2, rho))
    return -r1 * r2 * g / den


def correlation_two_source(rho1: float, rho2: float, discipline: "Discipline | str") -> float:
    """Two-source (``N = 2``) correlation expressed through ``rho1``, ``rho2`` only."""
    discipline = Discipline.parse(discipline)
    rho = rho1 + rho2
    if discipline is Discipline.LCFS_PS:
        return -2 * rho1 * rho2 / (rho * math.sqrt((rho**2 + 2 * rho1 + 1) * (rho**2 + 2 * rho2 + 1)))
    if discipline is Discipline.LCFS_NP:
        den = rho
        for ri, rmi in ((rho1, rho2), (rho2, rho1)):
            den *= math.sqrt((1 + rho) ** 2 * (rho**2 + 2 * rmi + 1) + ri**2 * rho * (rho + 2))
        return rho1 * rho2 * (rho**3 - 2 * (2 * rho + 1)) / den
    g = (
        rho1**2 * rho2**2 * (rho + 2) * (2 * rho + 1)
        + rho1 * rho2 * rho * (1 + rho) * (3 * rho + 5)
        + 2 * (1 + rho) ** 4
    )

    def fprime(y: float, z: float) -> float:
        return (
            z**3 * y
            + y**2 * z * (2 * rho**2 + 7 * rho + 4)
            + y * z * (rho**2 + 6 * rho + 3)
            + y**2 * rho**3 * (rho + 2)
            + y * rho * (2 * rho**3 + 6 * rho**2 + 4 * rho + 1)
            + (1 + rho) ** 4
        )

    den = rho * (1 + rho1) * (1 + rho2) * math.sqrt(fprime(rho1, rho2) * fprime(rho2, rho1))
    return -rho1 * rho2 * g / den


def rho_threshold_np(xtol: float = 1e-12) -> float:
    """Utilization above which two symmetric NP sources become positively correlated.

    The unique root above ``2/sqrt(3)`` of ``rho**3 - 4 rho - 2``.
    """
    return float(bisect(lambda r: r**3 - 4 * r - 2, 2 / math.sqrt(3), 3.0, xtol=xtol))


def symmetric_params(n_sources: int, rho: float, mu: float = 1.0) -> MultiSourceParams:
    return MultiSourceParams(tuple([rho * mu / n_sources] * n_sources), mu)


def mgf_derivatives_fd(
    params: MultiSourceParams, discipline: "Discipline | str", k1: int, k2: int, h: Optional[float] = None
) -> tuple[float, float, float]:
    """Central finite differences of the closed-form MGF at 0.

    Returns ``(E[x_k1], E[x_k1^2], E[x_k1 x_k2])`` with step ``h`` (default
    ``1e-4 * mu``).
    """
    h = 1e-4 * params.mu if h is None else h

    def m1(s: float) -> float:
        return joint_mgf(params, discipline, [k1], [s])

    def m2(a: float, b: float) -> float:
        return joint_mgf(params, discipline, [k1, k2], [a, b])

    mean = (m1(h) - m1(-h)) / (2 * h)
    second = (m1(h) - 2 * m1(0.0) + m1(-h)) / h**2
    cross = (m2(h, h) - m2(h, -h) - m2(-h, h) + m2(-h, -h)) / (4 * h * h)
    return mean, second, cross


def as_array(values: Iterable[float]) -> np.ndarray:
    return np.asarray(list(values), dtype=np.float64)
