"""Discrete-event Monte Carlo simulation of a piecewise-linear SHS.

Ages grow at unit rate between events, so every time average is accumulated
by integrating the exact polynomial / exponential over each inter-event
segment. Replications run on jump-ahead PCG64DXSM streams and give the
standard errors.

Age positions in queries are 0-based, as in :mod:`aoijoint.stationary_solver`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit

from .errors import ConfigError, OutOfRegionError, SimulationError
from .shs_model import ShsModel

MGF_EXP_LIMIT = 700.0

_OK, _OVERFLOW, _REFILL, _STOPPED = 0, 1, 2, 3
BUFFER = 1 << 15


# ---------------------------------------------------------------------------
# Queries


@dataclass(frozen=True)
class Mean:
    k: int

    @property
    def label(self) -> str:
        return f"mean[{self.k}]"


@dataclass(frozen=True)
class SecondMoment:
    k: int

    @property
    def label(self) -> str:
        return f"second_moment[{self.k}]"


@dataclass(frozen=True)
class CrossMoment:
    k1: int
    k2: int

    @property
    def label(self) -> str:
        return f"cross_moment[{self.k1},{self.k2}]"


@dataclass(frozen=True)
class Correlation:
    k1: int
    k2: int

    @property
    def label(self) -> str:
        return f"correlation[{self.k1},{self.k2}]"


@dataclass(frozen=True)
class Mgf:
    k: tuple[int, ...]
    s: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        object.__setattr__(self, "s", tuple(float(v) for v in self.s))
        if len(self.k) != len(self.s) or not self.k:
            raise ConfigError("MGF query needs matching, non-empty K and s")
        if len(set(self.k)) != len(self.k):
            raise ConfigError(f"K contains repeated indices: {list(self.k)}")

    @property
    def label(self) -> str:
        return f"mgf[{','.join(map(str, self.k))}]"


@dataclass(frozen=True)
class Occupancy:
    q: int

    @property
    def label(self) -> str:
        return f"occupancy[{self.q}]"


SimQuery = Union[Mean, SecondMoment, CrossMoment, Correlation, Mgf, Occupancy]


@dataclass(frozen=True)
class SimConfig:
    """Run length and replication settings.

    Exactly one of ``events`` (event budget) and ``time`` (simulated time)
    sets the horizon. ``warmup`` is in the same unit and defaults to 5% of it.
    """

    seed: int = 0
    events: Optional[int] = None
    time: Optional[float] = None
    warmup: Optional[float] = None
    replications: int = 1

    def __post_init__(self) -> None:
        if (self.events is None) == (self.time is None):
            raise ConfigError("set exactly one of events and time")
        if self.events is not None and (isinstance(self.events, bool) or int(self.events) != self.events or self.events < 1):
            raise ConfigError(f"events must be a positive integer, got {self.events!r}")
        if self.time is not None and not (math.isfinite(self.time) and self.time > 0):
            raise ConfigError(f"time must be positive and finite, got {self.time!r}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.warmup is not None and not self.warmup >= 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup!r}")

    @property
    def horizon(self) -> float:
        return float(self.events if self.events is not None else self.time)

    @property
    def warmup_amount(self) -> float:
        return 0.05 * self.horizon if self.warmup is None else float(self.warmup)


@dataclass(frozen=True)
class QuantityEstimate:
    query: SimQuery
    value: float
    stderr: float
    per_replication: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SimEstimate:
    estimates: tuple[QuantityEstimate, ...]
    accumulation_time: float
    replications: int

    def __getitem__(self, query: SimQuery) -> QuantityEstimate:
        for e in self.estimates:
            if e.query == query:
                return e
        raise KeyError(query)

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "accumulation_time": self.accumulation_time,
            "estimates": {e.query.label: {"value": e.value, "stderr": e.stderr} for e in self.estimates},
        }


def replication_stream(seed: int, index: int) -> np.random.Generator:
    """Stream ``index`` of ``seed``: PCG64DXSM advanced by ``index`` jumps of ~2**127 draws."""
    if index < 0:
        raise ConfigError(f"replication index must be >= 0, got {index}")
    return np.random.Generator(np.random.PCG64DXSM(seed).jumped(index))


# ---------------------------------------------------------------------------
# Compiled core
#
# The event loop is generated per accumulator layout so that ages and running
# sums live in local scalars; a generic loop over small arrays is several
# times slower.


@dataclass(frozen=True)
class _Layout:
    n: int
    means: tuple[int, ...]
    pairs: tuple[tuple[int, int], ...]
    n_mgf: int
    occupancy: bool
    links: tuple[tuple[int, int], ...]  # (row, column) entries that are 1 in some reset map
    scripted: bool


def _accumulate_lines(lay: _Layout, needed: list[int], seg: str) -> list[str]:
    """Exact integrals over a segment of length ``seg`` starting at the current ages."""
    out = [f"half = 0.5 * {seg} * {seg}", f"third = {seg} * {seg} * {seg} / 3.0", f"big += {seg}"]
    if lay.occupancy:
        out.append(f"acc_occ[q] += {seg}")
    out += [f"a{i} = x{i}" for i in needed]
    out += [f"am{k} += a{i} * {seg} + half" for k, i in enumerate(lay.means)]
    out += [f"ap{k} += a{i} * a{j} * {seg} + (a{i} + a{j}) * half + third" for k, (i, j) in enumerate(lay.pairs)]
    for m in range(lay.n_mgf):
        out.append("lin = " + " + ".join(f"w[{m}, {i}] * a{i}" for i in range(lay.n)))
        out.append(f"sm = wsum[{m}]")
        out.append(f"if lin + (sm * {seg} if sm > 0.0 else 0.0) > exp_limit:")
        out.append(f"    status = {_OVERFLOW}")
        out.append("    break")
        out.append(f"mg{m} += math.exp(lin) * (math.expm1(sm * {seg}) / sm if sm != 0.0 else {seg})")
    return out


def _kernel_source(lay: _Layout) -> str:
    """Source of the event loop for one accumulator layout.

    Random inputs come from pre-filled buffers ``ebuf`` (standard exponential,
    one per event) and ``ubuf`` (uniform, only for states with several exits);
    the loop returns ``_REFILL`` when either runs dry. In scripted mode the
    holding times and transition slots are read from ``ebuf`` / ``lbuf``.
    """
    n = lay.n
    needed = sorted(set(lay.means) | {i for p in lay.pairs for i in p} | (set(range(n)) if lay.n_mgf else set()))
    out = [
        "def kernel(ebuf, ubuf, lbuf, ie, iu, out_start, out_count, cum, hold, target, amat, w, wsum,",
        "           q, x, t, max_events, t_stop, acc_t, acc_occ, acc_mean, acc_pair, acc_mgf, exp_limit):",
    ]
    body = [f"x{i} = x[{i}]" for i in range(n)]
    body += [f"am{k} = 0.0" for k in range(len(lay.means))]
    body += [f"ap{k} = 0.0" for k in range(len(lay.pairs))]
    body += [f"mg{m} = 0.0" for m in range(lay.n_mgf)]
    body += ["big = 0.0", "status = 0", "stopped = False", "dt = 0.0", "ev = 0"]
    body += ["ne = ebuf.shape[0]", "nu = ubuf.shape[0]"]
    body.append("while ev < max_events:")
    loop = ["if ie == ne:", f"    status = {_REFILL}", "    break"]
    loop.append("dt = ebuf[ie]" if lay.scripted else "dt = ebuf[ie] * hold[q]")
    loop.append("ie += 1")
    loop += ["if t + dt > t_stop:", "    stopped = True", "    break"]
    loop += _accumulate_lines(lay, needed, "dt")
    loop += [f"x{i} += dt" for i in range(n)]
    loop.append("t += dt")
    if lay.scripted:
        loop += ["l = lbuf[ie - 1]", "if l < 0:", "    ev += 1", "    break"]
    else:
        loop += [
            "start = out_start[q]",
            "l = start + out_count[q] - 1",
            "if l > start:",
            "    if iu == nu:",
            "        ie -= 1",
            f"        status = {_REFILL}",
            "        break",
            "    u = ubuf[iu]",
            "    iu += 1",
            "    pick = start",
            "    for c in range(start, l):",
            "        pick += u >= cum[c]",
            "    l = pick",
        ]
    for j in range(n):
        terms = [f"amat[l, {i}, {j}] * x{i}" for i, jj in lay.links if jj == j]
        loop.append(f"y{j} = " + (" + ".join(terms) if terms else "0.0"))
    loop += [f"x{j} = y{j}" for j in range(n)]
    loop += ["q = target[l]", "ev += 1"]
    body += ["    " + s for s in loop]
    # the truncated last segment; the residual holding time is memoryless
    body += ["if stopped and status == 0:", "    dt = t_stop - t", "    while dt > 0.0:"]
    body += ["        " + s for s in _accumulate_lines(lay, needed, "dt")]
    body += ["        break"]
    body += [f"    x{i} += dt" for i in range(n)]
    body += ["    t = t_stop", "    if status == 0:", f"        status = {_STOPPED}"]
    body += [f"x[{i}] = x{i}" for i in range(n)]
    body.append("acc_t[0] += big")
    body += [f"acc_mean[{k}] += am{k}" for k in range(len(lay.means))]
    body += [f"acc_pair[{k}] += ap{k}" for k in range(len(lay.pairs))]
    body += [f"acc_mgf[{m}] += mg{m}" for m in range(lay.n_mgf)]
    body.append("return status, ev, t, q, ie, iu")
    out += ["    " + s for s in body]
    return "\n".join(out) + "\n"


_KERNELS: dict[_Layout, object] = {}


def _kernel(lay: _Layout):
    fn = _KERNELS.get(lay)
    if fn is None:
        namespace: dict = {"math": math, "np": np}
        exec(compile(_kernel_source(lay), f"<aoijoint-sim-kernel-{len(_KERNELS)}>", "exec"), namespace)
        fn = _KERNELS[lay] = njit(namespace["kernel"])
    return fn


# ---------------------------------------------------------------------------
# Python driver


@dataclass(frozen=True)
class _Arrays:
    out_start: np.ndarray
    out_count: np.ndarray
    cum: np.ndarray
    hold: np.ndarray  # mean holding time per state
    target: np.ndarray
    amat: np.ndarray  # (transitions, n, n) float copies of the reset maps
    order: np.ndarray  # model transition index of each sorted slot
    links: tuple[tuple[int, int], ...]


def _arrays(model: ShsModel) -> _Arrays:
    model.require_valid()
    exit_rate = model.exit_rates()
    dead = np.flatnonzero(exit_rate <= 0)
    if dead.size:
        raise SimulationError(f"absorbing state {int(dead[0])}: zero total outgoing rate")
    order = np.array(sorted(range(len(model.transitions)), key=lambda i: model.transitions[i].source), dtype=np.int64)
    trans = [model.transitions[i] for i in order]
    sources = np.array([t.source for t in trans], dtype=np.int64)
    out_count = np.bincount(sources, minlength=model.num_states).astype(np.int64)
    out_start = np.concatenate([[0], np.cumsum(out_count)[:-1]]).astype(np.int64)
    cum = np.empty(len(trans))
    for q in range(model.num_states):
        sl = slice(out_start[q], out_start[q] + out_count[q])
        cum[sl] = np.cumsum([t.rate for t in trans[sl]]) / exit_rate[q]
    target = np.array([t.target for t in trans], dtype=np.int64)
    amat = np.array([t.reset.matrix for t in trans], dtype=np.float64).reshape(len(trans), model.age_dim, model.age_dim)
    links = tuple(sorted({(int(i), int(j)) for _, i, j in zip(*np.nonzero(amat))}))
    return _Arrays(out_start, out_count, cum, 1.0 / exit_rate, target, amat, order, links)


def _weights(model: ShsModel, mgfs: Sequence[Mgf]) -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((len(mgfs), model.age_dim))
    for m, query in enumerate(mgfs):
        for k, s in zip(query.k, query.s):
            w[m, k] = s
    return w, w.sum(axis=1)


def _check_queries(model: ShsModel, queries: Sequence[SimQuery]) -> None:
    def age(k: int) -> None:
        if not 0 <= k < model.age_dim:
            raise ConfigError(f"age position {k} outside 0..{model.age_dim - 1}")

    for query in queries:
        if isinstance(query, (Mean, SecondMoment)):
            age(query.k)
        elif isinstance(query, (CrossMoment, Correlation)):
            age(query.k1)
            age(query.k2)
            if isinstance(query, Correlation) and query.k1 == query.k2:
                raise ConfigError("correlation needs two distinct age positions")
        elif isinstance(query, Mgf):
            for k in query.k:
                age(k)
        elif isinstance(query, Occupancy):
            if not 0 <= query.q < model.num_states:
                raise ConfigError(f"state {query.q} outside 0..{model.num_states - 1}")
        else:
            raise ConfigError(f"unsupported query {query!r}")


def _needs(queries: Sequence[SimQuery]) -> tuple[tuple[int, ...], tuple[tuple[int, int], ...]]:
    means: set[int] = set()
    pairs: set[tuple[int, int]] = set()
    for query in queries:
        if isinstance(query, Mean):
            means.add(query.k)
        elif isinstance(query, SecondMoment):
            pairs.add((query.k, query.k))
        elif isinstance(query, CrossMoment):
            pairs.add((min(query.k1, query.k2), max(query.k1, query.k2)))
        elif isinstance(query, Correlation):
            a, b = sorted((query.k1, query.k2))
            means.update((a, b))
            pairs.update(((a, a), (b, b), (a, b)))
    return tuple(sorted(means)), tuple(sorted(pairs))


@dataclass
class Accumulators:
    """Raw time integrals of one run (not divided by the elapsed time)."""

    time: float
    occupancy: np.ndarray
    mean: dict[int, float]
    pair: dict[tuple[int, int], float]
    mgf: np.ndarray

    def second(self, i: int, j: int) -> float:
        return self.pair[(min(i, j), max(i, j))]


class _Stream:
    """Buffered exponential / uniform draws from one replication stream."""

    def __init__(self, rng: np.random.Generator, size: int = BUFFER):
        self.rng = rng
        self.ebuf = np.empty(size)
        self.ubuf = np.empty(size)
        self.ie = size
        self.iu = size

    def refill(self) -> None:
        if self.ie == self.ebuf.size:
            self.rng.standard_exponential(out=self.ebuf)
            self.ie = 0
        if self.iu == self.ubuf.size:
            self.rng.random(out=self.ubuf)
            self.iu = 0


def _phase(
    model: ShsModel,
    arr: _Arrays,
    lay: _Layout,
    stream: _Stream,
    w: np.ndarray,
    wsum: np.ndarray,
    q: int,
    x: np.ndarray,
    t: float,
    max_events: int,
    t_stop: float,
    exp_limit: float,
) -> tuple[int, int, float, Accumulators]:
    """Advance ``(q, x, t)`` by ``max_events`` events or up to ``t_stop``, whichever is first."""
    acc_t = np.zeros(1)
    acc_occ = np.zeros(model.num_states)
    acc_mean = np.zeros(len(lay.means))
    acc_pair = np.zeros(len(lay.pairs))
    acc_mgf = np.zeros(lay.n_mgf)
    kernel = _kernel(lay)
    remaining = max_events
    while True:
        stream.refill()
        status, done, t, q, stream.ie, stream.iu = kernel(
            stream.ebuf, stream.ubuf, _NO_SLOTS, stream.ie, stream.iu,
            arr.out_start, arr.out_count, arr.cum, arr.hold, arr.target, arr.amat, w, wsum,
            q, x, t, remaining, t_stop, acc_t, acc_occ, acc_mean, acc_pair, acc_mgf, exp_limit,
        )
        remaining -= done
        if status != _REFILL or remaining <= 0:
            break
    acc = Accumulators(
        float(acc_t[0]),
        acc_occ,
        {k: float(v) for k, v in zip(lay.means, acc_mean)},
        {p: float(v) for p, v in zip(lay.pairs, acc_pair)},
        acc_mgf,
    )
    return (_OVERFLOW if status == _OVERFLOW else _OK), int(q), float(t), acc


def replay(
    model: ShsModel,
    holding_times: Sequence[float],
    transition_ids: Sequence[Optional[int]],
    mgfs: Sequence[Mgf] = (),
    *,
    q0: int = 0,
    x0: Optional[Sequence[float]] = None,
) -> Accumulators:
    """Integrate a prescribed trajectory through the simulation kernel.

    Segment ``e`` lasts ``holding_times[e]`` and ends with the transition of id
    ``transition_ids[e]``; ``None`` ends the run after that segment. Every
    mean and every pair product is accumulated.
    """
    arr = _arrays(model)
    if len(holding_times) != len(transition_ids):
        raise ConfigError("holding_times and transition_ids must have equal length")
    slot = {int(model.transitions[i].id): s for s, i in enumerate(arr.order)}
    try:
        chosen = np.array([-1 if t is None else slot[int(t)] for t in transition_ids], dtype=np.int64)
    except KeyError as exc:
        raise ConfigError(f"unknown transition id {exc.args[0]}") from None
    n = model.age_dim
    lay = _Layout(
        n, tuple(range(n)), tuple((i, j) for i in range(n) for j in range(i, n)), len(mgfs), True, arr.links, True
    )
    w, wsum = _weights(model, mgfs)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    script_dt = np.asarray(holding_times, dtype=np.float64)
    acc_t, acc_occ = np.zeros(1), np.zeros(model.num_states)
    acc_mean, acc_pair, acc_mgf = np.zeros(len(lay.means)), np.zeros(len(lay.pairs)), np.zeros(len(mgfs))
    status, _, _, _, _, _ = _kernel(lay)(
        script_dt, _NO_SCRIPT[0], chosen, 0, 0,
        arr.out_start, arr.out_count, arr.cum, arr.hold, arr.target, arr.amat, w, wsum,
        q0, x, 0.0, script_dt.size, math.inf, acc_t, acc_occ, acc_mean, acc_pair, acc_mgf, MGF_EXP_LIMIT,
    )
    acc = Accumulators(
        float(acc_t[0]),
        acc_occ,
        {k: float(v) for k, v in zip(lay.means, acc_mean)},
        {p: float(v) for p, v in zip(lay.pairs, acc_pair)},
        acc_mgf,
    )
    if status == _OVERFLOW:
        raise SimulationError("MGF accumulator overflow")
    return acc


def _pearson(m1: float, m2: float, v11: float, v22: float, c12: float) -> float:
    var1, var2 = v11 - m1 * m1, v22 - m2 * m2
    if not (var1 > 0 and var2 > 0):
        return math.nan
    return (c12 - m1 * m2) / math.sqrt(var1 * var2)


def simulate(
    model: ShsModel,
    config: SimConfig,
    queries: Sequence[SimQuery],
    *,
    check_stability: bool = True,
    exp_limit: float = MGF_EXP_LIMIT,
) -> SimEstimate:
    """Time-average estimates of ``queries`` with standard errors over replications.

    Each replication starts from ``q = 0, x = 0`` on its own stream. Point
    estimates average the per-replication time averages (a correlation is
    formed from the averaged moments); standard errors are ``std / sqrt(R)``
    and infinite when ``R = 1``.
    """
    queries = list(queries)
    _check_queries(model, queries)
    arr = _arrays(model)
    if config.warmup_amount >= config.horizon:
        raise SimulationError("no accumulation time: warmup covers the whole horizon")
    mgfs = [query for query in queries if isinstance(query, Mgf)]
    if mgfs and check_stability:
        from .stationary_solver import stability_check

        for query in mgfs:
            report = stability_check(model, len(query.k), query.s)
            if not report.stable:
                raise OutOfRegionError(
                    f"s={list(query.s)} outside the convergence region "
                    f"(max real eigenvalue {report.max_real_eigenvalue:.6g}); the time average diverges"
                )
    means, pairs = _needs(queries)
    occupancy = any(isinstance(query, Occupancy) for query in queries)
    lay = _Layout(model.age_dim, means, pairs, len(mgfs), occupancy, arr.links, False)
    w, wsum = _weights(model, mgfs)
    if config.events is not None:
        warm = (int(round(config.warmup_amount)), math.inf)
        main = (int(config.events) - warm[0], math.inf)
    else:
        forever = np.iinfo(np.int64).max
        warm = (forever, config.warmup_amount)
        main = (forever, float(config.time))

    reps = []
    for index in range(config.replications):
        stream = _Stream(replication_stream(config.seed, index))
        q, x, t = 0, np.zeros(model.age_dim), 0.0
        status = 0
        if warm[0] > 0 and warm[1] > 0:
            status, q, t, _ = _phase(model, arr, lay, stream, w, wsum, q, x, t, *warm, exp_limit)
        if status == 0:
            status, q, t, acc = _phase(model, arr, lay, stream, w, wsum, q, x, t, *main, exp_limit)
        if status:
            raise SimulationError(
                f"MGF accumulator overflow in replication {index}: exp argument exceeded {exp_limit:g}; "
                "the time average diverges for this s"
            )
        if not acc.time > 0:
            raise SimulationError("no accumulation time after warmup")
        reps.append(acc)

    r = len(reps)
    t = np.array([a.time for a in reps])
    mgf_slot = {id(query): m for m, query in enumerate(mgfs)}

    def raw(query: SimQuery) -> np.ndarray:
        if isinstance(query, Mean):
            return np.array([a.mean[query.k] for a in reps]) / t
        if isinstance(query, SecondMoment):
            return np.array([a.second(query.k, query.k) for a in reps]) / t
        if isinstance(query, CrossMoment):
            return np.array([a.second(query.k1, query.k2) for a in reps]) / t
        if isinstance(query, Mgf):
            return np.array([a.mgf[mgf_slot[id(query)]] for a in reps]) / t
        if isinstance(query, Occupancy):
            return np.array([a.occupancy[query.q] for a in reps]) / t
        raise AssertionError(query)

    out = []
    for query in queries:
        if isinstance(query, Correlation):
            parts = [
                raw(p)
                for p in (
                    Mean(query.k1),
                    Mean(query.k2),
                    SecondMoment(query.k1),
                    SecondMoment(query.k2),
                    CrossMoment(query.k1, query.k2),
                )
            ]
            per = np.array([_pearson(*(p[i] for p in parts)) for i in range(r)])
            value = _pearson(*(float(p.mean()) for p in parts))
        else:
            per = raw(query)
            value = float(per.mean())
        se = float(per.std(ddof=1) / math.sqrt(r)) if r > 1 else math.inf
        if not math.isfinite(value):
            raise SimulationError(f"{query.label} estimate is not finite")
        out.append(QuantityEstimate(query, value, se, per))
    return SimEstimate(tuple(out), float(t.mean()), r)


_NO_SCRIPT = (np.zeros(0), np.zeros(0, dtype=np.int64))
_NO_SLOTS = _NO_SCRIPT[1]
