"""Stationary and transient joint moments / joint MGFs of a piecewise-linear SHS.

Every quantity is a per-state tensor over multi-indices of age positions. For
an order-``r`` query the unknown for state ``q`` is

* moments: ``V_q[K] = E[prod_j x_{K_j}^{m_j} 1{q(t)=q}]``
* MGF:     ``V_q[K] = E[exp(sum_j s_j x_{K_j}) 1{q(t)=q}]``

for all ``K`` in ``{0..n-1}^r``. Stacking the states (state-major, then the
row-major flat multi-index) turns the stationary equations into

    y (D - B_r - S I) = z

where ``B_r`` collects ``rate * kron^r(A_l)`` blocks at ``(source, target)``,
``D`` holds the exit rates, ``S = sum(s)`` (0 for moments) and ``z`` is a
linear function of lower-order solutions. The lower-order problems form a DAG
of "nodes" that is solved bottom-up for the stationary point and stacked into
one linear ODE ``y' = y G`` for transient integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .errors import ConfigError, NotErgodicError, OutOfRegionError, UnstableError
from .shs_model import ShsModel
from .tensor import MAX_ORDER, DenseTensor, check_order

STABILITY_TOL = 1e-9
POSITIVITY_TOL = 1e-12
DEFAULT_MAX_SIZE = 2048

NodeKey = tuple


@dataclass(frozen=True)
class MomentQuery:
    """Exponent vector ``m`` of an order-``len(m)`` joint moment."""

    m: tuple[int, ...]

    def __post_init__(self) -> None:
        m = tuple(self.m)
        if not m:
            raise ConfigError("moment query needs at least one exponent")
        for v in m:
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigError(f"moment exponents must be non-negative integers, got {v!r}")
        object.__setattr__(self, "m", tuple(int(v) for v in m))

    @property
    def order(self) -> int:
        return len(self.m)


@dataclass(frozen=True)
class MgfQuery:
    """Distinct age positions ``k`` and the MGF argument ``s`` aligned with them."""

    k: tuple[int, ...]
    s: tuple[float, ...]

    def __post_init__(self) -> None:
        k = tuple(int(v) for v in self.k)
        s = tuple(float(v) for v in self.s)
        if not k:
            raise ConfigError("MGF query needs at least one age position")
        if len(k) != len(s):
            raise ConfigError(f"K has {len(k)} entries but s has {len(s)}")
        if len(set(k)) != len(k):
            raise ConfigError(f"K contains repeated indices: {list(k)}")
        if not all(math.isfinite(v) for v in s):
            raise ConfigError(f"s must be finite, got {list(s)}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "s", s)

    @property
    def order(self) -> int:
        return len(self.k)


@dataclass(frozen=True)
class StabilityReport:
    order: int
    max_real_eigenvalue: float
    stable: bool
    positive_first_moments: bool
    min_first_moment: float


@dataclass(frozen=True)
class MomentSolution:
    query: MomentQuery
    per_state: tuple[DenseTensor, ...]
    aggregate: DenseTensor
    residual: float
    pi: np.ndarray = field(repr=False)

    def value(self, k: Sequence[int]) -> float:
        return self.aggregate.get(k)


@dataclass(frozen=True)
class MgfSolution:
    query: MgfQuery
    per_state_values: np.ndarray
    value: float
    per_state: tuple[DenseTensor, ...] = field(repr=False)
    residual: float = 0.0


@dataclass(frozen=True)
class TransientResult:
    times: np.ndarray
    state_probabilities: np.ndarray  # (samples, num_states)
    values: np.ndarray  # (samples, num_states, n**r) for the queried node
    final: tuple[DenseTensor, ...]
    final_nodes: dict = field(repr=False)

    def aggregate_at(self, k: Sequence[int]) -> np.ndarray:
        """Trajectory of ``sum_q V_q[k]`` over the sample times."""
        n = self.final[0].dim
        return self.values[:, :, _flat(np.asarray([k]), n)[0]].sum(axis=1)


Query = Union[MomentQuery, MgfQuery]


def _flat(idx: np.ndarray, n: int) -> np.ndarray:
    r = idx.shape[1]
    if r == 0:
        return np.zeros(idx.shape[0], dtype=np.int64)
    return idx @ (n ** np.arange(r - 1, -1, -1, dtype=np.int64))


class _Operators:
    """Lazily assembled ``B_r`` matrices, multi-index grids and spectra of one model."""

    def __init__(self, model: ShsModel, max_size: int = DEFAULT_MAX_SIZE):
        model.require_valid()
        self.model = model
        self.nq = model.num_states
        self.n = model.age_dim
        self.max_size = max_size
        self.exit = model.exit_rates()
        self.trans = [(t.source, t.target, float(t.rate), t.reset.source_index()) for t in model.transitions]
        self._grid: dict[int, np.ndarray] = {}
        self._b: dict[int, np.ndarray] = {}
        self._lmax: dict[int, float] = {}

    def size(self, r: int) -> int:
        size = self.nq * self.n**r
        if size > self.max_size:
            raise ConfigError(
                f"order-{r} system has {size} unknowns (|Q|*n^r), above the cap of {self.max_size}; "
                "raise max_size if the memory and time cost is acceptable"
            )
        return size

    def grid(self, r: int) -> np.ndarray:
        if r not in self._grid:
            if r == 0:
                self._grid[r] = np.zeros((1, 0), dtype=np.int64)
            else:
                self._grid[r] = np.array(list(np.ndindex(*(self.n,) * r)), dtype=np.int64)
        return self._grid[r]

    def b(self, r: int) -> np.ndarray:
        if r not in self._b:
            size = self.size(r)
            block = self.n**r
            grid = self.grid(r)
            cols_k = np.arange(block)
            b = np.zeros((size, size))
            for src_q, tgt_q, rate, src in self.trans:
                mapped = src[grid]
                keep = (mapped >= 0).all(axis=1)
                rows = src_q * block + _flat(mapped[keep], self.n)
                cols = tgt_q * block + cols_k[keep]
                np.add.at(b, (rows, cols), rate)
            self._b[r] = b
        return self._b[r]

    def d(self, r: int) -> np.ndarray:
        return np.repeat(self.exit, self.n**r)

    def drift(self, r: int, shift: float = 0.0) -> np.ndarray:
        """``B_r - D_r + shift * I``; the row-vector ODE is ``y' = y @ drift + sources``."""
        return self.b(r) - np.diag(self.d(r) - shift)

    def lmax(self, r: int) -> float:
        """Largest real part in the spectrum of ``B_r - D_r``."""
        if r not in self._lmax:
            self._lmax[r] = float(np.max(np.linalg.eigvals(self.drift(r)).real))
        return self._lmax[r]

    def lift(self, positions: Sequence[int], r: int) -> np.ndarray:
        """Coupling that replicates an order-``len(positions)`` tensor across the other modes."""
        p = len(positions)
        grid = self.grid(r)
        sub = _flat(grid[:, list(positions)], self.n)
        out = np.zeros((self.nq * self.n**p, self.nq * self.n**r))
        cols = np.arange(self.n**r)
        for q in range(self.nq):
            out[q * self.n**p + sub, q * self.n**r + cols] = 1.0
        return out


@dataclass
class _Node:
    key: NodeKey
    order: int
    shift: float
    couplings: dict  # lower key -> coupling matrix


def stationary_distribution(model: ShsModel) -> np.ndarray:
    """Stationary law of the discrete chain; self-transitions cancel."""
    model.require_valid()
    g = model.generator()
    nq = model.num_states
    if nq == 1:
        return np.ones(1)
    if np.linalg.matrix_rank(g) != nq - 1:
        raise NotErgodicError("chain not ergodic: balance equations do not determine a unique distribution")
    a = g.copy()
    a[:, -1] = 1.0
    rhs = np.zeros(nq)
    rhs[-1] = 1.0
    pi = scipy.linalg.solve(a.T, rhs)
    if np.any(pi <= POSITIVITY_TOL):
        raise NotErgodicError(f"stationary distribution not strictly positive: {pi.tolist()}")
    return pi


def _check_positions(model: ShsModel, k: Sequence[int]) -> None:
    for j in k:
        if not 0 <= j < model.age_dim:
            raise ConfigError(f"age position {j} outside 0..{model.age_dim - 1}")


def _moment_nodes(ops: _Operators, m: tuple[int, ...]) -> dict[NodeKey, _Node]:
    nodes: dict[NodeKey, _Node] = {}

    def visit(key: tuple[int, ...]) -> None:
        if key in nodes or not key:
            return
        r = len(key)
        node = _Node(key, r, 0.0, {})
        for j in range(r):
            lower = list(key)
            lower[j] -= 1
            pos = [i for i in range(r) if lower[i] > 0]
            lkey = tuple(lower[i] for i in pos)
            visit(lkey)
            c = key[j] * ops.lift(pos, r)
            node.couplings[lkey] = node.couplings.get(lkey, 0) + c
        nodes[key] = node

    visit(m)
    return nodes


def _mgf_nodes(ops: _Operators, s: tuple[float, ...]) -> dict[NodeKey, _Node]:
    nodes: dict[NodeKey, _Node] = {}

    def visit(key: tuple[int, ...]) -> None:
        if key in nodes or not key:
            return
        r = len(key)
        node = _Node(key, r, math.fsum(s[i] for i in key), {})
        grid = ops.grid(r)
        block = ops.n**r
        cols_k = np.arange(block)
        for src_q, tgt_q, rate, src in ops.trans:
            mapped = src[grid]
            kept = mapped >= 0
            masks = kept @ (1 << np.arange(r))
            for mask in np.unique(masks):
                if mask == (1 << r) - 1:
                    continue  # fully retained: part of B_r
                sel = masks == mask
                pos = [j for j in range(r) if mask >> j & 1]
                lkey = tuple(key[j] for j in pos)
                visit(lkey)
                lsize = ops.nq * ops.n ** len(pos)
                c = node.couplings.get(lkey)
                if c is None:
                    c = node.couplings[lkey] = np.zeros((lsize, ops.nq * block))
                rows = src_q * ops.n ** len(pos) + _flat(mapped[sel][:, pos], ops.n)
                cols = tgt_q * block + cols_k[sel]
                np.add.at(c, (rows, cols), rate)
        nodes[key] = node

    visit(tuple(range(len(s))))
    return nodes


def _solve_nodes(
    ops: _Operators, nodes: dict[NodeKey, _Node], pi: np.ndarray
) -> tuple[dict[NodeKey, np.ndarray], float]:
    values: dict[NodeKey, np.ndarray] = {(): pi}
    residual = 0.0
    for key, node in nodes.items():
        z = sum(values[lk] @ c for lk, c in node.couplings.items())
        lhs = np.diag(ops.d(node.order) - node.shift) - ops.b(node.order)
        try:
            y = scipy.linalg.solve(lhs.T, z)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise UnstableError(f"unstable configuration (singular fixed-point system): {exc}") from None
        scale = max(np.abs(z).max(), np.abs(y @ np.diag(ops.d(node.order))).max(), 1e-300)
        residual = max(residual, float(np.abs(y @ lhs - z).max() / scale))
        values[key] = y
    return values, residual


def _per_state(ops: _Operators, flat: np.ndarray, r: int) -> tuple[DenseTensor, ...]:
    block = ops.n**r
    return tuple(DenseTensor(r, ops.n, flat[q * block : (q + 1) * block]) for q in range(ops.nq))


def _require_stable(ops: _Operators, orders_shifts: Mapping[int, float], what: str) -> None:
    for r, shift in sorted(orders_shifts.items()):
        lm = ops.lmax(r) + shift
        if not lm < -STABILITY_TOL:
            raise UnstableError(
                f"unstable configuration ({what}): max real eigenvalue of B-D+sum(s)I at order {r} "
                f"is {lm:.6g}, needs < -{STABILITY_TOL:g}"
            )


def _first_moments(ops: _Operators, pi: np.ndarray) -> np.ndarray:
    _require_stable(ops, {1: 0.0}, "first moments")
    values, _ = _solve_nodes(ops, _moment_nodes(ops, (1,)), pi)
    return values[(1,)]


def solve_joint_moments(
    model: ShsModel,
    pi: Optional[np.ndarray],
    query: MomentQuery | Sequence[int],
    *,
    max_size: int = DEFAULT_MAX_SIZE,
    max_order: int = MAX_ORDER,
) -> MomentSolution:
    """Stationary per-state moment tensors for the exponent vector ``query.m``.

    Exponent vectors with zero entries are replicated from the lower-order
    tensor over the positive positions, since ``x^0 = 1`` identically.
    """
    if not isinstance(query, MomentQuery):
        query = MomentQuery(tuple(query))
    ops = _Operators(model, max_size)
    r = query.order
    check_order(r, ops.n, max_order)
    ops.size(r)
    if pi is None:
        pi = stationary_distribution(model)
    pi = np.asarray(pi, dtype=np.float64)
    pos = [j for j in range(r) if query.m[j] > 0]
    key = tuple(query.m[j] for j in pos)
    if not key:
        flat = np.repeat(pi, ops.n**r)
        per_state = _per_state(ops, flat, r)
        return MomentSolution(query, per_state, _aggregate(per_state), 0.0, pi)
    _require_stable(ops, {o: 0.0 for o in range(1, len(key) + 1)}, "moments")
    first = _first_moments(ops, pi)
    if first.min() < -POSITIVITY_TOL:
        raise UnstableError(f"no positive fixed point: first-moment entry {first.min():.6g} is negative")
    nodes = _moment_nodes(ops, key)
    values, residual = _solve_nodes(ops, nodes, pi)
    flat = values[key] @ ops.lift(pos, r) if len(pos) < r else values[key]
    per_state = _per_state(ops, flat, r)
    return MomentSolution(query, per_state, _aggregate(per_state), residual, pi)


def _aggregate(per_state: Sequence[DenseTensor]) -> DenseTensor:
    t0 = per_state[0]
    return DenseTensor(t0.order, t0.dim, np.sum([t.data for t in per_state], axis=0))


def solve_joint_mgf(
    model: ShsModel,
    pi: Optional[np.ndarray],
    query: MgfQuery,
    *,
    max_size: int = DEFAULT_MAX_SIZE,
    max_order: int = MAX_ORDER,
) -> MgfSolution:
    """Stationary joint MGF ``E[exp(sum_j s_j x_{K_j})]`` via the subset recursion.

    Raises :class:`OutOfRegionError` when ``s`` (or any sub-vector of it used
    by the recursion) shifts the spectrum of ``B - D`` past ``-1e-9``.
    """
    ops = _Operators(model, max_size)
    r = query.order
    _check_positions(model, query.k)
    check_order(r, ops.n, max_order)
    ops.size(r)
    if pi is None:
        pi = stationary_distribution(model)
    pi = np.asarray(pi, dtype=np.float64)
    kidx = int(_flat(np.asarray([query.k]), ops.n)[0])
    if all(v == 0.0 for v in query.s):
        flat = np.repeat(pi, ops.n**r)
        per_state = _per_state(ops, flat, r)
        return MgfSolution(query, pi.copy(), float(math.fsum(pi)), per_state, 0.0)
    margin = _mgf_margin(ops, query.s)
    if not margin[0] < -STABILITY_TOL:
        raise OutOfRegionError(
            f"s={list(query.s)} outside the convergence region: max real eigenvalue of B-D+sum(s)I "
            f"is {margin[0]:.6g} for sub-vector positions {list(margin[1])}, needs < -{STABILITY_TOL:g}"
        )
    nodes = _mgf_nodes(ops, query.s)
    values, residual = _solve_nodes(ops, nodes, pi)
    flat = values[tuple(range(r))]
    per_state = _per_state(ops, flat, r)
    per_q = np.array([t.data[kidx] for t in per_state])
    return MgfSolution(query, per_q, float(math.fsum(per_q)), per_state, residual)


def _mgf_margin(ops: _Operators, s: Sequence[float]) -> tuple[float, tuple[int, ...]]:
    """Worst ``lmax(B_|I| - D) + sum(s_I)`` over every non-empty sub-vector ``I``."""
    worst = (-math.inf, ())
    for size in range(1, len(s) + 1):
        lm = ops.lmax(size)
        for sub in combinations(range(len(s)), size):
            value = lm + math.fsum(s[i] for i in sub)
            if value > worst[0]:
                worst = (value, sub)
    return worst


def stability_check(
    model: ShsModel,
    order: int,
    s: Optional[Sequence[float]] = None,
    *,
    max_size: int = DEFAULT_MAX_SIZE,
) -> StabilityReport:
    """Spectral stability of the order-``1..order`` systems, optionally shifted by ``s``.

    With ``s`` the worst shift over every sub-vector is used, because the
    recursion solves a lower-order system for each of them.
    """
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    ops = _Operators(model, max_size)
    ops.size(order)
    if s is None:
        lm = max(ops.lmax(r) for r in range(1, order + 1))
    else:
        s = tuple(float(v) for v in s)
        if len(s) != order:
            raise ConfigError(f"s has {len(s)} entries for an order-{order} check")
        lm = _mgf_margin(ops, s)[0]
    pi = stationary_distribution(model)
    if ops.lmax(1) < -STABILITY_TOL:
        first = _first_moments(ops, pi)
        min_first = float(first.min())
    else:
        min_first = -math.inf
    return StabilityReport(
        order=order,
        max_real_eigenvalue=lm,
        stable=lm < -STABILITY_TOL,
        positive_first_moments=min_first > POSITIVITY_TOL,
        min_first_moment=min_first,
    )


# ---------------------------------------------------------------------------
# Transient integration


def _nodes_for(ops: _Operators, query: Query) -> tuple[dict[NodeKey, _Node], NodeKey, list[int]]:
    if isinstance(query, MomentQuery):
        pos = [j for j in range(query.order) if query.m[j] > 0]
        key = tuple(query.m[j] for j in pos)
        return _moment_nodes(ops, key), key, pos
    return _mgf_nodes(ops, query.s), tuple(range(query.order)), list(range(query.order))


def _default_initial(ops: _Operators, query: Query, key: NodeKey, order: int) -> np.ndarray:
    # q(0) = 0 and x(0) = 0: moments vanish, exp(s.x) = 1 on state 0
    if order == 0 or isinstance(query, MgfQuery):
        y = np.zeros(ops.nq * ops.n**order)
        y[: ops.n**order] = 1.0
        return y
    return np.zeros(ops.nq * ops.n**order)


def fixed_point_initial(model: ShsModel, query: Query, *, max_size: int = DEFAULT_MAX_SIZE) -> dict:
    """Stationary values of every node the transient system of ``query`` carries."""
    ops = _Operators(model, max_size)
    pi = stationary_distribution(model)
    nodes, _, _ = _nodes_for(ops, query)
    values, _ = _solve_nodes(ops, nodes, pi)
    return values


def default_step(model: ShsModel) -> float:
    return 0.01 / float(model.exit_rates().max())


def default_horizon(model: ShsModel) -> float:
    return 50.0 / min(t.rate for t in model.transitions)


def transient_integrate(
    model: ShsModel,
    query: Query,
    initial: Optional[Mapping[NodeKey, np.ndarray]] = None,
    horizon: Optional[float] = None,
    step: Optional[float] = None,
    *,
    samples: int = 200,
    blowup: float = 1e12,
    max_size: int = DEFAULT_MAX_SIZE,
) -> TransientResult:
    """Integrate the coupled ODE family of ``query`` with classical RK4.

    ``initial`` maps node keys to stacked per-state vectors: ``()`` is the
    state distribution, a moment node is keyed by its positive exponents and
    an MGF node by its tuple of query positions. Missing nodes start from
    ``q(0) = 0, x(0) = 0``.
    """
    ops = _Operators(model, max_size)
    if isinstance(query, MgfQuery):
        _check_positions(model, query.k)
    if not model.transitions:
        raise ConfigError("model has no transitions")
    horizon = default_horizon(model) if horizon is None else float(horizon)
    step = default_step(model) if step is None else float(step)
    if not step > 0 or not horizon > 0:
        raise ConfigError(f"step and horizon must be positive, got {step}, {horizon}")
    nodes, top, pos = _nodes_for(ops, query)

    keys: list[NodeKey] = [()] + list(nodes)
    orders = {(): 0, **{k: n.order for k, n in nodes.items()}}
    offsets, total = {}, 0
    for k in keys:
        offsets[k] = total
        total += ops.size(orders[k])
    g = np.zeros((total, total))

    def block(k: NodeKey) -> slice:
        return slice(offsets[k], offsets[k] + ops.nq * ops.n ** orders[k])

    g[block(()), block(())] = ops.drift(0)
    for k, node in nodes.items():
        g[block(k), block(k)] = ops.drift(node.order, node.shift)
        for lk, c in node.couplings.items():
            g[block(lk), block(k)] += c

    y = np.zeros(total)
    initial = dict(initial or {})
    for k in keys:
        init = initial.get(k)
        y[block(k)] = _default_initial(ops, query, k, orders[k]) if init is None else np.asarray(init, float)

    n_steps = max(1, int(math.ceil(horizon / step - 1e-9)))
    h = horizon / n_steps
    every = max(1, n_steps // max(1, samples))
    times, traj = [0.0], [y.copy()]
    for i in range(1, n_steps + 1):
        k1 = y @ g
        k2 = (y + 0.5 * h * k1) @ g
        k3 = (y + 0.5 * h * k2) @ g
        k4 = (y + h * k3) @ g
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if i % every == 0 or i == n_steps:
            norm = float(np.abs(y).max())
            if not math.isfinite(norm) or norm > blowup:
                raise UnstableError(f"transient blow-up at t={i * h:.6g}: |y| = {norm:.3g} exceeds {blowup:g}")
            times.append(i * h)
            traj.append(y.copy())

    r = query.order
    traj = np.array(traj)
    probs = traj[:, block(())]
    if top:
        top_flat = traj[:, block(top)]
        if len(pos) < r:
            top_flat = top_flat @ ops.lift(pos, r)
    else:
        top_flat = np.repeat(probs, ops.n**r, axis=1)
    values = top_flat.reshape(len(times), ops.nq, ops.n**r)
    final = tuple(DenseTensor(r, ops.n, values[-1, q]) for q in range(ops.nq))
    final_nodes = {k: traj[-1, block(k)].copy() for k in keys}
    return TransientResult(np.array(times), probs, values, final, final_nodes)
