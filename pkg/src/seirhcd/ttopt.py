"""Global minimization on a grid via tensor-train cross approximation.

The objective is sampled on a d-dimensional product grid.  Alternating
sweeps build cross index sets: at each core the objective is evaluated on
the cross of current prefix/suffix sets, a monotone-decreasing exponential
map turns low misfit values into dominant tensor entries, and maxvol row
selection keeps the most informative index combinations (rank-capped).
The best point ever evaluated is tracked throughout, so the returned value
never regresses between sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TTConfig:
    """Search box, grid resolution, rank cap, and sweep budget."""

    b_min: np.ndarray
    b_max: np.ndarray
    n: int = 32
    r_max: int = 4
    n_sweeps: int = 8
    alpha0: float = math.inf
    scale: float | None = None  # mapping scale; None adapts to the batch spread
    stall_sweeps: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "b_min", np.asarray(self.b_min, dtype=float))
        object.__setattr__(self, "b_max", np.asarray(self.b_max, dtype=float))
        if self.b_min.shape != self.b_max.shape or self.b_min.ndim != 1:
            raise ValueError("b_min and b_max must be 1-D arrays of equal length")
        if not np.all(self.b_min < self.b_max):
            raise ValueError("bounds must satisfy b_min < b_max")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be >= 1")

    @property
    def d(self) -> int:
        return self.b_min.size

    def nodes(self) -> list[np.ndarray]:
        return [
            np.linspace(self.b_min[i], self.b_max[i], self.n) for i in range(self.d)
        ]


@dataclass
class TTState:
    """Cross index sets and running optimum of the sweep loop."""

    nodes: list[np.ndarray]
    left: list[np.ndarray]  # left[k]: (r, k) index prefixes for dims < k
    right: list[np.ndarray]  # right[k]: (r, d-k) index suffixes for dims >= k
    alpha: float
    q_best_idx: tuple | None
    j_best: float
    n_evals: int


@dataclass
class TTResult:
    q_best: np.ndarray
    j_best: float
    n_evals: int
    log: list[dict]
    state: TTState


def mapping_h(J, alpha: float, scale: float = 1.0):
    """Monotone-decreasing map exp(-(J - alpha) / scale); saturates to 0."""
    return np.exp(-(np.asarray(J, dtype=float) - alpha) / scale)


def update_shift(current_alpha: float, batch_values) -> float:
    """Fold the batch minimum into the running shift (never increases)."""
    values = np.asarray(batch_values, dtype=float)
    if values.size == 0:
        raise ValueError("batch must be non-empty")
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return current_alpha
    return min(current_alpha, float(finite.min()))


def _maxvol(a: np.ndarray, tol: float = 1.05, max_iters: int = 100) -> np.ndarray:
    """Indices of a well-conditioned (large-volume) square row subset."""
    m, c = a.shape
    if m <= c:
        return np.arange(m)
    idx = np.argsort(-np.einsum("ij,ij->i", a, a))[:c].copy()
    try:
        coef = np.linalg.solve(a[idx].T, a.T).T
    except np.linalg.LinAlgError:
        return np.arange(c)
    for _ in range(max_iters):
        i, j = np.unravel_index(np.argmax(np.abs(coef)), coef.shape)
        if abs(coef[i, j]) <= tol:
            break
        coef += np.outer(coef[:, j], coef[idx[j], :] - coef[i, :]) / coef[i, j]
        idx[j] = i
    return np.sort(idx)


def _select_rows(H: np.ndarray, r_target: int) -> np.ndarray:
    """Maxvol rows of the orthogonal factor, topped up by dominant entries."""
    m = H.shape[0]
    if m <= r_target:
        return np.arange(m)
    finite = np.where(np.isfinite(H), H, 0.0)
    q, _ = np.linalg.qr(finite)
    chosen = list(_maxvol(q))
    if len(chosen) > r_target:
        row_peak = finite[chosen].max(axis=1)
        order = np.argsort(-row_peak)
        chosen = [chosen[i] for i in order[:r_target]]
    else:
        seen = set(chosen)
        row_peak = finite.max(axis=1)
        for i in np.argsort(-row_peak):
            if len(chosen) >= r_target:
                break
            if int(i) not in seen:
                chosen.append(int(i))
                seen.add(int(i))
    return np.array(sorted(chosen))


class _Evaluator:
    """Caches objective values keyed by grid index tuples."""

    def __init__(self, objective, nodes):
        self.objective = objective
        self.nodes = nodes
        self.cache: dict[tuple, float] = {}
        self.n_evals = 0
        self.n_discarded = 0

    def points_from(self, index_rows: np.ndarray) -> np.ndarray:
        d = len(self.nodes)
        pts = np.empty((index_rows.shape[0], d))
        for i in range(d):
            pts[:, i] = self.nodes[i][index_rows[:, i]]
        return pts

    def __call__(self, index_rows: np.ndarray) -> np.ndarray:
        keys = [tuple(int(v) for v in row) for row in index_rows]
        new = [key for key in dict.fromkeys(keys) if key not in self.cache]
        if new:
            pts = self.points_from(np.array(new, dtype=np.int64))
            values = np.asarray(self.objective(pts), dtype=float).reshape(-1)
            if values.size != len(new):
                raise ValueError("objective returned a wrong number of values")
            self.n_evals += len(new)
            self.n_discarded += int(np.sum(~np.isfinite(values)))
            for key, value in zip(new, values):
                self.cache[key] = float(value)
        return np.array([self.cache[key] for key in keys])


def tt_optimize(objective, cfg: TTConfig) -> TTResult:
    """Minimize a batch objective (points matrix -> values) over the grid box.

    Runs ``n_sweeps`` alternating forward/backward cross sweeps; each core
    update evaluates at most r_max * n * r_max new points, so total
    objective calls stay below n_sweeps * d * n * r_max**2.
    """
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d
    nodes = cfg.nodes()
    ev = _Evaluator(objective, nodes)
    log: list[dict] = []

    if d == 1:
        idx = np.arange(cfg.n, dtype=np.int64)[:, None]
        values = ev(idx)
        if not np.any(np.isfinite(values)):
            raise RuntimeError("objective failed at every grid node")
        best = int(np.nanargmin(np.where(np.isfinite(values), values, np.inf)))
        state = TTState(nodes, [], [], float(values[best]), (best,), float(values[best]), ev.n_evals)
        log.append({"iteration": 1, "dimension": 0, "evaluations": ev.n_evals,
                    "alpha": state.alpha, "j_best": state.j_best})
        return TTResult(ev.points_from(idx[best][None, :])[0], state.j_best, ev.n_evals, log, state)

    left: list[np.ndarray] = [np.zeros((1, 0), dtype=np.int64)] + [None] * d
    right: list[np.ndarray] = [None] * d + [np.zeros((1, 0), dtype=np.int64)]
    for k in range(d - 1, 0, -1):
        n_suffix = right[k + 1].shape[0]
        count = cfg.n * n_suffix
        size = min(cfg.r_max, count)
        flat = rng.choice(count, size=size, replace=False)
        node_idx = flat // n_suffix
        suffix_idx = flat % n_suffix
        right[k] = np.column_stack([node_idx, right[k + 1][suffix_idx]]).astype(np.int64)

    state = TTState(
        nodes=nodes,
        left=left,
        right=right,
        alpha=cfg.alpha0,
        q_best_idx=None,
        j_best=math.inf,
        n_evals=0,
    )

    def eval_cross(prefixes: np.ndarray, mid: np.ndarray, suffixes: np.ndarray):
        """Evaluate (prefix x node x suffix) and return the value tensor."""
        np_, nm, ns = prefixes.shape[0], mid.size, suffixes.shape[0]
        rows = np.empty((np_ * nm * ns, d), dtype=np.int64)
        pr = np.repeat(prefixes, nm * ns, axis=0)
        md = np.tile(np.repeat(mid, ns), np_)
        sf = np.tile(suffixes, (np_ * nm, 1))
        if prefixes.shape[1]:
            rows[:, : prefixes.shape[1]] = pr
        rows[:, prefixes.shape[1]] = md
        if suffixes.shape[1]:
            rows[:, prefixes.shape[1] + 1 :] = sf
        values = ev(rows)
        return rows, values.reshape(np_ * nm, ns)

    def note_batch(values: np.ndarray, rows: np.ndarray, sweep: int, dim: int, evals_before: int):
        flat = values.reshape(-1)
        if not np.any(np.isfinite(flat)):
            raise RuntimeError(f"all candidates failed at sweep {sweep}, dimension {dim}")
        state.alpha = update_shift(state.alpha, flat)
        best_pos = int(np.nanargmin(np.where(np.isfinite(flat), flat, np.inf)))
        if flat[best_pos] < state.j_best:
            state.j_best = float(flat[best_pos])
            state.q_best_idx = tuple(int(v) for v in rows[best_pos])
        log.append(
            {
                "iteration": sweep,
                "dimension": dim,
                "evaluations": ev.n_evals - evals_before,
                "alpha": state.alpha,
                "j_best": state.j_best,
            }
        )

    def mapped(values: np.ndarray) -> np.ndarray:
        finite = values[np.isfinite(values)]
        if cfg.scale is not None:
            scale = cfg.scale
        else:
            spread = float(np.median(finite)) - state.alpha
            scale = spread if spread > 0 else 1.0
        H = mapping_h(np.where(np.isfinite(values), values, np.inf), state.alpha, scale)
        return np.where(np.isfinite(H), H, 0.0)

    mid_all = np.arange(cfg.n, dtype=np.int64)
    stall = 0
    last_best = math.inf
    for sweep in range(1, cfg.n_sweeps + 1):
        forward = sweep % 2 == 1
        if forward:
            for k in range(d):
                evals_before = ev.n_evals
                rows, values = eval_cross(left[k], mid_all, right[k + 1])
                note_batch(values, rows, sweep, k, evals_before)
                if k < d - 1:
                    H = mapped(values)
                    sel = _select_rows(H, cfg.r_max)
                    n_pref = left[k].shape[1]
                    combos = np.column_stack(
                        [np.repeat(left[k], cfg.n, axis=0), np.tile(mid_all, left[k].shape[0])]
                    ) if n_pref else mid_all[:, None]
                    left[k + 1] = combos[sel].astype(np.int64)
        else:
            for k in range(d - 1, -1, -1):
                evals_before = ev.n_evals
                rows, values = eval_cross(left[k], mid_all, right[k + 1])
                note_batch(values, rows, sweep, k, evals_before)
                if k > 0:
                    # Columns of the unfolding are (node, suffix) combos.
                    v_cols = values.reshape(left[k].shape[0], cfg.n * right[k + 1].shape[0])
                    H = mapped(v_cols)
                    sel = _select_rows(H.T, cfg.r_max)
                    node_idx = sel // right[k + 1].shape[0]
                    suffix_idx = sel % right[k + 1].shape[0]
                    right[k] = np.column_stack(
                        [mid_all[node_idx], right[k + 1][suffix_idx]]
                    ).astype(np.int64)
        if state.j_best < last_best - 0.0:
            stall = 0
            last_best = state.j_best
        else:
            stall += 1
            if cfg.stall_sweeps is not None and stall >= cfg.stall_sweeps:
                break

    state.n_evals = ev.n_evals
    q_best = ev.points_from(np.array([state.q_best_idx], dtype=np.int64))[0]
    return TTResult(q_best=q_best, j_best=state.j_best, n_evals=ev.n_evals, log=log, state=state)
