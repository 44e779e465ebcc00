"""RBF-surrogate search over the integer hyper-parameter box.

The loop follows the usual stochastic-RBF recipe: a symmetric Latin hypercube
start, a cubic RBF with linear tail fitted to everything evaluated since the
last restart, candidate clouds around the incumbent (DYCORS perturbs a
shrinking random subset of coordinates, SRBF perturbs all of them), and a
weighted merit that trades predicted value against distance to evaluated
points.  The objective is *maximised*.

All state lives in :class:`SearchState`, which round-trips through JSON so an
interrupted search resumes bit-identically.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hpsdet import InvalidInput
from hpsdet.hpspace import HpConfig, HpVector, bounds as hp_bounds, make_config, round_to_hp

log = logging.getLogger(__name__)

MERIT_WEIGHTS = (0.3, 0.5, 0.8, 0.95)
SIGMA_INIT = 0.2
SIGMA_MIN = 1e-3
FAIL_TOL = 3
REG = 1e-8
REFINE_STEPS = 3
DYCORS = "dycors"
SRBF = "srbf"
STRATEGIES = (DYCORS, SRBF)


class DegenerateDesign(InvalidInput):
    """The interpolation system is singular; add a random point and refit."""


# ----------------------------------------------------------------- design

def slhd_init(bounds: Sequence[tuple[float, float]], n_init: int, seed=0) -> np.ndarray:
    """Symmetric Latin hypercube of ``n_init`` points inside ``bounds``.

    Every coordinate takes each stratum centre ``(i + 1/2) / n`` exactly once
    and the design is symmetric about the box centre.  Designs whose
    ``[1, X]`` matrix is rank deficient are redrawn.
    """
    d = len(bounds)
    if n_init < d + 1:
        raise InvalidInput(f"need at least d+1 = {d + 1} initial points, got {n_init}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    n = n_init
    half = n // 2
    # a symmetric design spans at most floor(n/2) directions about its centre
    need_rank = n >= 2 * d
    for _ in range(100):
        pts = np.zeros((n, d))
        pts[:, 0] = np.arange(1, n + 1)
        if n % 2 == 1:
            pts[half, :] = half + 1
        for j in range(1, d):
            col = np.where(rng.random(half) < 0.5, n - np.arange(half), np.arange(half) + 1)
            pts[:half, j] = rng.permutation(col)
        for i in range(n - half, n):
            pts[i, :] = n + 1 - pts[n - 1 - i, :]
        unit = (pts - 0.5) / n
        if not need_rank or np.linalg.matrix_rank(np.hstack([np.ones((n, 1)), unit])) == d + 1:
            return lo + unit * (hi - lo)
    raise DegenerateDesign("could not draw a full-rank symmetric design")


# -------------------------------------------------------------- surrogate

def _phi(r: np.ndarray, kernel: str) -> np.ndarray:
    if kernel == "cubic":
        return r ** 3
    if kernel == "thinplate":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, r ** 2 * np.log(np.where(r > 0, r, 1.0)), 0.0)
    raise InvalidInput(f"unknown kernel {kernel!r}")


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


@dataclass
class RbfModel:
    centers: np.ndarray
    rbf_weights: np.ndarray
    poly_weights: np.ndarray
    kernel: str = "cubic"
    lower: np.ndarray | None = None
    scale: np.ndarray | None = None

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.lower is None:
            return x
        return (x - self.lower) / self.scale

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.centers.shape[1]:
            raise InvalidInput(f"expected dimension {self.centers.shape[1]}, got {x.shape[1]}")
        u = self.to_unit(x)
        phi = _phi(_pairwise(u, self.centers), self.kernel)
        return phi @ self.rbf_weights + self.poly_weights[0] + u @ self.poly_weights[1:]


def fit_rbf(points, values, kernel: str = "cubic", lower=None, upper=None) -> RbfModel:
    """Interpolating RBF with a linear polynomial tail.

    Solves ``[[Phi + reg I, P], [P^T, 0]] [w; c] = [f; 0]``.  When ``lower`` and
    ``upper`` are given the fit happens in the unit box.  Exact duplicate
    points are dropped (first occurrence kept).
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    f = np.asarray(values, dtype=float).ravel()
    if len(x) != len(f):
        raise InvalidInput("points and values differ in length")
    lo = sc = None
    if lower is not None:
        lo = np.asarray(lower, dtype=float)
        sc = np.asarray(upper, dtype=float) - lo
        sc = np.where(sc > 0, sc, 1.0)
        x = (x - lo) / sc
    _, keep = np.unique(x, axis=0, return_index=True)
    keep = np.sort(keep)
    x, f = x[keep], f[keep]
    n, d = x.shape
    P = np.hstack([np.ones((n, 1)), x])
    if n < d + 1 or np.linalg.matrix_rank(P) < d + 1:
        raise DegenerateDesign(f"{n} distinct points do not span {d} dimensions; add a random point")
    A = np.zeros((n + d + 1, n + d + 1))
    A[:n, :n] = _phi(_pairwise(x, x), kernel)
    A[:n, n:] = P
    A[n:, :n] = P.T
    A_reg = A.copy()
    A_reg[:n, :n] += REG * np.eye(n)
    rhs = np.concatenate([f, np.zeros(d + 1)])
    try:
        sol = np.linalg.solve(A_reg, rhs)
        # iterative refinement against the unregularised system, so the
        # regulariser only stabilises the solve and does not bias the fit
        res = rhs - A @ sol
        for _ in range(REFINE_STEPS):
            step = sol + np.linalg.solve(A_reg, res)
            new_res = rhs - A @ step
            if not np.linalg.norm(new_res) < np.linalg.norm(res):
                break
            sol, res = step, new_res
    except np.linalg.LinAlgError:
        raise DegenerateDesign("singular RBF system; add a random point") from None
    if not np.all(np.isfinite(sol)):
        raise DegenerateDesign("non-finite RBF solution; add a random point")
    return RbfModel(x, sol[:n], sol[n:], kernel, lo, sc)


def eval_rbf(model: RbfModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInput("eval_rbf takes a single point; use RbfModel.predict for batches")
    return float(model.predict(x[None])[0])


# ------------------------------------------------------------ candidates

def dycors_perturb_prob(t: int, T: int, d: int) -> float:
    if T <= 1:
        raise InvalidInput(f"budget T must exceed 1, got {T}")
    if not 0 <= t < T:
        raise InvalidInput(f"t={t} outside [0, {T})")
    return min(20.0 / d, 1.0) * (1.0 - math.log(t + 1) / math.log(T))


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    # fold onto [lo, hi] with period 2*span
    y = np.mod(x - lo, 2 * span)
    y = np.where(y > span, 2 * span - y, y)
    return lo + y


def _unit_rescale(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    # spreads at rounding-noise level count as flat
    if hi - lo <= 1e-10 * max(1.0, abs(lo), abs(hi)):
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


@dataclass
class EvalRecord:
    point: HpVector
    value: float
    iteration: int


@dataclass
class SearchState:
    config: HpConfig
    strategy: str
    budget: int
    seed: int
    n_init: int
    n_cand: int
    rng: np.random.Generator
    history: list[EvalRecord] = field(default_factory=list)
    blacklist: list[tuple[int, ...]] = field(default_factory=list)
    pending: list[list[float]] = field(default_factory=list)
    sigma: float = SIGMA_INIT
    fail_count: int = 0
    weight_index: int = 0
    phase_start: int = 0
    phase_T: int | None = None  # iterations available to the current phase
    phase_t: int = 0
    restarts: int = 0
    attempts: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def t(self) -> int:
        return len(self.history)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in hp_bounds(self.config)], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in hp_bounds(self.config)], dtype=float)

    @property
    def best(self) -> EvalRecord | None:
        if not self.history:
            return None
        # first occurrence of the maximum
        return max(self.history, key=lambda r: (r.value, -r.iteration))

    def phase_records(self) -> list[EvalRecord]:
        return self.history[self.phase_start:]

    def phase_best(self) -> EvalRecord | None:
        recs = self.phase_records()
        return max(recs, key=lambda r: (r.value, -r.iteration)) if recs else None

    def evaluated(self) -> set[tuple[int, ...]]:
        return {r.point.values for r in self.history} | set(self.blacklist)

    # ------------------------------------------------------ serialisation
    def to_json(self) -> str:
        doc = {
            "format": "hpsdet-search-state/1",
            "config": {"name": self.config.name, "mode": self.config.detector_mode},
            "strategy": self.strategy, "budget": self.budget, "seed": self.seed,
            "n_init": self.n_init, "n_cand": self.n_cand,
            "sigma": self.sigma, "fail_count": self.fail_count,
            "weight_index": self.weight_index, "phase_start": self.phase_start,
            "phase_T": self.phase_T, "phase_t": self.phase_t,
            "restarts": self.restarts, "attempts": self.attempts,
            "pending": self.pending, "blacklist": [list(b) for b in self.blacklist],
            "history": [{"iteration": r.iteration, "value": r.value, "point": list(r.point.values)}
                        for r in self.history],
            "rng": self.rng.bit_generator.state,
            "meta": self.meta,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SearchState":
        doc = json.loads(text)
        if doc.get("format") != "hpsdet-search-state/1":
            raise InvalidInput("not a search checkpoint")
        cfg = make_config(doc["config"]["name"], doc["config"]["mode"])
        rng = np.random.default_rng()
        rng.bit_generator.state = doc["rng"]
        st = cls(cfg, doc["strategy"], doc["budget"], doc["seed"], doc["n_init"], doc["n_cand"], rng)
        st.history = [EvalRecord(HpVector(tuple(h["point"]), cfg), h["value"], h["iteration"])
                      for h in doc["history"]]
        st.blacklist = [tuple(b) for b in doc["blacklist"]]
        st.pending = [list(p) for p in doc["pending"]]
        for k in ("sigma", "fail_count", "weight_index", "phase_start", "phase_T", "phase_t",
                  "restarts", "attempts", "meta"):
            setattr(st, k, doc[k])
        return st


def propose_candidates(state: SearchState, model: RbfModel | None, n_cand: int,
                       min_std: float = 0.0) -> np.ndarray:
    """Gaussian perturbations of the phase incumbent, reflected into the box.

    DYCORS perturbs each coordinate with probability
    :func:`dycors_perturb_prob` (at least one per candidate); SRBF perturbs
    every coordinate.  Per-coordinate std is ``max(sigma * range, min_std)``.
    ``model`` is accepted for interface symmetry; generation ignores it.
    """
    rng = state.rng
    lo, hi = state.lower, state.upper
    d = state.dim
    inc = state.phase_best() or state.best
    xbest = np.array(inc.point.values, dtype=float)
    std = np.maximum(state.sigma * (hi - lo), min_std)
    if state.strategy == SRBF:
        mask = np.ones((n_cand, d), dtype=bool)
    elif state.strategy == DYCORS:
        T = max(state.phase_T or 2, 2)
        prob = dycors_perturb_prob(min(state.phase_t, T - 1), T, d)
        mask = rng.random((n_cand, d)) < prob
        none = np.flatnonzero(~mask.any(axis=1))
        mask[none, rng.integers(0, d, size=len(none))] = True
    else:
        raise InvalidInput(f"unknown strategy {state.strategy!r}")
    noise = rng.standard_normal((n_cand, d)) * std
    cand = xbest + np.where(mask, noise, 0.0)
    return _reflect(cand, lo, hi)


def select_next(model: RbfModel, candidates, history, weight: float,
                tol: float = 1e-9) -> np.ndarray:
    """Weighted-merit choice among ``candidates`` (maximisation).

    score = w * rescale(-prediction) + (1 - w) * rescale(-min distance to
    ``history``); the lowest score wins.  Candidates closer than ``tol`` (unit
    box units) to an evaluated point are skipped; if all are, the farthest
    candidate is returned.
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=float))
    if len(cand) == 0:
        raise InvalidInput("no candidates")
    u = model.to_unit(cand)
    hist = np.atleast_2d(np.asarray(history, dtype=float)) if len(history) else np.zeros((0, cand.shape[1]))
    if len(hist):
        dist = _pairwise(u, model.to_unit(hist)).min(axis=1)
    else:
        dist = np.full(len(cand), np.inf)
    ok = dist >= tol
    if not ok.any():
        return cand[int(np.argmax(dist))].copy()
    idx = np.flatnonzero(ok)
    pred = model.predict(cand[idx])
    d = dist[idx]
    if np.isinf(d).all():
        d = np.zeros_like(d)
    score = weight * _unit_rescale(-pred) + (1 - weight) * _unit_rescale(-d)
    return cand[idx[int(np.argmin(score))]].copy()


# ------------------------------------------------------------------ driver

Objective = Callable[[HpVector], float]


def default_n_init(d: int) -> int:
    return 2 * (d + 1)


def default_n_cand(d: int) -> int:
    return min(100 * d, 5000)


def new_state(config: HpConfig, budget: int, strategy: str = DYCORS, seed: int = 0,
              n_init: int | None = None, n_cand: int | None = None) -> SearchState:
    d = config.dim
    n_init = n_init or default_n_init(d)
    n_cand = n_cand or default_n_cand(d)
    if strategy not in STRATEGIES:
        raise InvalidInput(f"unknown strategy {strategy!r}")
    if budget < n_init + 1:
        raise InvalidInput(f"budget {budget} must be at least n_init + 1 = {n_init + 1}")
    st = SearchState(config, strategy, budget, seed, n_init, n_cand, np.random.default_rng(seed))
    st.pending = slhd_init(hp_bounds(config), n_init, st.rng).tolist()
    return st


class SearchInterrupted(Exception):
    """Raised by ``stop_after`` to emulate an interrupted run."""


def run(state: SearchState, objective: Objective, *,
        on_record: Callable[[EvalRecord, SearchState], None] | None = None,
        checkpoint: str | os.PathLike | None = None,
        stop_after: int | None = None,
        max_workers: int = 1) -> SearchState:
    """Advance ``state`` until the budget is spent (or ``stop_after`` records exist)."""
    d = state.dim
    lo, hi = state.lower, state.upper
    # integer variables: perturbations narrower than one unit never move
    min_std = 1.0
    max_attempts = 4 * state.budget + 100
    pool = ThreadPoolExecutor(max_workers) if max_workers > 1 else None

    def save():
        if checkpoint is not None:
            tmp = f"{checkpoint}.tmp"
            with open(tmp, "w") as fh:
                fh.write(state.to_json())
            os.replace(tmp, checkpoint)

    def record(s: HpVector, value: float, from_design: bool):
        state.attempts += 1
        if not math.isfinite(value):
            log.warning("objective returned %r at %s; blacklisting", value, s)
            state.blacklist.append(s.values)
            return
        prev = state.phase_best()
        rec = EvalRecord(s, float(value), len(state.history))
        state.history.append(rec)
        if not from_design:
            state.phase_t += 1
            if prev is not None and value > prev.value:
                state.fail_count = 0
            else:
                state.fail_count += 1
                if state.fail_count >= FAIL_TOL:
                    state.sigma /= 2
                    state.fail_count = 0
        if on_record is not None:
            on_record(rec, state)

    def evaluate(points: list[HpVector]) -> list[float]:
        def safe(s):
            try:
                return float(objective(s))
            except Exception as e:  # objective failure => discard and blacklist
                log.warning("objective failed at %s: %s", s, e)
                return math.nan
        if pool is None:
            return [safe(s) for s in points]
        return list(pool.map(safe, points))

    try:
        while len(state.history) < state.budget and state.attempts < max_attempts:
            if stop_after is not None and len(state.history) >= stop_after:
                raise SearchInterrupted(len(state.history))
            if state.pending:
                # design batch: evaluate concurrently, merge in proposal order
                room = state.budget - len(state.history)
                if stop_after is not None:
                    room = min(room, stop_after - len(state.history))
                batch, seen = [], state.evaluated()
                while state.pending and len(batch) < room:
                    s = round_to_hp(state.pending.pop(0), state.config)
                    if s.values in seen:
                        continue
                    seen.add(s.values)
                    batch.append(s)
                for s, v in zip(batch, evaluate(batch)):
                    record(s, v, True)
                if not state.pending and state.phase_T is None:
                    state.phase_T = state.budget - len(state.history)
                save()
                continue

            phase = state.phase_records()
            if state.phase_T is None:
                state.phase_T = state.budget - len(state.history)
            x = None
            try:
                model = fit_rbf([r.point.values for r in phase], [r.value for r in phase],
                                lower=lo, upper=hi)
            except DegenerateDesign:
                model = None
            if model is not None and phase:
                cand = propose_candidates(state, model, state.n_cand, min_std=min_std)
                cand = np.clip(np.floor(cand + 0.5), lo, hi)
                w = MERIT_WEIGHTS[state.weight_index % len(MERIT_WEIGHTS)]
                state.weight_index += 1
                evaluated = state.evaluated()
                hist = np.array(sorted(evaluated), dtype=float).reshape(-1, d)
                x = select_next(model, cand, hist, w)
                if tuple(int(v) for v in x) in evaluated:
                    x = None
            if x is None:
                x = _random_unevaluated(state)
                if x is None:
                    log.info("search space exhausted after %d evaluations", len(state.history))
                    break
            s = round_to_hp(x, state.config)
            record(s, evaluate([s])[0], False)
            if state.sigma < SIGMA_MIN and len(state.history) < state.budget:
                log.info("sigma underflow at t=%d; restarting", len(state.history))
                state.restarts += 1
                state.sigma = SIGMA_INIT
                state.fail_count = 0
                state.phase_start = len(state.history)
                state.phase_T = None
                state.phase_t = 0
                state.pending = slhd_init(hp_bounds(state.config), state.n_init, state.rng).tolist()
            save()
    finally:
        if pool is not None:
            pool.shutdown()
    save()
    return state


def _random_unevaluated(state: SearchState, tries: int = 1000) -> np.ndarray | None:
    evaluated = state.evaluated()
    lo, hi = state.lower.astype(int), state.upper.astype(int)
    for _ in range(tries):
        x = state.rng.integers(lo, hi + 1)
        if tuple(int(v) for v in x) not in evaluated:
            return x.astype(float)
    return None


def optimize(objective: Objective, config: HpConfig, budget: int, strategy: str = DYCORS,
             seed: int = 0, **kwargs) -> tuple[EvalRecord, list[EvalRecord]]:
    """Maximise ``objective`` over the integer box of ``config``.

    Returns the best record and the full evaluation history.  Extra keyword
    arguments go to :func:`run` (``on_record``, ``checkpoint``, ``max_workers``)
    or :func:`new_state` (``n_init``, ``n_cand``).
    """
    n_init = kwargs.pop("n_init", None)
    n_cand = kwargs.pop("n_cand", None)
    state = new_state(config, budget, strategy, seed, n_init, n_cand)
    run(state, objective, **kwargs)
    return state.best, list(state.history)


def random_search(objective: Objective, config: HpConfig, budget: int,
                  seed: int = 0) -> tuple[EvalRecord, list[EvalRecord]]:
    """Uniform sampling without replacement; the comparison baseline."""
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in hp_bounds(config)])
    hi = np.array([b[1] for b in hp_bounds(config)])
    seen, hist = set(), []
    while len(hist) < budget:
        s = HpVector(tuple(int(v) for v in rng.integers(lo, hi + 1)), config)
        if s.values in seen:
            continue
        seen.add(s.values)
        hist.append(EvalRecord(s, float(objective(s)), len(hist)))
    return max(hist, key=lambda r: (r.value, -r.iteration)), hist


def best_so_far(history: Sequence[EvalRecord]) -> np.ndarray:
    return np.maximum.accumulate([r.value for r in history])
