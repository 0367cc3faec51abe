"""Adam minimization with convergence checks and a per-iteration trace."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DivergenceDetected, NonFiniteGradient


@dataclass
class AdamState:
    t: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr=0.2, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(0, np.zeros(n), np.zeros(n), lr, beta1, beta2, eps)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns (new params, new state)."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or grads.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient has non-finite entries")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    mhat = m / (1 - state.beta1 ** t)
    vhat = v / (1 - state.beta2 ** t)
    new = params - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, replace(state, t=t, m=m, v=v)


@dataclass
class TraceRecord:
    iteration: int
    time_ms: float
    objective: float
    grad_norm: float
    event: str = ""


@dataclass
class RunTrace:
    records: list = field(default_factory=list)

    def append(self, rec: TraceRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time_ms for r in self.records])

    def events(self) -> list:
        return [r for r in self.records if r.event]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "time_ms", "objective", "grad_norm", "event"])
        for r in self.records:
            w.writerow([r.iteration, f"{r.time_ms:.3f}", repr(r.objective), repr(r.grad_norm), r.event])
        return buf.getvalue()

    def time_to_within(self, target: float, rel: float = 0.01) -> float:
        """First time (ms) the objective is within ``rel`` of ``target``."""
        tol = rel * max(abs(target), 1e-12)
        for r in self.records:
            if r.objective <= target + tol:
                return r.time_ms
        return float("inf")


@dataclass
class OptimConfig:
    max_iters: int = 2000
    grad_tol: float = 1e-5
    obj_tol: float = 1e-8
    window: int = 10
    lr: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


@dataclass
class MinimizeResult:
    params: np.ndarray
    value: float
    trace: RunTrace
    state: AdamState
    iterations: int
    reason: str
    last_params: np.ndarray = None


def minimize(objective: Callable, x0, config: OptimConfig = OptimConfig(), *,
             state: AdamState | None = None, trace: RunTrace | None = None,
             start_iteration: int = 0, clock_start: float | None = None,
             first_event: str = "") -> MinimizeResult:
    """Adam on ``objective(theta) -> (value, grad)``; returns the best-seen point.

    Stops when the gradient norm drops below ``grad_tol``, when the relative
    objective change over ``window`` iterations falls below ``obj_tol``, or at
    ``max_iters``. ``state``/``trace`` let a caller continue a run.
    """
    x = np.array(x0, dtype=float)
    if state is None:
        state = AdamState.zeros(x.size, config.lr, config.beta1, config.beta2, config.eps)
    else:  # resumed moments, current hyperparameters
        state = replace(state, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    trace = trace if trace is not None else RunTrace()
    t0 = time.perf_counter() if clock_start is None else clock_start
    best_x, best_f = x.copy(), np.inf
    history = []
    reason = "max_iters"
    it = start_iteration
    for i in range(config.max_iters + 1):
        f, g = objective(x)
        if not np.isfinite(f):
            err = DivergenceDetected(f"objective became {f} at iteration {it}")
            err.trace = trace
            raise err
        gnorm = float(np.linalg.norm(g))
        trace.append(TraceRecord(it, 1e3 * (time.perf_counter() - t0), float(f), gnorm,
                                 first_event if i == 0 else ""))
        if f < best_f:
            best_x, best_f = x.copy(), float(f)
        history.append(f)
        if gnorm < config.grad_tol:
            reason = "grad_tol"
            break
        if len(history) > config.window:
            old = history[-1 - config.window]
            if abs(old - f) <= config.obj_tol * max(abs(f), 1.0):
                reason = "obj_tol"
                break
        if i == config.max_iters:
            break
        try:
            x, state = adam_step(x, g, state)
        except NonFiniteGradient as err:
            err.trace = trace
            raise
        it += 1
    return MinimizeResult(best_x, best_f, trace, state, it - start_iteration, reason, x)


def multi_start(objective: Callable, init: Callable, n_starts: int, config: OptimConfig = OptimConfig()):
    """Best of ``n_starts`` runs; ``init(rng)`` draws a starting point.

    Per-start generators are spawned from ``config.seed``. Returns the winning
    :class:`MinimizeResult` and its index.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    seqs = np.random.SeedSequence(config.seed).spawn(n_starts)
    best, best_i = None, -1
    for i, ss in enumerate(seqs):
        res = minimize(objective, init(np.random.default_rng(ss)), config)
        if best is None or res.value < best.value:
            best, best_i = res, i
    return best, best_i
