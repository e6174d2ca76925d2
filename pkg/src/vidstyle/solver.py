"""Box-constrained image optimization with a windowed relative-change stop rule."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "SolverConfig",
    "SolveReport",
    "SolverError",
    "minimize",
    "STRICT_THRESHOLD",
    "RELAXED_THRESHOLD",
]

STRICT_THRESHOLD = 1e-4   # 0.01 %
RELAXED_THRESHOLD = 1e-3  # 0.1 %

METHODS = ("lbfgs", "adam")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Optimizer settings.

    ``method`` is ``"lbfgs"`` (limited-memory quasi-Newton with projected
    backtracking line search) or ``"adam"`` (for non-smooth objectives).
    """

    max_iterations: int = 8000
    convergence_window: int = 50
    convergence_threshold: float = STRICT_THRESHOLD
    stop_on_convergence: bool = True
    method: str = "lbfgs"
    history: int = 10
    initial_step: float = 0.05
    armijo: float = 1e-4
    max_backtracks: int = 30
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.convergence_threshold <= 0:
            raise ValueError("convergence_threshold must be positive")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SolveReport:
    iterations: int = 0
    final_loss: float = math.nan
    parts: dict = field(default_factory=dict)
    converged: bool = False
    evaluations: int = 0
    trace: list = field(default_factory=list)
    part_trace: list = field(default_factory=list)

    def log_lines(self, every=1):
        """Line-oriented log: iteration, total loss and component losses."""
        names = sorted(self.parts)
        lines = ["# iteration total " + " ".join(names)]
        for k, (f, parts) in enumerate(zip(self.trace, self.part_trace)):
            if k % every and k != len(self.trace) - 1:
                continue
            comps = " ".join(f"{parts.get(n, 0.0):.10e}" for n in names)
            lines.append(f"{k} {f:.10e} {comps}".rstrip())
        lines.append(
            f"# iterations={self.iterations} evaluations={self.evaluations} "
            f"converged={int(self.converged)} final={self.final_loss:.10e}"
        )
        return lines

    def write_log(self, path, every=1):
        with open(path, "w") as fh:
            fh.write("\n".join(self.log_lines(every)) + "\n")


def _call(objective, x):
    out = objective(x)
    if len(out) == 3:
        return out
    f, g = out
    return f, g, {}


def _has_converged(trace, window, threshold):
    if len(trace) <= window:
        return False
    recent = trace[-(window + 1):]
    hi, lo = max(recent), min(recent)
    scale = max(abs(hi), abs(lo))
    if scale == 0.0:
        return True
    return (hi - lo) <= threshold * scale


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    rhos = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(np.vdot(y, s))
        a = rho * float(np.vdot(s, q))
        q -= a * y
        alphas.append(a)
        rhos.append(rho)
    s, y = s_hist[-1], y_hist[-1]
    q *= float(np.vdot(s, y)) / float(np.vdot(y, y))
    for (s, y), a, rho in zip(zip(s_hist, y_hist), reversed(alphas), reversed(rhos)):
        b = rho * float(np.vdot(y, q))
        q += (a - b) * s
    return q


def minimize(objective, init, config=None, lower=0.0, upper=1.0):
    """Minimize ``objective`` over images in the box ``[lower, upper]``.

    ``objective(x)`` returns ``(loss, grad)`` or ``(loss, grad, parts)``.
    Terminates when the loss varied by at most ``convergence_threshold``
    (relative) across the trailing ``convergence_window`` iterations, or after
    ``max_iterations``. Returns ``(x, report)``.
    """
    config = config or SolverConfig()
    x = np.clip(np.asarray(init, dtype=np.float64), lower, upper)
    f, g, parts = _call(objective, x)
    report = SolveReport(evaluations=1)
    _check_finite(f, g, 0)
    report.trace.append(float(f))
    report.part_trace.append(dict(parts))

    step = _lbfgs_stepper(objective, config, lower, upper) if config.method == "lbfgs" \
        else _adam_stepper(objective, config, lower, upper)

    for it in range(1, config.max_iterations + 1):
        x, f, g, parts, nev = step(x, f, g, parts)
        report.evaluations += nev
        _check_finite(f, g, it)
        report.iterations = it
        report.trace.append(float(f))
        report.part_trace.append(dict(parts))
        if _has_converged(report.trace, config.convergence_window,
                          config.convergence_threshold):
            report.converged = True
            if config.stop_on_convergence:
                break
    report.final_loss = float(f)
    report.parts = dict(parts)
    return x, report


def _check_finite(f, g, it):
    if not math.isfinite(f):
        raise SolverError(f"non-finite loss {f} at iteration {it}")
    if not np.all(np.isfinite(g)):
        raise SolverError(f"non-finite gradient at iteration {it}")


def _free_gradient(x, g, lower, upper):
    blocked = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
    return np.where(blocked, 0.0, g)


def _lbfgs_stepper(objective, config, lower, upper):
    s_hist = deque(maxlen=config.history)
    y_hist = deque(maxlen=config.history)

    def step(x, f, g, parts):
        gp = _free_gradient(x, g, lower, upper)
        gmax = float(np.max(np.abs(gp))) if gp.size else 0.0
        if gmax == 0.0:
            return x, f, g, parts, 0
        if s_hist:
            d = -_two_loop(gp, s_hist, y_hist)
            d = np.where(gp == 0.0, 0.0, d)
            t = 1.0
        else:
            d = None
        if d is None or float(np.vdot(d, gp)) >= 0.0:
            s_hist.clear()
            y_hist.clear()
            d = -gp
            t = config.initial_step / gmax
        nev = 0
        for _ in range(config.max_backtracks):
            x_new = np.clip(x + t * d, lower, upper)
            f_new, g_new, parts_new = _call(objective, x_new)
            nev += 1
            if not math.isfinite(f_new):
                t *= 0.5
                continue
            if f_new <= f + config.armijo * float(np.vdot(g, x_new - x)):
                s = x_new - x
                y = g_new - g
                sy = float(np.vdot(s, y))
                if sy > 1e-12 * float(np.vdot(y, y)) and sy > 0.0:
                    s_hist.append(s)
                    y_hist.append(y)
                return x_new, f_new, g_new, parts_new, nev
            t *= 0.5
        # line search failed: keep the iterate, restart curvature memory
        s_hist.clear()
        y_hist.clear()
        return x, f, g, parts, nev

    return step


def _adam_stepper(objective, config, lower, upper):
    state = {"m": None, "v": None, "t": 0}

    def step(x, f, g, parts):
        if state["m"] is None:
            state["m"] = np.zeros_like(x)
            state["v"] = np.zeros_like(x)
        state["t"] += 1
        t = state["t"]
        m = state["m"] = config.beta1 * state["m"] + (1 - config.beta1) * g
        v = state["v"] = config.beta2 * state["v"] + (1 - config.beta2) * g * g
        mhat = m / (1 - config.beta1 ** t)
        vhat = v / (1 - config.beta2 ** t)
        x_new = np.clip(x - config.learning_rate * mhat / (np.sqrt(vhat) + 1e-8), lower, upper)
        f_new, g_new, parts_new = _call(objective, x_new)
        return x_new, f_new, g_new, parts_new, 1

    return step
