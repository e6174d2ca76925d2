"""Sequence stylization: per-frame, short-term, long-term and multi-pass.

Frames are indexed from 0 internally. Flows are looked up by (source,
target) frame index through a :class:`FlowStore`; a flow for (a, b) lives on
frame a's grid and maps its pixels into frame b.
"""

from __future__ import annotations

import glob
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .features import build_extractor
from .flow import (FlowPair, compose_flows, consistency_weights, long_term_weights,
                   read_flo, warp_image, write_flo)
from .imagecore import blend, gaussian_init, make_rng
from .losses import LossContext, LossWeights, StyleTarget, TemporalTerm, total_loss_grad
from .solver import SolverConfig, minimize

__all__ = [
    "ALGORITHMS",
    "RESOLUTION_WEIGHTS",
    "BENCHMARK_WEIGHTS",
    "FlowStore",
    "MultiPassSettings",
    "PassState",
    "SequenceJob",
    "SequenceResult",
    "weights_for_resolution",
    "stylize_single",
    "run_short_term",
    "run_long_term",
    "run_multi_pass",
    "pass_initialization",
    "run_sequence",
    "required_flow_pairs",
]

log = logging.getLogger(__name__)

ALGORITHMS = ("independent", "prev-init", "warped-init", "short-term", "long-term", "multi-pass")
SHORT_TERM_ALGORITHMS = ALGORITHMS[:4]

# (height, width) -> (alpha, beta, gamma)
RESOLUTION_WEIGHTS = {
    (350, 450): (1.0, 20.0, 200.0),
    (432, 768): (1.0, 40.0, 200.0),
    (436, 1024): (1.0, 100.0, 400.0),
}
BENCHMARK_WEIGHTS = (1.0, 100.0, 400.0)


def weights_for_resolution(height, width, **overrides):
    """Loss weights of the declared resolution closest in pixel count."""
    n = height * width
    key = min(RESOLUTION_WEIGHTS, key=lambda hw: (abs(hw[0] * hw[1] - n), hw))
    a, b, g = RESOLUTION_WEIGHTS[key]
    params = dict(alpha=a, beta=b, gamma=g)
    params.update(overrides)
    return LossWeights(**params)


# --- flow lookup ----------------------------------------------------------

def flow_filenames(src, dst):
    """File name holding the flow src -> dst (0-based indices).

    ``flow_fwd_A_B.flo`` is A -> B and ``flow_bwd_A_B.flo`` is B -> A, with
    1-based A < B.
    """
    a, b = min(src, dst) + 1, max(src, dst) + 1
    kind = "fwd" if src < dst else "bwd"
    return f"flow_{kind}_{a:04d}_{b:04d}.flo"


class FlowStore:
    """Flow fields keyed by (source, target) frame index.

    Missing long-range flows are composed from adjacent ones when
    ``compose`` is set.
    """

    def __init__(self, flows=None, compose=True, directory=None):
        self._flows = dict(flows or {})
        self.compose = compose
        self.directory = directory

    @classmethod
    def from_directory(cls, directory, compose=True):
        flows = {}
        for path in glob.glob(os.path.join(directory, "flow_*_*_*.flo")):
            parts = os.path.basename(path)[:-4].split("_")
            kind, a, b = parts[1], int(parts[2]) - 1, int(parts[3]) - 1
            flows[(a, b) if kind == "fwd" else (b, a)] = path
        return cls(flows, compose=compose, directory=directory)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for (src, dst) in sorted(self._flows):
            write_flo(self.get(src, dst), os.path.join(directory, flow_filenames(src, dst)))

    def __contains__(self, key):
        return key in self._flows

    def has(self, src, dst):
        if (src, dst) in self._flows:
            return True
        if not self.compose or abs(dst - src) < 2:
            return False
        step = 1 if dst > src else -1
        return all((k, k + step) in self._flows for k in range(src, dst, step))

    def get(self, src, dst):
        item = self._flows.get((src, dst))
        if item is None:
            if not self.has(src, dst):
                raise KeyError(f"no flow {src + 1} -> {dst + 1}")
            step = 1 if dst > src else -1
            flow = self.get(src, src + step)
            for k in range(src + step, dst, step):
                flow = compose_flows(flow, self.get(k, k + step))
            self._flows[(src, dst)] = flow
            return flow
        if isinstance(item, str):
            item = read_flo(item)
            self._flows[(src, dst)] = item
        return item

    def pair(self, ref, cur):
        """Flow pair between reference frame ``ref`` and current frame ``cur``."""
        return FlowPair(forward=self.get(ref, cur), backward=self.get(cur, ref))

    def missing(self, pairs):
        """File names of required flows that are neither present nor composable."""
        out = []
        for src, dst in pairs:
            if not self.has(src, dst):
                out.append(flow_filenames(src, dst))
        return out


def required_flow_pairs(algorithm, n_frames, offsets=(1,)):
    """(source, target) flows an algorithm needs for ``n_frames`` frames."""
    need = []
    if algorithm in ("warped-init", "short-term"):
        offsets = (1,)
    elif algorithm == "long-term":
        pass
    elif algorithm == "multi-pass":
        for i in range(n_frames - 1):
            need += [(i, i + 1), (i + 1, i)]
        return need
    else:
        return need
    for i in range(n_frames):
        for j in offsets:
            if i - j >= 0:
                if algorithm == "warped-init":
                    need.append((i, i - j))
                else:
                    need += [(i - j, i), (i, i - j)]
    return need


# --- jobs -----------------------------------------------------------------

@dataclass(frozen=True)
class MultiPassSettings:
    passes: int = 10
    iterations_per_pass: int = 100
    delta: float = 0.5
    temporal_activation_pass: int = 4

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")


@dataclass
class PassState:
    index: int
    direction: str
    delta: float
    iterations: int
    temporal: bool
    images: list = field(default_factory=list, repr=False)


@dataclass
class SequenceJob:
    """Everything needed to stylize one frame sequence in memory."""

    frames: list
    style: np.ndarray
    weights: LossWeights = field(default_factory=LossWeights)
    solver: SolverConfig = field(default_factory=SolverConfig)
    algorithm: str = "short-term"
    flows: FlowStore | None = None
    seed: int = 0
    extractor: object = None
    later_solver: SolverConfig | None = None
    multipass: MultiPassSettings = field(default_factory=MultiPassSettings)
    # already stylized leading frames (resume) and a per-frame output hook
    completed: list = field(default_factory=list)
    on_frame: object = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if len(self.frames) < 1:
            raise ValueError("sequence needs at least one frame")
        if self.extractor is None:
            self.extractor = build_extractor()

    def missing_flows(self):
        pairs = required_flow_pairs(self.algorithm, len(self.frames), self.weights.offsets)
        if not pairs:
            return []
        if self.flows is None:
            return [flow_filenames(s, d) for s, d in pairs]
        return self.flows.missing(pairs)

    def validate(self):
        missing = self.missing_flows()
        if missing:
            raise FileNotFoundError("missing flow files: " + ", ".join(missing))


@dataclass
class SequenceResult:
    frames: list
    reports: list
    masks: dict = field(default_factory=dict)
    schedule: list = field(default_factory=list)


def stylize_single(p, a, init, weights, solver, extractor=None, temporal=(), style=None):
    """Minimize the content + style (+ temporal) objective for one frame.

    Returns ``(image, report)``. ``style`` may carry precomputed Gram
    matrices; otherwise they are computed from ``a``.
    """
    extractor = extractor or build_extractor()
    p = np.asarray(p, dtype=np.float64)
    if style is None:
        style = StyleTarget.from_image(extractor, a, p.shape, weights.style_layers)
    ctx = LossContext(extractor.forward(p, weights.content_layers), style, list(temporal))

    def objective(x):
        return total_loss_grad(x, ctx, weights, extractor)

    return minimize(objective, init, solver)


def _noise(job, index):
    h, w, c = np.shape(job.frames[0])
    return gaussian_init(w, h, c, make_rng(job.seed, index))


def _style_target(job):
    shape = np.shape(job.frames[0])
    return StyleTarget.from_image(job.extractor, job.style, shape, job.weights.style_layers)


def _run_sequential(job, offsets):
    job.validate()
    style = _style_target(job)
    alg = job.algorithm
    outputs, reports, masks = [], [], {}
    for i, frame in enumerate(job.frames):
        if i < len(job.completed):
            outputs.append(np.asarray(job.completed[i], dtype=np.float64))
            reports.append(None)
            continue
        solver = job.solver if i == 0 or job.later_solver is None else job.later_solver
        temporal = []
        if i == 0 or alg == "independent":
            init = _noise(job, i)
        elif alg == "prev-init":
            init = outputs[i - 1]
        else:
            init = warp_image(outputs[i - 1], job.flows.get(i, i - 1))
        if i > 0 and alg in ("short-term", "long-term"):
            active = [j for j in offsets if i - j >= 0]
            short = {j: consistency_weights(job.flows.pair(i - j, i)) for j in active}
            masks[i] = {}
            for j in active:
                c = long_term_weights(short, j)
                masks[i][j] = c
                warped = warp_image(outputs[i - j], job.flows.get(i, i - j))
                temporal.append(TemporalTerm(warped, c))
        x, rep = stylize_single(frame, job.style, init, job.weights, solver,
                                job.extractor, temporal, style)
        log.info("frame %d: %d iterations, loss %.6g", i + 1, rep.iterations, rep.final_loss)
        outputs.append(x)
        reports.append(rep)
        if job.on_frame is not None:
            job.on_frame(i, x, rep, masks.get(i, {}))
    return SequenceResult(outputs, reports, masks)


def run_short_term(job):
    """Per-frame, previous-frame, warped-init and short-term temporal loss modes."""
    if job.algorithm not in SHORT_TERM_ALGORITHMS:
        raise ValueError(f"run_short_term does not handle {job.algorithm!r}")
    return _run_sequential(job, (1,))


def run_long_term(job):
    """Temporal terms to every earlier frame at the configured offsets."""
    if job.algorithm != "long-term":
        job = replace(job, algorithm="long-term")
    return _run_sequential(job, tuple(job.weights.offsets))


def pass_initialization(own_previous, neighbour, flows, index, neighbour_index, delta):
    """Initialization of one frame in a multi-pass sweep.

    ``own_previous`` is this frame's result from the previous pass and
    ``neighbour`` the already updated result of the frame processed just
    before it in the current sweep (None for the first frame of the sweep).
    Returns ``(init, term)`` where ``term`` is the matching temporal term.
    """
    if neighbour is None:
        return own_previous, None
    warped = warp_image(neighbour, flows.get(index, neighbour_index))
    c = consistency_weights(flows.pair(neighbour_index, index))
    return blend(warped, own_previous, c, delta), TemporalTerm(warped, c)


def run_multi_pass(job, settings=None):
    """Alternating-direction passes with blended warped initializations."""
    settings = settings or job.multipass
    if job.algorithm != "multi-pass":
        job = replace(job, algorithm="multi-pass")
    if settings.passes > 1:
        job.validate()
    style = _style_target(job)
    n = len(job.frames)
    solver = replace(job.solver, max_iterations=settings.iterations_per_pass,
                     stop_on_convergence=False)
    delta = settings.delta
    current = [None] * n
    reports = [None] * n
    schedule = []
    for k in range(settings.passes):
        forward = k % 2 == 0
        temporal_on = k > 0 and k >= settings.temporal_activation_pass
        state = PassState(k, "forward" if forward else "backward", delta,
                          settings.iterations_per_pass, temporal_on)
        previous = list(current)
        order = range(n) if forward else range(n - 1, -1, -1)
        for pos, i in enumerate(order):
            temporal = []
            if k == 0:
                init = _noise(job, i)
            else:
                nb = None if pos == 0 else (i - 1 if forward else i + 1)
                init, term = pass_initialization(previous[i], current[nb] if nb is not None
                                                 else None, job.flows, i, nb, delta)
                if temporal_on and term is not None:
                    temporal.append(term)
            x, rep = stylize_single(job.frames[i], job.style, init, job.weights, solver,
                                    job.extractor, temporal, style)
            current[i] = x
            reports[i] = rep
        state.images = list(current)
        schedule.append(state)
        log.info("pass %d (%s) done", k, state.direction)
    return SequenceResult(current, reports, schedule=schedule)


def run_sequence(job):
    """Dispatch on ``job.algorithm``."""
    if job.algorithm == "multi-pass":
        return run_multi_pass(job)
    if job.algorithm == "long-term":
        return run_long_term(job)
    return run_short_term(job)
