import math

import numpy as np
import pytest

from vidstyle.losses import LossContext, LossWeights, StyleTarget, TemporalTerm, total_loss_grad
from vidstyle.solver import (RELAXED_THRESHOLD, SolveReport, SolverConfig, SolverError,
                             minimize)


def quadratic_problem(extractor, rng, size=16):
    target = rng.random((size, size, 3))
    ctx = LossContext(None, None, [TemporalTerm(target, np.ones((size, size)))])
    w = LossWeights(0, 0, 400)
    return (lambda x: total_loss_grad(x, ctx, w, extractor)), target


def style_problem(extractor, seed=0, size=16):
    r = np.random.default_rng(seed)
    p, a = r.random((size, size, 3)), r.random((size, size, 3)) ** 3
    w = LossWeights(1, 100, 0)
    ctx = LossContext(extractor.forward(p, w.content_layers),
                      StyleTarget.from_image(extractor, a, p.shape, w.style_layers))
    init = np.clip(0.5 + 0.2 * r.standard_normal(p.shape), 0, 1)
    return (lambda x: total_loss_grad(x, ctx, w, extractor)), init


def test_quadratic_converges_to_target(extractor, rng):
    fn, target = quadratic_problem(extractor, rng)
    x, rep = minimize(fn, np.full_like(target, 0.5), SolverConfig(max_iterations=300))
    assert rep.final_loss < 1e-8
    np.testing.assert_allclose(x, target, atol=1e-5)


def test_constant_objective_converges_after_window():
    def fn(x):
        return 3.0, np.zeros_like(x)

    init = np.full((4, 4, 3), 0.25)
    x, rep = minimize(fn, init, SolverConfig(convergence_window=50))
    assert rep.converged and rep.iterations == 50
    np.testing.assert_array_equal(x, init)


def test_zero_objective_returns_init():
    init = np.random.default_rng(0).random((4, 4, 3))
    x, rep = minimize(lambda x: (0.0, np.zeros_like(x)), init, SolverConfig(convergence_window=7))
    assert rep.converged and rep.iterations == 7
    np.testing.assert_array_equal(x, init)


def test_relaxed_threshold_no_slower(extractor):
    fn, init = style_problem(extractor)
    _, strict = minimize(fn, init, SolverConfig(max_iterations=3000))
    _, relaxed = minimize(fn, init, SolverConfig(max_iterations=3000,
                                                 convergence_threshold=RELAXED_THRESHOLD))
    assert relaxed.iterations <= strict.iterations
    assert strict.converged


def test_lbfgs_trace_monotone(extractor):
    fn, init = style_problem(extractor, seed=1)
    _, rep = minimize(fn, init, SolverConfig(max_iterations=300))
    t = np.array(rep.trace)
    assert np.all(t[1:] <= t[:-1] * (1 + 1e-6))


def test_deterministic(extractor):
    fn, init = style_problem(extractor, seed=2)
    cfg = SolverConfig(max_iterations=100)
    x1, r1 = minimize(fn, init, cfg)
    x2, r2 = minimize(fn, init, cfg)
    assert x1.tobytes() == x2.tobytes()
    assert r1 == r2


def test_box_constraint(extractor, rng):
    target = rng.random((8, 8, 3)) * 3 - 1  # partly outside [0, 1]

    def fn(x):
        return float(np.sum((x - target) ** 2)), 2 * (x - target)

    # the first-order method stops on the window rule before settling exactly
    for method, tol in (("lbfgs", 1e-6), ("adam", 1e-2)):
        x, _ = minimize(fn, np.full((8, 8, 3), 0.5),
                        SolverConfig(max_iterations=400, method=method, learning_rate=0.05))
        assert x.min() >= 0 and x.max() <= 1
        np.testing.assert_allclose(x, np.clip(target, 0, 1), atol=tol)


def test_non_finite_aborts():
    calls = {"n": 0}

    def fn(x):
        calls["n"] += 1
        bad = calls["n"] > 3
        return (math.nan if bad else float(np.sum(x ** 2))), 2 * x

    with pytest.raises(SolverError, match="iteration"):
        minimize(fn, np.ones((2, 2, 3)), SolverConfig(method="adam"))


def test_fixed_iterations_ignore_convergence():
    def fn(x):
        return 1.0, np.zeros_like(x)

    _, rep = minimize(fn, np.zeros((2, 2, 3)),
                      SolverConfig(max_iterations=120, convergence_window=10,
                                   stop_on_convergence=False))
    assert rep.iterations == 120


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(convergence_threshold=0)
    with pytest.raises(ValueError):
        SolverConfig(convergence_window=0)
    with pytest.raises(ValueError):
        SolverConfig(method="sgd")
    cfg = SolverConfig(history=5)
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg


def test_log_lines(tmp_path):
    rep = SolveReport(iterations=1, final_loss=0.5, parts={"content": 0.1, "style": 0.2},
                      converged=False, evaluations=3, trace=[1.0, 0.5],
                      part_trace=[{"content": 0.3, "style": 0.4}, {"content": 0.1, "style": 0.2}])
    lines = rep.log_lines()
    assert lines[0] == "# iteration total content style"
    assert lines[2].split()[0] == "1" and float(lines[2].split()[2]) == 0.1
    rep.write_log(tmp_path / "log.txt")
    assert (tmp_path / "log.txt").read_text().count("\n") == 4
