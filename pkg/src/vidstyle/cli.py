"""Command-line entry point.

Subcommands: ``stylize-image``, ``stylize-video``, ``evaluate``, ``synth`` and
``flow-masks``. Every run writes its fully resolved manifest (JSON) next to
its outputs; passing that file back with ``--config`` reproduces the run.
Values from ``--config`` are defaults, explicit flags override them.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import contextlib
import glob
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bench import (default_scene, evaluate_sequence, generate_synth_scene, occlusion_scene,
                    report_table, static_scene, SynthObject, SynthScene, warp_back_mse)
from .features import LayerConfig, build_extractor, default_config
from .flow import (FlowPair, consistency_weights, disocclusion_mask, long_term_weights,
                   motion_boundary_mask, read_flo, write_flo)
from .imagecore import (ImageFormatError, frame_filename, gaussian_init, make_rng, read_pgm,
                        read_ppm, sorted_frame_paths, write_pgm, write_ppm)
from .losses import LossWeights
from .pipeline import (ALGORITHMS, BENCHMARK_WEIGHTS, FlowStore, MultiPassSettings,
                       SequenceJob, flow_filenames, run_sequence, stylize_single,
                       weights_for_resolution)
from .solver import RELAXED_THRESHOLD, STRICT_THRESHOLD, SolverConfig

log = logging.getLogger("vidstyle")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
MANIFEST_NAME = "manifest.json"


class ValidationError(Exception):
    pass


# --- argument parsing -----------------------------------------------------

def _int_list(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _threshold(text):
    if text == "strict":
        return STRICT_THRESHOLD
    if text == "relaxed":
        return RELAXED_THRESHOLD
    return float(text)


def _add_common(p):
    p.add_argument("--config", help="JSON manifest whose values act as defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--threads", type=int, help="cap on worker threads")


def _add_optim(p):
    g = p.add_argument_group("loss and solver")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--weights", choices=["resolution", "benchmark"],
                   help="default weight table: nearest resolution or the benchmark setting")
    g.add_argument("--robust", action="store_true", default=None,
                   help="absolute-error temporal loss with doubled gamma")
    g.add_argument("--max-iters", type=int)
    g.add_argument("--threshold", type=_threshold, help="strict, relaxed or a number")
    g.add_argument("--window", type=int)
    g.add_argument("--method", choices=["lbfgs", "adam"])
    g.add_argument("--later-threshold", type=_threshold,
                   help="threshold for frames after the first")
    g.add_argument("--extractor-seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="vidstyle", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stylize-image", help="stylize one image")
    _add_common(p)
    _add_optim(p)
    p.add_argument("--content")
    p.add_argument("--style")
    p.add_argument("--output")
    p.add_argument("--log", help="solver log path (default: OUTPUT with .log)")

    p = sub.add_parser("stylize-video", help="stylize a frame sequence")
    _add_common(p)
    _add_optim(p)
    p.add_argument("--frames", help="glob of input frames, e.g. 'in/frame_*.ppm'")
    p.add_argument("--style")
    p.add_argument("--flow-dir")
    p.add_argument("--output-dir")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--J", dest="offsets", type=_int_list, help="long-term offsets, e.g. 1,10,20,40")
    p.add_argument("--passes", type=int)
    p.add_argument("--pass-iters", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--temporal-pass", type=int, help="first pass with the temporal loss")
    p.add_argument("--no-compose", action="store_true", default=None,
                   help="do not compose long-range flows from adjacent ones")
    p.add_argument("--resume", action="store_true", help="skip frames already written")
    p.add_argument("--dry-run", action="store_true", help="validate and write the manifest only")

    p = sub.add_parser("evaluate", help="warp-back MSE of stylized sequences")
    _add_common(p)
    p.add_argument("results", nargs="+", help="directories with stylized frames")
    p.add_argument("--gt-dir", required=True, help="directory written by 'synth' (flows, masks)")
    p.add_argument("--names", help="comma-separated row names; repeated names are averaged")
    p.add_argument("--scene", help="column name (default: basename of --gt-dir)")
    p.add_argument("--format", choices=["text", "delimited"], default="text")
    p.add_argument("--output", help="write the table here as well as to stdout")

    p = sub.add_parser("synth", help="write a synthetic scene with exact flows and masks")
    _add_common(p)
    p.add_argument("output_dir")
    p.add_argument("--variant", choices=["default", "static", "moving", "occlusion"],
                   default="default")
    p.add_argument("--frames", type=int)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--J", dest="offsets", type=_int_list, default=[1],
                   help="frame offsets to write flows for")
    p.add_argument("--speed", type=float, default=2.0, help="pixels per frame (moving variant)")

    p = sub.add_parser("flow-masks", help="dump occlusion, boundary and weight masks as PGM")
    _add_common(p)
    p.add_argument("--flow-dir", required=True)
    p.add_argument("--frames", type=int, required=True, help="number of frames")
    p.add_argument("--J", dest="offsets", type=_int_list, default=[1])
    p.add_argument("--output-dir", required=True)
    return parser


# --- manifest resolution --------------------------------------------------

def _load_config(path):
    if not path:
        return {}
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})")


def _pick(args, cfg, name, key=None, default=None):
    val = getattr(args, name, None)
    if val is not None:
        return val
    return cfg.get(key or name, default)


def _resolve_weights(args, cfg, shape):
    base = cfg.get("weights", {})
    mode = _pick(args, cfg, "weights", "weights_table", "resolution")
    if mode == "benchmark":
        a, b, g = BENCHMARK_WEIGHTS
        table = LossWeights(a, b, g)
    else:
        table = weights_for_resolution(shape[0], shape[1])
    ext = base.get("content_layers"), base.get("style_layers")
    offsets = getattr(args, "offsets", None) or base.get("offsets") or [1]
    w = LossWeights(
        alpha=args.alpha if args.alpha is not None else base.get("alpha", table.alpha),
        beta=args.beta if args.beta is not None else base.get("beta", table.beta),
        gamma=args.gamma if args.gamma is not None else base.get("gamma", table.gamma),
        content_layers=tuple(ext[0] or (3,)),
        style_layers=tuple(ext[1] or (1, 2, 3, 4)),
        offsets=tuple(offsets),
        temporal_norm=base.get("temporal_norm", "squared"),
    )
    if args.robust and w.temporal_norm != "absolute":
        w = w.robust()
    return w, mode


def _resolve_solver(args, cfg):
    base = dict(cfg.get("solver", {}))
    if args.max_iters is not None:
        base["max_iterations"] = args.max_iters
    if args.threshold is not None:
        base["convergence_threshold"] = args.threshold
    if args.window is not None:
        base["convergence_window"] = args.window
    if args.method is not None:
        base["method"] = args.method
    solver = SolverConfig(**base)
    later = cfg.get("later_solver")
    later = SolverConfig(**later) if later else None
    if args.later_threshold is not None:
        d = solver.to_dict()
        d["convergence_threshold"] = args.later_threshold
        later = SolverConfig(**d)
    return solver, later


def _resolve_extractor(args, cfg):
    if cfg.get("extractor"):
        config = LayerConfig.from_dict(cfg["extractor"])
    else:
        config = default_config()
    if args.extractor_seed is not None:
        config = LayerConfig(config.stages, args.extractor_seed, config.content_layers,
                             config.style_layers)
    return config


def _require_file(path, what):
    if not path:
        raise ValidationError(f"missing required {what}")
    if not os.path.isfile(path):
        raise ValidationError(f"{what} not found: {path}")


def _read_image(path, what):
    try:
        return read_ppm(path)
    except (ImageFormatError, OSError) as exc:
        raise ValidationError(f"{what} {path}: {exc}")


def _check_shape(extractor, shape, what):
    try:
        extractor.check_input(shape)
    except ValueError as exc:
        raise ValidationError(f"{what}: {exc}")


def manifest_hash(manifest):
    """Digest of the manifest fields that determine outputs."""
    blob = json.dumps({k: v for k, v in manifest.items() if k not in ("resume", "dry_run")},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(manifest, directory):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# --- subcommands ----------------------------------------------------------

def cmd_stylize_image(args):
    cfg = _load_config(args.config)
    content = _pick(args, cfg, "content")
    style = _pick(args, cfg, "style")
    output = _pick(args, cfg, "output")
    _require_file(content, "content image")
    _require_file(style, "style image")
    if not output:
        raise ValidationError("missing required --output")
    p = _read_image(content, "content image")
    a = _read_image(style, "style image")
    ext_cfg = _resolve_extractor(args, cfg)
    extractor = build_extractor(ext_cfg)
    _check_shape(extractor, p.shape, f"content image {content}")
    weights, mode = _resolve_weights(args, cfg, p.shape)
    solver, _ = _resolve_solver(args, cfg)
    seed = _pick(args, cfg, "seed", default=0)
    manifest = {
        "command": "stylize-image", "content": content, "style": style, "output": output,
        "seed": seed, "weights_table": mode, "weights": weights.to_dict(),
        "solver": solver.to_dict(), "extractor": ext_cfg.to_dict(),
    }
    out_dir = os.path.dirname(os.path.abspath(output))
    write_manifest(manifest, out_dir)
    h, w, c = p.shape
    init = gaussian_init(w, h, c, make_rng(seed, 0))
    x, report = stylize_single(p, a, init, weights, solver, extractor)
    write_ppm(x, output)
    report.write_log(args.log or os.path.splitext(output)[0] + ".log")
    log.info("wrote %s (%d iterations, converged=%s)", output, report.iterations, report.converged)
    return EXIT_OK


def _video_manifest(args, cfg):
    frames_glob = _pick(args, cfg, "frames", "frames_glob")
    if cfg.get("frame_paths") and not args.frames:
        frame_paths = list(cfg["frame_paths"])
    else:
        if not frames_glob:
            raise ValidationError("missing required --frames")
        frame_paths = sorted_frame_paths(glob.glob(frames_glob))
    if not frame_paths:
        raise ValidationError(f"no frames match {frames_glob}")
    for fp in frame_paths:
        _require_file(fp, "frame")
    style = _pick(args, cfg, "style")
    _require_file(style, "style image")
    out_dir = _pick(args, cfg, "output_dir")
    if not out_dir:
        raise ValidationError("missing required --output-dir")
    algorithm = _pick(args, cfg, "algorithm", default="short-term")
    first = _read_image(frame_paths[0], "frame")
    ext_cfg = _resolve_extractor(args, cfg)
    weights, mode = _resolve_weights(args, cfg, first.shape)
    solver, later = _resolve_solver(args, cfg)
    mp = dict(cfg.get("multipass", {}))
    for flag, key in [("passes", "passes"), ("pass_iters", "iterations_per_pass"),
                      ("delta", "delta"), ("temporal_pass", "temporal_activation_pass")]:
        if getattr(args, flag) is not None:
            mp[key] = getattr(args, flag)
    try:
        multipass = MultiPassSettings(**mp)
    except ValueError as exc:
        raise ValidationError(str(exc))
    compose = not (args.no_compose or cfg.get("no_compose", False))
    return {
        "command": "stylize-video",
        "frame_paths": frame_paths,
        "style": style,
        "flow_dir": _pick(args, cfg, "flow_dir"),
        "output_dir": out_dir,
        "algorithm": algorithm,
        "seed": _pick(args, cfg, "seed", default=0),
        "weights_table": mode,
        "weights": weights.to_dict(),
        "solver": solver.to_dict(),
        "later_solver": later.to_dict() if later else None,
        "multipass": {"passes": multipass.passes,
                      "iterations_per_pass": multipass.iterations_per_pass,
                      "delta": multipass.delta,
                      "temporal_activation_pass": multipass.temporal_activation_pass},
        "no_compose": not compose,
        "extractor": ext_cfg.to_dict(),
    }


def build_job(manifest):
    """Construct a :class:`SequenceJob` from a resolved video manifest."""
    frames = [_read_image(p, "frame") for p in manifest["frame_paths"]]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ValidationError(f"frames have differing shapes: {sorted(shapes)}")
    style = _read_image(manifest["style"], "style image")
    extractor = build_extractor(LayerConfig.from_dict(manifest["extractor"]))
    _check_shape(extractor, frames[0].shape, "frames")
    flow_dir = manifest.get("flow_dir")
    flows = None
    if flow_dir:
        if not os.path.isdir(flow_dir):
            raise ValidationError(f"flow directory not found: {flow_dir}")
        flows = FlowStore.from_directory(flow_dir, compose=not manifest.get("no_compose"))
    later = manifest.get("later_solver")
    job = SequenceJob(
        frames=frames, style=style,
        weights=LossWeights.from_dict(manifest["weights"]),
        solver=SolverConfig.from_dict(manifest["solver"]),
        algorithm=manifest["algorithm"], flows=flows, seed=manifest["seed"],
        extractor=extractor, later_solver=SolverConfig.from_dict(later) if later else None,
        multipass=MultiPassSettings(**manifest["multipass"]),
    )
    missing = job.missing_flows()
    if missing:
        where = flow_dir or "(no --flow-dir given)"
        raise ValidationError(f"missing flow files in {where}: " + ", ".join(missing))
    return job


def _state_path(out_dir, i):
    return os.path.join(out_dir, "state", frame_filename(i + 1, "frame", "npy"))


def cmd_stylize_video(args):
    cfg = _load_config(args.config)
    manifest = _video_manifest(args, cfg)
    job = build_job(manifest)
    out_dir = manifest["output_dir"]
    digest = manifest_hash(manifest)
    previous = os.path.join(out_dir, MANIFEST_NAME)
    if args.resume and os.path.isfile(previous):
        with open(previous) as fh:
            same = manifest_hash(json.load(fh)) == digest
        if same and job.algorithm != "multi-pass":
            done = []
            for i in range(len(job.frames)):
                sp = _state_path(out_dir, i)
                if not (os.path.isfile(sp)
                        and os.path.isfile(os.path.join(out_dir, frame_filename(i + 1)))):
                    break
                done.append(np.load(sp))
            job.completed = done
            log.info("resuming after %d completed frames", len(done))
        elif not same:
            log.warning("manifest changed; --resume ignored")
    write_manifest(manifest, out_dir)
    if args.dry_run:
        return EXIT_OK
    os.makedirs(os.path.join(out_dir, "state"), exist_ok=True)

    def save(i, x, report, masks):
        np.save(_state_path(out_dir, i), x)
        write_ppm(x, os.path.join(out_dir, frame_filename(i + 1)))
        report.write_log(os.path.join(out_dir, frame_filename(i + 1, "frame", "log")))
        for j, c in sorted(masks.items()):
            write_pgm(c, os.path.join(out_dir, f"weights_{i + 1:04d}_j{j}.pgm"))

    job.on_frame = save
    result = run_sequence(job)
    if job.algorithm == "multi-pass":
        for i, (x, rep) in enumerate(zip(result.frames, result.reports)):
            save(i, x, rep, {})
        with open(os.path.join(out_dir, "passes.log"), "w") as fh:
            for s in result.schedule:
                fh.write(f"pass {s.index} {s.direction} delta={s.delta} "
                         f"iterations={s.iterations} temporal={int(s.temporal)}\n")
    return EXIT_OK


def _gt_flow_and_valid(gt_dir, n):
    flows, valid, source = [], [], "ground-truth"
    flow_dir = os.path.join(gt_dir, "flows")
    mask_dir = os.path.join(gt_dir, "masks")
    for k in range(n - 1):
        fwd_path = os.path.join(flow_dir, flow_filenames(k, k + 1))
        if not os.path.isfile(fwd_path):
            raise ValidationError(f"missing ground-truth flow {fwd_path}")
        fwd = read_flo(fwd_path)
        occ_path = os.path.join(mask_dir, frame_filename(k + 1, "occ", "pgm"))
        if os.path.isfile(occ_path):
            valid.append(read_pgm(occ_path) < 0.5)
        else:
            bwd_path = os.path.join(flow_dir, flow_filenames(k + 1, k))
            if not os.path.isfile(bwd_path):
                raise ValidationError(f"need {occ_path} or {bwd_path}")
            # pixels of frame k that fail the check against frame k+1
            occluded = disocclusion_mask(FlowPair(forward=read_flo(bwd_path), backward=fwd))
            valid.append(~occluded)
            source = "consistency-check"
        flows.append(fwd)
    return flows, valid, source


def cmd_evaluate(args):
    gt_dir = args.gt_dir
    if not os.path.isdir(gt_dir):
        raise ValidationError(f"ground-truth directory not found: {gt_dir}")
    names = args.names.split(",") if args.names else [os.path.basename(os.path.normpath(r))
                                                      for r in args.results]
    if len(names) != len(args.results):
        raise ValidationError(f"{len(names)} names for {len(args.results)} result directories")
    scene = args.scene or os.path.basename(os.path.normpath(gt_dir))
    sequences = []
    for r in args.results:
        paths = sorted_frame_paths(glob.glob(os.path.join(r, "frame_*.ppm")))
        if not paths:
            raise ValidationError(f"no frame_*.ppm files in {r}")
        sequences.append(paths)
    counts = {len(s) for s in sequences}
    if len(counts) != 1:
        raise ValidationError(f"mismatched frame counts across result directories: "
                              f"{[len(s) for s in sequences]}")
    n = counts.pop()
    flows, valid, source = _gt_flow_and_valid(gt_dir, n)
    if source != "ground-truth":
        log.warning("no occlusion masks in %s; using %s masks", gt_dir, source)
    results = {}
    for name, paths in zip(names, sequences):
        frames = [read_ppm(p) for p in paths]
        res = warp_back_mse(frames, flows, valid)
        log.info("%s: mean %.3e (masks: %s, skipped pairs %s)", name, res.mean, source,
                 res.skipped)
        results.setdefault(name, {}).setdefault(scene, []).append(res.mean)
    text = report_table(results, fmt=args.format)
    sys.stdout.write(text)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    return EXIT_OK


def _synth_config(args):
    seed = args.seed if args.seed is not None else 0
    if args.variant == "default":
        return default_scene(seed, frames=args.frames or 5, size=args.size)
    if args.variant == "static":
        return static_scene(seed, frames=args.frames or 3, size=args.size)
    if args.variant == "occlusion":
        return occlusion_scene(seed, frames=args.frames or 8, size=args.size)
    s = args.size
    return SynthScene(seed=seed, width=s, height=s, frames=args.frames or 3,
                      objects=(SynthObject(s // 8, s // 4, s // 4, s // 4,
                                           (args.speed, 0.0)),))


def cmd_synth(args):
    try:
        seq = generate_synth_scene(_synth_config(args))
    except ValueError as exc:
        raise ValidationError(str(exc))
    out = args.output_dir
    for sub in ("frames", "flows", "masks"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    for i, f in enumerate(seq.frames):
        write_ppm(f, os.path.join(out, "frames", frame_filename(i + 1)))
    seq.flow_store(tuple(args.offsets)).save(os.path.join(out, "flows"))
    for i, (dis, occ) in enumerate(zip(seq.disocclusions, seq.occlusions)):
        write_pgm(dis.astype(float), os.path.join(out, "masks", frame_filename(i + 2, "disocc", "pgm")))
        write_pgm(occ.astype(float), os.path.join(out, "masks", frame_filename(i + 1, "occ", "pgm")))
    scene = seq.scene
    with open(os.path.join(out, "scene.json"), "w") as fh:
        json.dump({"seed": scene.seed, "width": scene.width, "height": scene.height,
                   "frames": scene.frames,
                   "objects": [vars(o) | {"velocity": list(o.velocity)} for o in scene.objects]},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_flow_masks(args):
    if not os.path.isdir(args.flow_dir):
        raise ValidationError(f"flow directory not found: {args.flow_dir}")
    store = FlowStore.from_directory(args.flow_dir)
    offsets = sorted(set(args.offsets))
    need = [(i - j, i) for i in range(args.frames) for j in offsets if i - j >= 0]
    missing = store.missing([p for s, d in need for p in ((s, d), (d, s))])
    if missing:
        raise ValidationError("missing flow files: " + ", ".join(missing))
    os.makedirs(args.output_dir, exist_ok=True)
    for i in range(1, args.frames):
        short = {}
        for j in offsets:
            if i - j < 0:
                continue
            pair = store.pair(i - j, i)
            occ = disocclusion_mask(pair)
            mb = motion_boundary_mask(pair.backward)
            short[j] = consistency_weights(pair)
            tag = f"{i + 1:04d}_j{j}"
            write_pgm(occ.astype(float), os.path.join(args.output_dir, f"disocc_{tag}.pgm"))
            write_pgm(mb.astype(float), os.path.join(args.output_dir, f"boundary_{tag}.pgm"))
            # black: unreliable flow, gray: motion boundary, white: reliable
            vis = np.where(occ, 0.0, np.where(mb, 0.5, 1.0))
            write_pgm(vis, os.path.join(args.output_dir, f"uncertainty_{tag}.pgm"))
        for j in short:
            write_pgm(long_term_weights(short, j),
                      os.path.join(args.output_dir, f"weights_{i + 1:04d}_j{j}.pgm"))
    return EXIT_OK


def _thread_cap(threads):
    """Limit BLAS worker threads for the duration of a command."""
    if not threads:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl not installed; --threads ignored")
        return contextlib.nullcontext()
    return threadpool_limits(limits=threads)


COMMANDS = {
    "stylize-image": cmd_stylize_image,
    "stylize-video": cmd_stylize_video,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "flow-masks": cmd_flow_masks,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    try:
        with _thread_cap(args.threads):
            return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
