"""Command-line front door: freeze a model into a fixed pipeline, simulate
it, emit RTL, estimate PPA and explore the fixed/programmable design space.

Structured logs go to stderr; artifacts go under --out only.  Exit codes:
0 success, 1 domain error, 2 usage/path error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import model_ir as mir
from . import ppa as ppa_mod
from .errors import FixyForgeError, InfeasibleError
from .freeze import build_fixed_pipeline, load_pipeline, save_pipeline
from .quantization import ExactZero, MagnitudeBelow, TargetSparsity
from .simulator import dump_activations, read_image, run_cycle_accurate, run_fixed

DEFAULT_SEED = 1


def _log(msg: str):
    print(msg, file=sys.stderr)


def _fail_usage(msg: str) -> int:
    _log(f"error: {msg}")
    return 2


def _load_model(args) -> mir.ShapedModel:
    if args.model:
        model_path = Path(args.model)
        weights_path = Path(args.weights) if args.weights else model_path.with_suffix(".bin")
        model = mir.parse_model(model_path.read_text(), weights_path.read_bytes())
    else:
        model = mir.build_mobilenet(args.alpha, weight_source="random", seed=args.seed)
    return mir.infer_shapes(model)


def _check_paths(args) -> str | None:
    for attr in ("model", "weights", "pipeline", "cost_model", "accuracy_table", "preset"):
        value = getattr(args, attr, None)
        if value and not Path(value).exists():
            return f"path does not exist: {value}"
    if getattr(args, "images", None):
        for img in args.images:
            if not Path(img).exists():
                return f"path does not exist: {img}"
    return None


def _sparsity_policy(spec: str):
    if spec == "none":
        return None
    if spec == "zero":
        return ExactZero()
    if spec.startswith("below:"):
        return MagnitudeBelow(int(spec.split(":", 1)[1]))
    return TargetSparsity(float(spec))


def cmd_freeze(args) -> int:
    shaped = _load_model(args)
    n_units = shaped.model.conv_unit_count
    n_fixed = n_units if args.n_fixed is None else args.n_fixed
    split = mir.split_model(shaped, n_fixed)
    if n_fixed == 0:
        _log("warning: n-fixed is 0, pipeline is empty")
    _log(f"freezing {n_fixed}/{n_units} conv units "
         f"({100 * split.fixed_ops_fraction:.1f}% of ops)")
    taps = [int(t) for t in args.taps.split(",")] if args.taps else None
    result = build_fixed_pipeline(
        split.fixed_part,
        sparsity=_sparsity_policy(args.sparsity),
        granularity=args.granularity,
        q_mode=args.calibrate_q,
        calibration_seed=args.seed,
        taps=taps,
    )
    out = Path(args.out)
    save_pipeline(result.pipeline, out / "pipeline")
    report = {
        "n_fixed": n_fixed,
        "fixed_ops_fraction": split.fixed_ops_fraction,
        "fixed_macs": split.fixed_macs,
        "programmable_macs": split.programmable_macs,
        "pruning": result.prune_report.to_dict(),
        "per_layer": result.per_layer_reports,
        "frame_cycles": result.pipeline.schedule.total_frame_cycles,
    }
    (out / "freeze_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    if args.dump_stages:
        (out / "stages.json").write_text(json.dumps(_stage_dump(result.pipeline), indent=1, sort_keys=True))
    _log(f"pipeline written to {out / 'pipeline'}; sparsity {result.prune_report.sparsity:.3f}")
    return 0


def _stage_dump(pipe) -> list[dict]:
    from .datapath import stage_cost
    dump = []
    for stage, buf in zip(pipe.stages, pipe.buffers):
        entry = {
            "layer": stage.layer.id,
            "kind": stage.layer.kind,
            "in_shape": list(stage.in_shape),
            "out_shape": list(stage.out_shape),
            "acc_bits": int(stage.precision.acc_bits),
            "out_range": list(stage.precision.out_range),
            "right_shift": stage.qparams.right_shift,
            "buffer": {
                "banks": buf.bank_count,
                "bank_depth": buf.bank_depth,
                "sram_bits": buf.sram_bits,
                "shiftreg_bits": buf.shiftreg_bits,
                "fill_latency": buf.fill_latency,
                "tap_enabled": buf.tap_enabled,
            },
        }
        if not stage.is_pool:
            cost = stage_cost(stage)
            entry["adders"] = cost.adders
            entry["kept_weights"] = stage.kept_weights
        dump.append(entry)
    return dump


def _load_images(args, pipe) -> list[np.ndarray]:
    images = []
    if args.images:
        for path in args.images:
            images.append(read_image(path, pipe.input_spec).astype(np.int64))
    if args.random_images:
        rng = np.random.default_rng(args.seed)
        spec = pipe.input_spec
        for _ in range(args.random_images):
            images.append(rng.integers(0, 256, (spec.h, spec.w, spec.c), dtype=np.int64))
    return images


def cmd_sim(args) -> int:
    pipe = load_pipeline(Path(args.pipeline) / "pipeline" if (Path(args.pipeline) / "pipeline").exists()
                         else args.pipeline)
    images = _load_images(args, pipe)
    if not images:
        _log("error: no images given (use --images or --random-images)")
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, image in enumerate(images):
        if args.mode == "cycles":
            result = run_cycle_accurate(pipe, image)
            _log(f"image {i}: {result.cycle_count} cycles "
                 f"(schedule {pipe.schedule.total_frame_cycles})")
        else:
            result = run_fixed(pipe, image)
        dump_activations(out / f"out_{i:03d}.bin", result)
    _log(f"{len(images)} simulation(s) written to {out}")
    return 0


def cmd_emit(args) -> int:
    from .emitter import emit_testbench, emit_verilog
    pipe = load_pipeline(Path(args.pipeline) / "pipeline" if (Path(args.pipeline) / "pipeline").exists()
                         else args.pipeline)
    images = _load_images(args, pipe)
    if images:
        bundle = emit_testbench(pipe, images)
    else:
        bundle = emit_verilog(pipe)
    out = Path(args.out)
    bundle.write(out)
    _log(f"{len(bundle.files)} RTL/testbench file(s) and {len(bundle.vectors)} vector file(s) "
         f"written to {out}")
    return 0


def _get_cost_model(args, shaped, pipe):
    if args.cost_model:
        return ppa_mod.CostModel.load(args.cost_model)
    if args.calibrate:
        return ppa_mod.calibrate(pipe, shaped, ppa_mod.default_anchors())
    raise FixyForgeError("no cost model: pass --cost-model FILE or --calibrate")


def cmd_ppa(args) -> int:
    shaped = _load_model(args)
    full = mir.split_model(shaped, shaped.model.conv_unit_count).fixed_part
    result = build_fixed_pipeline(full, sparsity=_sparsity_policy(args.sparsity),
                                  calibration_seed=args.seed)
    cm = _get_cost_model(args, shaped, result.pipeline)
    n_units = shaped.model.conv_unit_count
    n_fixed = n_units if args.n_fixed is None else args.n_fixed
    est = ppa_mod.estimate_ffe(result.pipeline, cm, n_fixed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "n_fixed": n_fixed,
        "area_mm2": est.area_mm2,
        "tops": est.tops,
        "watts": est.watts,
        "energy_per_frame_j": est.energy_per_frame_j,
        "fill_latency_s": est.fill_latency_s,
    }
    (out / "ppa.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    if args.calibrate and not args.cost_model:
        cm.save(out / "cost_model.json")
    _log(f"front end with {n_fixed} fixed units: {est.area_mm2:.3f} mm^2, "
         f"{est.tops:.3f} TOPS, {est.watts * 1e3:.2f} mW")
    return 0


def cmd_explore(args) -> int:
    if args.preset:
        preset = json.loads(Path(args.preset).read_text())
        for key, value in preset.items():
            setattr(args, key.replace("-", "_"), value)
    shaped = _load_model(args)
    full = mir.split_model(shaped, shaped.model.conv_unit_count).fixed_part
    result = build_fixed_pipeline(full, sparsity=_sparsity_policy(args.sparsity),
                                  calibration_seed=args.seed)
    cm = _get_cost_model(args, shaped, result.pipeline)
    table = ppa_mod.load_accuracy_table(args.accuracy_table)
    constraints = ppa_mod.Constraints(
        area_budget_mm2=args.budget_mm2,
        max_acc_drop_pct=args.max_acc_drop,
        priority="topspw" if args.priority == "topspw" else "tops",
    )
    res = ppa_mod.pareto_explore(shaped, cm, constraints, table, pipe=result.pipeline)
    out = Path(args.out)
    files = ppa_mod.emit_report(res.points, out, tuple(args.formats.split(",")))
    best = res.best
    summary = {
        "best": ppa_mod._point_row(best),
        "constraints": {
            "area_budget_mm2": constraints.area_budget_mm2,
            "max_acc_drop_pct": constraints.max_acc_drop_pct,
            "priority": constraints.priority,
        },
        "frontier": [ppa_mod._point_row(p) for p in res.frontier],
    }
    (out / "selection.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    _log(f"best: {best.n_fixed} fixed + config {best.config} "
         f"({best.ppa.total_area_mm2:.2f} mm^2, {best.ppa.tops:.2f} TOPS, "
         f"{best.ppa.tops_per_w:.2f} TOPS/W, "
         f"{best.improve_tops:.2f}x / {best.improve_topspw:.2f}x vs iso-area baseline)")
    _log(f"report written to {', '.join(str(f) for f in files)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixyforge",
        description="Compile CNN front-ends into fixed-weight pipelined hardware, "
                    "verify them bit-exactly, emit Verilog and explore the "
                    "fixed+programmable design space.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_args(p):
        p.add_argument("--model", help="model manifest JSON (defaults to a built-in reference model)")
        p.add_argument("--weights", help="weight blob (defaults to manifest path with .bin)")
        p.add_argument("--alpha", type=float, default=0.25,
                       help="width multiplier of the built-in model (default 0.25)")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = sub.add_parser("freeze", help="quantize, prune and schedule the fixed pipeline")
    add_model_args(p)
    p.add_argument("--n-fixed", type=int, default=None, help="conv units to fix (default: all)")
    p.add_argument("--sparsity", default="0.5",
                   help="pruning policy: fraction, 'zero', 'below:T' or 'none' (default 0.5)")
    p.add_argument("--granularity", choices=["per_tensor", "per_channel"], default="per_channel")
    p.add_argument("--calibrate-q", choices=["static", "images"], default="static",
                   help="requantization shift selection (default static worst-case)")
    p.add_argument("--taps", help="comma-separated conv-unit depths exposed as extra outputs")
    p.add_argument("--dump-stages", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_freeze)

    p = sub.add_parser("sim", help="run the bit-exact or cycle-accurate simulator")
    p.add_argument("--pipeline", required=True, help="freeze output directory")
    p.add_argument("--images", nargs="*", help="PGM/PPM or raw .bin images")
    p.add_argument("--random-images", type=int, default=0)
    p.add_argument("--mode", choices=["functional", "cycles"], default="functional")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("emit", help="emit Verilog plus a self-checking testbench")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--images", nargs="*")
    p.add_argument("--random-images", type=int, default=0)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("ppa", help="estimate front-end power/performance/area")
    add_model_args(p)
    p.add_argument("--n-fixed", type=int, default=None)
    p.add_argument("--sparsity", default="0.5")
    p.add_argument("--cost-model", help="calibrated cost model JSON")
    p.add_argument("--calibrate", action="store_true",
                   help="calibrate against the published design points")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ppa)

    p = sub.add_parser("explore", help="design-space exploration and report")
    add_model_args(p)
    p.add_argument("--preset", help="JSON preset overriding the flags below")
    p.add_argument("--sparsity", default="0.5")
    p.add_argument("--cost-model")
    p.add_argument("--calibrate", action="store_true")
    p.add_argument("--accuracy-table", help="accuracy CSV (defaults to the bundled table)")
    p.add_argument("--budget-mm2", type=float, default=None)
    p.add_argument("--max-acc-drop", type=float, default=None)
    p.add_argument("--priority", choices=["tops", "topspw"], default="tops")
    p.add_argument("--formats", default="csv,json,svg")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explore)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    bad = _check_paths(args)
    if bad:
        return _fail_usage(bad)
    if hasattr(args, "out"):
        Path(args.out).mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        _log(f"infeasible: {exc}")
        for c in exc.binding_constraints:
            _log(f"  binding: {c}")
        return 1
    except FixyForgeError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
