"""Power/performance/area estimation and design-space exploration.

The fixed front-end is costed from structural counts through a calibratable
linear model; the programmable accelerator side comes from a published
configuration table treated as a black box.  System throughput is bound by
the programmable part (the front-end adds only its pipeline fill latency to
a streamed frame), system energy sums both parts with the front-end fully
clock-gated when idle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .datapath import scaler_adder_count, stage_cost
from .errors import CalibrationError, InfeasibleError, ParameterError
from .freeze import build_fixed_pipeline
from .model_ir import ModelSplit, ShapedModel, split_model
from .simulator import FixedPipeline

CLOCK_HZ = 810e6
TRANSFER_DATASETS = ("cifar100", "cifar10", "svhn", "flwr", "airc", "gtsr")

# fixed architectural ratio folding register area into the adder coefficient
FLOP_AREA_RATIO = 0.1
_COEFF_FLOOR = 1e-12  # keeps every fitted coefficient strictly positive


# ---------------------------------------------------------------------------
# Published programmable-accelerator configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NvdlaSpec:
    config: str
    macs: int
    buffer_kb: int
    area_mm2: float
    tops: float
    tops_per_w: float


def _data_text(name: str) -> str:
    return resources.files("fixyforge").joinpath("data").joinpath(name).read_text()


def _load_nvdla_table() -> dict[str, NvdlaSpec]:
    rows = {}
    for row in csv.DictReader(_data_text("nvdla_configs.csv").splitlines()):
        rows[row["config"]] = NvdlaSpec(
            config=row["config"],
            macs=int(row["macs"]),
            buffer_kb=int(row["buffer_kb"]),
            area_mm2=float(row["area_mm2"]),
            tops=float(row["tops"]),
            tops_per_w=float(row["tops_per_w"]),
        )
    return rows


_NVDLA = _load_nvdla_table()
NVDLA_CONFIGS = tuple(sorted(_NVDLA))


def nvdla_lookup(config: str) -> NvdlaSpec:
    try:
        return _NVDLA[config]
    except KeyError:
        raise ParameterError(f"unknown accelerator config '{config}'; valid: {NVDLA_CONFIGS}") from None


def baseline_at_area(area_mm2: float) -> tuple[float, float]:
    """(TOPS, TOPS/W) of an iso-area programmable baseline: piecewise-linear
    interpolation over the published configurations, linearly extrapolated
    past the largest one."""
    rows = sorted(_NVDLA.values(), key=lambda r: r.area_mm2)
    areas = [r.area_mm2 for r in rows]
    if area_mm2 <= areas[0]:
        return rows[0].tops, rows[0].tops_per_w
    if area_mm2 >= areas[-1]:
        a0, a1 = rows[-2], rows[-1]
    else:
        idx = next(i for i in range(1, len(rows)) if areas[i] >= area_mm2)
        a0, a1 = rows[idx - 1], rows[idx]
    t = (area_mm2 - a0.area_mm2) / (a1.area_mm2 - a0.area_mm2)
    return (
        a0.tops + t * (a1.tops - a0.tops),
        a0.tops_per_w + t * (a1.tops_per_w - a0.tops_per_w),
    )


# ---------------------------------------------------------------------------
# Structural counts and the cost model
# ---------------------------------------------------------------------------

@dataclass
class StructuralCounts:
    scaler_adders: int = 0
    tree_adders: int = 0
    flop_bits: int = 0
    sram_bits: int = 0
    nominal_ops: int = 0        # per frame, 2 ops per MAC, pruning ignored
    actual_ops: int = 0         # per frame, pruned taps removed
    sram_access_bits: int = 0   # per frame, reads + writes
    fill_cycles: int = 0
    ops_per_cycle_nominal: float = 0.0

    def __add__(self, other: "StructuralCounts") -> "StructuralCounts":
        return StructuralCounts(*(getattr(self, f) + getattr(other, f)
                                  for f in self.__dataclass_fields__))


def stage_counts(pipe: FixedPipeline, index: int) -> StructuralCounts:
    stage = pipe.stages[index]
    buf = pipe.buffers[index]
    timing = pipe.schedule.stages[index]
    out_px = stage.out_shape[0] * stage.out_shape[1]
    in_px = stage.in_shape[0] * stage.in_shape[1]
    if stage.is_pool:
        return StructuralCounts(sram_bits=buf.sram_bits, flop_bits=buf.shiftreg_bits,
                                fill_cycles=buf.fill_latency,
                                sram_access_bits=(in_px + out_px * buf.kernel[0]) * buf.word_bits
                                if buf.bank_count else 0)
    cost = stage_cost(stage)
    access = 0
    if buf.bank_count:
        access = in_px * buf.word_bits + out_px * buf.kernel[0] * buf.word_bits
    return StructuralCounts(
        scaler_adders=scaler_adder_count(stage.q_weights.values),
        tree_adders=stage.tree.tree_adders,
        flop_bits=cost.flops + buf.shiftreg_bits,
        sram_bits=buf.sram_bits,
        nominal_ops=2 * stage.nominal_macs_per_px * out_px,
        actual_ops=2 * stage.kept_macs_per_px * out_px,
        sram_access_bits=access,
        fill_cycles=buf.fill_latency,
        ops_per_cycle_nominal=2 * stage.nominal_macs_per_px * timing.rate,
    )


def pipeline_units(pipe: FixedPipeline) -> list[list[int]]:
    """Stage indices grouped into countable conv units."""
    return pipe.unit_stage_groups()


def counts_for_depth(pipe: FixedPipeline, n_fixed: int) -> StructuralCounts:
    units = pipeline_units(pipe)
    if not 0 <= n_fixed <= len(units):
        raise ParameterError(f"n_fixed={n_fixed} out of range 0..{len(units)}")
    total = StructuralCounts()
    for unit in units[:n_fixed]:
        for idx in unit:
            total = total + stage_counts(pipe, idx)
    return total


@dataclass
class CostModel:
    """Calibrated linear cost coefficients (areas in mm^2, energies in pJ)."""

    area_per_scaler_adder: float
    area_per_tree_adder: float
    area_per_flop_bit: float
    area_per_sram_bit: float
    energy_per_op_pj: float
    energy_per_sram_bit_pj: float
    clock_hz: float = CLOCK_HZ
    residuals: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("area_per_scaler_adder", "area_per_tree_adder", "area_per_flop_bit",
                     "area_per_sram_bit", "energy_per_op_pj", "energy_per_sram_bit_pj"):
            if getattr(self, name) <= 0:
                raise CalibrationError(f"cost model coefficient {name} must be positive")

    def area(self, c: StructuralCounts) -> float:
        return (self.area_per_scaler_adder * c.scaler_adders
                + self.area_per_tree_adder * c.tree_adders
                + self.area_per_flop_bit * c.flop_bits
                + self.area_per_sram_bit * c.sram_bits)

    def energy_per_frame(self, c: StructuralCounts) -> float:
        return (self.energy_per_op_pj * c.actual_ops
                + self.energy_per_sram_bit_pj * c.sram_access_bits) * 1e-12

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CostModel":
        doc = json.loads(text)
        return cls(**doc)

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "CostModel":
        return cls.from_json(Path(path).read_text())


@dataclass
class FfeEstimate:
    area_mm2: float
    tops: float
    watts: float
    energy_per_frame_j: float
    fill_latency_s: float
    stream_time_s: float

    def as_tuple(self) -> tuple[float, float, float]:
        return self.area_mm2, self.tops, self.watts


def estimate_ffe(pipe: FixedPipeline, cm: CostModel, n_fixed: int | None = None) -> FfeEstimate:
    """Area/throughput/power of the fixed front-end from structural counts.

    ``n_fixed`` restricts the estimate to a prefix of conv units (the whole
    pipeline when omitted).
    """
    if cm is None:
        raise CalibrationError("cost model not calibrated; run calibrate() or load one")
    spec = pipe.input_spec
    depth = len(pipeline_units(pipe)) if n_fixed is None else n_fixed
    c = counts_for_depth(pipe, depth)
    if depth == 0:
        return FfeEstimate(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    stream_time = spec.h * spec.w / cm.clock_hz
    energy = cm.energy_per_frame(c)
    ops_per_cycle = sum(
        stage_counts(pipe, idx).ops_per_cycle_nominal
        for unit in pipeline_units(pipe)[:depth] for idx in unit
    )
    return FfeEstimate(
        area_mm2=cm.area(c),
        tops=ops_per_cycle * cm.clock_hz / 1e12,
        watts=energy / stream_time,
        energy_per_frame_j=energy,
        fill_latency_s=c.fill_cycles / cm.clock_hz,
        stream_time_s=stream_time,
    )


# ---------------------------------------------------------------------------
# System composition
# ---------------------------------------------------------------------------

@dataclass
class SystemPpa:
    total_area_mm2: float
    tops: float
    tops_per_w: float
    frame_time_s: float
    energy_per_frame_j: float
    ffe_ops_share: float
    ffe_energy_share: float
    ffe_latency_share: float


def compose_system(split: ModelSplit, ffe: FfeEstimate, nv: NvdlaSpec,
                   utilization: float = 1.0) -> SystemPpa:
    """Frame-pipelined composition of the fixed front-end and the
    programmable accelerator.

    The front-end runs inline with the pixel stream and contributes only its
    fill latency to the frame hand-off, so the programmable part binds
    throughput whenever it has work (its published latency dominates).  Ops
    are nominal conv ops (2 per MAC, pruning ignored, normalization and any
    classifier head excluded) so both sides are measured on the same
    workload.
    """
    total_ops = 2 * (split.fixed_macs + split.programmable_macs)
    prog_ops = 2 * split.programmable_macs
    if split.split_index == 0:
        frame_time = total_ops / (nv.tops * 1e12 * utilization)
        return SystemPpa(
            total_area_mm2=nv.area_mm2, tops=nv.tops, tops_per_w=nv.tops_per_w,
            frame_time_s=frame_time,
            energy_per_frame_j=total_ops / (nv.tops_per_w * 1e12),
            ffe_ops_share=0.0, ffe_energy_share=0.0, ffe_latency_share=0.0,
        )
    if prog_ops == 0:
        # everything fixed: the pipeline is pixel-rate bound
        frame_time = ffe.stream_time_s
        energy = ffe.energy_per_frame_j
        return SystemPpa(
            total_area_mm2=ffe.area_mm2 + nv.area_mm2,
            tops=total_ops / frame_time / 1e12,
            tops_per_w=total_ops / energy / 1e12 if energy else 0.0,
            frame_time_s=frame_time, energy_per_frame_j=energy,
            ffe_ops_share=1.0, ffe_energy_share=1.0, ffe_latency_share=1.0,
        )
    nv_time = prog_ops / (nv.tops * 1e12 * utilization)
    frame_time = max(ffe.fill_latency_s, nv_time)
    nv_energy = prog_ops / (nv.tops_per_w * 1e12)
    energy = ffe.energy_per_frame_j + nv_energy
    return SystemPpa(
        total_area_mm2=ffe.area_mm2 + nv.area_mm2,
        tops=total_ops / frame_time / 1e12,
        tops_per_w=total_ops / energy / 1e12,
        frame_time_s=frame_time,
        energy_per_frame_j=energy,
        ffe_ops_share=(total_ops - prog_ops) / total_ops,
        ffe_energy_share=ffe.energy_per_frame_j / energy,
        ffe_latency_share=ffe.fill_latency_s / frame_time,
    )


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnchorRow:
    n_fixed: int
    config: str
    total_area_mm2: float
    tops: float
    tops_per_w: float


def load_published_design_points() -> list[dict]:
    return list(csv.DictReader(_data_text("published_design_points.csv").splitlines()))


def default_anchors() -> list[AnchorRow]:
    """The two published points used to fit the cost model (one per
    front-end depth family)."""
    rows = load_published_design_points()
    picked = []
    for row in rows:
        if (int(row["n_fixed"]), row["config"]) in ((7, "E"), (11, "C")):
            picked.append(AnchorRow(int(row["n_fixed"]), row["config"],
                                    float(row["total_area_mm2"]), float(row["tops"]),
                                    float(row["tops_per_w"])))
    return picked


def calibrate(pipe: FixedPipeline, shaped: ShapedModel, anchors: list[AnchorRow]) -> CostModel:
    """Least-squares fit of the cost coefficients to published anchor rows.

    Areas and energies of the anchor front-ends are recovered by subtracting
    the published programmable-accelerator share, then fitted against the
    pipeline's structural counts.  Coefficients are constrained positive.
    """
    if len({a.n_fixed for a in anchors}) < 2:
        raise CalibrationError("calibration needs anchors at two or more distinct depths")
    from scipy.optimize import lsq_linear

    area_rows, area_targets = [], []
    energy_rows, energy_targets = [], []
    for a in anchors:
        nv = nvdla_lookup(a.config)
        c = counts_for_depth(pipe, a.n_fixed)
        split = split_model(shaped, a.n_fixed)
        total_ops = 2 * (split.fixed_macs + split.programmable_macs)
        prog_ops = 2 * split.programmable_macs
        logic = c.scaler_adders + c.tree_adders + FLOP_AREA_RATIO * c.flop_bits
        area_rows.append([logic, c.sram_bits])
        area_targets.append(a.total_area_mm2 - nv.area_mm2)
        e_total = total_ops / (a.tops_per_w * 1e12)
        e_prog = prog_ops / (nv.tops_per_w * 1e12)
        energy_rows.append([c.actual_ops, c.sram_access_bits])
        energy_targets.append((e_total - e_prog) * 1e12)  # pJ

    area_fit = lsq_linear(np.array(area_rows), np.array(area_targets),
                          bounds=(_COEFF_FLOOR, np.inf))
    energy_fit = lsq_linear(np.array(energy_rows), np.array(energy_targets),
                            bounds=(_COEFF_FLOOR, np.inf))
    a_logic, a_sram = area_fit.x
    e_op, e_sram = energy_fit.x
    cm = CostModel(
        area_per_scaler_adder=a_logic,
        area_per_tree_adder=a_logic,
        area_per_flop_bit=a_logic * FLOP_AREA_RATIO,
        area_per_sram_bit=a_sram,
        energy_per_op_pj=e_op,
        energy_per_sram_bit_pj=e_sram,
        residuals={
            "area_mm2": list(np.array(area_rows) @ area_fit.x - np.array(area_targets)),
            "energy_pj": list(np.array(energy_rows) @ energy_fit.x - np.array(energy_targets)),
            "anchors": [[a.n_fixed, a.config] for a in anchors],
        },
    )
    return cm


# ---------------------------------------------------------------------------
# Accuracy table and design-space exploration
# ---------------------------------------------------------------------------

def load_accuracy_table(path: str | Path | None = None) -> list[dict]:
    """Transfer-accuracy rows; each value is ingested data, never computed."""
    text = Path(path).read_text() if path else _data_text("transfer_accuracy_mobilenet025.csv")
    rows = []
    for row in csv.DictReader(text.splitlines()):
        parsed = {"fixed_layers": int(row["fixed_layers"]), "adaptive_bn": row["adaptive_bn"]}
        for col in ("fixed_ops_pct", "imagenet") + TRANSFER_DATASETS:
            parsed[col] = float(row[col])
        rows.append(parsed)
    return rows


def accuracy_drops(table: list[dict], n_fixed: int) -> dict[str, float] | None:
    """Per-dataset accuracy drop vs the fully-programmable baseline for the
    adaptive-BN row at the given depth; None when the table has no row."""
    base = next((r for r in table if r["fixed_layers"] == 0), None)
    if base is None:
        return None
    if n_fixed == 0:
        return {d: 0.0 for d in TRANSFER_DATASETS}
    row = next((r for r in table if r["fixed_layers"] == n_fixed and r["adaptive_bn"] == "Y"), None)
    if row is None:
        return None
    return {d: base[d] - row[d] for d in TRANSFER_DATASETS}


@dataclass
class Constraints:
    area_budget_mm2: float | None = None
    max_acc_drop_pct: float | None = None
    priority: str = "tops"  # or "topspw"

    def __post_init__(self):
        if self.priority not in ("tops", "topspw"):
            raise ParameterError(f"priority must be 'tops' or 'topspw', got '{self.priority}'")


@dataclass
class DesignPoint:
    n_fixed: int
    config: str
    ppa: SystemPpa
    accuracy_drops: dict[str, float] | None
    feasible_area: bool
    feasible_accuracy: bool
    improve_tops: float
    improve_topspw: float
    on_frontier: bool = False

    @property
    def feasible(self) -> bool:
        return self.feasible_area and self.feasible_accuracy

    @property
    def max_drop(self) -> float | None:
        return max(self.accuracy_drops.values()) if self.accuracy_drops else None


@dataclass
class ExploreResult:
    points: list[DesignPoint]        # the full grid
    frontier: list[DesignPoint]      # non-dominated feasible points
    ranked: list[DesignPoint]        # feasible, best first under the priority

    @property
    def best(self) -> DesignPoint:
        return self.ranked[0]


def _dominates(a: DesignPoint, b: DesignPoint) -> bool:
    return (a.ppa.tops >= b.ppa.tops and a.ppa.tops_per_w >= b.ppa.tops_per_w
            and (a.ppa.tops > b.ppa.tops or a.ppa.tops_per_w > b.ppa.tops_per_w))


def pareto_explore(
    shaped: ShapedModel,
    cm: CostModel,
    constraints: Constraints,
    accuracy_table: list[dict] | None = None,
    pipe: FixedPipeline | None = None,
    sparsity: float = 0.5,
    seed: int = 1,
) -> ExploreResult:
    """Sweep (front-end depth) x (programmable config), filter by the area
    and accuracy constraints, and rank by the stated priority.

    Ties break toward smaller area, then fewer fixed layers.  When an
    accuracy table is supplied, only the depths it covers are candidates
    (the degradation of any other depth is unknown).
    """
    if pipe is None:
        full = split_model(shaped, shaped.model.conv_unit_count).fixed_part
        pipe = build_fixed_pipeline(full, sparsity=sparsity, calibration_seed=seed).pipeline
    n_units = len(pipeline_units(pipe))
    if accuracy_table is not None:
        # candidate depths are those the accuracy table covers (degradation
        # of any other depth is unknown, so it is not a usable design)
        covered = {0} | {r["fixed_layers"] for r in accuracy_table if r["adaptive_bn"] == "Y"}
        depths = sorted(d for d in covered if 0 <= d <= n_units)
    else:
        depths = list(range(n_units + 1))
    points = []
    for n in depths:
        split = split_model(shaped, n)
        ffe = estimate_ffe(pipe, cm, n)
        drops = accuracy_drops(accuracy_table, n) if accuracy_table is not None else None
        for cfg in NVDLA_CONFIGS:
            ppa = compose_system(split, ffe, nvdla_lookup(cfg))
            base_tops, base_topspw = baseline_at_area(ppa.total_area_mm2)
            ok_area = (constraints.area_budget_mm2 is None
                       or ppa.total_area_mm2 <= constraints.area_budget_mm2)
            if constraints.max_acc_drop_pct is None:
                ok_acc = True
            elif drops is None:
                ok_acc = False
            else:
                ok_acc = max(drops.values()) <= constraints.max_acc_drop_pct
            points.append(DesignPoint(
                n_fixed=n, config=cfg, ppa=ppa, accuracy_drops=drops,
                feasible_area=ok_area, feasible_accuracy=ok_acc,
                improve_tops=ppa.tops / base_tops,
                improve_topspw=ppa.tops_per_w / base_topspw,
            ))
    feasible = [p for p in points if p.feasible]
    if not feasible:
        binding = []
        if constraints.area_budget_mm2 is not None and not any(p.feasible_area for p in points):
            binding.append(f"area budget {constraints.area_budget_mm2} mm^2 "
                           f"(smallest point is {min(p.ppa.total_area_mm2 for p in points):.2f} mm^2)")
        if constraints.max_acc_drop_pct is not None and not any(p.feasible_accuracy for p in points):
            binding.append(f"max accuracy drop {constraints.max_acc_drop_pct}%")
        if not binding:
            binding.append("area and accuracy constraints jointly")
        raise InfeasibleError("no feasible design point", binding)
    frontier = [p for p in feasible if not any(_dominates(q, p) for q in feasible if q is not p)]
    for p in frontier:
        p.on_frontier = True
    metric = (lambda p: p.ppa.tops) if constraints.priority == "tops" else (lambda p: p.ppa.tops_per_w)
    ranked = sorted(feasible, key=lambda p: (-metric(p), p.ppa.total_area_mm2, p.n_fixed))
    return ExploreResult(points=points, frontier=frontier, ranked=ranked)


def tap_fallback_metrics(shaped: ShapedModel, pipe: FixedPipeline, cm: CostModel,
                         n_fixed: int, tap: int, config: str) -> SystemPpa:
    """System metrics for a dataset that streams from an intermediate tap,
    using only the first ``tap`` units of an ``n_fixed``-deep front-end.
    The full front-end area is still paid; idle tail stages are clock-gated.
    """
    if not 0 < tap <= n_fixed:
        raise ParameterError(f"tap {tap} must lie in 1..{n_fixed}")
    split = split_model(shaped, tap)
    full_area = estimate_ffe(pipe, cm, n_fixed).area_mm2
    active = estimate_ffe(pipe, cm, tap)
    ppa = compose_system(split, active, nvdla_lookup(config))
    ppa.total_area_mm2 = full_area + nvdla_lookup(config).area_mm2
    return ppa


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("n_fixed", "config", "area_mm2", "tops", "tops_per_w",
                  "improve_tops", "improve_topspw", "feasible")


def _point_row(p: DesignPoint) -> dict:
    return {
        "n_fixed": p.n_fixed,
        "config": p.config,
        "area_mm2": round(p.ppa.total_area_mm2, 4),
        "tops": round(p.ppa.tops, 4),
        "tops_per_w": round(p.ppa.tops_per_w, 4),
        "improve_tops": round(p.improve_tops, 4),
        "improve_topspw": round(p.improve_topspw, 4),
        "feasible": int(p.feasible),
    }


def emit_report(points: list[DesignPoint], out_dir: str | Path,
                formats: tuple[str, ...] = ("csv", "json", "svg")) -> list[Path]:
    """Write the design-point table and the design-space figures.

    The SVG is a matplotlib figure with one line series per front-end depth
    (each series tagged with a ``series-nfixed-N`` group id) for throughput
    and efficiency against area.
    """
    if not points:
        raise ParameterError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = [_point_row(p) for p in points]
    if "csv" in formats:
        path = out_dir / "report.csv"
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        written.append(path)
    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(json.dumps(rows, indent=1, sort_keys=True))
        written.append(path)
    if "svg" in formats:
        written.append(_plot_design_space(points, out_dir / "report.svg"))
        written.append(_plot_ffe_area(points, out_dir / "ffe_area.svg"))
    return written


def _plot_design_space(points: list[DesignPoint], path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    depths = sorted({p.n_fixed for p in points})
    fig, (ax_t, ax_e) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    for n in depths:
        series = sorted((p for p in points if p.n_fixed == n),
                        key=lambda p: p.ppa.total_area_mm2)
        areas = [p.ppa.total_area_mm2 for p in series]
        label = "programmable only" if n == 0 else f"{n} fixed"
        line, = ax_t.plot(areas, [p.ppa.tops for p in series], marker="o", ms=3, label=label)
        line.set_gid(f"series-nfixed-{n}-tops")
        line, = ax_e.plot(areas, [p.ppa.tops_per_w for p in series], marker="o", ms=3, label=label)
        line.set_gid(f"series-nfixed-{n}-topspw")
    ax_t.set_xlabel("total area (mm$^2$)")
    ax_t.set_ylabel("TOPS")
    ax_e.set_xlabel("total area (mm$^2$)")
    ax_e.set_ylabel("TOPS/W")
    ax_t.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _plot_ffe_area(points: list[DesignPoint], path: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    nv_area = {cfg: nvdla_lookup(cfg).area_mm2 for cfg in NVDLA_CONFIGS}
    by_depth: dict[int, float] = {}
    for p in points:
        by_depth[p.n_fixed] = p.ppa.total_area_mm2 - nv_area[p.config]
    depths = sorted(by_depth)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    line, = ax.plot(depths, [by_depth[d] for d in depths], marker="s", ms=4)
    line.set_gid("ffe-cumulative-area")
    ax.set_xlabel("fixed conv layers")
    ax.set_ylabel("front-end area (mm$^2$)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
