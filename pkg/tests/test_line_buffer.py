import numpy as np
import pytest

from fixyforge import line_buffer as lb
from fixyforge import model_ir as mir
from fixyforge.errors import UnsupportedOpError


def _layer(k, stride, cin=8, kind="conv2d"):
    return mir.Layer("l", kind, (k, k), stride, "same", cin, cin)


def test_plan_3x3_bank_arithmetic():
    spec = lb.plan_line_buffer(_layer(3, 1), (112, 112, 8), 8)
    assert spec.bank_count == 4
    assert spec.bank_depth == 112
    assert spec.sram_bits == 4 * 112 * 64 == 28672
    assert spec.shiftreg_bits == 3 * 3 * 8 * 8
    assert spec.fill_latency == 2 * 112 + 3


def test_plan_1x1_no_buffer():
    spec = lb.plan_line_buffer(_layer(1, 1), (56, 56, 16), 8)
    assert spec.bank_count == 0
    assert spec.sram_bits == 0
    assert spec.shiftreg_bits == 0
    assert spec.fill_latency == 0


def test_plan_5x5_scaling():
    spec = lb.plan_line_buffer(_layer(5, 1, cin=16), (56, 56, 16), 8)
    assert spec.bank_count == 6
    assert spec.shiftreg_bits == 5 * 5 * 16 * 8 == 3200


def test_plan_unsupported():
    with pytest.raises(UnsupportedOpError):
        lb.plan_line_buffer(_layer(4, 1), (16, 16, 8), 8)
    with pytest.raises(UnsupportedOpError):
        lb.plan_line_buffer(_layer(3, 3), (16, 16, 8), 8)


@pytest.mark.parametrize("k,expected", [(3, (3, 9)), (5, (5, 25)), (7, (7, 49)), (1, (1, 1))])
def test_sram_bandwidth_ratio(k, expected):
    spec = lb.plan_line_buffer(_layer(k, 1), (64, 64, 8), 8)
    assert lb.sram_bandwidth(spec) == expected


def test_schedule_single_stage():
    geom = lb.StageGeometry((3, 3), 1, "same", 112, 112)
    sched = lb.schedule_pipeline([geom], (112, 112, 8))
    assert sched.total_frame_cycles == 112 * 112 + (2 * 112 + 3)
    assert sched.stages[0].rate == 1.0
    assert sched.stages[0].reads_per_output == 3
    assert sched.stages[0].naive_reads_per_output == 9


def test_schedule_empty_passthrough():
    sched = lb.schedule_pipeline([], (24, 16, 3))
    assert sched.total_frame_cycles == 24 * 16


def test_schedule_rates_decay_by_stride():
    geoms = [
        lb.StageGeometry((3, 3), 2, "same", 32, 32),
        lb.StageGeometry((3, 3), 1, "same", 16, 16),
        lb.StageGeometry((3, 3), 2, "same", 16, 16),
    ]
    sched = lb.schedule_pipeline(geoms, (32, 32, 4))
    assert [st.rate for st in sched.stages] == [0.25, 0.25, 0.0625]


def test_schedule_same_pad_chain_matches_fill_sum():
    rng = np.random.default_rng(4)
    for _ in range(20):
        h, w = int(rng.integers(6, 40)), int(rng.integers(6, 40))
        geoms = []
        ch, cw = h, w
        for _ in range(int(rng.integers(1, 4))):
            k = int(rng.choice([1, 3, 5]))
            s = int(rng.choice([1, 2]))
            geoms.append(lb.StageGeometry((k, k), s, "same", ch, cw))
            ch = -(-ch // s)
            cw = -(-cw // s)
        sched = lb.schedule_pipeline(geoms, (h, w, 1))
        assert sched.total_frame_cycles == h * w + sum(g.fill_latency for g in geoms)


def test_trigger_indices_monotone_distinct():
    for k in (1, 3, 5):
        for s in (1, 2):
            for h, w in ((8, 8), (9, 7), (16, 5)):
                geom = lb.StageGeometry((k, k), s, "same", h, w)
                trig = lb.trigger_indices(geom)
                assert np.all(np.diff(trig) > 0)
                assert trig[-1] == h * w - 1  # last output aligns with last input


def test_ffe_latency_far_below_programmable_time(mobilenet_025_shaped, mobilenet_025_pipeline):
    # first 7 conv units streamed at 810 MHz: the pipeline adds only its fill
    # latency to a frame, far below the programmable part's frame time
    from fixyforge import ppa

    units = ppa.pipeline_units(mobilenet_025_pipeline)
    fill_cycles = sum(
        mobilenet_025_pipeline.buffers[i].fill_latency for unit in units[:7] for i in unit
    )
    fill_s = fill_cycles / 810e6
    split = mir.split_model(mobilenet_025_shaped, 7)
    prog_time = 2 * split.programmable_macs / (ppa.nvdla_lookup("E").tops * 1e12)
    assert fill_s < 0.1 * prog_time
