import json
import time

import numpy as np
import pytest

from orbitdet import bench as B


def test_busy_wait_accuracy():
    for ms in (0.5, 5.0, 20.0):
        t = time.perf_counter()
        B.busy_wait(ms / 1000)
        took = (time.perf_counter() - t) * 1000
        assert ms <= took < ms + 2.0


class TestStageSpec:
    def test_needs_exactly_one_kind(self):
        with pytest.raises(ValueError):
            B.StageSpec("x")
        with pytest.raises(ValueError):
            B.StageSpec("x", 5.0, fn=lambda p: p)

    def test_positive_duration(self):
        with pytest.raises(ValueError):
            B.StageSpec("x", 0.0)

    def test_passthrough(self):
        assert B.StageSpec("x", 0.1)("payload") == "payload"
        assert B.StageSpec("x", fn=lambda p: p * 2)(3) == 6


class TestSequential:
    def test_throughput_matches_sum(self):
        s = B.run_sequential(B.synthetic(10, 15), 20)
        assert s.frames == 20 and s.mode == "sequential"
        assert s.fps == pytest.approx(1000 / 25, rel=0.05)
        assert s.stage_ms["stage0"] == pytest.approx(10, rel=0.05)
        assert s.stage_ms["stage1"] == pytest.approx(15, rel=0.05)
        assert s.mean_latency_ms == pytest.approx(sum(s.stage_ms.values()), rel=0.05)

    def test_latency_at_least_stage_sum(self):
        s = B.run_sequential(B.synthetic(3, 4), 10)
        assert min(s.latency_ms) >= 7.0

    def test_zero_work(self):
        s = B.run_sequential([B.StageSpec("noop", fn=lambda p: p)], 50)
        assert max(s.latency_ms) < 1.0 and s.fps > 1000

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            B.run_sequential([], 3)
        with pytest.raises(ValueError):
            B.run_sequential(B.synthetic(1), 0)


class TestPipelined:
    def test_slowest_stage_bound(self):
        s = B.run_pipelined(B.synthetic(10, 15), 30)
        bound = 1000 / 15
        assert 0.9 * bound <= s.fps <= 1.02 * bound
        assert s.steady_fps <= 1.02 * bound

    def test_equal_stages_double(self):
        seq = B.run_sequential(B.synthetic(10, 10), 30)
        pip = B.run_pipelined(B.synthetic(10, 10), 30)
        assert pip.fps == pytest.approx(100, rel=0.1)
        assert pip.fps / seq.fps == pytest.approx(2.0, rel=0.1)

    def test_not_slower_than_sequential(self):
        stages = B.synthetic(4, 6)
        assert B.run_pipelined(stages, 20).fps >= B.run_sequential(stages, 20).fps

    def test_one_frame_no_overlap(self):
        seq = B.run_sequential(B.synthetic(10, 15), 1)
        pip = B.run_pipelined(B.synthetic(10, 15), 1)
        assert pip.latency_ms[0] == pytest.approx(seq.latency_ms[0], rel=0.05)

    def test_latency_at_least_stage_sum(self):
        s = B.run_pipelined(B.synthetic(3, 5), 15)
        assert min(s.latency_ms) >= 8.0

    def test_outputs_in_order_and_deterministic(self):
        stages = [B.StageSpec("sq", fn=lambda x: x * x), B.StageSpec("neg", fn=lambda x: -x)]
        pip = B.run_pipelined(stages, 50, payloads=range(50))
        seq = B.run_sequential(stages, 50, payloads=range(50))
        assert pip.outputs == seq.outputs == [-(i * i) for i in range(50)]

    def test_three_stages(self):
        s = B.run_pipelined(B.synthetic(4, 8, 4), 20)
        assert s.fps <= 1.02 * 125 and s.fps >= 0.85 * 125

    def test_stage_error_propagates(self):
        def boom(x):
            if x == 3:
                raise RuntimeError("stage failed")
            return x

        stages = [B.StageSpec("a", fn=lambda x: x), B.StageSpec("b", fn=boom), B.StageSpec("c", fn=lambda x: x)]
        with pytest.raises(RuntimeError, match="stage failed"):
            B.run_pipelined(stages, 10, payloads=range(10))


class TestLatency:
    def test_samples(self):
        lat = B.measure_latency(B.synthetic(5, 7), 3)
        assert len(lat) == 3
        assert all(12 <= v < 12 * 1.05 + 0.5 for v in lat)

    def test_zero_work(self):
        assert max(B.measure_latency([B.StageSpec("noop", fn=lambda p: p)], 3)) < 1.0


def test_report_json():
    s = B.run_sequential(B.synthetic(1, 2, names=["accelerator", "postprocess"]), 3)
    doc = json.loads(s.to_json())
    assert {"mode", "frames", "stage_ms", "latency_ms", "fps"} <= set(doc)
    assert set(doc["stage_ms"]) == {"accelerator", "postprocess"} and len(doc["latency_ms"]) == 3
    assert json.loads(s.to_json(deterministic=True)) == {
        "mode": "sequential", "frames": 3, "stages": ["accelerator", "postprocess"]}
