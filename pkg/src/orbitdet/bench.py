"""Two-stage (accelerator / host post-processing) pipeline harness.

Stages are either real callables or synthetic fixed-duration busy-waits, so
the throughput and latency tables can be reproduced without hardware.
"""
from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field

DEFAULT_WARMUP = 3
SPIN_MARGIN_S = 0.002
_DONE = object()


def busy_wait(seconds: float):
    """Block until ``seconds`` have elapsed on the monotonic clock.

    Sleeps until ``SPIN_MARGIN_S`` before the deadline, then spins. Pure
    spinning would hold the GIL (and, on a single core, the CPU) and starve
    the other stage of a pipelined run.
    """
    deadline = time.perf_counter() + seconds
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return
        if remaining > SPIN_MARGIN_S:
            time.sleep(remaining - SPIN_MARGIN_S)
        else:
            time.sleep(0)


@dataclass(frozen=True)
class StageSpec:
    name: str
    duration_ms: float | None = None
    fn: object = None  # callable(payload) -> payload

    def __post_init__(self):
        if (self.duration_ms is None) == (self.fn is None):
            raise ValueError(f"stage {self.name!r}: give exactly one of duration_ms or fn")
        if self.duration_ms is not None and not self.duration_ms > 0:
            raise ValueError(f"stage {self.name!r}: synthetic duration must be > 0")

    def __call__(self, payload):
        if self.fn is not None:
            return self.fn(payload)
        busy_wait(self.duration_ms / 1000.0)
        return payload


def synthetic(*durations_ms, names=None):
    names = names or [f"stage{i}" for i in range(len(durations_ms))]
    return [StageSpec(n, float(d)) for n, d in zip(names, durations_ms)]


@dataclass
class PipelineStats:
    mode: str
    frames: int
    stage_ms: dict  # name -> mean ms
    latency_ms: list  # per frame, frame-in to result-out
    fps: float  # frames / total wall time
    steady_fps: float  # excludes warm-up frames
    wall_s: float
    outputs: list = field(default_factory=list, repr=False)

    @property
    def mean_latency_ms(self):
        return sum(self.latency_ms) / len(self.latency_ms)

    @property
    def stage_fps(self):
        return {k: (1000.0 / v if v > 0 else float("inf")) for k, v in self.stage_ms.items()}

    def to_dict(self, deterministic=False):
        if deterministic:
            return {"mode": self.mode, "frames": self.frames, "stages": list(self.stage_ms)}
        return {
            "mode": self.mode,
            "frames": self.frames,
            "stage_ms": self.stage_ms,
            "latency_ms": self.latency_ms,
            "fps": self.fps,
            "steady_fps": self.steady_fps,
            "stage_fps": self.stage_fps,
        }

    def to_json(self, deterministic=False):
        return json.dumps(self.to_dict(deterministic), indent=2) + "\n"


def _check(stages, frames):
    if not stages:
        raise ValueError("need at least one stage")
    if frames < 1:
        raise ValueError("need at least one frame")


def _payloads(payloads, frames):
    if payloads is None:
        return list(range(frames))
    payloads = list(payloads)
    if len(payloads) != frames:
        raise ValueError(f"{len(payloads)} payloads for {frames} frames")
    return payloads


def _steady(done_times, t0, warmup):
    n = len(done_times)
    w = min(warmup, n - 1)
    start = t0 if w == 0 else done_times[w - 1]
    span = done_times[-1] - start
    return (n - w) / span if span > 0 else float("inf")


def _stats(mode, stages, per_stage, starts, ends, t0, t1, outputs, warmup):
    frames = len(ends)
    wall = t1 - t0
    return PipelineStats(
        mode=mode,
        frames=frames,
        stage_ms={s.name: 1000.0 * sum(v) / frames for s, v in zip(stages, per_stage)},
        latency_ms=[1000.0 * (e - s) for s, e in zip(starts, ends)],
        fps=frames / wall if wall > 0 else float("inf"),
        steady_fps=_steady(ends, t0, warmup),
        wall_s=wall,
        outputs=outputs,
    )


def run_sequential(stages, frames, payloads=None, warmup=DEFAULT_WARMUP) -> PipelineStats:
    """One frame at a time through every stage; one worker."""
    _check(stages, frames)
    items = _payloads(payloads, frames)
    per_stage = [[] for _ in stages]
    starts, ends, outputs = [], [], []
    t0 = time.perf_counter()
    for x in items:
        fs = time.perf_counter()
        for i, st in enumerate(stages):
            a = time.perf_counter()
            x = st(x)
            per_stage[i].append(time.perf_counter() - a)
        starts.append(fs)
        ends.append(time.perf_counter())
        outputs.append(x)
    return _stats("sequential", stages, per_stage, starts, ends, t0, time.perf_counter(), outputs, warmup)


def run_pipelined(stages, frames, payloads=None, warmup=DEFAULT_WARMUP) -> PipelineStats:
    """One worker thread per stage, joined by depth-1 hand-off queues, so the
    accelerator stage works on frame k+1 while the host handles frame k."""
    _check(stages, frames)
    items = _payloads(payloads, frames)
    n = len(stages)
    links = [queue.Queue(maxsize=1) for _ in range(n - 1)]
    per_stage = [[] for _ in stages]
    starts = [0.0] * frames
    ends = [0.0] * frames
    outputs = [None] * frames
    errors = []

    def worker(i):
        st = stages[i]
        try:
            k = 0
            while True:
                if i == 0:
                    if k == frames:
                        break
                    x = items[k]
                else:
                    got = links[i - 1].get()
                    if got is _DONE:
                        break
                    k, x = got
                a = time.perf_counter()
                if i == 0:
                    starts[k] = a
                x = st(x)
                b = time.perf_counter()
                per_stage[i].append(b - a)
                if i == n - 1:
                    ends[k] = b
                    outputs[k] = x
                else:
                    links[i].put((k, x))
                k += 1
        except BaseException as exc:  # noqa: BLE001
            errors.append(exc)
            if i > 0:  # unblock upstream workers
                while links[i - 1].get() is not _DONE:
                    pass
        finally:
            if i < n - 1:
                links[i].put(_DONE)

    threads = [threading.Thread(target=worker, args=(i,), name=s.name, daemon=True)
               for i, s in enumerate(stages)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    t1 = time.perf_counter()
    if errors:
        raise errors[0]
    return _stats("pipelined", stages, per_stage, starts, ends, t0, t1, outputs, warmup)


def measure_latency(stages, samples=3, payloads=None):
    """Per-sample end-to-end wall time (ms), stages run back to back."""
    return run_sequential(stages, samples, payloads, warmup=0).latency_ms
