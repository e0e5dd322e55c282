"""``orbitdet`` command line.

Exit codes: 0 success, 1 domain failure (violations, every image failed),
2 usage or parse error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bench as B
from . import detect as D
from . import graph as G
from . import quant as Q
from .evaluate import GroundTruth, NoGroundTruthError, evaluate

IMAGE_SUFFIXES = {".ppm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp"}


class UsageError(Exception):
    """Bad input: reported on stderr, exit code 2."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(args, name, text):
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _load_graph(path):
    try:
        return G.load_graph(path)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot load graph {path}: {exc}") from exc


def _constraints(path):
    return G.OpConstraintSet.from_dict(_read_json(path)) if path else G.OpConstraintSet()


def _head_config(path):
    if not path:
        return D.HeadConfig()
    try:
        return D.HeadConfig.from_dict(_read_json(path))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad head config {path}: {exc}") from exc


def _list_images(paths):
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
        else:
            found.append(p)
    return found


def _input_id(g):
    ids = [n.id for n in g.nodes if n.op == "input"]
    if len(ids) != 1:
        raise UsageError(f"graph must have exactly one input node, has {len(ids)}")
    return ids[0]


def _table(title, header, rows):
    w0 = max(len(header[0]), *(len(str(r[0])) for r in rows)) if rows else len(header[0])
    lines = [title, f"{header[0]:<{w0}}  {header[1]}"]
    lines += [f"{str(a):<{w0}}  {b}" for a, b in rows]
    return "\n".join(lines) + "\n"


# -- graph ------------------------------------------------------------------------

def cmd_graph(args):
    g = _load_graph(args.graph)
    c = _constraints(args.constraints)
    if args.action == "validate":
        vs = G.validate(g, c)
        _emit(args, "violations.json", _dump([v.to_dict() for v in vs]))
        return 1 if vs else 0
    if args.action == "rewrite":
        new = G.rewrite_mish_to_leaky(g, args.alpha)
        target = Path(args.output) if args.output else Path(args.out or ".") / (Path(args.graph).stem + ".rewritten.json")
        G.save_graph(new, target)
        changed = [n.id for n, m in zip(g.nodes, new.nodes) if n != m]
        sys.stdout.write(_dump({"written": str(target), "rewritten_nodes": changed}))
        return 0
    if args.action == "partition":
        _emit(args, "partition.json", _dump(G.partition(g, c).to_dict()))
        return 0
    if args.action == "cost":
        d = G.DpuConfig(args.ops_per_clock, args.cores, args.clock_hz)
        est = G.estimate_cost(g, d)
        _emit(args, "cost.json", _dump({"ops": est.node_ops, "seconds": est.node_seconds,
                                        "total_ops": est.total_ops, "total_seconds": est.total_seconds}))
        return 0
    raise UsageError(f"unknown graph action {args.action}")


# -- quantize ---------------------------------------------------------------------

def _preprocess(path, cfg):
    x, meta = D.letterbox(D.read_image(path), cfg)
    return x[None], meta


def cmd_quantize(args):
    g = _load_graph(args.graph)
    cfg = _head_config(args.head_config)
    images = _list_images([args.calib_dir])
    if not images:
        raise UsageError(f"no calibration images in {args.calib_dir}")
    in_id = _input_id(g)
    try:
        samples = [{in_id: _preprocess(p, cfg)[0]} for p in images]
    except OSError as exc:
        raise UsageError(f"unreadable calibration image: {exc}") from exc
    table = Q.calibrate(g, samples)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table.to_json())
    return 0


# -- infer ------------------------------------------------------------------------

class Session:
    """Everything needed to run one image through the detector."""

    def __init__(self, graph, cfg, exec_mode="float", params=None, filter_mode="serial"):
        self.graph, self.cfg = graph, cfg
        self.exec_mode, self.params, self.filter_mode = exec_mode, params, filter_mode
        self.input_id = _input_id(graph)
        self.output_ids = [n.id for n in graph.nodes if n.op == "output"]

    def accelerate(self, x):
        out = G.execute(self.graph, {self.input_id: x}, self.exec_mode, self.params)
        return [out[i] for i in self.output_ids]

    def postprocess(self, heads, meta):
        return D.postprocess(heads, self.cfg, meta, self.filter_mode)

    def run(self, path):
        x, meta = _preprocess(path, self.cfg)
        return self.postprocess(self.accelerate(x), meta)


def _session(args):
    g = _load_graph(args.graph)
    params = None
    if args.exec == "fake_quant":
        if not args.params:
            raise UsageError("--exec fake_quant needs --params")
        try:
            params = Q.QuantTable.from_json(Path(args.params).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read params {args.params}: {exc}") from exc
    return Session(g, _head_config(args.head_config), args.exec, params, args.filter)


def cmd_infer(args):
    sess = _session(args)
    images = _list_images(args.images)
    if not images:
        raise UsageError("no input images")

    def one(path):
        try:
            dets = sess.run(path)
            return [D.Detection(d.class_id, d.score, d.bbox, image=path.name) for d in dets], None
        except (OSError, ValueError) as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        results = list(pool.map(one, images))
    records, summary, failed = [], [], 0
    for path, (dets, err) in zip(images, results):
        if err is not None:
            failed += 1
            summary.append({"image": path.name, "error": err})
            continue
        records += [d.to_dict() for d in dets]
        summary.append({"image": path.name, "detections": len(dets)})
    _emit(args, "detections.json", _dump(records))
    if args.out:
        (Path(args.out) / "summary.json").write_text(_dump(summary))
    for s in summary:
        msg = f"error: {s['error']}" if "error" in s else f"{s['detections']} detections"
        print(f"{s['image']}: {msg}", file=sys.stderr)
    return 1 if failed == len(images) else 0


# -- bench ------------------------------------------------------------------------

REAL_STAGES = ["preprocess", "accelerator", "postprocess"]


def _parse_stages(text):
    try:
        durations = [float(v) for v in text.split(",") if v.strip()]
        if not durations:
            raise ValueError("empty stage list")
        names = {2: REAL_STAGES[1:], 3: REAL_STAGES}.get(len(durations))
        return B.synthetic(*durations, names=names)
    except ValueError as exc:
        raise UsageError(f"invalid --stages {text!r}: {exc}") from exc


def _real_stages(args):
    sess = _session(args)
    images = _list_images(args.images)
    if not images:
        raise UsageError("no input images")
    frames = [images[i % len(images)] for i in range(args.frames)]
    # preprocessing is timed as its own stage so latency can be read with or without it
    stages = [
        B.StageSpec("preprocess", fn=lambda p: _preprocess(p, sess.cfg)),
        B.StageSpec("accelerator", fn=lambda xm: (sess.accelerate(xm[0]), xm[1])),
        B.StageSpec("postprocess", fn=lambda hm: sess.postprocess(*hm)),
    ]
    return stages, frames


def cmd_bench(args):
    if args.stages:
        stages, payloads = _parse_stages(args.stages), None
    elif args.graph:
        stages, payloads = _real_stages(args)
    else:
        raise UsageError("bench needs --stages or --graph with images")
    if args.mode == "latency":
        n = args.samples
        lat = B.measure_latency(stages, n, payloads[:n] if payloads else None)
        doc = {"mode": "latency", "frames": n, "latency_ms": lat}
        if args.deterministic:
            doc = {"mode": "latency", "frames": n}
        _emit(args, "latency.json", _dump(doc))
        if not args.deterministic:
            print(_table("Inference latency", ("Sample", "Latency ms"),
                         [(i + 1, f"{v:.1f} ms") for i, v in enumerate(lat)]), file=sys.stderr)
        return 0
    run = B.run_pipelined if args.mode == "pipelined" else B.run_sequential
    stats = run(stages, args.frames, payloads)
    _emit(args, "stats.json", stats.to_json(args.deterministic))
    if not args.deterministic:
        rows = [(f"{name} throughput", f"{fps:.1f} FPS") for name, fps in stats.stage_fps.items()]
        rows.append((f"{stats.mode} throughput", f"{stats.fps:.1f} FPS"))
        print(_table("Throughput", ("Tested part", "Frame Rate"), rows), file=sys.stderr)
    return 0


# -- eval -------------------------------------------------------------------------

def cmd_eval(args):
    raw_dets = _read_json(args.detections)
    raw_gts = _read_json(args.annotations)
    try:
        dets = [D.Detection.from_dict(d) for d in raw_dets]
        gts = [GroundTruth.from_dict(g) for g in raw_gts]
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed detections/annotations: {exc}") from exc
    try:
        report = evaluate(dets, gts, args.iou)
    except NoGroundTruthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _emit(args, "report.json", report.to_json())
    rows = [(c, f"{100 * ap:.2f}%") for c, ap in sorted(report.ap.items())]
    rows.append((f"mAP@{args.iou:g}", f"{100 * report.map:.2f}%"))
    print(_table("Average precision", ("Class", "Average Precision"), rows), file=sys.stderr)
    return 0


def cmd_demo(args):
    from .demo import write_demo

    out = write_demo(args.directory, args.images)
    print(str(out))
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of option defaults (run manifest)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="directory for report files")
    common.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                        help="omit timing fields from reports")

    p = argparse.ArgumentParser(prog="orbitdet", parents=[common], description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", parents=[common], help="validate / rewrite / partition / cost a graph")
    g.add_argument("action", choices=["validate", "rewrite", "partition", "cost"])
    g.add_argument("graph")
    g.add_argument("--constraints", help="OpConstraintSet JSON")
    g.add_argument("--alpha", type=float, default=0.1, help="leaky-ReLU slope for rewrite")
    g.add_argument("-o", "--output", help="rewritten graph path")
    g.add_argument("--ops-per-clock", type=int, default=4096)
    g.add_argument("--cores", type=int, default=1)
    g.add_argument("--clock-hz", type=float, default=300e6)
    g.set_defaults(func=cmd_graph)

    q = sub.add_parser("quantize", parents=[common], help="calibrate INT8 params")
    q.add_argument("graph")
    q.add_argument("calib_dir")
    q.add_argument("-o", "--output", required=True, help="params JSON path")
    q.add_argument("--head-config")
    q.set_defaults(func=cmd_quantize)

    def run_opts(sp):
        sp.add_argument("--graph")
        sp.add_argument("--params")
        sp.add_argument("--head-config")
        sp.add_argument("--exec", choices=["float", "fake_quant"], default="float")
        sp.add_argument("--filter", choices=["serial", "parallel"], default="serial")

    i = sub.add_parser("infer", parents=[common], help="detect objects in images")
    run_opts(i)
    i.add_argument("images", nargs="*", help="image files or directories")
    i.add_argument("--workers", type=int, default=1)
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", parents=[common], help="pipeline throughput / latency")
    run_opts(b)
    b.add_argument("images", nargs="*")
    b.add_argument("--stages", help="synthetic stage durations in ms, comma separated")
    b.add_argument("--mode", choices=["sequential", "pipelined", "latency"], default="sequential")
    b.add_argument("--frames", type=int, default=40)
    b.add_argument("--samples", type=int, default=3)
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval", parents=[common], help="per-class AP and mAP")
    e.add_argument("detections")
    e.add_argument("annotations")
    e.add_argument("--iou", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("demo", parents=[common], help="write demo graphs and images")
    d.add_argument("directory")
    d.add_argument("--images", type=int, default=4)
    d.set_defaults(func=cmd_demo)
    return p


_MANIFEST_KEYS = {"graph", "params", "head_config", "images", "exec", "filter", "mode",
                  "frames", "samples", "stages", "workers", "iou", "out", "deterministic"}


def parse_args(argv):
    """Parse ``argv``; a ``--config`` manifest supplies defaults that explicit
    flags override."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        manifest = {k.replace("-", "_"): v for k, v in _read_json(known.config).items()}
        unknown = set(manifest) - _MANIFEST_KEYS
        if unknown:
            raise UsageError(f"unknown manifest keys: {sorted(unknown)}")
        if isinstance(manifest.get("images"), str):
            manifest["images"] = [manifest["images"]]
        for sp in parser._subparsers._group_actions[0].choices.values():
            sp.set_defaults(**manifest)
    args = parser.parse_args(argv)
    if getattr(args, "images", None) == [] and known.config:
        args.images = manifest.get("images", [])
    for key, default in (("config", None), ("out", None), ("deterministic", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except G.GraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
