"""Neural-graph IR and the compiler-side passes for a DPU-style accelerator:
constraint validation, the mish -> leaky-ReLU rewrite, accelerator/host
partitioning, a reference executor (float and fake-quant), and a first-order
cost model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .quant import QuantTable, fake_quant

OP_KINDS = ("input", "conv2d", "max_pool2d", "activation", "upsample2x", "concat", "add", "output")
ACTIVATIONS = ("mish", "leaky_relu", "linear")
_ALIASES = {"max_pool": "max_pool2d", "upsample": "upsample2x", "conv": "conv2d"}
_ARITY = {"conv2d": 1, "max_pool2d": 1, "activation": 1, "upsample2x": 1, "output": 1, "add": 2}


class GraphError(ValueError):
    """The graph is structurally invalid (dangling reference, cycle, bad arity)."""


class MissingQuantParams(KeyError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    attrs: dict = field(default_factory=dict)
    inputs: tuple = ()


@dataclass
class Graph:
    """Nodes in topological order plus the weight/bias arrays they reference.

    Conv nodes name their parameters by reference (``attrs["weights"]``,
    ``attrs["bias"]``); ``tensors`` maps those references to arrays.
    """

    nodes: list
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = [n if isinstance(n, Node) else Node(**n) for n in self.nodes]
        self.nodes = [replace(n, inputs=tuple(n.inputs)) for n in self.nodes]
        check_structure(self)

    def __getitem__(self, node_id) -> Node:
        return self._index[node_id]

    @property
    def _index(self):
        return {n.id: n for n in self.nodes}

    def consumers(self):
        out = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for i in n.inputs:
                out[i].append(n.id)
        return out

    def weight(self, node):
        return self.tensors[node.attrs["weights"]]

    def bias(self, node):
        ref = node.attrs.get("bias")
        if ref is None:
            return np.zeros(self.weight(node).shape[0], dtype=np.float32)
        return self.tensors[ref]

    @property
    def compute_nodes(self):
        return [n for n in self.nodes if n.op not in ("input", "output")]


def check_structure(g: Graph):
    seen = set()
    for n in g.nodes:
        if n.id in seen:
            raise GraphError(f"duplicate node id {n.id!r}")
        if n.op not in OP_KINDS:
            raise GraphError(f"node {n.id!r}: unknown op {n.op!r}")
        for i in n.inputs:
            if i not in seen:
                # refers forward or nowhere: either dangling or out of topological order
                known = any(m.id == i for m in g.nodes)
                kind = "not in topological order (or cyclic)" if known else "dangling"
                raise GraphError(f"node {n.id!r}: input {i!r} is {kind}")
        if n.op == "input":
            if n.inputs:
                raise GraphError(f"input node {n.id!r} has inputs")
        elif not n.inputs:
            raise GraphError(f"node {n.id!r} has no inputs")
        want = _ARITY.get(n.op)
        if want is not None and len(n.inputs) != want:
            raise GraphError(f"node {n.id!r} ({n.op}) takes {want} input(s), got {len(n.inputs)}")
        if n.op == "concat" and len(n.inputs) < 2:
            raise GraphError(f"concat node {n.id!r} needs >= 2 inputs")
        if n.op == "activation" and n.attrs.get("fn") not in ACTIVATIONS:
            raise GraphError(f"node {n.id!r}: unknown activation {n.attrs.get('fn')!r}")
        if n.op == "conv2d":
            for key in ("weights", "bias"):
                ref = n.attrs.get(key)
                if ref is None and key == "bias":
                    continue
                if ref not in g.tensors:
                    raise GraphError(f"node {n.id!r}: {key} reference {ref!r} not loaded")
        seen.add(n.id)
    for n in g.nodes:
        if n.op == "output" and any(n.id in m.inputs for m in g.nodes):
            raise GraphError(f"output node {n.id!r} has consumers")


# -- JSON ---------------------------------------------------------------------

def graph_from_dict(doc, tensors=None, base_dir=None) -> Graph:
    tensors = dict(tensors or {})
    nodes = []
    for raw in doc["nodes"]:
        op = _ALIASES.get(raw["op"], raw["op"])
        attrs = dict(raw.get("attrs", {}))
        if op == "conv2d" and base_dir is not None:
            for key in ("weights", "bias"):
                ref = attrs.get(key)
                if ref is not None and ref not in tensors:
                    tensors[ref] = T.load(Path(base_dir) / ref)
        nodes.append(Node(raw["id"], op, attrs, tuple(raw.get("inputs", ()))))
    return Graph(nodes, tensors)


def graph_to_dict(g: Graph):
    return {"nodes": [{"id": n.id, "op": n.op, "attrs": n.attrs, "inputs": list(n.inputs)} for n in g.nodes]}


def load_graph(path) -> Graph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: {exc}") from exc
    return graph_from_dict(doc, base_dir=path.parent)


def save_graph(g: Graph, path):
    """Write the graph JSON; relative tensor references are written alongside
    it if not already present."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for ref, arr in g.tensors.items():
        target = path.parent / ref
        if not target.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
            T.save(target, arr)
    path.write_text(json.dumps(graph_to_dict(g), indent=2) + "\n")


# -- validation and rewriting -------------------------------------------------

@dataclass(frozen=True)
class OpConstraintSet:
    supported_op_kinds: frozenset = frozenset(
        {"conv2d", "max_pool2d", "activation", "upsample2x", "concat", "add"}
    )
    max_pool_kernel_limit: int = 8
    supported_activations: frozenset = frozenset({"leaky_relu", "linear"})

    def __post_init__(self):
        if self.max_pool_kernel_limit < 1:
            raise ValueError("max_pool_kernel_limit must be >= 1")

    @classmethod
    def from_dict(cls, doc):
        kw = {}
        if "supported_op_kinds" in doc:
            kw["supported_op_kinds"] = frozenset(doc["supported_op_kinds"])
        if "max_pool_kernel_limit" in doc:
            kw["max_pool_kernel_limit"] = int(doc["max_pool_kernel_limit"])
        if "supported_activations" in doc:
            kw["supported_activations"] = frozenset(doc["supported_activations"])
        return cls(**kw)


@dataclass(frozen=True)
class Violation:
    node_id: str
    rule: str  # unsupported_op | pool_kernel_too_large | unsupported_activation
    detail: str

    def to_dict(self):
        return {"node_id": self.node_id, "rule": self.rule, "detail": self.detail}


def node_violations(n: Node, c: OpConstraintSet):
    if n.op in ("input", "output"):
        return []
    if n.op not in c.supported_op_kinds:
        return [Violation(n.id, "unsupported_op", f"op {n.op} not supported by the accelerator")]
    out = []
    if n.op == "max_pool2d" and n.attrs["k"] > c.max_pool_kernel_limit:
        out.append(Violation(
            n.id, "pool_kernel_too_large",
            f"pool kernel {n.attrs['k']} > limit {c.max_pool_kernel_limit}",
        ))
    if n.op == "activation" and n.attrs["fn"] not in c.supported_activations:
        out.append(Violation(n.id, "unsupported_activation", f"activation {n.attrs['fn']} not supported"))
    return out


def validate(g: Graph, c: OpConstraintSet | None = None):
    c = c or OpConstraintSet()
    return [v for n in g.nodes for v in node_violations(n, c)]


def rewrite_mish_to_leaky(g: Graph, alpha: float = 0.1) -> Graph:
    nodes = []
    for n in g.nodes:
        if n.op == "activation" and n.attrs.get("fn") == "mish":
            n = replace(n, attrs={**n.attrs, "fn": "leaky_relu", "alpha": alpha})
        nodes.append(n)
    return Graph(nodes, g.tensors)


# -- partitioning -------------------------------------------------------------

ACCELERATOR, HOST = "accelerator", "host"


@dataclass(frozen=True)
class Segment:
    target: str
    node_ids: tuple


@dataclass(frozen=True)
class Partition:
    segments: tuple

    def to_dict(self):
        return {"segments": [{"target": s.target, "nodes": list(s.node_ids)} for s in self.segments]}


def partition(g: Graph, c: OpConstraintSet | None = None) -> Partition:
    """Greedy sweep in topological order: maximal runs of clean nodes go to
    the accelerator, each violating node gets its own host segment."""
    c = c or OpConstraintSet()
    segments, run = [], []
    for n in g.compute_nodes:
        if node_violations(n, c):
            if run:
                segments.append(Segment(ACCELERATOR, tuple(run)))
                run = []
            segments.append(Segment(HOST, (n.id,)))
        else:
            run.append(n.id)
    if run:
        segments.append(Segment(ACCELERATOR, tuple(run)))
    return Partition(tuple(segments))


def subgraph(g: Graph, node_ids):
    """Cut ``node_ids`` out as a standalone graph.

    External producers become input nodes (same id); every member whose value
    is needed outside the cut gets an output node. Returns the subgraph and a
    map from its output-node ids to the producing member ids.
    """
    members = set(node_ids)
    consumers = g.consumers()
    taken = {n.id for n in g.nodes}
    nodes, outputs, boundary = [], {}, []
    for n in g.nodes:
        if n.id not in members:
            continue
        for i in n.inputs:
            if i not in members and i not in boundary:
                boundary.append(i)
    nodes = [Node(i, "input") for i in boundary]
    nodes += [n for n in g.nodes if n.id in members]
    for n in g.nodes:
        if n.id in members and any(m not in members for m in consumers[n.id]):
            oid = f"{n.id}:out"
            while oid in taken:
                oid += "_"
            taken.add(oid)
            outputs[oid] = n.id
            nodes.append(Node(oid, "output", {}, (n.id,)))
    refs = {n.attrs[k] for n in nodes if n.op == "conv2d" for k in ("weights", "bias") if k in n.attrs}
    return Graph(nodes, {r: g.tensors[r] for r in refs}), outputs


# -- execution ----------------------------------------------------------------

def _run_node(g, n, args, mode, qparams):
    a = n.attrs
    if n.op == "conv2d":
        w, b = g.weight(n), g.bias(n)
        if mode == "fake_quant":
            w = fake_quant(w, _qp(qparams.weights, n.id, "weight"))
        return T.conv2d(args[0], w, b, a.get("stride", 1), a.get("pad", 0))
    if n.op == "max_pool2d":
        return T.max_pool2d(args[0], a["k"], a.get("stride", a["k"]))
    if n.op == "activation":
        fn = a["fn"]
        if fn == "mish":
            return T.mish(args[0])
        if fn == "leaky_relu":
            return T.leaky_relu(args[0], a.get("alpha", 0.1))
        return T.as_f32(args[0])
    if n.op == "upsample2x":
        return T.upsample_nearest2x(args[0])
    if n.op == "concat":
        out = args[0]
        for x in args[1:]:
            out = T.concat_channels(out, x)
        return out
    if n.op == "add":
        return T.add(args[0], args[1])
    if n.op == "output":
        return args[0]
    raise GraphError(f"cannot execute op {n.op!r}")


def _qp(table, key, what):
    try:
        return table[key]
    except KeyError:
        raise MissingQuantParams(f"no {what} quant params for node {key!r}") from None


def execute(g: Graph, inputs, mode="float", qparams: QuantTable | None = None, keep_all=False):
    """Run the graph in topological order.

    Returns ``{output_node_id: tensor}``, or every node's value when
    ``keep_all``. In ``fake_quant`` mode every node output (inputs included)
    is quantized and dequantized with its edge params, and conv weights are
    fake-quantized before use.
    """
    if mode not in ("float", "fake_quant"):
        raise ValueError(f"unknown execution mode {mode!r}")
    if mode == "fake_quant" and qparams is None:
        raise MissingQuantParams("fake_quant mode needs qparams")
    env = {}
    for n in g.nodes:
        if n.op == "input":
            if n.id not in inputs:
                raise T.ShapeError(f"missing input tensor for node {n.id!r}")
            x = T.as_f32(inputs[n.id])
            want = n.attrs.get("shape")
            if want is not None and tuple(x.shape) != tuple(want):
                raise T.ShapeError(f"input {n.id!r}: expected shape {tuple(want)}, got {x.shape}")
        else:
            x = _run_node(g, n, [env[i] for i in n.inputs], mode, qparams)
        if mode == "fake_quant" and n.op != "output":
            x = fake_quant(x, _qp(qparams.edges, n.id, "edge"))
        env[n.id] = x
    if keep_all:
        return env
    return {n.id: env[n.id] for n in g.nodes if n.op == "output"}


def execute_partitioned(g: Graph, part: Partition, inputs, mode="float", qparams=None):
    """Execute segment by segment, each through :func:`execute`."""
    env = {k: T.as_f32(v) for k, v in inputs.items()}
    for seg in part.segments:
        sub, outs = subgraph(g, seg.node_ids)
        feed = {n.id: env[n.id] for n in sub.nodes if n.op == "input"}
        res = execute(sub, feed, mode, qparams)
        for oid, producer in outs.items():
            env[producer] = res[oid]
    return {n.id: env[n.inputs[0]] for n in g.nodes if n.op == "output"}


# -- shapes and cost ----------------------------------------------------------

def infer_shapes(g: Graph, input_shapes=None):
    input_shapes = input_shapes or {}
    shapes = {}
    for n in g.nodes:
        a = n.attrs
        ins = [shapes[i] for i in n.inputs]
        if n.op == "input":
            s = input_shapes.get(n.id, a.get("shape"))
            if s is None:
                raise T.ShapeError(f"input {n.id!r} has no shape")
            s = tuple(s)
        elif n.op == "conv2d":
            nb, h, w, _ = ins[0]
            o, kh, kw, _ = g.weight(n).shape
            st, p = a.get("stride", 1), a.get("pad", 0)
            s = (nb, (h + 2 * p - kh) // st + 1, (w + 2 * p - kw) // st + 1, o)
        elif n.op == "max_pool2d":
            nb, h, w, ch = ins[0]
            k = a["k"]
            st = a.get("stride", k)
            s = (nb, (h - k) // st + 1, (w - k) // st + 1, ch)
        elif n.op == "upsample2x":
            nb, h, w, ch = ins[0]
            s = (nb, 2 * h, 2 * w, ch)
        elif n.op == "concat":
            s = ins[0][:3] + (sum(x[3] for x in ins),)
        else:
            s = ins[0]
        shapes[n.id] = s
    return shapes


@dataclass(frozen=True)
class DpuConfig:
    ops_per_clock: int = 4096
    cores: int = 1
    clock_hz: float = 300e6

    def __post_init__(self):
        if self.ops_per_clock not in (512, 1024, 2048, 4096):
            raise ValueError(f"ops_per_clock must be one of 512/1024/2048/4096, got {self.ops_per_clock}")
        if not 1 <= self.cores <= 4:
            raise ValueError(f"cores must be in [1, 4], got {self.cores}")
        if not self.clock_hz > 0:
            raise ValueError("clock_hz must be positive")

    @property
    def ops_per_second(self):
        return self.ops_per_clock * self.cores * self.clock_hz


@dataclass(frozen=True)
class CostEstimate:
    node_ops: dict
    node_seconds: dict
    total_ops: int
    total_seconds: float


def node_ops(g: Graph, shapes=None):
    """Operation count per node: 2 per MAC for conv, one per output element
    otherwise, zero for graph inputs/outputs."""
    shapes = shapes or infer_shapes(g)
    ops = {}
    for n in g.nodes:
        out = shapes[n.id]
        if n.op in ("input", "output"):
            ops[n.id] = 0
        elif n.op == "conv2d":
            _, kh, kw, c = g.weight(n).shape
            ops[n.id] = 2 * int(np.prod(out)) * kh * kw * c
        else:
            ops[n.id] = int(np.prod(out))
    return ops


def estimate_cost(g: Graph, d: DpuConfig, input_shapes=None) -> CostEstimate:
    ops = node_ops(g, infer_shapes(g, input_shapes))
    rate = d.ops_per_second
    total = sum(ops.values())
    return CostEstimate(ops, {k: v / rate for k, v in ops.items()}, total, total / rate)
