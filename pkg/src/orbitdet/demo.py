"""Tiny detector graphs and synthetic scenes for trying the toolchain end to
end without trained weights."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .detect import HeadConfig, write_ppm
from .graph import Graph, Node, save_graph

BRIGHT_GAIN = 20.0
BRIGHT_LEVEL = 0.75  # mean intensity where objectness crosses 0.5; above the 0.5 pad gray


def tiny_detector(cfg: HeadConfig = HeadConfig(), weights="zeros", activation="leaky_relu", seed=0):
    """A 3-head graph whose outputs have exactly the shapes ``decode`` wants.

    ``weights``:
      - ``"zeros"``: every head emits 0, so every joint score is exactly 0.25.
      - ``"crafted"``: on the middle head, objectness follows input brightness
        (bright cells score ~0.98, dark ~0.007) and class 0 always wins; box
        offsets are 0. The other heads never fire.
      - ``"random"``: small random weights, for kernel and quantization tests.
    """
    rng = np.random.default_rng(seed)
    s0 = cfg.strides[0]
    c_out = [len(a) * (5 + cfg.num_classes) for a in cfg.anchors]
    tensors = {}
    nodes = [Node("image", "input", {"shape": [1, cfg.input_size, cfg.input_size, 3]})]
    nodes.append(Node("pool_in", "max_pool2d", {"k": s0, "stride": s0}, ("image",)))
    feat = 3
    bw = np.zeros((feat, 3, 3, 3), np.float32)
    for c in range(3):  # identity 3x3 stem in the zeros/crafted variants
        bw[c, 1, 1, c] = 1.0
    if weights == "random":
        bw = rng.normal(0, 0.3, bw.shape).astype(np.float32)
    tensors["stem.w"], tensors["stem.b"] = bw, np.zeros(feat, np.float32)
    nodes.append(Node("stem", "conv2d", {"weights": "stem.w", "bias": "stem.b", "stride": 1, "pad": 1}, ("pool_in",)))
    act = {"fn": activation, "alpha": 0.1} if activation == "leaky_relu" else {"fn": activation}
    nodes.append(Node("stem_act", "activation", act, ("stem",)))
    prev = "stem_act"
    for i, s in enumerate(cfg.strides):
        if i > 0:
            k = s // cfg.strides[i - 1]
            nodes.append(Node(f"down{i}", "max_pool2d", {"k": k, "stride": k}, (prev,)))
            prev = f"down{i}"
        w = np.zeros((c_out[i], 1, 1, feat), np.float32)
        b = np.zeros(c_out[i], np.float32)
        per = 5 + cfg.num_classes
        if weights == "crafted":
            live = i == len(cfg.strides) // 2
            for a in range(len(cfg.anchors[i])):
                w[a * per + 4, 0, 0, :] = BRIGHT_GAIN / 3 if live else 0.0
                b[a * per + 4] = -BRIGHT_GAIN * BRIGHT_LEVEL
                b[a * per + 5] = 4.0
                b[a * per + 6:(a + 1) * per] = -4.0
        elif weights == "random":
            w = rng.normal(0, 0.3, w.shape).astype(np.float32)
            b = rng.normal(0, 0.1, b.shape).astype(np.float32)
        tensors[f"head{s}.w"], tensors[f"head{s}.b"] = w, b
        nodes.append(Node(f"head{s}", "conv2d", {"weights": f"head{s}.w", "bias": f"head{s}.b",
                                                 "stride": 1, "pad": 0}, (prev,)))
        nodes.append(Node(f"out{s}", "output", {}, (f"head{s}",)))
    return Graph(nodes, tensors)


def scene(width, height, boxes=(), background=0.0, fill=1.0):
    img = np.full((height, width, 3), background, np.float32)
    for x, y, w, h in boxes:
        img[int(y):int(y + h), int(x):int(x + w)] = fill
    return img


def write_demo(out_dir, n_images=4, seed=0):
    """Graphs, scenes and annotations for a quick end-to-end run."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    save_graph(tiny_detector(weights="crafted"), out / "crafted" / "graph.json")
    save_graph(tiny_detector(weights="zeros"), out / "zeros" / "graph.json")
    save_graph(tiny_detector(weights="random", activation="mish"), out / "mish" / "graph.json")
    annotations = []
    for i in range(n_images):
        w, h = int(rng.integers(320, 800)), int(rng.integers(240, 600))
        bw, bh = int(rng.integers(60, 140)), int(rng.integers(60, 140))
        x, y = int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh))
        name = f"frame{i:03d}.ppm"
        write_ppm(out / "images" / name, scene(w, h, [(x, y, bw, bh)]))
        annotations.append({"image": name, "class_id": 0, "bbox": [x, y, bw, bh]})
    (out / "annotations.json").write_text(json.dumps(annotations, indent=2) + "\n")
    return out
