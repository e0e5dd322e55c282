import json
import shutil

import numpy as np
import pytest

from orbitdet import graph as G
from orbitdet.cli import main
from orbitdet.demo import scene, tiny_detector, write_demo
from orbitdet.detect import write_ppm


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    return write_demo(tmp_path_factory.mktemp("demo"), n_images=3)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def pool_graph(path, k):
    g = G.Graph([G.Node("x", "input"), G.Node("p", "max_pool2d", {"k": k, "stride": 1}, ("x",)),
                 G.Node("y", "output", {}, ("p",))])
    G.save_graph(g, path)
    return path


class TestGraphCommand:
    def test_validate_clean(self, demo, capsys):
        code, out, _ = run(capsys, "graph", "validate", demo / "crafted" / "graph.json")
        assert code == 0 and json.loads(out) == []

    def test_rewrite_then_validate(self, demo, tmp_path, capsys):
        assert run(capsys, "graph", "validate", demo / "mish" / "graph.json")[0] == 1
        code, out, _ = run(capsys, "graph", "rewrite", demo / "mish" / "graph.json", "-o", tmp_path / "rw.json")
        assert code == 0 and json.loads(out)["rewritten_nodes"] == ["stem_act"]
        assert run(capsys, "graph", "validate", tmp_path / "rw.json")[0] == 0

    def test_rewrite_default_location(self, demo, tmp_path, capsys):
        code, _, _ = run(capsys, "--out", tmp_path, "graph", "rewrite", demo / "mish" / "graph.json")
        assert code == 0 and (tmp_path / "graph.rewritten.json").exists()

    def test_validate_big_pool(self, tmp_path, capsys):
        code, out, _ = run(capsys, "graph", "validate", pool_graph(tmp_path / "g.json", 9))
        vs = json.loads(out)
        assert code == 1 and len(vs) == 1 and vs[0]["rule"] == "pool_kernel_too_large"

    def test_constraints_file(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"max_pool_kernel_limit": 16}))
        code, _, _ = run(capsys, "graph", "validate", pool_graph(tmp_path / "g.json", 9),
                         "--constraints", tmp_path / "c.json")
        assert code == 0

    def test_partition(self, demo, capsys, tmp_path):
        code, out, _ = run(capsys, "--out", tmp_path, "graph", "partition", demo / "mish" / "graph.json")
        segs = json.loads(out)["segments"]
        assert code == 0 and [s["target"] for s in segs] == ["accelerator", "host", "accelerator"]
        assert json.loads((tmp_path / "partition.json").read_text()) == json.loads(out)

    def test_cost(self, demo, capsys):
        code, out, _ = run(capsys, "graph", "cost", demo / "crafted" / "graph.json", "--cores", 2)
        assert code == 0 and json.loads(out)["total_seconds"] > 0

    def test_malformed(self, tmp_path, capsys):
        (tmp_path / "bad.json").write_text("{")
        assert run(capsys, "graph", "validate", tmp_path / "bad.json")[0] == 2

    def test_missing_file(self, tmp_path, capsys):
        assert run(capsys, "graph", "validate", tmp_path / "nope.json")[0] == 2

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["graph", "explode", "x.json"])
        assert exc.value.code == 2


class TestQuantize:
    @pytest.fixture
    def zeros_graph(self, tmp_path):
        G.save_graph(tiny_detector(weights="zeros"), tmp_path / "zeros" / "graph.json")
        return tmp_path / "zeros" / "graph.json"

    def test_black_image(self, zeros_graph, tmp_path, capsys):
        (tmp_path / "cal").mkdir()
        write_ppm(tmp_path / "cal" / "black.ppm", np.zeros((416, 416, 3)))
        assert run(capsys, "quantize", zeros_graph, tmp_path / "cal", "-o", tmp_path / "q.json")[0] == 0
        doc = json.loads((tmp_path / "q.json").read_text())
        assert doc["edges"] and set(doc["edges"].values()) == {16}

    def test_deterministic_and_order_free(self, demo, tmp_path, capsys):
        graph = demo / "crafted" / "graph.json"
        imgs = sorted((demo / "images").iterdir())
        for d, names in (("fwd", "abc"), ("rev", "cba")):
            (tmp_path / d).mkdir()
            for img, n in zip(imgs, names):
                shutil.copy(img, tmp_path / d / f"{n}.ppm")
        outs = []
        for d in ("fwd", "fwd", "rev"):
            run(capsys, "quantize", graph, tmp_path / d, "-o", tmp_path / f"{d}.json")
            outs.append((tmp_path / f"{d}.json").read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_empty_dir(self, demo, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        code, _, err = run(capsys, "quantize", demo / "crafted" / "graph.json", tmp_path / "empty", "-o", tmp_path / "q.json")
        assert code == 2 and "no calibration images" in err


class TestInfer:
    def test_zero_weights_no_detections(self, demo, tmp_path, capsys):
        code, out, _ = run(capsys, "--out", tmp_path, "infer", "--graph", demo / "zeros" / "graph.json", demo / "images")
        assert code == 0 and json.loads(out) == []
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert [s["detections"] for s in summary] == [0, 0, 0]

    def test_fake_quant_same_boxes(self, tmp_path, capsys):
        G.save_graph(tiny_detector(weights="crafted"), tmp_path / "g" / "graph.json")
        (tmp_path / "img").mkdir()
        write_ppm(tmp_path / "img" / "a.ppm", scene(640, 480, [(100, 120, 150, 110)]))
        write_ppm(tmp_path / "img" / "b.ppm", scene(300, 500, [(20, 300, 90, 90)]))
        graph = tmp_path / "g" / "graph.json"
        run(capsys, "quantize", graph, tmp_path / "img", "-o", tmp_path / "q.json")
        _, flt, _ = run(capsys, "infer", "--graph", graph, tmp_path / "img")
        _, fq, _ = run(capsys, "infer", "--graph", graph, "--exec", "fake_quant", "--params", tmp_path / "q.json",
                       tmp_path / "img")
        key = lambda doc: sorted((d["image"], d["class_id"], tuple(d["bbox"])) for d in json.loads(doc))
        assert key(flt) and key(flt) == key(fq)

    def test_fake_quant_needs_params(self, demo, capsys):
        assert run(capsys, "infer", "--graph", demo / "crafted" / "graph.json", "--exec", "fake_quant",
                   demo / "images")[0] == 2

    def test_forty_images(self, tmp_path, capsys):
        G.save_graph(tiny_detector(weights="crafted"), tmp_path / "g" / "graph.json")
        (tmp_path / "img").mkdir()
        rng = np.random.default_rng(0)
        for i in range(40):
            x, y = rng.integers(0, 40, 2)
            write_ppm(tmp_path / "img" / f"f{i:02d}.ppm", scene(96, 64, [(x, y, 24, 24)]))
        code, out, _ = run(capsys, "--out", tmp_path / "o", "infer", "--graph", tmp_path / "g" / "graph.json",
                           "--workers", 4, tmp_path / "img")
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert code == 0 and len(summary) == 40
        assert [s["image"] for s in summary] == [f"f{i:02d}.ppm" for i in range(40)]
        images = [d["image"] for d in json.loads(out)]
        assert images == sorted(images)

    def test_parallel_filter_byte_identical(self, demo, capsys):
        graph = demo / "crafted" / "graph.json"
        _, serial, _ = run(capsys, "infer", "--graph", graph, "--filter", "serial", demo / "images")
        _, par, _ = run(capsys, "infer", "--graph", graph, "--filter", "parallel", demo / "images")
        assert serial == par and json.loads(serial)

    def test_bad_image_recorded(self, demo, tmp_path, capsys):
        (tmp_path / "img").mkdir()
        (tmp_path / "img" / "broken.ppm").write_bytes(b"P6 garbage")
        shutil.copy(next((demo / "images").iterdir()), tmp_path / "img" / "ok.ppm")
        code, _, err = run(capsys, "--out", tmp_path / "o", "infer", "--graph", demo / "crafted" / "graph.json",
                           tmp_path / "img")
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert code == 0 and "error" in summary[0] and "detections" in summary[1]
        assert "broken.ppm: error" in err

    def test_all_images_fail(self, demo, tmp_path, capsys):
        (tmp_path / "broken.ppm").write_bytes(b"nope")
        assert run(capsys, "infer", "--graph", demo / "crafted" / "graph.json", tmp_path / "broken.ppm")[0] == 1

    def test_manifest(self, demo, tmp_path, capsys):
        manifest = {"graph": str(demo / "crafted" / "graph.json"), "images": [str(demo / "images")],
                    "filter": "parallel", "out": str(tmp_path / "m")}
        (tmp_path / "run.json").write_text(json.dumps(manifest))
        code, out, _ = run(capsys, "--config", tmp_path / "run.json", "infer")
        assert code == 0 and (tmp_path / "m" / "detections.json").read_text() == out

    def test_manifest_unknown_key(self, tmp_path, capsys):
        (tmp_path / "run.json").write_text(json.dumps({"colour": "red"}))
        assert run(capsys, "--config", tmp_path / "run.json", "infer")[0] == 2


class TestBench:
    def test_sequential(self, capsys):
        code, out, err = run(capsys, "bench", "--stages", "5,10", "--frames", 10)
        doc = json.loads(out)
        assert code == 0 and doc["mode"] == "sequential" and doc["fps"] == pytest.approx(1000 / 15, rel=0.05)
        assert set(doc["stage_ms"]) == {"accelerator", "postprocess"}
        assert "accelerator throughput" in err and "sequential throughput" in err

    def test_pipelined(self, capsys):
        doc = json.loads(run(capsys, "bench", "--stages", "5,10", "--frames", 20, "--mode", "pipelined")[1])
        assert doc["fps"] == pytest.approx(1000 / 10, rel=0.1)

    def test_latency(self, capsys):
        doc = json.loads(run(capsys, "bench", "--stages", "5,7", "--mode", "latency")[1])
        assert len(doc["latency_ms"]) == 3 and min(doc["latency_ms"]) >= 12

    def test_deterministic(self, capsys):
        a = run(capsys, "--deterministic", "bench", "--stages", "1,2", "--frames", 3)[1]
        b = run(capsys, "bench", "--stages", "1,2", "--frames", 3, "--deterministic")[1]
        assert a == b and json.loads(a) == {"mode": "sequential", "frames": 3, "stages": ["accelerator", "postprocess"]}

    def test_three_synthetic_stages_named(self, capsys):
        doc = json.loads(run(capsys, "bench", "--stages", "1,2,3", "--frames", 4)[1])
        assert list(doc["stage_ms"]) == ["preprocess", "accelerator", "postprocess"]

    def test_real_workload(self, demo, capsys):
        code, out, _ = run(capsys, "bench", "--graph", demo / "crafted" / "graph.json",
                           demo / "images", "--frames", 4, "--mode", "pipelined")
        doc = json.loads(out)
        assert code == 0 and doc["frames"] == 4
        assert list(doc["stage_ms"]) == ["preprocess", "accelerator", "postprocess"]

    @pytest.mark.parametrize("spec", ["", "abc", "5,-1", "0"])
    def test_invalid_stages(self, spec, capsys):
        assert run(capsys, "bench", "--stages", spec)[0] == 2

    def test_real_workload(self, demo, tmp_path, capsys):
        code, out, _ = run(capsys, "--out", tmp_path, "bench", "--graph", demo / "crafted" / "graph.json",
                           demo / "images", "--frames", 6, "--mode", "pipelined")
        doc = json.loads(out)
        assert code == 0 and doc["frames"] == 6 and doc["fps"] > 0
        assert (tmp_path / "stats.json").exists()


class TestEval:
    def write(self, path, doc):
        path.write_text(json.dumps(doc))
        return path

    def test_perfect(self, demo, tmp_path, capsys):
        gts = json.loads((demo / "annotations.json").read_text())
        dets = self.write(tmp_path / "d.json", [{**g, "score": 1.0} for g in gts])
        code, out, err = run(capsys, "--out", tmp_path, "eval", dets, demo / "annotations.json")
        assert code == 0 and json.loads(out)["map"] == 1.0 and "mAP@0.5" in err
        assert json.loads((tmp_path / "report.json").read_text()) == json.loads(out)

    def test_empty(self, demo, tmp_path, capsys):
        out = run(capsys, "eval", self.write(tmp_path / "d.json", []), demo / "annotations.json")[1]
        assert json.loads(out) == {"iou": 0.5, "ap": {"0": 0.0}, "map": 0.0}

    def test_two_class(self, tmp_path, capsys):
        gts = self.write(tmp_path / "g.json", [{"image": "a", "class_id": 0, "bbox": [0, 0, 10, 10]},
                                               {"image": "a", "class_id": 1, "bbox": [20, 0, 10, 10]}])
        dets = self.write(tmp_path / "d.json", [{"image": "a", "class_id": 0, "score": 0.9, "bbox": [0, 0, 10, 10]},
                                                {"image": "a", "class_id": 1, "score": 0.8, "bbox": [50, 50, 10, 10]}])
        assert json.loads(run(capsys, "eval", dets, gts)[1])["map"] == 0.5

    def test_parse_error(self, tmp_path, capsys):
        (tmp_path / "d.json").write_text("[{")
        assert run(capsys, "eval", tmp_path / "d.json", tmp_path / "d.json")[0] == 2

    def test_malformed_record(self, tmp_path, capsys):
        bad = self.write(tmp_path / "d.json", [{"image": "a"}])
        assert run(capsys, "eval", bad, bad)[0] == 2

    def test_no_ground_truth(self, tmp_path, capsys):
        empty = self.write(tmp_path / "g.json", [])
        assert run(capsys, "eval", empty, empty)[0] == 1

    def test_deterministic(self, demo, tmp_path, capsys):
        gts = json.loads((demo / "annotations.json").read_text())
        dets = self.write(tmp_path / "d.json", [{**g, "score": 0.5} for g in gts])
        assert run(capsys, "eval", dets, demo / "annotations.json")[1] == run(capsys, "eval", dets, demo / "annotations.json")[1]
