"""Seed derivation, prompts, filtering, generator ports, and the pipeline."""

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from occlukit.core import (
    FloatRaster,
    FormatError,
    GeneratorError,
    Image,
    Mask,
    ValidationError,
)
from occlukit.io import (
    pfm_from_bytes,
    pgm_from_bytes,
    png_from_bytes,
    png_to_bytes,
    read_json,
    read_manifest,
    read_mask,
    read_pfm,
    read_png,
    write_json,
    write_mask,
    write_pfm,
    write_png,
)
from occlukit.maskops import extract_silhouette, iou
from occlukit.synthpipe import (
    HttpGeneratorPort,
    MockGeneratorPort,
    RenderStub,
    SynthConfig,
    build_object_prompt,
    build_scene_prompt,
    derive_seed,
    is_filtered,
    load_render_stubs,
    load_synth_config,
    mock_generators,
    perturb_guidance,
    resolve_generator_port,
    run_pipeline,
)


def _write_stub_assets(root: Path, rid: str, shape=(16, 16), rect=(4, 12, 4, 12)):
    """Rectangle object on a white background; returns a ready RenderStub."""
    root.mkdir(parents=True, exist_ok=True)
    h, w = shape
    r0, r1, c0, c1 = rect
    depth = np.zeros((h, w), np.float32)
    cols = np.arange(c0, c1, dtype=np.float32)
    depth[r0:r1, c0:c1] = 2.0 + 0.05 * (cols - c0)  # mild depth gradient
    mask = depth > 0
    render = np.full((h, w, 3), 255, np.uint8)
    render[mask] = 128
    write_pfm(root / f"{rid}.pfm", FloatRaster(depth))
    write_mask(root / f"{rid}.pgm", Mask(mask))
    write_png(root / f"{rid}.png", Image(render))
    return RenderStub(
        record_id=rid, object_id=f"obj-{rid}", category="chair", focal_mm=50.0,
        camera={"elevation_deg": 30.0}, depth_path=str(root / f"{rid}.pfm"),
        mask_path=str(root / f"{rid}.pgm"), render_path=str(root / f"{rid}.png"))


def _config(**kw):
    kw.setdefault("seed", 11)
    kw.setdefault("scene_list", ("canyon", "forest"))
    return SynthConfig(**kw)


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(7, "r1", "guidance") == derive_seed(7, "r1", "guidance")

    def test_distinct_across_inputs(self):
        seeds = {derive_seed(7, "r1", "guidance"), derive_seed(7, "r2", "guidance"),
                 derive_seed(7, "r1", "scene"), derive_seed(8, "r1", "guidance"),
                 derive_seed(7, "r1", "attempt-1"), derive_seed(7, "r1", "attempt-2")}
        assert len(seeds) == 6

    def test_64_bit_range(self):
        s = derive_seed(0, "x", "guidance")
        assert 0 <= s < 2 ** 64


class TestPrompts:
    def test_full_object_prompt(self):
        assert build_object_prompt("red", "wood", "chair") == "a red wood chair"

    def test_empty_words_drop_out(self):
        assert build_object_prompt("", "", "chair") == "a chair"
        assert build_object_prompt("blue", "", "mug") == "a blue mug"

    def test_whitespace_collapses(self):
        assert build_object_prompt(" red ", "  ", " chair ") == "a red chair"

    def test_empty_object_rejected(self):
        with pytest.raises(ValidationError, match="object"):
            build_object_prompt("red", "wood", "  ")

    def test_scene_prompt(self):
        assert build_scene_prompt("chair", "canyon") == "a chair in the canyon"

    def test_scene_prompt_requires_both(self):
        with pytest.raises(ValidationError, match="object"):
            build_scene_prompt("", "canyon")
        with pytest.raises(ValidationError, match="scene"):
            build_scene_prompt("chair", "")


class TestPerturbGuidance:
    def test_zero_strength_returns_copy(self):
        img = Image(np.full((4, 4, 3), 100, np.uint8))
        out = perturb_guidance(img, 0.0, seed=1)
        assert np.array_equal(out.data, img.data)
        assert out.data is not img.data

    def test_deterministic(self):
        img = Image(np.full((8, 8, 3), 100, np.uint8))
        a = perturb_guidance(img, 0.5, seed=2)
        b = perturb_guidance(img, 0.5, seed=2)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, perturb_guidance(img, 0.5, seed=3).data)

    def test_noise_scale(self):
        # mid-gray keeps clipping negligible: sample sd tracks 0.2*255*0.5
        img = Image(np.full((100, 100, 3), 128, np.uint8))
        out = perturb_guidance(img, 0.2, seed=4)
        sd = (out.data.astype(np.float64) - 128).std()
        assert sd == pytest.approx(25.5, rel=0.05)

    def test_output_clamped_uint8(self):
        img = Image(np.zeros((20, 20, 3), np.uint8))
        out = perturb_guidance(img, 1.0, seed=5)
        assert out.data.dtype == np.uint8
        assert out.data.min() >= 0 and out.data.max() <= 255

    def test_strength_validated(self):
        img = Image(np.zeros((2, 2, 3), np.uint8))
        with pytest.raises(ValidationError, match="noise_strength"):
            perturb_guidance(img, 1.5, seed=0)


class TestIsFiltered:
    def _mask20(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[2:6, 1:6] = True  # 20 pixels
        return Mask(bits)

    def _image_covering(self, mask_bits, n):
        img = np.full((8, 8, 3), 255, np.uint8)
        rows, cols = np.nonzero(mask_bits)
        img[rows[:n], cols[:n]] = 100
        return Image(img)

    def test_boundary_iou_passes(self):
        # 19/20 = 0.95 exactly equals kappa: not strictly below, so kept
        mask = self._mask20()
        img = self._image_covering(mask.bits, 19)
        assert iou(extract_silhouette(img), mask) == 19 / 20
        assert not is_filtered(img, mask, kappa=0.95)

    def test_below_threshold_filters(self):
        mask = self._mask20()
        assert is_filtered(self._image_covering(mask.bits, 18), mask, kappa=0.95)

    def test_perfect_silhouette_passes(self):
        mask = self._mask20()
        assert not is_filtered(self._image_covering(mask.bits, 20), mask)

    def test_shape_mismatch(self):
        img = Image(np.zeros((4, 4, 3), np.uint8))
        with pytest.raises(ValidationError, match="match"):
            is_filtered(img, Mask(np.zeros((8, 8), dtype=bool)))


class TestMockGeneratorPort:
    def _inputs(self, tmp_path):
        stub = _write_stub_assets(tmp_path, "m0")
        return read_pfm(stub.depth_path), read_png(stub.render_path), read_mask(stub.mask_path)

    def test_silhouette_reproduces_depth_region(self, tmp_path):
        depth, render, mask = self._inputs(tmp_path)
        img = MockGeneratorPort().object_appearance(depth, render, "a red chair", 3)
        assert np.array_equal(extract_silhouette(img).bits, mask.bits)

    def test_object_pixels_below_background_band(self, tmp_path):
        depth, render, mask = self._inputs(tmp_path)
        img = MockGeneratorPort().object_appearance(depth, render, "a red chair", 3)
        assert img.data[mask.bits].max() <= 230

    def test_deterministic_and_prompt_sensitive(self, tmp_path):
        depth, render, _ = self._inputs(tmp_path)
        port = MockGeneratorPort()
        a = port.object_appearance(depth, render, "a red chair", 3)
        b = port.object_appearance(depth, render, "a red chair", 3)
        c = port.object_appearance(depth, render, "a blue chair", 3)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_distortion_hook_breaks_silhouette(self, tmp_path):
        depth, render, mask = self._inputs(tmp_path)
        port = MockGeneratorPort(distort_when=lambda s: True, distort_fraction=0.25)
        img = port.object_appearance(depth, render, "a red chair", 3)
        # rectangle spans 8 columns; 2 wiped: IoU = 6/8 exactly
        assert iou(extract_silhouette(img), mask) == 6 / 8

    def test_outpaint_keeps_foreground_bytes(self, tmp_path):
        depth, render, mask = self._inputs(tmp_path)
        port = MockGeneratorPort()
        obj = port.object_appearance(depth, render, "a red chair", 3)
        out = port.background_outpaint(obj, mask, "a chair in the canyon", 9)
        assert np.array_equal(out.data[mask.bits], obj.data[mask.bits])

    def test_outpaint_background_band(self, tmp_path):
        depth, render, mask = self._inputs(tmp_path)
        port = MockGeneratorPort()
        obj = port.object_appearance(depth, render, "a red chair", 3)
        out = port.background_outpaint(obj, mask, "a chair in the canyon", 9)
        bg = out.data[~mask.bits]
        assert bg.min() >= 250 and bg.max() <= 255

    def test_outpaint_deterministic(self, tmp_path):
        depth, render, mask = self._inputs(tmp_path)
        port = MockGeneratorPort()
        obj = port.object_appearance(depth, render, "a red chair", 3)
        a = port.background_outpaint(obj, mask, "a chair in the canyon", 9)
        b = port.background_outpaint(obj, mask, "a chair in the canyon", 9)
        assert np.array_equal(a.data, b.data)

    def test_outpaint_shape_mismatch(self):
        port = MockGeneratorPort()
        img = Image(np.zeros((4, 4, 3), np.uint8))
        with pytest.raises(ValidationError, match="shape"):
            port.background_outpaint(img, Mask(np.zeros((2, 2), bool)), "a x in the y", 0)

    def test_factory(self):
        port = mock_generators(distort_fraction=0.5)
        assert isinstance(port, MockGeneratorPort)
        assert port.distort_fraction == 0.5


class TestRenderStub:
    def _kw(self, **over):
        kw = dict(record_id="r0", object_id="o0", category="chair", focal_mm=50.0,
                  camera={}, depth_path="d", mask_path="m", render_path="r")
        kw.update(over)
        return kw

    def test_focal_out_of_range(self):
        with pytest.raises(ValidationError, match="focal"):
            RenderStub(**self._kw(focal_mm=80.0))
        with pytest.raises(ValidationError, match="focal"):
            RenderStub(**self._kw(focal_mm=20.0))

    def test_elevation_out_of_range(self):
        with pytest.raises(ValidationError, match="elevation"):
            RenderStub(**self._kw(camera={"elevation_deg": 70.0}))

    def test_elevation_optional(self):
        stub = RenderStub(**self._kw(camera={}))
        assert stub.camera == {}

    def test_empty_category(self):
        with pytest.raises(ValidationError, match="category"):
            RenderStub(**self._kw(category=""))

    def test_errors_name_the_record(self):
        with pytest.raises(ValidationError, match="r0"):
            RenderStub(**self._kw(focal_mm=80.0))


class TestLoadRenderStubs:
    def _row(self, rid):
        return {"record_id": rid, "object_id": f"o-{rid}", "category": "mug",
                "focal_mm": 40.0, "camera": {"elevation_deg": 10.0},
                "depth_path": f"{rid}.pfm", "mask_path": f"{rid}.pgm",
                "render_path": f"{rid}.png"}

    def test_loads_and_resolves_paths(self, tmp_path):
        write_json(tmp_path / "renders.json", [self._row("a"), self._row("b")])
        stubs = load_render_stubs(tmp_path / "renders.json")
        assert [s.record_id for s in stubs] == ["a", "b"]
        assert stubs[0].depth_path == str(tmp_path / "a.pfm")

    def test_missing_key(self, tmp_path):
        row = self._row("a")
        del row["mask_path"]
        write_json(tmp_path / "renders.json", [row])
        with pytest.raises(FormatError, match="mask_path"):
            load_render_stubs(tmp_path / "renders.json")

    def test_duplicate_id(self, tmp_path):
        write_json(tmp_path / "renders.json", [self._row("a"), self._row("a")])
        with pytest.raises(ValidationError, match="'a'"):
            load_render_stubs(tmp_path / "renders.json")

    def test_non_array(self, tmp_path):
        write_json(tmp_path / "renders.json", {"record_id": "a"})
        with pytest.raises(FormatError, match="array"):
            load_render_stubs(tmp_path / "renders.json")


class TestSynthConfig:
    def test_validation(self):
        with pytest.raises(ValidationError, match="kappa"):
            _config(kappa=0.0)
        with pytest.raises(ValidationError, match="kappa"):
            _config(kappa=1.5)
        with pytest.raises(ValidationError, match="max_retries"):
            _config(max_retries=0)
        with pytest.raises(ValidationError, match="guidance_noise"):
            _config(guidance_noise=-0.1)
        with pytest.raises(ValidationError, match="scene_list"):
            _config(scene_list=())

    def test_json_round_trip(self):
        cfg = _config(kappa=0.9, max_retries=4)
        back = SynthConfig.from_json_dict(cfg.to_json_dict())
        assert back == cfg

    def test_config_hash_tracks_content(self):
        a = _config()
        assert a.config_hash() == _config().config_hash()
        assert a.config_hash() != _config(seed=12).config_hash()
        assert len(a.config_hash()) == 64

    def test_scene_file(self, tmp_path):
        (tmp_path / "scenes.txt").write_text("canyon\n\n  forest \n", encoding="utf-8")
        write_json(tmp_path / "cfg.json", {"seed": 3, "scene_file": "scenes.txt"})
        cfg = load_synth_config(tmp_path / "cfg.json")
        assert cfg.scene_list == ("canyon", "forest")
        assert cfg.seed == 3

    def test_missing_scenes(self):
        with pytest.raises(ValidationError, match="scene"):
            SynthConfig.from_json_dict({"seed": 0})

    def test_load_rejects_non_object(self, tmp_path):
        write_json(tmp_path / "cfg.json", [1, 2])
        with pytest.raises(FormatError, match="object"):
            load_synth_config(tmp_path / "cfg.json")


class TestRunPipeline:
    def _stubs(self, root, n=3):
        return [_write_stub_assets(root, f"rec{i}") for i in range(n)]

    def test_complete_run(self, tmp_path):
        stubs = self._stubs(tmp_path / "in")
        cfg = _config()
        res = run_pipeline(stubs, cfg, mock_generators(), tmp_path / "out")
        assert res.complete and res.dropped == []
        assert res.manifest.seed == cfg.seed
        assert res.manifest.pipeline_config_hash == cfg.config_hash()
        ids = [r.record_id for r in res.manifest.records]
        assert ids == ["rec0", "rec1", "rec2"]
        for rec in res.manifest.records:
            assert rec.attempts == 1  # the mock reproduces the mask exactly
            assert rec.image_path == f"{rec.record_id}_image.png"
            for name in (rec.image_path, rec.depth_path, rec.mask_path):
                assert (tmp_path / "out" / name).is_file()

    def test_outputs_verify_from_disk(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=1)
        cfg = _config()
        res = run_pipeline(stubs, cfg, mock_generators(), tmp_path / "out")
        rec = res.manifest.records[0]
        out = Path(res.out_dir)
        img = read_png(out / rec.image_path)
        mask = read_mask(out / rec.mask_path)
        depth = read_pfm(out / rec.depth_path)
        # the written image still passes the silhouette gate
        assert not is_filtered(img, mask, cfg.kappa)
        # copied inputs survive the round trip bit for bit
        assert np.array_equal(mask.bits, read_mask(stubs[0].mask_path).bits)
        assert np.array_equal(depth.data, read_pfm(stubs[0].depth_path).data)
        # outpainted background stays in the near-white band
        assert img.data[~mask.bits].min() >= 250
        assert rec.prompts["object"].startswith("a ")
        assert " in the " in rec.prompts["scene"]

    def test_manifest_and_dropped_written(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=2)
        res = run_pipeline(stubs, _config(), mock_generators(), tmp_path / "out")
        manifest = read_manifest(tmp_path / "out" / "manifest.json")
        assert [r.record_id for r in manifest.records] == ["rec0", "rec1"]
        assert read_json(tmp_path / "out" / "dropped.json") == []
        assert res.out_dir == str(tmp_path / "out")

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=4)
        cfg = _config()
        run_pipeline(stubs, cfg, mock_generators(), tmp_path / "a", workers=1)
        run_pipeline(stubs, cfg, mock_generators(), tmp_path / "b", workers=4)
        names_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        names_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert names_a == names_b
        for name in names_a:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_rerun_is_byte_identical(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=2)
        cfg = _config()
        run_pipeline(stubs, cfg, mock_generators(), tmp_path / "a")
        run_pipeline(stubs, cfg, mock_generators(), tmp_path / "b")
        a = (tmp_path / "a" / "manifest.json").read_bytes()
        assert a == (tmp_path / "b" / "manifest.json").read_bytes()

    def test_persistent_drift_drops_after_all_retries(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=2)
        cfg = _config(max_retries=3)
        port = mock_generators(distort_when=lambda s: True, distort_fraction=0.5)
        res = run_pipeline(stubs, cfg, port, tmp_path / "out")
        assert not res.complete
        assert res.manifest.records == []
        assert [d["record_id"] for d in res.dropped] == ["rec0", "rec1"]
        for entry in res.dropped:
            assert entry["reason"] == "filtered"
            assert entry["attempts"] == 3
            assert entry["ious"] == [0.5, 0.5, 0.5]  # 4 of 8 columns wiped

    def test_retry_succeeds_on_second_attempt(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=3)
        cfg = _config()
        first = {derive_seed(cfg.seed, s.record_id, "attempt-1") for s in stubs}
        port = mock_generators(distort_when=lambda s: s in first, distort_fraction=0.5)
        res = run_pipeline(stubs, cfg, port, tmp_path / "out")
        assert res.complete
        assert all(r.attempts == 2 for r in res.manifest.records)

    def test_generator_failure_drops_record(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=1)

        class Exploding:
            def object_appearance(self, depth, guidance, prompt, seed):
                raise GeneratorError("backend unavailable")

            def background_outpaint(self, image, mask, prompt, seed):
                raise AssertionError("unreachable")

        res = run_pipeline(stubs, _config(), Exploding(), tmp_path / "out")
        assert [d["reason"] for d in res.dropped] == ["generator-failure"]
        assert "backend unavailable" in res.dropped[0]["detail"]

    def test_foreground_tampering_is_caught(self, tmp_path):
        stubs = self._stubs(tmp_path / "in", n=1)
        inner = mock_generators()

        class Tampering:
            def object_appearance(self, depth, guidance, prompt, seed):
                return inner.object_appearance(depth, guidance, prompt, seed)

            def background_outpaint(self, image, mask, prompt, seed):
                out = inner.background_outpaint(image, mask, prompt, seed)
                rows, cols = np.nonzero(mask.bits)
                out.data[rows[0], cols[0]] = 0  # corrupt one object pixel
                return out

        res = run_pipeline(stubs, _config(), Tampering(), tmp_path / "out")
        assert [d["reason"] for d in res.dropped] == ["generator-failure"]
        assert "foreground" in res.dropped[0]["detail"]

    def test_shape_mismatch_aborts(self, tmp_path):
        root = tmp_path / "in"
        stub = _write_stub_assets(root, "bad")
        write_mask(root / "bad.pgm", Mask(np.zeros((4, 4), dtype=bool)))
        with pytest.raises(ValidationError, match="shapes"):
            run_pipeline([stub], _config(), mock_generators(), tmp_path / "out")

    def test_duplicate_ids_rejected(self, tmp_path):
        stub = _write_stub_assets(tmp_path / "in", "dup")
        with pytest.raises(ValidationError, match="dup"):
            run_pipeline([stub, stub], _config(), mock_generators(), tmp_path / "out")

    def test_worker_count_validated(self, tmp_path):
        with pytest.raises(ValidationError, match="workers"):
            run_pipeline([], _config(), mock_generators(), tmp_path / "out", workers=0)


class _MockBackedHandler(BaseHTTPRequestHandler):
    """Serves the generator protocol by delegating to MockGeneratorPort."""

    def do_POST(self):
        srv = self.server
        srv.request_count += 1
        if srv.fail_next > 0:
            srv.fail_next -= 1
            self._respond(503, b"overloaded")
            return
        if srv.status_once is not None:
            code, srv.status_once = srv.status_once, None
            self._respond(code, b"nope")
            return
        doc = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if srv.drop_key:
            self._respond(200, json.dumps({"oops": 1}).encode("ascii"))
            return
        if self.path.endswith("/object_appearance"):
            depth = pfm_from_bytes(base64.b64decode(doc["depth_pfm_b64"]))
            guidance = png_from_bytes(base64.b64decode(doc["guidance_png_b64"]))
            img = srv.port.object_appearance(depth, guidance, doc["prompt"], doc["seed"])
        else:
            image = png_from_bytes(base64.b64decode(doc["image_png_b64"]))
            mask_img = pgm_from_bytes(base64.b64decode(doc["mask_pgm_b64"]))
            mask = Mask(mask_img.data > 127)
            img = srv.port.background_outpaint(image, mask, doc["prompt"], doc["seed"])
        body = json.dumps(
            {"image_png_b64": base64.b64encode(png_to_bytes(img)).decode("ascii")}
        ).encode("ascii")
        self._respond(200, body, ctype="application/json")

    def _respond(self, code, body, ctype="text/plain"):
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class _GeneratorServer:
    def __enter__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _MockBackedHandler)
        self.server.port = MockGeneratorPort()
        self.server.fail_next = 0
        self.server.status_once = None
        self.server.drop_key = False
        self.server.request_count = 0
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join()


def _http_port(url, **kw):
    kw.setdefault("timeout", 5.0)
    kw.setdefault("backoff", 0.01)
    return HttpGeneratorPort(object_endpoint=url, background_endpoint=url, **kw)


class TestHttpGeneratorPort:
    def test_pipeline_matches_in_process_mock(self, tmp_path):
        stubs = [_write_stub_assets(tmp_path / "in", f"h{i}") for i in range(2)]
        cfg = _config()
        with _GeneratorServer() as srv:
            run_pipeline(stubs, cfg, _http_port(srv.url), tmp_path / "http")
        run_pipeline(stubs, cfg, mock_generators(), tmp_path / "mock")
        names = sorted(p.name for p in (tmp_path / "http").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "mock").iterdir())
        for name in names:
            assert ((tmp_path / "http" / name).read_bytes()
                    == (tmp_path / "mock" / name).read_bytes())

    def test_transient_5xx_is_retried(self, tmp_path):
        stub = _write_stub_assets(tmp_path, "t0")
        depth = read_pfm(stub.depth_path)
        render = read_png(stub.render_path)
        with _GeneratorServer() as srv:
            srv.server.fail_next = 2
            port = _http_port(srv.url)
            img = port.object_appearance(depth, render, "a red chair", 5)
            want = MockGeneratorPort().object_appearance(depth, render, "a red chair", 5)
            assert np.array_equal(img.data, want.data)
            assert srv.server.request_count == 3

    def test_persistent_5xx_gives_up(self, tmp_path):
        stub = _write_stub_assets(tmp_path, "t1")
        depth = read_pfm(stub.depth_path)
        render = read_png(stub.render_path)
        with _GeneratorServer() as srv:
            srv.server.fail_next = 99
            port = _http_port(srv.url, retries=3)
            with pytest.raises(GeneratorError, match="giving up"):
                port.object_appearance(depth, render, "a red chair", 5)
            assert srv.server.request_count == 3

    def test_client_error_fails_immediately(self, tmp_path):
        stub = _write_stub_assets(tmp_path, "t2")
        depth = read_pfm(stub.depth_path)
        render = read_png(stub.render_path)
        with _GeneratorServer() as srv:
            srv.server.status_once = 404
            with pytest.raises(GeneratorError, match="404"):
                _http_port(srv.url).object_appearance(depth, render, "a red chair", 5)
            assert srv.server.request_count == 1  # no retry on client errors

    def test_missing_payload_key(self, tmp_path):
        stub = _write_stub_assets(tmp_path, "t3")
        depth = read_pfm(stub.depth_path)
        render = read_png(stub.render_path)
        with _GeneratorServer() as srv:
            srv.server.drop_key = True
            with pytest.raises(GeneratorError, match="image_png_b64"):
                _http_port(srv.url).object_appearance(depth, render, "a red chair", 5)

    def test_unreachable_endpoint(self):
        port = HttpGeneratorPort(object_endpoint="http://127.0.0.1:1",
                                 background_endpoint="http://127.0.0.1:1",
                                 timeout=0.2, retries=2, backoff=0.01)
        depth = FloatRaster(np.ones((2, 2), np.float32))
        img = Image(np.zeros((2, 2, 3), np.uint8))
        with pytest.raises(GeneratorError, match="giving up"):
            port.object_appearance(depth, img, "a chair", 0)


class TestResolveGeneratorPort:
    def test_no_env_gives_mock(self):
        assert isinstance(resolve_generator_port({}), MockGeneratorPort)

    def test_both_endpoints_give_http(self):
        port = resolve_generator_port({
            "OCCLUKIT_OBJ_ENDPOINT": "http://obj", "OCCLUKIT_BG_ENDPOINT": "http://bg"})
        assert isinstance(port, HttpGeneratorPort)
        assert port.object_endpoint == "http://obj"
        assert port.background_endpoint == "http://bg"

    def test_half_configuration_rejected(self):
        with pytest.raises(ValidationError, match="both"):
            resolve_generator_port({"OCCLUKIT_OBJ_ENDPOINT": "http://obj"})
        with pytest.raises(ValidationError, match="both"):
            resolve_generator_port({"OCCLUKIT_BG_ENDPOINT": "http://bg"})
