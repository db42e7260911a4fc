import json
import os
import stat

import numpy as np
import pytest
from PIL import Image

from sketchopt.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, load_png, main, save_png
from sketchopt.raster import render
from sketchopt.scene import CanvasConfig, init_scene

FAST = [
    "--strokes", "6", "--iters", "4", "--augments", "2",
    "--canvas", "48", "--seed", "11", "--snapshot-every", "2",
]


def run_cli(*args) -> int:
    return main([str(a) for a in args])


class TestSingleRun:
    def test_bundle_contents(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli("--prompt", "a tiny boat", *FAST, "--out", out) == EXIT_OK
        assert (out / "final.png").exists()
        assert (out / "final.svg").exists()
        assert (out / "loss.csv").exists()
        assert (out / "metadata.json").exists()
        assert (out / "filmstrip.png").exists()
        assert sorted(p.name for p in (out / "snapshots").iterdir()) == [
            "iter_00000.png", "iter_00002.png"
        ]

    def test_final_png_is_decodable_at_canvas_size(self, tmp_path):
        out = tmp_path / "run"
        run_cli("--prompt", "p", *FAST, "--out", out)
        with Image.open(out / "final.png") as im:
            assert im.size == (48, 48)
            assert im.mode == "RGB"

    def test_loss_csv_has_iteration_rows(self, tmp_path):
        out = tmp_path / "run"
        run_cli("--prompt", "p", *FAST, "--out", out)
        lines = (out / "loss.csv").read_text().strip().splitlines()
        assert lines[0].startswith("iteration,loss,loss_per_copy")
        assert len(lines) == 1 + 4

    def test_repeat_run_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("--prompt", "p", *FAST, "--out", a)
        run_cli("--prompt", "p", *FAST, "--out", b)
        assert (a / "loss.csv").read_bytes() == (b / "loss.csv").read_bytes()
        assert (a / "final.png").read_bytes() == (b / "final.png").read_bytes()

    def test_metadata_reproduces_run_bit_for_bit(self, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        run_cli("--prompt", "p", *FAST, "--out", first)
        assert run_cli("--config", first / "metadata.json", "--out", second) == EXIT_OK
        assert (first / "final.png").read_bytes() == (second / "final.png").read_bytes()

    def test_flags_override_config_file(self, tmp_path):
        first = tmp_path / "first"
        run_cli("--prompt", "p", *FAST, "--out", first)
        overridden = tmp_path / "override"
        run_cli("--config", first / "metadata.json", "--iters", "2", "--out", overridden)
        meta = json.loads((overridden / "metadata.json").read_text())
        assert meta["resolved"]["iterations"] == 2

    def test_weighted_and_negative_prompts(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli("--prompt", "a cat:2.5", "--negative", "blurry", *FAST, "--out", out) == EXIT_OK
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["prompt_labels"] == ["pos:a cat", "neg:blurry"]


class TestModes:
    def test_pixel_mode_without_augmentation(self, tmp_path):
        out = tmp_path / "px"
        code = run_cli("--prompt", "p", "--mode", "pixels", "--no-augment",
                       "--iters", "3", "--canvas", "48", "--seed", "2", "--out", out)
        assert code == EXIT_OK
        assert not (out / "final.svg").exists()  # no vector scene in pixel mode
        with Image.open(out / "final.png") as im:
            assert im.size == (48, 48)

    def test_reconstruct_from_png(self, tmp_path):
        target_scene = init_scene(6, CanvasConfig(48, 48), np.random.default_rng(0))
        target_png = tmp_path / "target.png"
        save_png(render(target_scene), target_png)
        out = tmp_path / "rec"
        code = run_cli("--reconstruct", target_png, "--strokes", "6", "--iters", "4",
                       "--seed", "3", "--canvas", "48", "--snapshot-every", "0", "--out", out)
        assert code == EXIT_OK
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["resolved"]["canvas"] == [48, 48]

    def test_sweep_writes_contact_sheet(self, tmp_path):
        out = tmp_path / "sweep"
        code = run_cli("--prompt", "p", "--sweep-strokes", "2,4", "--iters", "2",
                       "--augments", "2", "--canvas", "48", "--seed", "1",
                       "--snapshot-every", "0", "--out", out)
        assert code == EXIT_OK
        assert (out / "strokes_0002" / "final.png").exists()
        assert (out / "strokes_0004" / "final.png").exists()
        with Image.open(out / "contact_sheet.png") as im:
            assert im.size == (96, 48)  # two 48px tiles side by side

    def test_sweep_with_parallel_workers(self, tmp_path):
        out = tmp_path / "sweep"
        code = run_cli("--prompt", "p", "--sweep-strokes", "2,4", "--iters", "2",
                       "--augments", "2", "--canvas", "48", "--seed", "1",
                       "--snapshot-every", "0", "--workers", "2", "--out", out)
        assert code == EXIT_OK
        assert (out / "contact_sheet.png").exists()

    def test_service_backend_without_address_is_usage_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SKETCHOPT_SERVICE_ADDR", raising=False)
        code = run_cli("--prompt", "p", "--backend", "service", "--iters", "1",
                       "--out", tmp_path / "x")
        assert code == EXIT_USAGE

    def test_sweep_parameter_counts_grow_with_strokes(self, tmp_path):
        out = tmp_path / "sweep"
        run_cli("--prompt", "p", "--sweep-strokes", "2,4", "--iters", "1",
                "--augments", "2", "--canvas", "48", "--seed", "1",
                "--snapshot-every", "0", "--out", out)
        sizes = [len(json.loads((out / f"strokes_{n:04d}" / "metadata.json").read_text())
                     ["prompt_labels"]) for n in (2, 4)]
        assert sizes == [1, 1]  # labels constant; stroke counts recorded below
        metas = [json.loads((out / f"strokes_{n:04d}" / "metadata.json").read_text())
                 for n in (2, 4)]
        assert [m["resolved"]["n_strokes"] for m in metas] == [2, 4]


class TestExitCodes:
    def test_missing_prompt_is_usage_error(self, tmp_path):
        assert run_cli("--iters", "1", "--out", tmp_path / "x") == EXIT_USAGE

    def test_unreadable_reconstruction_target_is_io_error(self, tmp_path):
        code = run_cli("--reconstruct", tmp_path / "missing.png", "--iters", "1",
                       "--out", tmp_path / "x")
        assert code == EXIT_IO

    def test_unwritable_out_dir_is_io_error(self, tmp_path):
        if os.geteuid() == 0:
            pytest.skip("root bypasses directory permissions")
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(stat.S_IRUSR | stat.S_IXUSR)
        code = run_cli("--prompt", "p", *FAST, "--out", locked / "run")
        assert code == EXIT_IO

    def test_bad_config_file_is_usage_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli("--prompt", "p", "--config", bad, "--out", tmp_path / "x") == EXIT_USAGE


class TestPngHelpers:
    def test_png_round_trip_quantizes_to_8bit(self, tmp_path):
        img = np.random.default_rng(0).uniform(size=(16, 16, 3))
        path = tmp_path / "x.png"
        save_png(img, path)
        back = load_png(path)
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-9
