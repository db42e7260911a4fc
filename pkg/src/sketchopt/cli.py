"""Command-line entry point: run synthesis, baselines, sweeps, and exports.

Every run writes an export bundle into its output directory:

    final.png      8-bit sRGB render of the result
    final.svg      vector export (strokes mode)
    loss.csv       iteration, loss (summed), loss per copy, per-prompt cosines
    metadata.json  resolved config + seed + backend id; re-running with
                   --config metadata.json reproduces a mock run bit-for-bit
    snapshots/     periodic PNGs plus filmstrip.png (when --snapshot-every)

Sweeps write one run directory per stroke count plus a contact sheet.
Exit codes: 0 ok, 2 usage/config, 3 transport, 4 numeric failure, 5 IO.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .augment import AugmentConfig
from .errors import ConfigError, NumericError, SketchoptError, TransportError
from .objective import MockBackend, PromptSet
from .optimize import RunArtifacts, RunConfig, reconstruct_scene, run_pixel_optimization, run_synthesis
from .prng import split_streams
from .protocol import SERVICE_ADDR_ENV, ServiceBackend
from .raster import RasterConfig, render
from .scene import CanvasConfig
from .svg import export_svg

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRANSPORT = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sketchopt",
        description="optimize Bezier strokes so a drawing matches a text prompt",
    )
    p.add_argument("--prompt", action="append", default=None, metavar="TEXT[:WEIGHT]",
                   help="positive prompt; repeatable; optional :weight suffix")
    p.add_argument("--negative", action="append", default=None, metavar="TEXT[:WEIGHT]",
                   help="negative prompt; repeatable")
    p.add_argument("--negative-scale", type=float, default=None,
                   help="weight applied to all negative prompts (default 0.3)")
    p.add_argument("--strokes", type=int, default=None, help="stroke count N (default 256)")
    p.add_argument("--iters", type=int, default=None, help="iteration count I (default 250)")
    p.add_argument("--augments", type=int, default=None, help="augmented copies D (default 8)")
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--backend", choices=("mock", "service"), default=None)
    p.add_argument("--service-addr", default=None,
                   help=f"host:port of the scoring service (or ${SERVICE_ADDR_ENV})")
    p.add_argument("--mode", choices=("strokes", "pixels"), default=None)
    p.add_argument("--no-augment", action="store_true", default=None)
    p.add_argument("--canvas", type=int, default=None, help="square canvas size in px (default 224)")
    p.add_argument("--snapshot-every", type=int, default=None, metavar="K")
    p.add_argument("--out", default=None, help="output directory (default ./runs/<timestamp>)")
    p.add_argument("--sweep-strokes", default=None, metavar="N1,N2,...",
                   help="run once per stroke count and emit a contact sheet")
    p.add_argument("--reconstruct", default=None, metavar="TARGET.png",
                   help="fit strokes to a target image (MSE objective, no prompts)")
    p.add_argument("--config", default=None, metavar="FILE",
                   help="JSON config file; explicit flags override its values")
    p.add_argument("--workers", type=int, default=None, help="parallel sweep workers (default 1)")
    return p


_DEFAULTS = {
    "prompt": [],
    "negative": [],
    "negative_scale": 0.3,
    "strokes": 256,
    "iters": 250,
    "augments": 8,
    "seed": 0,
    "backend": "mock",
    "service_addr": None,
    "mode": "strokes",
    "no_augment": False,
    "canvas": 224,
    "snapshot_every": 25,
    "out": None,
    "sweep_strokes": None,
    "reconstruct": None,
    "workers": 1,
}


def resolve_options(args: argparse.Namespace) -> dict:
    """Layer defaults < config file < explicit flags."""
    options = dict(_DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        file_cfg = loaded.get("config", loaded)
        for key in options:
            if key in file_cfg:
                options[key] = file_cfg[key]
    for key in options:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def _parse_weighted(entries) -> list[tuple[str, float]]:
    out = []
    for entry in entries:
        if isinstance(entry, (list, tuple)):
            out.append((str(entry[0]), float(entry[1])))
            continue
        text, sep, tail = str(entry).rpartition(":")
        if sep and text:
            try:
                out.append((text, float(tail)))
                continue
            except ValueError:
                pass
        out.append((str(entry), 1.0))
    return out


def make_run_config(options: dict, n_strokes: int | None = None) -> RunConfig:
    size = int(options["canvas"])
    canvas = CanvasConfig(size, size)
    prompts = None
    if options["prompt"]:
        prompts = PromptSet(
            positives=_parse_weighted(options["prompt"]),
            negatives=_parse_weighted(options["negative"]),
            negative_scale=float(options["negative_scale"]),
        )
    return RunConfig(
        iterations=int(options["iters"]),
        n_strokes=int(n_strokes if n_strokes is not None else options["strokes"]),
        n_augments=int(options["augments"]),
        seed=int(options["seed"]),
        mode=str(options["mode"]),
        augment_enabled=not bool(options["no_augment"]),
        snapshot_every=int(options["snapshot_every"]),
        prompts=prompts,
        canvas=canvas,
        augment=AugmentConfig(n_copies=int(options["augments"])),
        raster=RasterConfig(),
    )


def make_backend(options: dict, config: RunConfig):
    if options["backend"] == "mock":
        return MockBackend(split_streams(config.seed).backend_seed)
    address = options.get("service_addr") or os.environ.get(SERVICE_ADDR_ENV)
    if not address:
        raise ConfigError(f"--backend service needs --service-addr or ${SERVICE_ADDR_ENV}")
    return ServiceBackend.connect(str(address))


def save_png(image: np.ndarray, path: Path) -> None:
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_loss_csv(artifacts: RunArtifacts, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        cos_headers = [f"cos_{i}" for i in range(len(artifacts.prompt_labels))]
        writer.writerow(["iteration", "loss", "loss_per_copy", *cos_headers])
        for i, (loss, per_copy) in enumerate(zip(artifacts.losses, artifacts.losses_per_copy)):
            row = [i, f"{loss:.17g}", f"{per_copy:.17g}"]
            if artifacts.prompt_cosines.size:
                row += [f"{c:.17g}" for c in artifacts.prompt_cosines[i]]
            writer.writerow(row)


def write_metadata(options: dict, config: RunConfig, backend, artifacts: RunArtifacts,
                   path: Path, wall_s: float) -> None:
    meta = {
        "package_version": __version__,
        "config": {k: v for k, v in options.items() if k != "out"},
        "resolved": {
            "iterations": config.iterations,
            "n_strokes": config.n_strokes,
            "n_augments": config.n_augments,
            "seed": config.seed,
            "mode": config.mode,
            "augment_enabled": config.augment_enabled,
            "canvas": [config.canvas.width_px, config.canvas.height_px],
            "lr": {"points": config.lr_points, "width": config.lr_width, "color": config.lr_color},
            "n_params": (
                sum(2 * s.n_points + 5 for s in artifacts.final_scene.strokes)
                if artifacts.final_scene is not None
                else int(artifacts.final_image.size)
            ),
        },
        "backend": {"kind": options["backend"], "model_id": backend.model_id,
                    "dim": backend.embedding_dim},
        "prompt_labels": artifacts.prompt_labels,
        "timing": {
            "wall_s": wall_s,
            "mean_iter_s": float(np.mean(artifacts.iter_seconds)) if artifacts.iter_seconds else 0.0,
        },
    }
    path.write_text(json.dumps(meta, indent=2) + "\n")


def _tile_horizontal(images: list[np.ndarray]) -> np.ndarray:
    h = max(im.shape[0] for im in images)
    padded = []
    for im in images:
        if im.shape[0] < h:
            pad = np.ones((h - im.shape[0], im.shape[1], 3))
            im = np.vstack([im, pad])
        padded.append(im)
    return np.hstack(padded)


def export_bundle(artifacts: RunArtifacts, config: RunConfig, options: dict,
                  backend, out_dir: Path, wall_s: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_png(artifacts.final_image, out_dir / "final.png")
    if artifacts.final_scene is not None:
        (out_dir / "final.svg").write_text(export_svg(artifacts.final_scene))
    write_loss_csv(artifacts, out_dir / "loss.csv")
    write_metadata(options, config, backend, artifacts, out_dir / "metadata.json", wall_s)

    if artifacts.snapshots:
        snap_dir = out_dir / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        frames = []
        for snap in artifacts.snapshots:
            img = snap.image if snap.image is not None else render(snap.scene, config.raster)
            save_png(img, snap_dir / f"iter_{snap.iteration:05d}.png")
            frames.append(img)
        frames.append(artifacts.final_image)
        save_png(_tile_horizontal(frames), out_dir / "filmstrip.png")


def _run_one(options: dict, n_strokes: int | None, out_dir: Path) -> RunArtifacts:
    config = make_run_config(options, n_strokes)
    backend = make_backend(options, config)
    t0 = time.perf_counter()
    try:
        if options["reconstruct"]:
            target = load_png(Path(options["reconstruct"]))
            if target.shape[0] != target.shape[1]:
                raise ConfigError(f"reconstruction target must be square, got {target.shape[:2]}")
            config = dataclasses.replace(
                config, canvas=CanvasConfig(target.shape[1], target.shape[0])
            )
            artifacts = reconstruct_scene(target, config)
        elif config.mode == "pixels":
            artifacts = run_pixel_optimization(config, backend)
        else:
            if config.prompts is None:
                raise ConfigError("synthesis needs at least one --prompt")
            artifacts = run_synthesis(config, backend)
    except TransportError as exc:
        partial = getattr(exc, "partial_artifacts", None)
        if partial is not None:
            export_bundle(partial, config, options, backend, out_dir, time.perf_counter() - t0)
        raise
    finally:
        close = getattr(backend, "close", None)
        if close is not None:
            close()
    export_bundle(artifacts, config, options, backend, out_dir, time.perf_counter() - t0)
    return artifacts


def _sweep(options: dict, out_root: Path) -> None:
    counts = [int(s) for s in str(options["sweep_strokes"]).split(",") if s.strip()]
    if not counts:
        raise ConfigError("--sweep-strokes needs a comma-separated list of counts")
    workers = int(options["workers"])
    jobs = [(n, out_root / f"strokes_{n:04d}") for n in counts]
    if workers > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, options, n, d) for n, d in jobs]
            for f in futures:
                f.result()
    else:
        for n, d in jobs:
            _run_one(options, n, d)
    tiles = [load_png(d / "final.png") for _, d in jobs]
    save_png(_tile_horizontal(tiles), out_root / "contact_sheet.png")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        options = resolve_options(args)
        out_dir = Path(options["out"]) if options["out"] else Path("runs") / time.strftime("%Y%m%d-%H%M%S")
        if options["sweep_strokes"]:
            _sweep(options, out_dir)
        else:
            _run_one(options, None, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SketchoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
