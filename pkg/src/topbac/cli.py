"""Command-line interface: ``topbac generate | segment | eval | rerun``.

Exit codes: 0 success, 1 usage or input error, 2 degenerate contour
evolution, 3 TOP initialisation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import KEYS, ConfigError, RunConfig, load_config
from .contour import Contour, circle, read_contour_csv, write_contour_csv
from .eval_metrics import MetricsReport, evaluate, format_table
from .image_core import ImageFormatError, load_image, save_image
from .pipeline import (
    SegmentationResult,
    TopInitError,
    bac,
    filter_contours,
    kmeans_baseline,
    load_training_dir,
    render_overlay,
    select_contours,
    top_bac,
)
from .synth import NoiseSpec, apply_noise, figure5_scene, make_bone, make_donut
from .topo_segment import extract_contours, segment

__all__ = ["main", "build_parser"]

log = logging.getLogger("topbac")

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE, EXIT_TOP_INIT = 0, 1, 2, 3
METHODS = ("top", "bac", "topbac", "kmeans")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved for degenerate runs
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (override the config file)")
    for key in KEYS:
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE", default=None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="topbac", description="TOP-initialised active contours for grayscale images.")
    p.add_argument("--version", action="version", version=f"topbac {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic image and its ground-truth contours")
    g.add_argument("scene", choices=("donut", "blobs", "bone"))
    g.add_argument("--figure5", action="store_true", help="blobs: the annulus-plus-four-dots scene")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--outer-radius", type=float, default=70.0)
    g.add_argument("--inner-radius", type=float, default=30.0)
    g.add_argument("--n", type=int, default=200, help="vertices per ground-truth contour")
    noise = g.add_mutually_exclusive_group()
    noise.add_argument("--blur-sigma", type=float)
    noise.add_argument("--salt-pepper", type=float, metavar="DENSITY")
    noise.add_argument("--perturb-sigma", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", help="output image (.png or .pgm); default <scene>.png")

    s = sub.add_parser("segment", help="segment an image")
    s.add_argument("image")
    s.add_argument("--method", choices=METHODS, default="topbac")
    s.add_argument("--config", help="key = value configuration file")
    s.add_argument("--train", help="directory of training images with _gt<j>.csv sidecars")
    s.add_argument("--init", nargs="+", help="initial contour CSVs for --method bac, or 'circle'")
    s.add_argument("--truth", nargs="+", help="ground-truth contour CSVs; enables metrics")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--force", action="store_true", help="evolve even when the TOP initialisation is flagged")
    _add_config_flags(s)

    e = sub.add_parser("eval", help="compare estimated and true contours")
    e.add_argument("--estimate", nargs="+", action="append", required=True,
                   help="contour CSVs or a result.json; repeat for several methods")
    e.add_argument("--name", action="append", help="column name for each --estimate group")
    e.add_argument("--truth", nargs="+", required=True)
    e.add_argument("--width", type=int)
    e.add_argument("--height", type=int)
    e.add_argument("--image", help="take width and height from this image")
    e.add_argument("--out-dir", default=".")

    r = sub.add_parser("rerun", help="repeat a run from its run.json")
    r.add_argument("run_json")
    r.add_argument("--out-dir", help="write outputs here instead of the original location")
    return p


# -- helpers ------------------------------------------------------------------------

def _abs(p) -> str | None:
    return None if p is None else str(Path(p).resolve())


def _write_run(path: Path, command: str, spec: dict) -> None:
    doc = {"tool": "topbac", "version": __version__, "command": command, "spec": spec}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def _contours_from(paths) -> list[Contour]:
    out = []
    for p in paths:
        p = Path(p)
        if p.suffix.lower() == ".json":
            doc = json.loads(p.read_text())
            out.extend(Contour(c["contour"]) for c in doc["contours"])
        else:
            out.append(read_contour_csv(p))
    return out


def _default_circle(width: int, height: int, n: int) -> Contour:
    r = 0.47 * (min(width, height) - 1)
    return circle(((width - 1) / 2.0, (height - 1) / 2.0), r, n)


def _write_metrics(out: Path, reports: dict[str, MetricsReport]) -> str:
    (out / "metrics.json").write_text(
        json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=1, sort_keys=True)
    )
    table = format_table(reports)
    (out / "metrics.txt").write_text(table + "\n")
    return table


# -- commands -------------------------------------------------------------------------

def run_generate(spec: dict) -> int:
    scene = spec["scene"]
    w, h = spec["width"], spec["height"]
    if scene == "donut":
        img, gt = make_donut(w, h, spec["outer_radius"], spec["inner_radius"], n=spec["n"])
    elif scene == "blobs":
        if not spec["figure5"]:
            raise UsageError("generate blobs currently supports only --figure5")
        img, gt = figure5_scene(w, h, n=spec["n"])
    else:
        img, gt = make_bone(w, h, n=spec["n"])
    if spec["noise"] is not None:
        img, gt = apply_noise(img, gt, NoiseSpec(**spec["noise"]))
    out = Path(spec["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(img, out)
    for j, c in enumerate(gt):
        write_contour_csv(c, out.with_name(f"{out.stem}_gt{j}.csv"))
    _write_run(out.with_name(f"{out.stem}.run.json"), "generate", spec)
    print(f"wrote {out} and {len(gt)} ground-truth contours")
    return EXIT_OK


def _generate_spec(a) -> dict:
    size = {"donut": 256, "blobs": 256, "bone": 128}[a.scene]
    noise = None
    if a.blur_sigma is not None:
        noise = {"kind": "gaussian_blur", "blur_sigma": a.blur_sigma, "seed": a.seed}
    elif a.salt_pepper is not None:
        noise = {"kind": "salt_pepper", "sp_density": a.salt_pepper, "seed": a.seed}
    elif a.perturb_sigma is not None:
        noise = {"kind": "contour_perturb", "perturb_sigma": a.perturb_sigma, "seed": a.seed}
    return {
        "scene": a.scene,
        "figure5": a.figure5,
        "width": a.width or size,
        "height": a.height or size,
        "outer_radius": a.outer_radius,
        "inner_radius": a.inner_radius,
        "n": a.n,
        "noise": noise,
        "out": _abs(a.out or f"{a.scene}.png"),
    }


def run_segment(spec: dict) -> int:
    cfg = RunConfig.from_dict(spec["config"])
    method = spec["method"]
    out = Path(spec["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    img = load_image(spec["image"])
    if method == "bac" and not spec["init"]:
        raise UsageError("--method bac needs --init")
    if method in ("bac", "topbac") and cfg.lambda3 > 0 and not spec["train"]:
        raise UsageError("lambda3 > 0 needs --train to fit a shape prior")
    train = load_training_dir(spec["train"]) if spec["train"] and method in ("bac", "topbac") else None
    _write_run(out / "run.json", "segment", spec)

    result: SegmentationResult | None = None
    if method == "topbac":
        result = top_bac(
            img, train, cfg.sigma1, cfg.sigma2, cfg.T, cfg.weights, cfg.k, cfg.selection,
            bandwidth=cfg.bandwidth, kind=cfg.kind, tol=cfg.tol, max_iter=cfg.max_iter, n=cfg.n,
            truncate=cfg.truncate, filters=cfg.filters, strict_init=not spec["force"],
        )
    elif method == "bac":
        inits = []
        for item in spec["init"]:
            inits.append(_default_circle(img.width, img.height, cfg.n) if item == "circle" else read_contour_csv(item))
        result = bac(
            img, inits, train, cfg.weights, bandwidth=cfg.bandwidth, kind=cfg.kind,
            tol=cfg.tol, max_iter=cfg.max_iter, n=cfg.n,
        )
    if result is not None:
        result.save_json(out / "result.json")
        result.save_timing(out / "timing.json")
        initial, final = result.initial, result.final
        for i, (st, c) in enumerate(zip(result.states, final)):
            write_contour_csv(c, out / f"final_{i}.csv")
            flag = " self-intersecting" if st.self_intersecting else ""
            print(f"contour {i}: {st.iteration} iterations ({st.stop_reason}){flag}")
        print(f"total iterations: {result.total_iterations}")
    else:
        if method == "top":
            labels, _, _ = segment(img, cfg.sigma1, cfg.sigma2, cfg.T, truncate=cfg.truncate)
            contours = extract_contours(labels, n=cfg.n)
            if cfg.filters:
                contours = filter_contours(contours, image_size=(img.width, img.height), **cfg.filters)
            contours = select_contours(contours, cfg.k, cfg.selection)
            params = {"method": "top", "sigma1": cfg.sigma1, "sigma2": cfg.sigma2, "T": cfg.T}
        else:
            k = 2 if cfg.k is None else cfg.k
            labels, contours = kmeans_baseline(img, k, cfg.seed, n=cfg.n)
            params = {"method": "kmeans", "k": k, "seed": cfg.seed}
        initial, final = [], contours
        doc = {"params": params, "contours": [{"contour": c.points.tolist()} for c in contours]}
        (out / "result.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
        for i, c in enumerate(contours):
            write_contour_csv(c, out / f"final_{i}.csv")
        print(f"{len(contours)} contours")
    render_overlay(img, initial, final, out / "overlay.png")
    if spec["truth"]:
        truth = [read_contour_csv(p) for p in spec["truth"]]
        rep = evaluate(final, truth, img.width, img.height)
        print(_write_metrics(out, {method: rep}))
    if result is not None and result.degenerate:
        print("contour evolution degenerated (area collapsed)", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def _segment_spec(a) -> dict:
    overrides = {k: getattr(a, f"cfg_{k}") for k in KEYS if getattr(a, f"cfg_{k}") is not None}
    cfg = load_config(a.config, overrides)
    return {
        "image": _abs(a.image),
        "method": a.method,
        "config": cfg.to_dict(),
        "train": _abs(a.train),
        "init": [i if i == "circle" else _abs(i) for i in (a.init or [])],
        "truth": [_abs(t) for t in (a.truth or [])],
        "out_dir": _abs(a.out_dir),
        "force": a.force,
    }


def run_eval(spec: dict) -> int:
    out = Path(spec["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_run(out / "run.json", "eval", spec)
    truth = _contours_from(spec["truth"])
    reports = {}
    for name, group in zip(spec["names"], spec["estimates"]):
        reports[name] = evaluate(_contours_from(group), truth, spec["width"], spec["height"])
    print(_write_metrics(out, reports))
    return EXIT_OK


def _eval_spec(a) -> dict:
    w, h = a.width, a.height
    if a.image:
        img = load_image(a.image)
        w, h = img.width, img.height
    if w is None or h is None:
        raise UsageError("eval needs --width and --height, or --image")
    names = a.name or []
    if names and len(names) != len(a.estimate):
        raise UsageError("give one --name per --estimate group")
    names = names or ([f"method{i + 1}" for i in range(len(a.estimate))] if len(a.estimate) > 1 else ["estimate"])
    return {
        "estimates": [[_abs(p) for p in g] for g in a.estimate],
        "names": names,
        "truth": [_abs(p) for p in a.truth],
        "width": w,
        "height": h,
        "out_dir": _abs(a.out_dir),
    }


RUNNERS = {"generate": run_generate, "segment": run_segment, "eval": run_eval}


def run_rerun(path, out_dir=None) -> int:
    doc = json.loads(Path(path).read_text())
    if doc.get("tool") != "topbac" or doc.get("command") not in RUNNERS:
        raise UsageError(f"{path}: not a topbac run.json")
    if doc.get("version") != __version__:
        log.warning("run.json written by topbac %s, rerunning with %s", doc.get("version"), __version__)
    spec = dict(doc["spec"])
    if out_dir is not None:
        d = _abs(out_dir)
        Path(d).mkdir(parents=True, exist_ok=True)
        if doc["command"] == "generate":
            spec["out"] = str(Path(d) / Path(spec["out"]).name)
        else:
            spec["out_dir"] = d
    return RUNNERS[doc["command"]](spec)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    warnings.simplefilter("default")
    try:
        if a.command == "generate":
            return run_generate(_generate_spec(a))
        if a.command == "segment":
            return run_segment(_segment_spec(a))
        if a.command == "eval":
            return run_eval(_eval_spec(a))
        return run_rerun(a.run_json, a.out_dir)
    except TopInitError as exc:
        print(f"topbac: TOP initialisation failed: {exc}", file=sys.stderr)
        return EXIT_TOP_INIT
    except (UsageError, ConfigError, ImageFormatError, FileNotFoundError, ValueError) as exc:
        print(f"topbac: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
