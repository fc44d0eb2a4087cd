"""Command-line front end: fit, mesh, metrics, elements, unproject, fixtures."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import depth as dp
from .fit import FitConfig, FitError, fit_corpus, substream, write_trace_csv
from .fixtures import KINDS, make_fixture
from .geom import NotWatertightError, require_watertight
from .io import FormatError, load_model, read_mesh, save_model, write_mesh, write_ply
from .loss import ISOLEVEL, LossConfig
from .mesher import MeshingConfig, element_ellipsoids, extract_mesh
from .metrics import DEFAULT_SAMPLES, DEFAULT_TAU, evaluate

log = logging.getLogger("ldif")

EXIT_OK, EXIT_NUMERIC, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    """Bad input file or argument; maps to exit code 2."""


def _seed_int(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(2**31))


def _load_mesh(path):
    if not Path(path).is_file():
        raise UsageError(f"mesh file not found: {path}")
    try:
        return read_mesh(path)
    except (FormatError, ValueError, IndexError) as exc:
        raise UsageError(f"cannot read mesh {path}: {exc}") from exc


def _load_model(path):
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    try:
        return load_model(path)
    except (FormatError, ValueError) as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from exc


def cmd_fit(args) -> int:
    meshes = [_load_mesh(path) for path in args.mesh]
    for path, mesh in zip(args.mesh, meshes):
        try:
            require_watertight(mesh)
        except NotWatertightError as exc:
            raise UsageError(f"{path}: {exc}") from exc
    corpus = len(meshes) > 1
    if corpus and args.trace:
        raise UsageError("--trace names one file; with several meshes traces go next to each model")
    loss = LossConfig(alpha=args.alpha, w_s=args.w_near, w_u=args.w_uniform, w_c=args.w_center,
                      w_p=args.w_point, isolevel=args.isolevel)
    cfg = FitConfig(n_elements=args.elements, latent_dim=args.latent, hidden=args.hidden,
                    steps=args.steps, lr=args.lr, seed=args.seed, n_near=args.near_samples,
                    n_uniform=args.uniform_samples, freeze_decoder=args.freeze_decoder,
                    sym_count=args.sym_count, sym_axis=args.sym_axis, loss=loss)
    try:
        results = fit_corpus(meshes, cfg)
    except FitError as exc:
        log.error("fitting failed at %s", exc)
        return EXIT_NUMERIC
    if corpus:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        outs = [Path(args.out) / (Path(p).stem + ".ldif") for p in args.mesh]
        if len(set(outs)) != len(outs):
            raise UsageError("mesh file names must have distinct stems in corpus mode")
    else:
        outs = [Path(args.out)]
    for path, out, result in zip(args.mesh, outs, results):
        save_model(result.model, out)
        trace = args.trace or str(out.with_suffix(".loss.csv"))
        write_trace_csv(result.trace, trace)
        if result.trace:
            _, lp, lc, total = result.trace[-1]
            print(f"{path}: final L_P {lp:.6f}  L_C {lc:.6f}  total {total:.6f}")
        print(f"wrote {out} and {trace}")
    return EXIT_OK


def cmd_mesh(args) -> int:
    model = _load_model(args.model)
    cfg = MeshingConfig(resolution=args.resolution, isolevel=args.isolevel, threads=args.threads)
    mesh = extract_mesh(model, cfg, world=True)
    write_mesh(mesh, args.out)
    print(f"wrote {args.out}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return EXIT_OK


def cmd_metrics(args) -> int:
    pred = _load_mesh(args.pred)
    gt = _load_mesh(args.gt)
    rep = evaluate(pred, gt, tau=args.tau, n=args.samples, seed=_seed_int(args.seed, "metrics"))
    print(rep.pretty())
    if args.csv:
        Path(args.csv).write_text(rep.csv_header() + "\n" + rep.csv_row() + "\n")
    return EXIT_OK


def cmd_elements(args) -> int:
    model = _load_model(args.model)
    mesh, tags = element_ellipsoids(model, args.isolevel)
    if Path(args.out).suffix.lower() != ".ply":
        raise UsageError("element export needs a .ply output to carry element tags")
    write_ply(args.out, mesh.vertices, mesh.triangles, face_tags=tags)
    print(f"wrote {args.out}: {len(np.unique(tags))} element surfaces")
    return EXIT_OK


def cmd_unproject(args) -> int:
    for p in (args.depth, args.camera):
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
    try:
        depth = dp.read_depth(args.depth, args.depth_scale)
        h, w = depth.shape
        cam = dp.read_camera(args.camera, w, h)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    cloud, _ = dp.estimate_normals(dp.unproject(depth, cam), cam)
    if len(cloud) == 0:
        raise UsageError("depth image has no pixel with a valid neighbourhood")
    out = dp.gather_global(cloud.points, cloud.normals, args.count, substream(args.seed, "sampling"))
    write_ply(args.out, out.points, normals=out.normals)
    print(f"wrote {args.out}: {len(out)} oriented points")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    params = {}
    if args.kind == "icosphere":
        params["subdiv"] = args.subdiv
    mesh = make_fixture(args.kind, **params)
    write_mesh(mesh, args.out)
    print(f"wrote {args.out}: {len(mesh.triangles)} triangles")
    return EXIT_OK


class _HelpFormatter(argparse.HelpFormatter):
    """Append the default to every option that has one."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.option_strings and not any(action.default is v for v in (None, False, argparse.SUPPRESS)):
            text += " (default: %(default)s)"
        return text


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="ldif", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a watertight mesh", formatter_class=fmt)
    p.add_argument("--mesh", required=True, nargs="+",
                   help="input .ply or .obj; several meshes share one decoder")
    p.add_argument("--out", required=True, help="output model file, or a directory for several meshes")
    p.add_argument("--trace", help="loss CSV path (default: <out>.loss.csv)")
    p.add_argument("--elements", type=int, default=32, help="shape elements N")
    p.add_argument("--latent", type=int, default=32, help="latent width M")
    p.add_argument("--hidden", type=int, default=32, help="decoder hidden width H")
    p.add_argument("--steps", type=int, default=5000, help="optimization steps")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--seed", type=int, default=7, help="random seed")
    p.add_argument("--sym-count", type=int, default=None, help="symmetric elements (default: ceil(N/2))")
    p.add_argument("--sym-axis", type=int, default=0, choices=(0, 1, 2), help="mirror axis")
    p.add_argument("--freeze-decoder", action="store_true", help="keep the decoder fixed (pure Gaussian mixture)")
    p.add_argument("--near-samples", type=int, default=1024, help="near-surface samples per step")
    p.add_argument("--uniform-samples", type=int, default=1024, help="uniform samples per step")
    p.add_argument("--alpha", type=float, default=100.0, help="sigmoid sharpness")
    p.add_argument("--w-near", type=float, default=0.1, help="near-surface sample weight")
    p.add_argument("--w-uniform", type=float, default=1.0, help="uniform sample weight")
    p.add_argument("--w-center", type=float, default=10.0, help="center loss weight")
    p.add_argument("--w-point", type=float, default=1.0, help="point loss weight")
    p.add_argument("--isolevel", type=float, default=ISOLEVEL, help="surface level of the field")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mesh", help="extract the isosurface of a model", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--out", required=True, help="output .ply or .obj")
    p.add_argument("--resolution", type=int, default=128, help="grid nodes per axis")
    p.add_argument("--isolevel", type=float, default=ISOLEVEL, help="surface level of the field")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("metrics", help="compare a predicted mesh to ground truth", formatter_class=fmt)
    p.add_argument("--pred", required=True, help="predicted .ply or .obj")
    p.add_argument("--gt", required=True, help="ground-truth .ply or .obj")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="F-Score distance threshold")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="samples per shape")
    p.add_argument("--seed", type=int, default=7, help="random seed")
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("elements", help="export per-element ellipsoids", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--out", required=True, help="output .ply")
    p.add_argument("--isolevel", type=float, default=ISOLEVEL, help="surface level of the field")
    p.set_defaults(func=cmd_elements)

    p = sub.add_parser("unproject", help="depth image to an oriented point cloud", formatter_class=fmt)
    p.add_argument("--depth", required=True, help="16-bit .png or raw DPTH file")
    p.add_argument("--camera", required=True, help="camera text file")
    p.add_argument("--out", required=True, help="output .ply")
    p.add_argument("--count", type=int, default=dp.GLOBAL_COUNT, help="points to keep")
    p.add_argument("--depth-scale", type=float, default=1000.0, help="PNG counts per unit")
    p.add_argument("--seed", type=int, default=7, help="random seed")
    p.set_defaults(func=cmd_unproject)

    p = sub.add_parser("fixtures", help="write a synthetic test shape", formatter_class=fmt)
    p.add_argument("--kind", required=True, choices=KINDS, help="shape to write")
    p.add_argument("--out", required=True, help="output .ply or .obj")
    p.add_argument("--subdiv", type=int, default=3, help="icosphere subdivision level")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
