"""Command-line entry point: synth, train-spectral, train-spatial, detect, eval, diag-pca, gradcheck, ablate.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import hsidata
from .detector import FUSIONS, detect, enhance
from .errors import FormatError, NumericalError, RebelHadError
from .evaluation import EvalReport, evaluate_scene, pca_diag, write_roc
from .gradsuite import CASES, run_suite
from .losses import STAGE1_TERMS, STAGE2_TERMS
from .networks import load_spatial, load_spe_fen, save_spatial, save_spe_fen
from .rng import SplitMix64
from .trainer import (
    STAGE1_GRID,
    STAGE2_GRID,
    TrainConfig,
    ablation_csv,
    run_ablation,
    train_stage1,
    train_stage2,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# Test-scene defaults: plain RX scores every 64x64x20 scene at AUC >= 0.95 at this contrast.
DEFAULT_ANOMALIES = 4
DEFAULT_ANOMALY_SIZE = 2
DEFAULT_CONTRAST = 0.08


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p, seed=True, bands=True):
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 gives bit-stable output)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="overridden by $REBELHAD_SEED")
    if bands:
        p.add_argument("--bands", type=int, default=None, help="keep only the first N bands")


def _add_train(p):
    p.add_argument("--data", required=True, help="directory of background .hcf cubes")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--log", default=None, help="loss CSV (default: <out>.csv)")
    p.add_argument("--config", default=None, help="JSON TrainConfig; flags given explicitly win")
    p.add_argument("--lr", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--losses", default=None, help="comma-separated subset of loss terms")
    _add_common(p)


def build_parser():
    parser = _Parser(prog="rebelhad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic test scenes, masks and background training cubes")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--train-scenes", type=int, default=0, help="background-only cubes written to <out>/train")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--spectral-bands", type=int, default=20, dest="spectral_bands")
    p.add_argument("--endmembers", type=int, default=4)
    p.add_argument("--anomalies", type=int, default=DEFAULT_ANOMALIES)
    p.add_argument("--anomaly-size", type=int, default=DEFAULT_ANOMALY_SIZE)
    p.add_argument("--contrast", type=float, default=DEFAULT_CONTRAST)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--smoothness", type=int, default=4)
    _add_common(p, bands=False)

    _add_train(sub.add_parser("train-spectral", help="stage 1: train and prune the spectral network"))
    p = sub.add_parser("train-spatial", help="stage 2: train the spatial student and decoder")
    p.add_argument("--teacher", required=True, help="spectral model from train-spectral")
    _add_train(p)

    p = sub.add_parser("detect", help="score a cube or a directory of cubes")
    p.add_argument("--scene", required=True, help=".hcf file or directory")
    p.add_argument("--spe", required=True)
    p.add_argument("--spa", default=None)
    p.add_argument("--fusion", choices=FUSIONS, default="add")
    p.add_argument("--out", required=True, help="score file, or directory when --scene is one")
    p.add_argument("--preview", action="store_true", help="also write an 8-bit PGM of each map")
    p.add_argument("--timing", action="store_true", help="record per-scene seconds in <out>/timing.csv")
    _add_common(p, seed=False)

    p = sub.add_parser("eval", help="AUC report for score maps against masks")
    p.add_argument("--scores-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--roc-dir", default=None)
    p.add_argument("--timing", action="store_true", help="fill the seconds column from detect's timing.csv")
    _add_common(p, seed=False, bands=False)

    p = sub.add_parser("diag-pca", help="project pixels onto leading principal components")
    p.add_argument("--scene", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-k", type=int, default=3)
    p.add_argument("--spe", default=None, help="project H + F_spe (+ F_spa) instead of H")
    p.add_argument("--spa", default=None)
    _add_common(p, seed=False)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--coords", type=int, default=64)
    _add_common(p, seed=False, bands=False)

    p = sub.add_parser("ablate", help="loss ablation table")
    p.add_argument("--grid", required=True,
                   help="'stage1', 'stage2', or ';'-separated comma lists such as 'z;mse,sim'")
    p.add_argument("--stage", type=int, choices=(1, 2), default=None,
                   help="needed only for custom grids")
    p.add_argument("--test-dir", required=True, help="directory of scenes with .pgm masks")
    p.add_argument("--fusion", choices=FUSIONS, default="add")
    p.add_argument("--teacher", default=None, help="reuse a spectral model for stage-2 rows")
    _add_train(p)
    return parser


# --------------------------------------------------------------------------


def _resolve_seed(args):
    env = os.environ.get("REBELHAD_SEED")
    if env is not None and hasattr(args, "seed"):
        try:
            args.seed = int(env)
        except ValueError:
            raise UsageError(f"REBELHAD_SEED must be an integer, got {env!r}") from None


def _print_config(args, extra=None):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    if extra:
        cfg.update(extra)
    print(json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _train_config(args):
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("lr", "beta1", "beta2", "batch", "epochs")
                 if getattr(args, k) is not None}
    overrides["seed"] = args.seed
    if args.losses:
        overrides["enabled_losses"] = frozenset(s.strip() for s in args.losses.split(",") if s.strip())
    try:
        return replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _corpus(args):
    cubes = hsidata.load_corpus(args.data, args.bands)
    if not cubes:
        raise FormatError(f"{args.data}: no .hcf cubes found")
    return cubes


def _log_path(args):
    return args.log or f"{args.out}.csv"


def cmd_synth(args):
    if args.scenes < 0 or args.train_scenes < 0:
        raise UsageError("--scenes and --train-scenes must be >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = SplitMix64(args.seed).next_u64(args.scenes + args.train_scenes) >> np.uint64(1)
    base = dict(height=args.height, width=args.width, bands=args.spectral_bands,
                endmembers=args.endmembers, noise_sigma=args.noise, smoothness=args.smoothness)
    for i in range(args.scenes):
        spec = hsidata.SceneSpec(**base, anomaly_count=args.anomalies, anomaly_size=args.anomaly_size,
                                 anomaly_contrast=args.contrast, seed=int(seeds[i]))
        cube, mask = hsidata.synth_scene(spec)
        hsidata.write_cube(cube, out / f"scene_{i:03d}.hcf")
        hsidata.write_mask(mask, out / f"scene_{i:03d}.pgm")
    if args.train_scenes:
        train = out / "train"
        train.mkdir(exist_ok=True)
        for j in range(args.train_scenes):
            cube, _ = hsidata.synth_scene(hsidata.SceneSpec(**base, seed=int(seeds[args.scenes + j])))
            hsidata.write_cube(cube, train / f"train_{j:03d}.hcf")
    return EXIT_OK


def cmd_train_spectral(args):
    cfg = _train_config(args)
    _print_config(args, {"train_config": cfg.to_dict()})
    spe, log = train_stage1(_corpus(args), cfg)
    save_spe_fen(spe, args.out)
    log.write(_log_path(args))
    return EXIT_OK


def cmd_train_spatial(args):
    cfg = _train_config(args)
    _print_config(args, {"train_config": cfg.to_dict()})
    teacher = load_spe_fen(args.teacher)
    spa, frn, log = train_stage2(_corpus(args), teacher, cfg)
    save_spatial(spa, frn, args.out)
    log.write(_log_path(args))
    return EXIT_OK


def _load_models(args):
    spe = load_spe_fen(args.spe)
    spa = load_spatial(args.spa)[0] if args.spa else None
    return spe, spa


def _prepare(cube, args):
    return hsidata.select_bands(cube, args.bands) if args.bands else cube


def cmd_detect(args):
    if args.fusion == "mult" and not args.spa:
        raise UsageError("--fusion mult needs --spa")
    spe, spa = _load_models(args)
    scene = Path(args.scene)
    if scene.is_dir():
        jobs = [(p, Path(args.out) / f"{p.stem}.hcf") for p in hsidata.list_cubes(scene)]
        if not jobs:
            raise FormatError(f"{scene}: no .hcf cubes found")
        Path(args.out).mkdir(parents=True, exist_ok=True)
    else:
        jobs = [(scene, Path(args.out))]
    timings = []
    for src, dst in jobs:
        cube = _prepare(hsidata.read_cube(src), args)
        started = time.perf_counter()
        scores = detect(cube, spe, spa, args.fusion)
        timings.append((src.stem, time.perf_counter() - started))
        hsidata.write_scores(scores, dst)
        if args.preview:
            hsidata.write_pgm_preview(scores, dst.with_suffix(".pgm"))
    if args.timing:
        target = Path(args.out) / "timing.csv" if scene.is_dir() else Path(f"{args.out}.timing.csv")
        rows = "".join(f"{name},{sec:.6f}\n" for name, sec in timings)
        hsidata.atomic_write(target, ("scene_id,seconds\n" + rows).encode("ascii"))
    return EXIT_OK


def _read_timing(path):
    if not path.is_file():
        return {}
    lines = path.read_text(encoding="ascii").splitlines()[1:]
    return {name: float(sec) for name, sec in (ln.split(",") for ln in lines if ln)}


def cmd_eval(args):
    scores_dir, truth_dir = Path(args.scores_dir), Path(args.truth_dir)
    files = hsidata.list_cubes(scores_dir)
    if not files:
        raise FormatError(f"{scores_dir}: no score maps found")
    timing = _read_timing(scores_dir / "timing.csv") if args.timing else {}
    report = EvalReport()
    for path in files:
        truth_path = truth_dir / f"{path.stem}.pgm"
        if not truth_path.is_file():
            raise FormatError(f"{truth_path}: missing mask for {path.name}")
        scores = hsidata.read_scores(path)
        mask = hsidata.read_mask(truth_path)
        try:
            scene = evaluate_scene(path.stem, scores, mask, timing.get(path.stem))
        except ValueError as exc:
            raise FormatError(f"{path.name}: {exc}") from exc
        report.scenes.append(scene)
        if args.roc_dir:
            Path(args.roc_dir).mkdir(parents=True, exist_ok=True)
            write_roc(Path(args.roc_dir) / f"{path.stem}.csv", scene.curve)
    report.write(args.out, timing=args.timing)
    print(f"mAUC {report.mauc:.6f} over {len(report.scenes)} scenes", file=sys.stderr)
    return EXIT_OK


def cmd_diag_pca(args):
    cube = _prepare(hsidata.read_cube(args.scene), args)
    data = cube.data
    if args.spe:
        spe, spa = _load_models(args)
        f_spe, f_spa = enhance(cube, spe, spa)
        data = data + f_spe if f_spa is None else data + (f_spa + f_spe)
    result = pca_diag(data, hsidata.read_mask(args.truth), args.k)
    if result.rank_deficient:
        print(f"warning: only {result.vectors.shape[1]} nondegenerate components", file=sys.stderr)
    result.write(args.out)
    return EXIT_OK


def cmd_gradcheck(args):
    worst = run_suite(range(args.seeds), h=args.h, n_coords=args.coords)
    print(f"{'loss':<14}max_rel_err")
    for name in CASES:
        flag = "" if worst[name] < args.tol else "  FAIL"
        print(f"{name:<14}{worst[name]:.3e}{flag}")
    return EXIT_OK if all(v < args.tol for v in worst.values()) else EXIT_NUMERIC


def _parse_grid(args):
    if args.grid == "stage1":
        return 1, list(STAGE1_GRID)
    if args.grid == "stage2":
        return 2, list(STAGE2_GRID)
    grid = [frozenset(t.strip() for t in entry.split(",") if t.strip()) for entry in args.grid.split(";")]
    names = set().union(*grid)
    stage = args.stage or (1 if names <= set(STAGE1_TERMS) else 2)
    terms = STAGE1_TERMS if stage == 1 else STAGE2_TERMS
    if not names <= set(terms) or any(not g for g in grid):
        raise UsageError(f"grid {args.grid!r} does not name stage-{stage} losses {terms}")
    return stage, grid


def _labelled_scenes(directory, bands):
    pairs = []
    for path in hsidata.list_cubes(directory):
        mask_path = path.with_suffix(".pgm")
        if not mask_path.is_file():
            raise FormatError(f"{mask_path}: missing mask")
        cube = hsidata.read_cube(path)
        pairs.append((hsidata.select_bands(cube, bands) if bands else cube, hsidata.read_mask(mask_path)))
    if not pairs:
        raise FormatError(f"{directory}: no labelled scenes")
    return pairs


def cmd_ablate(args):
    stage, grid = _parse_grid(args)
    cfg = _train_config(args)
    _print_config(args, {"train_config": cfg.to_dict(), "stage": stage})
    teacher = load_spe_fen(args.teacher) if args.teacher else None
    rows = run_ablation(_corpus(args), _labelled_scenes(args.test_dir, args.bands), cfg, grid,
                        stage=stage, fusion=args.fusion, teacher=teacher)
    hsidata.atomic_write(args.out, ablation_csv(rows, stage).encode("ascii"))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train-spectral": cmd_train_spectral,
    "train-spatial": cmd_train_spatial,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "diag-pca": cmd_diag_pca,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _resolve_seed(args)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.command not in ("train-spectral", "train-spatial", "ablate"):
            _print_config(args)
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RebelHadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
