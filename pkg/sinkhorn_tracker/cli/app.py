"""
Command-line entry point: track, train, eval, gradcheck, sinkhorn-demo, ablate.

stdout carries command output only; logs go to stderr as JSON lines.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error
(also returned when gradcheck fails).
"""
import argparse
import io as text_io
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from sinkhorn_tracker.assoc.sinkhorn import marginal_targets, sinkhorn_normalize
from sinkhorn_tracker.constants import (
    DEFAULT_D_APP, DEFAULT_D_INTER, DEFAULT_ENTROPIC_L, DEFAULT_EPOCHS, DEFAULT_EVAL_IOU, DEFAULT_GATE_PX,
    DEFAULT_GCN_LAYERS, DEFAULT_LEARNING_RATE, DEFAULT_LOOKBACK, DEFAULT_LOSS_WEIGHT, DEFAULT_S_SLACK,
    DEFAULT_S_THRES, DEFAULT_SEED, DEFAULT_SINKHORN_ITERS, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, LOG_LEVEL,
)
from sinkhorn_tracker.embeddings.app import EmbeddingProvider, FileEmbeddingProvider, SyntheticEmbeddingProvider
from sinkhorn_tracker.io.app import (
    flatten_ground_truth, parse_detections, parse_ground_truth, parse_results, read_frame_size,
    sequence_name, write_results,
)
from sinkhorn_tracker.io.config import RunConfig, load_run_config
from sinkhorn_tracker.metrics.app import EvalReport, evaluate, format_report
from sinkhorn_tracker.params.app import init_params
from sinkhorn_tracker.params.checkpoint import load_params, save_params
from sinkhorn_tracker.synthetic.app import run_ablation
from sinkhorn_tracker.tracker.app import resolve_detections, run_sequence
from sinkhorn_tracker.train.app import evaluate_loss, train_loop
from sinkhorn_tracker.train.dataset import identity_map, sequence_from_ground_truth, split_train_val
from sinkhorn_tracker.train.gradcheck import run_gradcheck
from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import (
    DataError, InputValidator, ValidationError, cli_error_handler,
)

# flag dest -> RunConfig field
OVERRIDES = {
    "l": "l", "iters": "iters", "s_slack": "s_slack", "s_thres": "s_thres", "gate_px": "gate_px",
    "w": "w", "lr": "lr", "lookback": "lookback", "layers": "layers", "seed": "seed",
    "epochs": "epochs", "d_app": "d_app", "d_inter": "d_inter",
}


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting so main() owns the exit code."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' run configuration file")
    p.add_argument("--seed", type=int, help=f"random seed (default: {DEFAULT_SEED})")
    p.add_argument("--verbose", action="store_true", help="log at DEBUG level")


def _add_model_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameter overrides")
    g.add_argument("--l", type=float, help=f"Sinkhorn entropic parameter (default: {DEFAULT_ENTROPIC_L})")
    g.add_argument("--iters", type=int, help=f"Sinkhorn iterations (default: {DEFAULT_SINKHORN_ITERS})")
    g.add_argument("--s-slack", type=float, help=f"slack row/column score (default: {DEFAULT_S_SLACK})")
    g.add_argument("--s-thres", type=float, help=f"assignment threshold on S* (default: {DEFAULT_S_THRES})")
    g.add_argument("--gate-px", type=float, help=f"center-distance gate in pixels (default: {DEFAULT_GATE_PX})")
    g.add_argument("--layers", type=int, help=f"GCN layer count (default: {DEFAULT_GCN_LAYERS})")
    g.add_argument("--d-app", type=int, help=f"appearance embedding dimension (default: {DEFAULT_D_APP})")
    g.add_argument("--d-inter", type=int, help=f"interaction feature dimension (default: {DEFAULT_D_INTER})")


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training overrides")
    g.add_argument("--w", type=float, help=f"positive-label loss weight (default: {DEFAULT_LOSS_WEIGHT})")
    g.add_argument("--lr", type=float, help=f"Adam learning rate (default: {DEFAULT_LEARNING_RATE})")
    g.add_argument("--lookback", type=int, help=f"max frames back for the previous frame (default: {DEFAULT_LOOKBACK})")
    g.add_argument("--epochs", type=int, help=f"training epochs (default: {DEFAULT_EPOCHS})")


def _add_embedding_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", nargs="+", help="embedding file(s), one per sequence")
    p.add_argument("--embedding-mode", choices=["file", "synthetic"], default="file",
                   help="read embeddings from files or generate them (default: file)")
    p.add_argument("--frames-wh", help="frame size as WIDTHxHEIGHT (default: from config, 1920x1080)")
    p.add_argument("--frame-size-file", help="two-line sidecar holding frame width and height")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="sinkhorn_tracker",
                            description="GCN + Sinkhorn online multi-object tracking")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("track", help="track detection sequences and write MOT results")
    _add_common(p)
    p.add_argument("--detections", nargs="+", required=True, help="MOT detection file(s)")
    p.add_argument("--params", required=True, help="parameter checkpoint")
    p.add_argument("--gt", nargs="+", help="ground truth per sequence (synthetic embedding identities only)")
    p.add_argument("--out", required=True, help="result file, or a directory when tracking several sequences")
    _add_embedding_source(p)
    _add_model_overrides(p)

    p = sub.add_parser("train", help="train the metric learners on ground-truth sequences")
    _add_common(p)
    p.add_argument("--gt", nargs="+", required=True, help="MOT ground-truth file(s)")
    p.add_argument("--out", required=True, help="output parameter checkpoint")
    p.add_argument("--loss-csv", help="loss history CSV (default: <out>.loss.csv)")
    p.add_argument("--params", help="start from this checkpoint instead of a fresh initialization")
    p.add_argument("--validate", action="store_true",
                   help="hold out the last holdout_frames frames of each sequence and report validation loss")
    _add_embedding_source(p)
    _add_model_overrides(p)
    _add_train_overrides(p)

    p = sub.add_parser("eval", help="CLEAR-MOT evaluation of results against ground truth")
    _add_common(p)
    p.add_argument("--gt", nargs="+", required=True, help="ground-truth file(s)")
    p.add_argument("--hyp", nargs="+", required=True, help="result file(s), aligned with --gt")
    p.add_argument("--iou", type=float, help=f"match IoU threshold (default: {DEFAULT_EVAL_IOU})")
    p.add_argument("--out", help="write the report as CSV")

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    _add_common(p)
    p.add_argument("--sizes", nargs=2, type=int, metavar=("M", "N"), default=[2, 2],
                   help="tracklets and detections in the toy instance (default: 2 2)")
    p.add_argument("--d-app", type=int, default=8, help="embedding dimension of the toy instance (default: 8)")
    p.add_argument("--corrupt-grad", type=float, help="scale analytic gradients by (1 + value) to test the check")

    p = sub.add_parser("sinkhorn-demo", help="normalize a score matrix and print S* with its marginals")
    _add_common(p)
    p.add_argument("--matrix", required=True, help="text matrix, comma or whitespace separated; -inf forbids a cell")
    p.add_argument("--augment", action="store_true",
                   help="the file holds the inner m x n scores; append the slack row and column")
    p.add_argument("--l", type=float, help=f"entropic parameter (default: {DEFAULT_ENTROPIC_L})")
    p.add_argument("--iters", type=int, help=f"iterations (default: {DEFAULT_SINKHORN_ITERS})")
    p.add_argument("--s-slack", type=float, help=f"slack score with --augment (default: {DEFAULT_S_SLACK})")

    p = sub.add_parser("ablate", help="identity switches and MOTA of the affinity, propagation, "
                                      "normalization and depth variants")
    _add_common(p)
    p.add_argument("--trials", type=int, default=20, help="seeded crossing scenarios (default: 20)")
    p.add_argument("--noise", type=float, default=0.6, help="embedding noise scale (default: 0.6)")
    p.add_argument("--d-app", type=int, default=8, help="embedding dimension (default: 8)")
    p.add_argument("--train-epochs", type=int, default=2,
                   help="fine-tune each variant on a held-out crossing before scoring (default: 2)")
    return parser


def _run_config(args) -> RunConfig:
    overrides = {field: getattr(args, dest) for dest, field in OVERRIDES.items() if hasattr(args, dest)}
    frame_size = None
    if getattr(args, "frame_size_file", None):
        frame_size = read_frame_size(args.frame_size_file)
    if getattr(args, "frames_wh", None):
        frame_size = InputValidator.parse_frame_size(args.frames_wh)
    if frame_size:
        overrides["frame_width"], overrides["frame_height"] = frame_size
    return load_run_config(args.config, overrides)


def _aligned(paths: Optional[List[str]], count: int, flag: str) -> List[Optional[str]]:
    if not paths:
        return [None] * count
    if len(paths) != count:
        raise ValidationError(f"{flag} needs one path per sequence ({count}), got {len(paths)}", field=flag)
    return list(paths)


def _provider(args, config: RunConfig, name: str, embeddings: Optional[str],
              gt_path: Optional[str]) -> EmbeddingProvider:
    if args.embedding_mode == "file":
        if embeddings is None:
            raise ValidationError("--embeddings is required with --embedding-mode file", field="embeddings")
        return FileEmbeddingProvider(embeddings, expected_dim=config.d_app)
    identities = identity_map(name, parse_ground_truth(gt_path)) if gt_path else None
    return SyntheticEmbeddingProvider(config.d_app, identities, seed=config.seed)


@cli_error_handler("track")
def cmd_track(args) -> int:
    config = _run_config(args)
    params = load_params(args.params, config.model())
    count = len(args.detections)
    embeddings = _aligned(args.embeddings, count, "--embeddings")
    gts = _aligned(args.gt, count, "--gt")
    out = Path(args.out)
    if count > 1:
        out.mkdir(parents=True, exist_ok=True)

    for det_path, emb_path, gt_path in zip(args.detections, embeddings, gts):
        name = sequence_name(det_path)
        frames = parse_detections(det_path)
        provider = _provider(args, config, name, emb_path, gt_path)
        resolved = resolve_detections(name, frames, provider)
        table = run_sequence(resolved, config.tracker(), params, max(frames, default=0))
        target = out / f"{name}.txt" if count > 1 else out
        write_results(table, target)
        print(f"{name}: {len(table)} records, {len({r.id for r in table})} identities -> {target}")
    return EXIT_OK


@cli_error_handler("train")
def cmd_train(args) -> int:
    config = _run_config(args)
    train_config = config.train()
    embeddings = _aligned(args.embeddings, len(args.gt), "--embeddings")

    training, validation = [], []
    for gt_path, emb_path in zip(args.gt, embeddings):
        name = sequence_name(gt_path)
        frames = parse_ground_truth(gt_path)
        provider = _provider(args, config, name, emb_path, gt_path)
        sequence = sequence_from_ground_truth(name, frames, provider, (config.frame_width, config.frame_height))
        if args.validate:
            train_part, val_part = split_train_val(sequence, train_config.holdout_frames)
            training.append(train_part)
            validation.append(val_part)
        else:
            training.append(sequence)

    start = load_params(args.params, config.model()) if args.params else init_params(config.model(), config.seed)
    result = train_loop(training, train_config, config.model(), start)
    save_params(result.params, args.out)

    loss_csv = Path(args.loss_csv) if args.loss_csv else Path(f"{args.out}.loss.csv")
    history = pd.DataFrame({"epoch": range(1, len(result.loss_history) + 1),
                            "mean_loss": result.loss_history})
    history.to_csv(loss_csv, index=False, float_format="%.10g")
    print(f"trained {len(result.loss_history)} epochs -> {args.out}")
    if result.loss_history:
        print(f"first epoch loss {result.loss_history[0]:.6g}, last epoch loss {result.loss_history[-1]:.6g}")
    if validation and any(len(v) >= 2 for v in validation):
        print(f"validation loss {evaluate_loss([v for v in validation if len(v) >= 2], result.params, train_config):.6g}")
    return EXIT_OK


@cli_error_handler("eval")
def cmd_eval(args) -> int:
    config = _run_config(args)
    if len(args.gt) != len(args.hyp):
        raise ValidationError(f"--gt and --hyp must pair up, got {len(args.gt)} and {len(args.hyp)}", field="hyp")
    iou_threshold = args.iou if args.iou is not None else config.eval_iou

    reports: Dict[str, EvalReport] = {}
    for gt_path, hyp_path in zip(args.gt, args.hyp):
        gt_frames = parse_ground_truth(gt_path)
        hyp = parse_results(hyp_path)
        num_frames = max([max(gt_frames, default=0)] + [r.frame for r in hyp])
        reports[sequence_name(gt_path)] = evaluate(flatten_ground_truth(gt_frames), hyp,
                                                   iou_threshold, num_frames)

    for name, report in reports.items():
        if len(reports) > 1:
            print(f"== {name}")
        print(format_report(report))
    if args.out:
        frames = [r.to_frame() for r in reports.values()]
        table = pd.concat(frames, ignore_index=True)
        if len(reports) > 1:
            table.insert(0, "sequence", list(reports))
        table.to_csv(args.out, index=False, float_format="%.6f")
    return EXIT_OK


@cli_error_handler("gradcheck")
def cmd_gradcheck(args) -> int:
    m, n = args.sizes
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    report = run_gradcheck(seed=seed, m=m, n=n, d_app=args.d_app, corrupt_scale=args.corrupt_grad)
    for name, err in report.per_parameter.items():
        print(f"{name:<20} {err:.3e}")
    print(f"max relative error {report.max_rel_error:.3e} ({report.worst_parameter}), "
          f"{report.checked} partials, tolerance {report.tolerance:.0e}: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_INTERNAL


def load_matrix(path) -> np.ndarray:
    path = InputValidator.validate_existing_file(path, "matrix")
    text = path.read_text(encoding="utf-8").replace(",", " ")
    try:
        matrix = np.loadtxt(text_io.StringIO(text), ndmin=2, dtype=np.float64)
    except ValueError as e:
        raise DataError(f"unparseable matrix: {e}", path=path)
    if matrix.size == 0:
        raise DataError("matrix file is empty", path=path)
    if np.isnan(matrix).any() or np.isposinf(matrix).any():
        raise DataError("matrix entries must be finite or -inf", path=path)
    return matrix


@cli_error_handler("sinkhorn-demo")
def cmd_sinkhorn_demo(args) -> int:
    l = args.l if args.l is not None else DEFAULT_ENTROPIC_L
    iters = args.iters if args.iters is not None else DEFAULT_SINKHORN_ITERS
    scores = load_matrix(args.matrix)
    if args.augment:
        s_slack = args.s_slack if args.s_slack is not None else DEFAULT_S_SLACK
        m, n = scores.shape
        augmented = np.full((m + 1, n + 1), s_slack)
        augmented[:m, :n] = scores
        scores = augmented
    m, n = scores.shape[0] - 1, scores.shape[1] - 1
    s_star = sinkhorn_normalize(torch.from_numpy(scores), l, iters).numpy()
    row_targets, col_targets = (t.numpy() for t in marginal_targets(m, n))

    labels_r = [f"t{i + 1}" for i in range(m)] + ["slack"]
    labels_c = [f"d{j + 1}" for j in range(n)] + ["slack"]
    table = pd.DataFrame(s_star, index=labels_r, columns=labels_c)
    print(f"S* after {iters} iterations, l = {helper.format_number(l)}")
    print(table.to_string(float_format=lambda v: f"{v:.6f}"))
    print("row sums:    " + " ".join(f"{v:.6f}" for v in s_star.sum(axis=1)))
    print("row targets: " + " ".join(f"{v:.6f}" for v in row_targets))
    print("col sums:    " + " ".join(f"{v:.6f}" for v in s_star.sum(axis=0)))
    print("col targets: " + " ".join(f"{v:.6f}" for v in col_targets))
    print(f"max row error {np.abs(s_star.sum(axis=1) - row_targets).max():.3e}, "
          f"max col error {np.abs(s_star.sum(axis=0) - col_targets).max():.3e}")
    return EXIT_OK


@cli_error_handler("ablate")
def cmd_ablate(args) -> int:
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    results = run_ablation(trials=args.trials, seed=seed, noise_scale=args.noise, d_app=args.d_app,
                           train_epochs=args.train_epochs)
    table = pd.DataFrame([{"variant": variant, **score.model_dump()} for variant, score in results.items()])
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


COMMANDS = {
    "track": cmd_track,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sinkhorn-demo": cmd_sinkhorn_demo,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as e:
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_USAGE
    helper.configure_logging("DEBUG" if args.verbose else LOG_LEVEL)
    return COMMANDS[args.command](args)
