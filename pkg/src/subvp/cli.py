"""``subvp`` command line: synth, featurize, train, predict, eval, compare.

Exit codes: 0 success, 1 training or metric computation failed, 2 usage or
input error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, evaluation, features, predictor, saliency, subtitles, synth, trajectory
from .errors import ParseError, TrainingError, ValidationError
from .manifest import RunManifest

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("subvp")

EXIT_OK, EXIT_METRIC, EXIT_USAGE = 0, 1, 2
FEATURES_FILE = "features.npz"
MODEL_FILE = "model.vspm"


class UsageError(Exception):
    pass


class MetricError(Exception):
    pass


# ----------------------------------------------------------------- config

def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc
    known = {"seed", "synth", "features", "model", "split"}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys {sorted(unknown)}")
    return cfg


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise UsageError(f"config [{name}] must be a table")
    return dict(sec)


def _merge(base, **flags):
    out = dict(base)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _seed(args, cfg):
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _out(args, default):
    out = Path(args.out or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ------------------------------------------------------------------ data

def load_dataset(path, sal_cfg=None, dt=None) -> features.FeatureSet:
    """Feature set from a ``features.npz`` (file or directory) or a raw dataset directory."""
    path = Path(path)
    if path.is_file():
        return features.FeatureSet.load(path)
    if (path / FEATURES_FILE).exists():
        return features.FeatureSet.load(path / FEATURES_FILE)
    return featurize_dir(path, sal_cfg, dt)


def _dataset_inputs(path):
    path = Path(path)
    if path.is_file():
        return [path]
    if (path / FEATURES_FILE).exists():
        return [path / FEATURES_FILE]
    return sorted(p for p in path.iterdir() if p.suffix in (".csv", ".srt", ".vtt", ".txt"))


def featurize_dir(path, sal_cfg=None, dt=None) -> features.FeatureSet:
    path = Path(path)
    traj_file = path / "trajectories.csv"
    if not traj_file.exists():
        raise UsageError(f"{path} has neither {FEATURES_FILE} nor trajectories.csv")
    trajs = trajectory.load_trajectories(traj_file)
    lex_file = path / "lexicon.txt"
    lexicon = subtitles.NavigationLexicon.load(lex_file) if lex_file.exists() else subtitles.NavigationLexicon.default()
    tracks = {}
    for vid in sorted({t.video_id for t in trajs}):
        for ext in (".srt", ".vtt"):
            f = path / f"{vid}{ext}"
            if f.exists():
                tracks[vid] = subtitles.read_subtitles(f)
                break
    users_file = path / "users.csv"
    subtitled = features.read_viewers(users_file) if users_file.exists() else None
    return features.build_features(trajs, tracks, lexicon, subtitled, dt or 0.5, sal_cfg)


def split_videos(videos, test_videos=None, train_videos=None):
    """Leave-one-video-out split; the last video is held out by default."""
    videos = list(videos)
    test = list(test_videos) if test_videos else videos[-1:]
    train = list(train_videos) if train_videos else [v for v in videos if v not in test]
    unknown = (set(test) | set(train)) - set(videos)
    if unknown:
        raise ValidationError(f"unknown videos in split: {sorted(unknown)}")
    overlap = set(test) & set(train)
    if overlap:
        raise ValidationError(f"train and test share videos {sorted(overlap)}")
    if not train:
        raise ValidationError("no training video left after holding out the test set; synthesize more videos")
    return train, test


# -------------------------------------------------------------- commands

def cmd_synth(args, cfg):
    seed = _seed(args, cfg)
    out = _out(args, "data")
    params = _merge(_section(cfg, "synth"), videos=args.videos, duration=args.duration,
                    n_guided=args.guided, n_unguided=args.unguided)
    n_videos = int(params.pop("videos", 1))
    if n_videos < 1:
        raise UsageError("--videos must be >= 1")
    lexicon = subtitles.NavigationLexicon.default()
    cohorts = synth.generate_videos(n_videos, seed, lexicon=lexicon, **params)
    man = RunManifest.start("synth", seed, {"videos": n_videos, **params}, sys.argv[1:])
    files = [out / "trajectories.csv", out / "lexicon.txt", out / "users.csv"]
    trajectory.export_trajectories([t for c in cohorts for t in c.trajectories], files[0])
    files[1].write_text(lexicon.dumps(), encoding="utf-8")
    features.write_viewers(files[2], cohorts)
    for c in cohorts:
        f = out / f"{c.script.video_id}.srt"
        f.write_text(subtitles.serialize_srt(c.track), encoding="utf-8")
        files.append(f)
    for f in files:
        man.add_output(f, out)
    man.write(out)
    n_traj = sum(len(c.trajectories) for c in cohorts)
    log.info("wrote %d trajectories over %d video(s) to %s", n_traj, n_videos, out)
    return EXIT_OK


def _feature_params(cfg):
    sec = _section(cfg, "features")
    dt = float(sec.pop("dt", 0.5))
    sal_cfg = saliency.SaliencyConfig(**sec)
    return dt, sal_cfg


def cmd_featurize(args, cfg):
    dt, sal_cfg = _feature_params(cfg)
    out = _out(args, args.data)
    man = RunManifest.start("featurize", _seed(args, cfg), {"dt": dt, **asdict(sal_cfg)},
                            sys.argv[1:], _dataset_inputs(args.data))
    fs = featurize_dir(args.data, sal_cfg, dt)
    fs.save(out / FEATURES_FILE)
    man.add_output(out / FEATURES_FILE, out)
    man.write(out)
    log.info("featurized %d videos, %d viewer series", len(fs.videos), len(fs.users))
    return EXIT_OK


def _model_config(args, cfg, fs):
    sec = _merge(_section(cfg, "model"), variant=args.variant, epochs=args.epochs)
    sec["seed"] = _seed(args, cfg)
    sec.setdefault("vocab_size", fs.vocab_size)
    if sec["vocab_size"] < fs.vocab_size:
        raise UsageError(f"vocab_size {sec['vocab_size']} smaller than the dataset lexicon ({fs.vocab_size})")
    return predictor.ModelConfig(**sec)


def _split(args, cfg, fs):
    sec = _section(cfg, "split")
    test = args.test_video or sec.get("test_videos")
    train = args.train_video or sec.get("train_videos")
    if isinstance(test, str):
        test = [test]
    if isinstance(train, str):
        train = [train]
    return split_videos(fs.videos, test, train)


def cmd_train(args, cfg):
    dt, sal_cfg = _feature_params(cfg)
    fs = load_dataset(args.data, sal_cfg, dt)
    mcfg = _model_config(args, cfg, fs)
    train_v, test_v = _split(args, cfg, fs)
    out = _out(args, "runs/" + mcfg.variant)
    ws = fs.windows(train_v, mcfg.m, mcfg.n)
    config = {"model": mcfg.to_dict(), "train_videos": train_v, "test_videos": test_v}
    man = RunManifest.start("train", mcfg.seed, config, sys.argv[1:], _dataset_inputs(args.data))
    log.info("training %s on %s (%d windows), holding out %s", mcfg.variant, ",".join(train_v), len(ws),
             ",".join(test_v))

    def progress(epoch, loss, _avg):
        log.info("epoch %d/%d  loss %.6f", epoch, mcfg.epochs, loss)

    model, history = predictor.train(ws, mcfg, progress=progress)
    model.save(out / MODEL_FILE)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(history, 1):
            w.writerow([i, repr(float(loss))])
    for f in (MODEL_FILE, "loss.csv"):
        man.add_output(out / f, out)
    man.write(out)
    return EXIT_OK


def _test_windows(args, cfg, model):
    dt, sal_cfg = _feature_params(cfg)
    fs = load_dataset(args.data, sal_cfg, dt)
    videos = args.video or _section(cfg, "split").get("test_videos") or fs.videos[-1:]
    if isinstance(videos, str):
        videos = [videos]
    mc = model.config
    if fs.vocab_size > mc.vocab_size:
        raise UsageError("dataset lexicon is larger than the model vocabulary")
    ws = fs.windows(videos, mc.m, mc.n)
    if ws.maps.shape[1:] != (mc.map_height, mc.map_width):
        raise UsageError(f"maps are {ws.maps.shape[2]}x{ws.maps.shape[1]}, model expects "
                         f"{mc.map_width}x{mc.map_height}")
    return fs, ws


def write_trace(path, pred_phi, pred_theta, true_angles):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_id", "step", "phi_pred", "theta_pred", "phi_true", "theta_true"])
        for i in range(pred_phi.shape[0]):
            for j in range(pred_phi.shape[1]):
                w.writerow([i, j + 1, repr(float(pred_phi[i, j])), repr(float(pred_theta[i, j])),
                            repr(float(true_angles[i, j, 0])), repr(float(true_angles[i, j, 1]))])


def read_trace(path):
    """``(pred, truth)`` arrays shaped ``(windows, n, 2)`` from a trace CSV."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"window_id", "step", "phi_pred", "theta_pred", "phi_true", "theta_true"}
        if not need <= set(reader.fieldnames or ()):
            raise ParseError(f"trace header must contain {sorted(need)}", 1)
        for line, r in enumerate(reader, 2):
            try:
                key = (int(r["window_id"]), int(r["step"]))
                vals = [float(r[k]) for k in ("phi_pred", "theta_pred", "phi_true", "theta_true")]
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad trace row: {exc}", line) from exc
            rows[key] = vals
    if not rows:
        raise ParseError("empty trace", 1)
    windows = sorted({w for w, _ in rows})
    steps = sorted({s for _, s in rows})
    if len(rows) != len(windows) * len(steps):
        raise ValidationError("trace windows have inconsistent horizons")
    arr = np.array([[rows[(w, s)] for s in steps] for w in windows])
    return arr[..., :2], arr[..., 2:]


def cmd_predict(args, cfg):
    model = predictor.Seq2SeqModel.load(args.model)
    fs, ws = _test_windows(args, cfg, model)
    out = _out(args, Path(args.model).parent / "predict")
    man = RunManifest.start("predict", _seed(args, cfg), {"model": model.config.to_dict(), "video": args.video},
                            sys.argv[1:], [Path(args.model), *_dataset_inputs(args.data)])
    phi, theta = model.predict_angles(ws)
    write_trace(out / "trace.csv", phi, theta, ws.target_angles)
    rng = np.random.default_rng(_seed(args, cfg))
    picks = rng.choice(len(ws), size=min(args.latency_calls, len(ws)), replace=False)
    lat = [predictor.predict(model, ws.subset([i])).latency_ms for i in picks]
    median = float(np.median(lat)) if lat else float("nan")
    man.add_output(out / "trace.csv", out)
    man.write(out)
    log.info("predicted %d windows; median single-window latency %.2f ms over %d calls",
             len(ws), median, len(lat))
    return EXIT_OK


def cmd_eval(args, cfg):
    if (args.trace is None) == (args.model is None):
        raise UsageError("eval needs exactly one of --model or --trace")
    if args.trace:
        pred, truth = read_trace(args.trace)
        inputs = [Path(args.trace)]
        dt = float(args.dt or _section(cfg, "features").get("dt", 0.5))
        out = _out(args, Path(args.trace).parent / "eval")
        name = Path(args.trace).stem
    else:
        if args.data is None:
            raise UsageError("eval --model needs --data")
        model = predictor.Seq2SeqModel.load(args.model)
        fs, ws = _test_windows(args, cfg, model)
        phi, theta = model.predict_angles(ws)
        pred, truth = np.stack([phi, theta], -1), ws.target_angles
        inputs = [Path(args.model), *_dataset_inputs(args.data)]
        dt = fs.dt
        out = _out(args, Path(args.model).parent / "eval")
        name = model.config.variant
    man = RunManifest.start("eval", _seed(args, cfg), {"compat": args.compat, "dt": dt}, sys.argv[1:], inputs)
    try:
        if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
            raise ValidationError("non-finite coordinates in predictions or truth")
        report = evaluation.evaluate(pred, truth, dt=dt, compat=args.compat, extra={"name": name})
    except (ValidationError, ValueError) as exc:
        raise MetricError(str(exc)) from exc
    report.save(out / "report.json")
    evaluation.write_curve(out / "curve.csv", report)
    for f in ("report.json", "curve.csv"):
        man.add_output(out / f, out)
    man.write(out)
    if not args.quiet:
        print(f"mean orthodromic {report.mean_orthodromic:.4f} ± {report.std_orthodromic:.4f} rad  "
              f"rmse phi {report.rmse_phi:.2f}°  theta {report.rmse_theta:.2f}°  ({report.count} samples)")
    return EXIT_OK


def _report_arg(text):
    """``NAME=PATH`` or a bare path (named after the report's model)."""
    name, sep, path = text.partition("=")
    if not sep:
        return None, Path(text)
    return name, Path(path)


def cmd_compare(args, cfg):
    reports = {}
    for name, path in args.reports:
        try:
            rep = evaluation.EvalReport.load(path)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot read report {path}: {exc}") from exc
        name = name or rep.extra.get("name") or path.stem
        if name in reports:
            raise UsageError(f"duplicate report name {name!r}; use NAME=PATH")
        reports[name] = rep
    out = _out(args, "compare")
    man = RunManifest.start("compare", _seed(args, cfg), {"names": list(reports)}, sys.argv[1:],
                            [p for _, p in args.reports])
    rows = evaluation.write_comparison(out, reports)
    man.add_output(out / "comparison.csv", out)
    for name in reports:
        man.add_output(out / f"curve_{name}.csv", out)
    man.write(out)
    if not args.quiet:
        print(evaluation.format_table(rows))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _common(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=_non_negative_int, default=default, help="master seed")
    parser.add_argument("--config", type=Path, default=default, help="TOML config file")
    parser.add_argument("--out", type=Path, default=default, help="output directory")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(prog="subvp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic viewer dataset")
    p.add_argument("--videos", type=_positive_int)
    p.add_argument("--duration", type=_positive_float)
    p.add_argument("--guided", type=_non_negative_int)
    p.add_argument("--unguided", type=_non_negative_int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="build saliency maps and subtitle features")
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one predictor variant")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--variant", choices=sorted(predictor.VARIANTS))
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--test-video", action="append")
    p.add_argument("--train-video", action="append")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict held-out windows and write a trace")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--video", action="append")
    p.add_argument("--latency-calls", type=_non_negative_int, default=100)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a checkpoint or a prediction trace")
    p.add_argument("--model", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--trace", type=Path)
    p.add_argument("--video", action="append")
    p.add_argument("--dt", type=_positive_float)
    p.add_argument("--compat", action="store_true", help="divide squared errors by two inside the RMSE root")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="rank evaluation reports")
    p.add_argument("reports", nargs="+", type=_report_arg, metavar="[NAME=]REPORT")
    p.set_defaults(func=cmd_compare)

    for p in sub.choices.values():
        _common(p, suppress=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    logging.captureWarnings(True)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"subvp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, MetricError) as exc:
        print(f"subvp: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (ValueError, TypeError, OSError) as exc:
        print(f"subvp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
