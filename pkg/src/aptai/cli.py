"""Command-line entry point.

Subcommands: preprocess, synth-data, train, eval, align, pca-embed.
Every command is deterministic given (config, seed, inputs) and echoes its
fully resolved configuration into the output directory.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import data as dio
from .config import (
    RunConfig,
    TV_CHANNELS,
    config_from_yaml,
    config_to_yaml,
    load_config,
)
from .data import _fmt, _read_table, _write_table
from .decode import Alignment
from .errors import AptaiError, DataError, ParameterError
from .evaluate import evaluate_split, predict
from .metrics import aggregate_loso, pca
from .net.checkpoint import load_checkpoint, save_checkpoint
from .net.frontend import acoustic_frontend
from .net.models import param_shapes, split_stage1
from .net.training import resolve_train_section, train
from .signals import (
    GeometryConfig,
    butterworth_lowpass,
    ema_to_tvs,
    interpolate_nan,
    resample_to_frames,
    zscore_normalize,
)

EMA_SUFFIX = ".ema"
LABEL_SUFFIXES = (".intervals", ".textgrid", ".TextGrid")


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved.yaml"), "w", encoding="utf-8") as fh:
        fh.write(config_to_yaml(cfg))


def _load_cfg(args):
    return load_config(args.config) if args.config else RunConfig()


def _speaker_of(utt_id):
    return utt_id.split("_", 1)[0] if "_" in utt_id else "spk0"


def _find_label_file(labels_dir, stem):
    for suffix in LABEL_SUFFIXES:
        path = os.path.join(labels_dir, stem + suffix)
        if os.path.exists(path):
            return path
    raise DataError(f"no label file for '{stem}' in {labels_dir}")


def cmd_preprocess(args):
    cfg = _load_cfg(args)
    geo = GeometryConfig.from_section(cfg.geometry)
    inventory = dio.PhonemeInventory(labels=list(cfg.inventory.labels),
                                     silence=cfg.inventory.silence)
    frame_rate = cfg.frontend.frame_rate
    pp = cfg.preprocess

    stems = sorted(
        f[:-len(EMA_SUFFIX)] for f in os.listdir(args.ema_dir)
        if f.endswith(EMA_SUFFIX)
    )
    if not stems:
        raise DataError(f"no *{EMA_SUFFIX} files in {args.ema_dir}")

    utts = []
    report_rows = []
    for stem in stems:
        current = os.path.join(args.ema_dir, stem + EMA_SUFFIX)
        try:
            record = dio.read_ema(current, rate=pp.ema_rate)
            gap_counts = []
            for sensor in sorted(record.sensors):
                arr = record.sensors[sensor]
                cleaned = np.empty_like(arr)
                for axis in range(2):
                    series = arr[:, axis]
                    gap_counts.append(int(np.sum(~np.isfinite(series))))
                    series = interpolate_nan(series)
                    cleaned[:, axis] = butterworth_lowpass(
                        series, pp.butterworth_cutoff_hz, pp.ema_rate,
                        order=pp.butterworth_order,
                    )
                record.sensors[sensor] = cleaned
            traj = ema_to_tvs(record, geo)

            current = _find_label_file(args.labels_dir, stem)
            with open(current, "r", encoding="utf-8") as fh:
                text = fh.read()
            if current.lower().endswith(".textgrid"):
                text = dio.intervals_to_text(dio.textgrid_to_intervals(text))
            alignment, _ = dio.parse_intervals(text, frame_rate, inventory)

            traj = resample_to_frames(traj, alignment.total_frames)
            tv_norm, stats = zscore_normalize(traj)
            tv_norm.rate = frame_rate
            utts.append(dio.Utterance(
                utt_id=stem, speaker=_speaker_of(stem), tv=tv_norm,
                stats=stats, alignment=alignment,
            ))
            report_rows.append([stem] + gap_counts)
        except AptaiError as exc:
            raise AptaiError(f"{current}: {exc}") from exc

    dio.write_dataset(args.out, utts, inventory, frame_rate)
    sensor_axes = [f"{s}_{ax}" for s in sorted(dio.EMA_SENSORS) for ax in ("x", "y")]
    lines = ["\t".join(["utt_id"] + sensor_axes)]
    for row in report_rows:
        lines.append("\t".join(str(v) for v in row))
    with open(os.path.join(args.out, "report.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _echo_config(cfg, args.out)
    print(f"preprocessed {len(utts)} utterance(s) -> {args.out}")
    return 0


def cmd_synth_data(args):
    cfg = _load_cfg(args)
    utts, inventory, _ = dio.synth_corpus(cfg.synth, cfg.smoothing)
    dio.write_dataset(args.out, utts, inventory, cfg.synth.frame_rate)
    _echo_config(cfg, args.out)
    print(f"wrote {len(utts)} utterance(s) -> {args.out}")
    return 0


def _split_dataset(utts, cfg):
    tc = cfg.train
    if not tc.holdout_speaker:
        raise ParameterError("config train.holdout_speaker must be set")
    return dio.split_loso(utts, tc.holdout_speaker,
                          val_fraction=tc.val_fraction, seed=tc.seed)


def cmd_train(args):
    cfg = _load_cfg(args)
    if args.model == "faptai-stage2" and not args.stage1_checkpoint:
        print("error: --model faptai-stage2 requires --stage1-checkpoint",
              file=sys.stderr)
        return 2
    utts, inventory, _ = dio.read_dataset(args.data)
    train_utts, val_utts, _ = _split_dataset(utts, cfg)

    stage1_params = None
    if args.stage1_checkpoint:
        stage1_params, kind1, _ = load_checkpoint(args.stage1_checkpoint)
        if kind1 != "faptai-stage1":
            raise ParameterError(
                f"--stage1-checkpoint holds a '{kind1}' model"
            )
        expected = param_shapes("faptai-stage1", cfg.model, inventory.size)
        from .net.checkpoint import validate_shapes

        validate_shapes(stage1_params, expected)

    resolved = dataclasses.replace(
        cfg,
        train=resolve_train_section(args.model, cfg.train),
        inventory=dataclasses.replace(
            cfg.inventory, labels=list(inventory.labels),
            silence=inventory.silence,
        ),
    )
    params, log_rows, best_epoch = train(
        args.model, train_utts, val_utts, resolved, inventory.size,
        stage1_params=stage1_params,
    )

    os.makedirs(args.out, exist_ok=True)
    echo = config_to_yaml(resolved)
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), params,
                    args.model, echo)
    header = list(log_rows[0].keys())
    lines = ["\t".join(header)]
    for row in log_rows:
        lines.append("\t".join(
            str(row[k]) if k == "epoch" else _fmt(row[k]) for k in header
        ))
    with open(os.path.join(args.out, "log.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _echo_config(resolved, args.out)
    print(f"best epoch {best_epoch}; checkpoint -> {args.out}")
    return 0


def _load_model(checkpoint_path, cfg, n_labels):
    params, kind, echo = load_checkpoint(checkpoint_path)
    from .net.checkpoint import validate_shapes

    validate_shapes(params, param_shapes(kind, cfg.model, n_labels))
    return params, kind, echo


def _write_rows(path, header, rows):
    lines = ["\t".join(header)]
    for row in rows:
        cells = []
        for key in header:
            v = row.get(key)
            if v is None:
                cells.append("")
            elif isinstance(v, str):
                cells.append(v)
            else:
                cells.append(_fmt(v))
        lines.append("\t".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path):
    """Parse a summary/per-utterance report back (lossless)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split("\t")
    rows = []
    for ln in lines[1:]:
        cells = ln.split("\t")
        row = {}
        for key, cell in zip(header, cells):
            if cell == "":
                row[key] = None
            else:
                try:
                    row[key] = float(cell)
                except ValueError:
                    row[key] = cell
        rows.append(row)
    return rows


def _eval_header(rows):
    header = ["utt_id", "speaker", "per", "overlap"]
    header += [f"pcc_{ch}" for ch in TV_CHANNELS]
    header += [f"rmse_{ch}" for ch in TV_CHANNELS]
    header += [f"rmse_mm_{ch}" for ch in TV_CHANNELS]
    present = set()
    for row in rows:
        present.update(k for k, v in row.items() if v is not None)
    return [h for h in header if h in present or h in ("utt_id", "speaker")]


def cmd_eval(args):
    cfg = _load_cfg(args)
    utts, inventory, _ = dio.read_dataset(args.data)
    params, kind, _ = _load_model(args.checkpoint, cfg, inventory.size)

    os.makedirs(args.out, exist_ok=True)
    summary_rows = []
    all_rows = []
    if args.loso:
        fold_summaries = []
        for speaker in sorted({u.speaker for u in utts}):
            fold_utts = [u for u in utts if u.speaker == speaker]
            rows, summary = evaluate_split(kind, params, fold_utts, cfg,
                                           inventory, oracle=args.oracle)
            for row in rows:
                row["fold"] = speaker
            all_rows.extend(rows)
            fold_summaries.append(summary)
            summary_rows.extend(
                {"scope": f"fold:{speaker}", "metric": k, "value": v}
                for k, v in summary.items()
            )
        agg = aggregate_loso(fold_summaries)
        for key, (mean, sd) in agg.items():
            summary_rows.append({"scope": "loso_mean", "metric": key, "value": mean})
            summary_rows.append({"scope": "loso_sd", "metric": key, "value": sd})
    else:
        train_utts, val_utts, test_utts = _split_dataset(utts, cfg)
        chosen = {"train": train_utts, "val": val_utts, "test": test_utts,
                  "all": utts}[args.split]
        if not chosen:
            raise DataError(f"split '{args.split}' is empty")
        rows, summary = evaluate_split(kind, params, chosen, cfg, inventory,
                                       oracle=args.oracle)
        for row in rows:
            row["fold"] = args.split
        all_rows.extend(rows)
        summary_rows.extend(
            {"scope": args.split, "metric": k, "value": v}
            for k, v in summary.items()
        )

    header = _eval_header(all_rows) + ["fold"]
    _write_rows(os.path.join(args.out, "per_utterance.tsv"), header, all_rows)
    _write_rows(os.path.join(args.out, "summary.tsv"),
                ["scope", "metric", "value"], summary_rows)
    _echo_config(cfg, args.out)
    for row in summary_rows:
        print(f"{row['scope']}\t{row['metric']}\t{row['value']}")
    return 0


def cmd_align(args):
    cfg = _load_cfg(args)
    if bool(args.audio) == bool(args.features):
        print("error: provide exactly one of --audio / --features",
              file=sys.stderr)
        return 2
    params, kind, echo = load_checkpoint(args.checkpoint)
    if kind == "faptai-stage1":
        raise ParameterError(
            "stage-1 checkpoints decode sequences only; align with an"
            " aptai or faptai-stage2 checkpoint"
        )
    ckpt_cfg = config_from_yaml(echo)
    inventory = dio.PhonemeInventory(labels=list(ckpt_cfg.inventory.labels),
                                     silence=ckpt_cfg.inventory.silence)
    from .net.checkpoint import validate_shapes

    validate_shapes(params, param_shapes(kind, cfg.model, inventory.size))

    if args.audio:
        waveform, _ = dio.load_wav(args.audio,
                                   expect_rate=cfg.frontend.sample_rate)
        features = acoustic_frontend(waveform, cfg.frontend)
    else:
        _, features = _read_table(args.features)
    frame_rate = cfg.frontend.frame_rate

    out = predict(kind, params, features, cfg)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "align.tsv"), "w", encoding="utf-8") as fh:
        fh.write(dio.write_intervals(out["alignment"], frame_rate, inventory))
    with open(os.path.join(args.out, "phonemes.txt"), "w", encoding="utf-8") as fh:
        fh.write(" ".join(inventory.labels[c] for c in out["seq"]) + "\n")
    _write_table(os.path.join(args.out, "tv.tsv"), TV_CHANNELS,
                 out["tv_pred"])
    _echo_config(cfg, args.out)
    print(f"aligned {features.shape[0]} frames -> {args.out}")
    return 0


def cmd_pca_embed(args):
    cfg = _load_cfg(args)
    if args.k < 1:
        raise ParameterError("--k must be >= 1")
    utts, inventory, _ = dio.read_dataset(args.data)
    params, kind, _ = _load_model(args.checkpoint, cfg, inventory.size)
    if kind == "faptai-stage2":
        params, _ = split_stage1(params)
        kind = "faptai-stage1"

    wanted = None
    if args.labels:
        names = [s for s in args.labels.split(",") if s]
        wanted = {inventory.index(name) for name in names}

    from .net.layers import encoder_forward

    vecs, labels = [], []
    for u in utts:
        if u.features is None:
            raise DataError(f"{u.utt_id}: no features for embedding extraction")
        hidden, _ = encoder_forward(u.features, params,
                                    n_layers=cfg.model.encoder_layers)
        frame_labels = u.alignment.expand()
        for t, lab in enumerate(frame_labels):
            if wanted is None or lab in wanted:
                vecs.append(hidden[t])
                labels.append(inventory.labels[lab])
    if not vecs:
        raise DataError("no frames matched the label filter")
    projections, ratios = pca(np.asarray(vecs), args.k)

    os.makedirs(args.out, exist_ok=True)
    header = ["label"] + [f"c{i + 1}" for i in range(args.k)]
    lines = ["\t".join(header)]
    lines.append("\t".join(["explained_variance_ratio"]
                           + [_fmt(r) for r in ratios]))
    for lab, row in zip(labels, projections):
        lines.append("\t".join([lab] + [_fmt(v) for v in row]))
    with open(os.path.join(args.out, "projections.tsv"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _echo_config(cfg, args.out)
    print(f"projected {len(labels)} frames onto {args.k} component(s)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aptai",
        description="Articulatory inversion with joint phoneme recognition"
                    " and alignment",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="sensor data -> normalized"
                       " trajectories + alignments")
    p.add_argument("--ema-dir", required=True)
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth-data", help="generate the synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one model kind")
    p.add_argument("--model", required=True,
                   choices=["aptai", "faptai-stage1", "faptai-stage2"])
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--stage1-checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metric report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test",
                   choices=["train", "val", "test", "all"])
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--loso", action="store_true",
                   help="evaluate every speaker as a fold and aggregate")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself (plumbing check)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("align", help="audio/features -> alignment + trajectory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio")
    p.add_argument("--features")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("pca-embed", help="principal components of encoder"
                       " embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", default="",
                   help="comma-separated label filter (empty = all)")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_pca_embed)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AptaiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
