"""Dataset ingestion and generation.

Interval label files, sensor-coordinate tables, the synthetic articulatory
corpus used by the end-to-end tests, dataset splits and the on-disk dataset
layout (manifest + per-utterance files).

All parsing is pure given the file contents; generation is pure given the
seed, so datasets are bit-reproducible.
"""

import csv
import io
import json
import os
import re
import wave
from dataclasses import dataclass, field

import numpy as np
import yaml

from .config import EMA_SENSORS, TV_CHANNELS
from .decode import Alignment, _merge_runs
from .errors import (
    DataError,
    EmptyUtteranceError,
    FormatError,
    ParameterError,
    SchemaError,
)
from .signals import EmaRecord, NormStats, TvTrajectory, smooth_columns, \
    windowed_sinc_kernel, zscore_normalize


@dataclass
class PhonemeInventory:
    """Ordered label strings plus the designated silence symbol."""

    labels: list
    silence: str = "sil"

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ParameterError("inventory labels must be unique")
        if self.silence not in self.labels:
            raise ParameterError(f"silence symbol '{self.silence}' not in inventory")
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def size(self):
        return len(self.labels)

    @property
    def silence_id(self):
        return self._index[self.silence]

    def index(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise ParameterError(f"label '{label}' not in inventory") from None

    def __contains__(self, label):
        return label in self._index


@dataclass
class Utterance:
    """One utterance: features and/or waveform path, normalized trajectory
    with its stats, and the ground-truth alignment."""

    utt_id: str
    speaker: str
    tv: TvTrajectory
    stats: NormStats
    alignment: Alignment
    features: np.ndarray = None
    wav_path: str = None

    def __post_init__(self):
        if self.alignment.total_frames != self.tv.n_frames:
            raise DataError(
                f"{self.utt_id}: alignment frames {self.alignment.total_frames}"
                f" != trajectory frames {self.tv.n_frames}"
            )
        if self.features is not None and len(self.features) != self.tv.n_frames:
            raise DataError(f"{self.utt_id}: feature frame count mismatch")

    @property
    def seq(self):
        return self.alignment.labels

    @property
    def n_frames(self):
        return self.tv.n_frames


def _fmt(x):
    # repr of a Python float round-trips exactly through text
    return repr(float(x))


def quantize_time(seconds, frame_rate):
    """Nearest frame index, half up (deterministic, no banker's rounding)."""
    return int(np.floor(seconds * frame_rate + 0.5))


CONTIGUITY_TOL_S = 1e-3


def parse_intervals(text, frame_rate, inventory):
    """Parse an interval tier ("start<TAB>end<TAB>label" lines, seconds).

    Boundaries are quantized to the nearest frame; segments that quantize to
    zero length are merged into their neighbor. Intervals must be sorted,
    contiguous within 1 ms and start at time 0.
    """
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected 'start end label'")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise FormatError(f"line {lineno}: bad number") from None
        rows.append((start, end, parts[2]))
    if not rows:
        raise EmptyUtteranceError("no intervals in file")
    if abs(rows[0][0]) > CONTIGUITY_TOL_S:
        raise FormatError("first interval must start at 0")
    for start, end, _ in rows:
        if end < start:
            raise FormatError("interval with negative duration")
    for (_, e0, _), (s1, _, _) in zip(rows, rows[1:]):
        if abs(s1 - e0) > CONTIGUITY_TOL_S:
            raise FormatError(
                f"intervals not contiguous at t={e0:.4f}/{s1:.4f}"
            )

    boundaries = [0] + [quantize_time(e, frame_rate) for _, e, _ in rows]
    total = boundaries[-1]
    if total < 1:
        raise EmptyUtteranceError("intervals span less than one frame")
    segments = []
    for i, (_, _, label) in enumerate(rows):
        start, end = boundaries[i], boundaries[i + 1]
        if end > start:
            segments.append((inventory.index(label), start, end))
    segments = _merge_runs(segments)
    alignment = Alignment(segments=segments, total_frames=total)
    return alignment, alignment.labels


def write_intervals(alignment, frame_rate, inventory):
    """Interval tier text for a frame-quantized alignment (6-decimal seconds,
    which round-trips exactly at typical frame rates)."""
    lines = []
    for label, start, end in alignment.segments:
        lines.append(
            f"{start / frame_rate:.6f}\t{end / frame_rate:.6f}\t{inventory.labels[label]}"
        )
    return "\n".join(lines) + "\n"


_TG_FLOAT = r"[-+0-9.eE]+"


def textgrid_to_intervals(text, tier_name=None):
    """Extract (start, end, label) triples from the IntervalTier subset of a
    TextGrid file (long format). Returns the first interval tier unless
    tier_name selects one by name."""
    tiers = []
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        m = re.match(r'class\s*=\s*"IntervalTier"', line)
        if m:
            current = {"name": None, "intervals": []}
            tiers.append(current)
            continue
        if line.startswith('class ='):
            current = None
            continue
        if current is None:
            continue
        m = re.match(r'name\s*=\s*"(.*)"', line)
        if m and current["name"] is None:
            current["name"] = m.group(1)
            continue
        m = re.match(rf"xmin\s*=\s*({_TG_FLOAT})", line)
        if m:
            current["intervals"].append([float(m.group(1)), None, ""])
            continue
        m = re.match(rf"xmax\s*=\s*({_TG_FLOAT})", line)
        if m and current["intervals"] and current["intervals"][-1][1] is None:
            current["intervals"][-1][1] = float(m.group(1))
            continue
        m = re.match(r'text\s*=\s*"(.*)"', line)
        if m and current["intervals"]:
            current["intervals"][-1][2] = m.group(1)
    if not tiers:
        raise FormatError("no IntervalTier found")
    for tier in tiers:
        if tier_name is None or tier["name"] == tier_name:
            # first xmin/xmax pair is the tier's own extent, drop it
            ivs = [iv for iv in tier["intervals"][1:] if iv[1] is not None]
            if not ivs:
                raise FormatError("interval tier is empty")
            return [(s, e, lab) for s, e, lab in ivs]
    raise FormatError(f"no IntervalTier named '{tier_name}'")


def intervals_to_text(triples):
    return "\n".join(f"{s:.6f}\t{e:.6f}\t{lab}" for s, e, lab in triples) + "\n"


def _ema_header():
    return [f"{s}_{ax}" for s in EMA_SENSORS for ax in ("x", "y")]


def read_ema(source, rate=100.0):
    """Parse a delimited sensor table into an EmaRecord.

    The header must name <SENSOR>_x / <SENSOR>_y columns for all six
    sensors; extra columns are ignored. Non-finite cells are spelled NaN
    and preserved for downstream interpolation.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif os.path.exists(str(source)):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source
    if not text.strip():
        raise FormatError("empty sensor file")
    sniff = "," if "," in text.splitlines()[0] else "\t"
    reader = csv.reader(io.StringIO(text), delimiter=sniff)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty sensor file") from None
    header = [h.strip() for h in header]
    required = _ema_header()
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"missing column(s): {missing}")
    cols = {c: header.index(c) for c in required}
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise FormatError(f"line {lineno}: ragged row")
        try:
            rows.append([float(row[cols[c]]) for c in required])
        except ValueError:
            raise FormatError(f"line {lineno}: bad number") from None
    if not rows:
        raise EmptyUtteranceError("sensor file has no samples")
    arr = np.asarray(rows, dtype=float)
    sensors = {
        s: arr[:, [2 * i, 2 * i + 1]] for i, s in enumerate(EMA_SENSORS)
    }
    return EmaRecord(sensors=sensors, rate=rate)


def write_ema(record):
    """Inverse of read_ema (comma-delimited, NaN spelled literally)."""
    lines = [",".join(_ema_header())]
    arr = np.concatenate([record.sensors[s] for s in EMA_SENSORS], axis=1)
    for row in arr:
        lines.append(",".join("NaN" if not np.isfinite(v) else _fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def load_wav(path, expect_rate=None):
    """Read 16-bit mono linear PCM; returns (float samples in [-1, 1], rate)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise FormatError("expected mono audio")
        if fh.getsampwidth() != 2:
            raise FormatError("expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    if expect_rate is not None and rate != expect_rate:
        raise ParameterError(f"sample rate {rate}, expected {expect_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return samples, rate


def write_wav(path, samples, rate):
    scaled = np.round(np.asarray(samples, dtype=float) * 32768.0)
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def synth_inventory(n_labels):
    """Generated inventory: silence plus n-1 numbered pseudo-phones."""
    if n_labels < 2:
        raise ParameterError("need at least 2 labels (silence plus one)")
    return PhonemeInventory(
        labels=["sil"] + [f"p{i:02d}" for i in range(1, n_labels)], silence="sil"
    )


def synth_corpus(cfg, smoothing=None):
    """Deterministic synthetic corpus.

    Each inventory label gets one canonical 9-dim articulation target; an
    utterance is a random no-immediate-repeat label sequence with random
    per-segment durations. Ground-truth trajectories are the piecewise
    constant targets passed through the fixed sinc smoothing; features are
    a fixed random linear map of (raw articulation state, one-hot current
    label) plus Gaussian noise. Returns (utterances, inventory, generating
    linear map) so tests can verify recoverability.
    """
    from .config import SmoothingSection

    if smoothing is None:
        smoothing = SmoothingSection()
    rng = np.random.default_rng(cfg.seed)
    inv = synth_inventory(cfg.n_labels)
    n_cls = inv.size
    kernel = windowed_sinc_kernel(smoothing.cutoff_fraction, smoothing.kernel_len)

    mixing = rng.normal(0.0, 1.0, size=(9 + n_cls, cfg.feature_dim))
    targets = rng.uniform(-1.0, 1.0, size=(n_cls, 9))

    speakers = [f"spk{i}" for i in range(cfg.n_speakers)]
    utts = []
    for k in range(cfg.n_utterances):
        speaker = speakers[k % cfg.n_speakers]
        n_seg = int(rng.integers(cfg.min_segments, cfg.max_segments + 1))
        labels = []
        for _ in range(n_seg):
            c = int(rng.integers(0, n_cls))
            while labels and c == labels[-1]:
                c = int(rng.integers(0, n_cls))
            labels.append(c)
        durs = rng.integers(cfg.min_seg_frames, cfg.max_seg_frames + 1, size=n_seg)
        total = int(durs.sum())

        frame_labels = np.repeat(labels, durs)
        tv_raw = targets[frame_labels]                 # (T, 9) piecewise constant
        tv_raw = smooth_columns(tv_raw, kernel)
        z = np.concatenate(
            [tv_raw, np.eye(n_cls)[frame_labels]], axis=1
        )
        feats = z @ mixing
        if cfg.noise_std > 0:
            feats = feats + rng.normal(0.0, cfg.noise_std, size=feats.shape)

        starts = np.concatenate(([0], np.cumsum(durs)[:-1]))
        segments = [
            (int(lab), int(s), int(s + d)) for lab, s, d in zip(labels, starts, durs)
        ]
        alignment = Alignment(segments=segments, total_frames=total)
        traj = TvTrajectory(values=tv_raw, rate=cfg.frame_rate, normalized=False)
        tv_norm, stats = zscore_normalize(traj)
        utts.append(
            Utterance(
                utt_id=f"{speaker}_u{k:04d}",
                speaker=speaker,
                tv=tv_norm,
                stats=stats,
                alignment=alignment,
                features=feats,
            )
        )
    return utts, inv, mixing


def split_loso(corpus, held_out_speaker, val_fraction=0.10, seed=0):
    """Leave-one-speaker-out split.

    Test gets every utterance of the held-out speaker; the rest are
    partitioned by utterance id into train/validation with the given
    fraction (at least one validation utterance when two or more remain).
    """
    speakers = sorted({u.speaker for u in corpus})
    if len(speakers) < 2:
        raise ParameterError("need at least 2 speakers for a held-out split")
    if held_out_speaker not in speakers:
        raise ParameterError(f"unknown speaker '{held_out_speaker}'")
    test = [u for u in corpus if u.speaker == held_out_speaker]
    rest = sorted(
        (u for u in corpus if u.speaker != held_out_speaker),
        key=lambda u: u.utt_id,
    )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rest))
    n_val = int(np.floor(val_fraction * len(rest) + 0.5))
    if n_val == 0 and len(rest) >= 2 and val_fraction > 0:
        n_val = 1
    val_ids = set(order[:n_val])
    val = [rest[i] for i in sorted(val_ids)]
    train = [rest[i] for i in range(len(rest)) if i not in val_ids]
    return train, val, test


# ---------------------------------------------------------------------------
# on-disk dataset layout


def _write_table(path, header, rows):
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_table(path, expect_header=None):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split("\t")
    if expect_header is not None and header != list(expect_header):
        raise SchemaError(f"{path}: unexpected header {header}")
    return header, np.asarray(
        [[float(v) for v in ln.split("\t")] for ln in lines[1:]], dtype=float
    )


def write_dataset(out_dir, utterances, inventory, frame_rate):
    """Materialize utterances to a dataset directory.

    Layout: dataset.yaml (frame rate + inventory), manifest.tsv (one row
    per utterance: id, speaker, file paths or '-'), utts/<id>.*.
    """
    utt_dir = os.path.join(out_dir, "utts")
    os.makedirs(utt_dir, exist_ok=True)
    meta = {
        "frame_rate": float(frame_rate),
        "silence": inventory.silence,
        "labels": list(inventory.labels),
    }
    with open(os.path.join(out_dir, "dataset.yaml"), "w", encoding="utf-8") as fh:
        fh.write(yaml.safe_dump(meta, sort_keys=True))

    manifest = ["utt_id\tspeaker\twav\tfeatures\ttv\tstats\talign"]
    for u in sorted(utterances, key=lambda u: u.utt_id):
        base = os.path.join("utts", u.utt_id)
        tv_rel = base + ".tv.tsv"
        stats_rel = base + ".stats.json"
        align_rel = base + ".align.tsv"
        _write_table(os.path.join(out_dir, tv_rel), TV_CHANNELS, u.tv.values)
        with open(os.path.join(out_dir, stats_rel), "w", encoding="utf-8") as fh:
            json.dump(
                {"mean": [float(v) for v in u.stats.mean],
                 "std": [float(v) for v in u.stats.std]},
                fh, sort_keys=True,
            )
        with open(os.path.join(out_dir, align_rel), "w", encoding="utf-8") as fh:
            fh.write(write_intervals(u.alignment, frame_rate, inventory))
        if u.features is not None:
            feat_rel = base + ".feat.tsv"
            ncol = u.features.shape[1]
            _write_table(
                os.path.join(out_dir, feat_rel),
                [f"f{i}" for i in range(ncol)],
                u.features,
            )
        else:
            feat_rel = "-"
        wav_rel = u.wav_path if u.wav_path else "-"
        manifest.append(
            f"{u.utt_id}\t{u.speaker}\t{wav_rel}\t{feat_rel}\t{tv_rel}\t{stats_rel}\t{align_rel}"
        )
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(manifest) + "\n")


def read_dataset(data_dir):
    """Load a dataset directory back into (utterances, inventory, frame_rate)."""
    meta_path = os.path.join(data_dir, "dataset.yaml")
    if not os.path.exists(meta_path):
        raise DataError(f"{data_dir} is not a dataset (no dataset.yaml)")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = yaml.safe_load(fh)
    inventory = PhonemeInventory(labels=meta["labels"], silence=meta["silence"])
    frame_rate = float(meta["frame_rate"])

    with open(os.path.join(data_dir, "manifest.tsv"), "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split("\t") != [
        "utt_id", "speaker", "wav", "features", "tv", "stats", "align"
    ]:
        raise FormatError("bad manifest header")
    utts = []
    for line in lines[1:]:
        if not line:
            continue
        utt_id, speaker, wav_rel, feat_rel, tv_rel, stats_rel, align_rel = \
            line.split("\t")
        _, tv_vals = _read_table(os.path.join(data_dir, tv_rel),
                                 expect_header=TV_CHANNELS)
        with open(os.path.join(data_dir, stats_rel), "r", encoding="utf-8") as fh:
            stats_raw = json.load(fh)
        stats = NormStats(mean=np.asarray(stats_raw["mean"]),
                          std=np.asarray(stats_raw["std"]))
        with open(os.path.join(data_dir, align_rel), "r", encoding="utf-8") as fh:
            alignment, _ = parse_intervals(fh.read(), frame_rate, inventory)
        features = None
        if feat_rel != "-":
            _, features = _read_table(os.path.join(data_dir, feat_rel))
        utts.append(
            Utterance(
                utt_id=utt_id,
                speaker=speaker,
                tv=TvTrajectory(values=tv_vals, rate=frame_rate, normalized=True),
                stats=stats,
                alignment=alignment,
                features=features,
                wav_path=None if wav_rel == "-" else os.path.join(data_dir, wav_rel),
            )
        )
    if not utts:
        raise DataError("dataset has no utterances")
    return utts, inventory, frame_rate
