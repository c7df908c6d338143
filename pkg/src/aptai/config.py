"""Run configuration: one YAML file with sections, loaded into dataclasses.

Unknown keys are rejected so a typo cannot silently fall back to a default.
Every command echoes its fully resolved configuration into the output
directory, which keeps runs self-describing and reproducible.
"""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .errors import ParameterError

TV_CHANNELS = ("LA", "LP", "JA", "TTCL", "TTCD", "TMCL", "TMCD", "TBCL", "TBCD")
N_TV = len(TV_CHANNELS)

EMA_SENSORS = ("UL", "LL", "JAW", "TT", "TM", "TB")

# 39 ARPAbet phones plus silence, short pause and a few reduced variants,
# giving the 45-label default inventory. Editable per run via the
# inventory section.
DEFAULT_INVENTORY = (
    "sil", "sp",
    "aa", "ae", "ah", "ao", "aw", "ax", "ay",
    "b", "ch", "d", "dh", "dx",
    "eh", "el", "en", "er", "ey",
    "f", "g", "hh", "ih", "iy", "jh", "k", "l", "m", "n", "ng",
    "ow", "oy", "p", "r", "s", "sh", "t", "th",
    "uh", "uw", "v", "w", "y", "z", "zh",
)


def _default_palate():
    # A plausible palate arch in mm, front (positive x) to back, used by the
    # synthetic preprocessing tests. Real runs should supply measured points.
    return [
        [-50.0, 18.0],
        [-35.0, 24.0],
        [-20.0, 27.0],
        [-5.0, 25.0],
        [10.0, 18.0],
    ]


@dataclass
class GeometrySection:
    """Parameters of the sensor-coordinate to tract-variable transform."""

    origin: list = field(default_factory=lambda: [0.0, -10.0])
    occlusal_angle: float = 0.0
    palate: list = field(default_factory=_default_palate)


@dataclass
class FrontendSection:
    """Waveform framing and mel filterbank geometry."""

    sample_rate: int = 16000
    window: int = 400   # 25 ms
    hop: int = 320      # 20 ms -> nominal 50 frames/s
    fft_size: int = 512
    n_mels: int = 40

    @property
    def frame_rate(self):
        return self.sample_rate / self.hop


@dataclass
class ModelSection:
    """Network widths. Full-scale reference dims (512-dim features,
    1024-dim hidden) are deliberately not the defaults: the mechanisms are
    dimension-agnostic and desk-scale widths keep runs CPU-friendly."""

    feature_dim: int = 40
    encoder_width: int = 64
    encoder_layers: int = 2
    attn_dim: int = 128    # phoneme/acoustic projection width
    lstm_hidden: int = 128  # per direction


@dataclass
class SmoothingSection:
    """Fixed output low-pass: windowed-sinc kernel, never trained."""

    cutoff_fraction: float = 0.4  # of Nyquist
    kernel_len: int = 17


@dataclass
class PreprocessSection:
    ema_rate: float = 100.0
    butterworth_cutoff_hz: float = 20.0
    butterworth_order: int = 4


@dataclass
class TrainSection:
    lambda_mtl: float = 1.0
    learning_rate: float = 1e-3
    warmup_epochs: int = 3
    static_epochs: int = 27
    decay_epochs: int = 20
    epochs: int = 50
    batch_size: int = 5
    # dropout < 0 means "per-model default": 0.2 aptai, 0.1 stage-1, 0.0 stage-2
    dropout: float = -1.0
    seed: int = 7
    n_max: int = 60
    # "auto" -> tv_rmse for aptai/stage-2, per for stage-1
    selection_metric: str = "auto"
    holdout_speaker: str = ""
    val_fraction: float = 0.10
    teacher_forcing: bool = False
    diag_prior_width: float = 0.0  # 0 disables the diagonal attention prior


@dataclass
class SynthSection:
    n_labels: int = 12
    n_speakers: int = 4
    n_utterances: int = 200
    min_seg_frames: int = 5
    max_seg_frames: int = 30
    min_segments: int = 3
    max_segments: int = 8
    feature_dim: int = 40
    noise_std: float = 0.1
    seed: int = 7
    frame_rate: float = 50.0


@dataclass
class MetricsSection:
    trim_silence: bool = False
    pcc_pooled: bool = False   # additionally report frame-pooled PCC
    beam_width: int = 16
    align_mode: str = "viterbi"  # or "argmax" (may break monotonicity)


@dataclass
class InventorySection:
    labels: list = field(default_factory=lambda: list(DEFAULT_INVENTORY))
    silence: str = "sil"


@dataclass
class PathsSection:
    data: str = ""
    out: str = ""


@dataclass
class RunConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    frontend: FrontendSection = field(default_factory=FrontendSection)
    model: ModelSection = field(default_factory=ModelSection)
    smoothing: SmoothingSection = field(default_factory=SmoothingSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    train: TrainSection = field(default_factory=TrainSection)
    synth: SynthSection = field(default_factory=SynthSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    inventory: InventorySection = field(default_factory=InventorySection)
    paths: PathsSection = field(default_factory=PathsSection)


_SECTION_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _fill_section(cls, mapping, where):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ParameterError(
            f"unknown key(s) {sorted(unknown)} in config section '{where}'"
        )
    return cls(**mapping)


def config_from_dict(data):
    """Build a RunConfig from a nested dict, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParameterError("config root must be a mapping of sections")
    unknown = set(data) - set(_SECTION_TYPES)
    if unknown:
        raise ParameterError(f"unknown config section(s) {sorted(unknown)}")
    kwargs = {}
    for name in _SECTION_TYPES:
        if name in data:
            section = data[name]
            if not isinstance(section, dict):
                raise ParameterError(f"config section '{name}' must be a mapping")
            cls = type(getattr(RunConfig(), name))
            kwargs[name] = _fill_section(cls, section, name)
    return RunConfig(**kwargs)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)


def config_to_yaml(cfg: RunConfig) -> str:
    """Deterministic YAML dump of a fully resolved configuration."""
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=True,
                          default_flow_style=False)


def config_from_yaml(text: str) -> RunConfig:
    return config_from_dict(yaml.safe_load(text))
