"""Toy acoustic frontend: log-mel energies over 25 ms windows at a 20 ms hop.

Stands in for a pretrained feature encoder; the frame geometry (window 400
samples, hop 320 at 16 kHz, T = 1 + floor((len - 400) / 320)) is what the
rest of the pipeline synchronizes to. The nominal rate is 50 frames/s.
"""

import numpy as np

from ..errors import EmptyUtteranceError, ParameterError

LOG_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels, fft_size, sample_rate):
    """Triangular filters with peaks equally spaced on the mel scale."""
    n_bins = fft_size // 2 + 1
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_hz = np.arange(n_bins) * sample_rate / fft_size
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / max(mid - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_band_centers(n_mels, sample_rate):
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges_hz[1:-1]


def acoustic_frontend(waveform, cfg):
    """Log-mel feature matrix (T, n_mels) for a 16 kHz waveform."""
    x = np.asarray(waveform, dtype=float)
    if x.ndim != 1:
        raise ParameterError("waveform must be 1-D")
    if len(x) < cfg.window:
        raise EmptyUtteranceError(
            f"waveform of {len(x)} samples is shorter than one window"
        )
    n_frames = 1 + (len(x) - cfg.window) // cfg.hop
    window = np.hanning(cfg.window)
    fb = mel_filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate)
    feats = np.empty((n_frames, cfg.n_mels))
    for t in range(n_frames):
        seg = x[t * cfg.hop:t * cfg.hop + cfg.window] * window
        spec = np.abs(np.fft.rfft(seg, cfg.fft_size)) ** 2
        feats[t] = np.log(fb @ spec + LOG_FLOOR)
    return feats
