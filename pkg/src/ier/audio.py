"""WAV ingestion, log-mel spectrograms and waveform mixing.

Preprocessing settings: 16 kHz mono, 160 ms Hann window, 80 ms hop,
64 triangular mel bins on the HTK scale between 20 Hz and 8 kHz,
natural log with a 1e-10 floor.  Partial tail frames are dropped.
"""

from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile

from .errors import DomainError, FormatError

TARGET_RATE = 16000
WINDOW_S = 0.160
HOP_S = 0.080
MEL_BINS = 64
MEL_FMIN = 20.0
MEL_FMAX = 8000.0
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int


@dataclass
class LogMelSpectrogram:
    values: np.ndarray  # (frames, mel_bins)
    frame_hop: float
    window: float


def load_wav(path, target_rate=TARGET_RATE):
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot read WAV file {path}: {exc}") from exc
    data = np.asarray(data)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise FormatError(f"unsupported WAV sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if rate != target_rate:
        samples = _resample_linear(samples, rate, target_rate)
        rate = target_rate
    return Waveform(samples=samples, sample_rate=rate)


def _resample_linear(samples, rate, target_rate):
    n = len(samples)
    if n == 0:
        return samples
    duration = (n - 1) / rate
    m = int(np.floor(duration * target_rate)) + 1
    t_new = np.arange(m) / target_rate
    t_old = np.arange(n) / rate
    return np.interp(t_new, t_old, samples)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft, rate, bins=MEL_BINS, fmin=MEL_FMIN, fmax=MEL_FMAX):
    """Triangular filters (bins, n_fft//2 + 1) on the HTK mel scale."""
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), bins + 2)
    hz_pts = mel_to_hz(mel_pts)
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    fb = np.zeros((bins, len(freqs)))
    for b in range(bins):
        lo, mid, hi = hz_pts[b], hz_pts[b + 1], hz_pts[b + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[b] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_freqs(bins=MEL_BINS, fmin=MEL_FMIN, fmax=MEL_FMAX):
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), bins + 2)
    return mel_to_hz(mel_pts)[1:-1]


def log_mel(w, window=WINDOW_S, hop=HOP_S, bins=MEL_BINS):
    win_samples = int(round(window * w.sample_rate))
    hop_samples = int(round(hop * w.sample_rate))
    n = len(w.samples)
    if n < win_samples:
        raise DomainError(
            f"clip of {n} samples shorter than one {win_samples}-sample window"
        )
    frames = (n - win_samples) // hop_samples + 1
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_samples) / win_samples)
    fb = mel_filterbank(win_samples, w.sample_rate, bins=bins)
    out = np.empty((frames, bins))
    for t in range(frames):
        seg = w.samples[t * hop_samples : t * hop_samples + win_samples] * hann
        mag = np.abs(np.fft.rfft(seg))
        out[t] = np.log(fb @ mag + LOG_FLOOR)
    return LogMelSpectrogram(values=out, frame_hop=hop, window=window)


def mix_waveforms(waveforms):
    if not waveforms:
        raise DomainError("cannot mix an empty list of waveforms")
    rates = {w.sample_rate for w in waveforms}
    if len(rates) != 1:
        raise DomainError(f"sample rate mismatch: {sorted(rates)}")
    n = min(len(w.samples) for w in waveforms)
    stacked = np.stack([w.samples[:n] for w in waveforms])
    return Waveform(samples=stacked.mean(axis=0), sample_rate=rates.pop())
