"""Acoustic feature extraction.

Frame-level features (RMS, spectral entropy, ZCR, flux, rolloff, centroid,
bandwidth, relative spectral entropy, weighted phase deviation) feed the
admission filters and ambient pipeline; YIN pitch feeds gender estimation and
speaker counting; 20-dim MFCCs feed speaker counting and ambient models;
32-dim PLP vectors (16 static + 16 delta) feed emotion recognition and
speaker identification.

Everything here is pure and deterministic: repeated calls on the same input
are bit-identical, and all outputs are finite for finite input (all-zero
frames included).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from . import kernels
from .audio_io import Window
from .config import SAMPLE_RATE, EngineConfig

FRAME_FEATURE_NAMES = (
    "rms",
    "spectral_entropy",
    "zcr",
    "flux",
    "rolloff",
    "centroid",
    "bandwidth",
    "rel_spectral_entropy",
    "nwpd",
)

_SPECTRUM_BINS = 128  # 256-point FFT, bins 1..128 (DC excluded)
_MAX_ENTROPY_BITS = float(np.log2(_SPECTRUM_BINS))
_REL_ENTROPY_SMOOTHING = 0.9


@dataclass
class FrameFeatures:
    rms: float
    spectral_entropy: float
    zcr: float
    flux: float
    rolloff: float
    centroid: float
    bandwidth: float
    rel_spectral_entropy: float
    nwpd: float
    pitch: float | None = None

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FRAME_FEATURE_NAMES])


@dataclass
class WindowSummary:
    """Mean/variance of the frame features over a window, plus LEFR.

    ``mfcc_means`` is filled for ambient windows so the similarity detector
    can use the extended acoustic fingerprint.
    """

    means: np.ndarray  # (9,)
    variances: np.ndarray  # (9,)
    lefr: float
    mfcc_means: np.ndarray | None = None

    def tree_vector(self) -> np.ndarray:
        return np.concatenate([self.means, self.variances, [self.lefr]])

    def similarity_vector(self) -> np.ndarray:
        vec = self.tree_vector()
        if self.mfcc_means is not None:
            vec = np.concatenate([vec, self.mfcc_means])
        return vec


TREE_FEATURE_NAMES = tuple(
    [f"mean_{n}" for n in FRAME_FEATURE_NAMES]
    + [f"var_{n}" for n in FRAME_FEATURE_NAMES]
    + ["lefr"]
)


def rms(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("empty frame")
    return float(np.sqrt(np.mean(samples * samples)))


def _magnitude_spectra(frames: np.ndarray, n_fft: int = 256) -> np.ndarray:
    """Magnitude spectra of frames, bins 1..n_fft/2 (DC dropped)."""
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=1))[:, 1:]


def _entropy_bits(mag: np.ndarray) -> np.ndarray:
    """Shannon entropy of each normalized magnitude spectrum, in bits.

    An all-zero spectrum maps to the maximum (uniform) entropy so silence is
    never mistaken for tonal content.
    """
    totals = np.sum(mag, axis=1, keepdims=True)
    out = np.full(mag.shape[0], _MAX_ENTROPY_BITS)
    ok = totals.ravel() > 0
    if np.any(ok):
        p = mag[ok] / totals[ok]
        plogp = np.where(p > 0, p * np.log2(np.maximum(p, 1e-300)), 0.0)
        out[ok] = -np.sum(plogp, axis=1)
    return out


def spectral_entropy(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    mag = _magnitude_spectra(samples[np.newaxis, :])
    return float(_entropy_bits(mag)[0])


def zero_crossings(samples: np.ndarray) -> int:
    samples = np.asarray(samples, dtype=np.float64)
    return int(np.sum(samples[:-1] * samples[1:] < 0))


def frame_feature_matrix(frames: np.ndarray) -> np.ndarray:
    """Per-frame features for a (n_frames, frame_len) block, shape (n, 9).

    Flux, relative spectral entropy and phase deviation depend on preceding
    frames; the first frame(s) of a block carry zeros for those columns.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    spectra = np.fft.rfft(frames, n=256, axis=1)[:, 1:]
    mag = np.abs(spectra)
    phase = np.angle(spectra)
    freqs = np.arange(1, _SPECTRUM_BINS + 1) * SAMPLE_RATE / 256.0

    rms_v = np.sqrt(np.mean(frames * frames, axis=1))
    ent = _entropy_bits(mag)
    zcr = np.sum(frames[:, :-1] * frames[:, 1:] < 0, axis=1).astype(np.float64)

    flux = np.zeros(n)
    if n > 1:
        flux[1:] = np.linalg.norm(np.diff(mag, axis=0), axis=1)

    totals = np.sum(mag, axis=1)
    safe = np.maximum(totals, 1e-300)
    centroid = np.where(totals > 0, mag @ freqs / safe, 0.0)
    spread = np.sum(mag * (freqs[np.newaxis, :] - centroid[:, np.newaxis]) ** 2, axis=1)
    bandwidth = np.where(totals > 0, np.sqrt(spread / safe), 0.0)

    cum = np.cumsum(mag, axis=1)
    rolloff = np.zeros(n)
    nonzero = totals > 0
    if np.any(nonzero):
        targets = 0.85 * totals[nonzero]
        idx = np.argmax(cum[nonzero] >= targets[:, np.newaxis], axis=1)
        rolloff[nonzero] = freqs[idx]

    rel_ent = np.zeros(n)
    uniform = np.full(_SPECTRUM_BINS, 1.0 / _SPECTRUM_BINS)
    probs = np.where(totals[:, np.newaxis] > 0, mag / safe[:, np.newaxis], uniform)
    running = probs[0].copy()
    for t in range(1, n):
        p = probs[t]
        q = np.maximum(running, 1e-12)
        rel_ent[t] = float(np.sum(np.where(p > 0, p * np.log2(np.maximum(p, 1e-300) / q), 0.0)))
        running = _REL_ENTROPY_SMOOTHING * running + (1 - _REL_ENTROPY_SMOOTHING) * p

    nwpd = np.zeros(n)
    if n > 2:
        dev = phase[2:] - 2.0 * phase[1:-1] + phase[:-2]
        dev = np.mod(dev + np.pi, 2.0 * np.pi) - np.pi
        weights = mag[2:]
        wsum = np.sum(weights, axis=1)
        nwpd[2:] = np.where(wsum > 0, np.sum(weights * np.abs(dev), axis=1) / np.maximum(wsum, 1e-300), 0.0)

    return np.column_stack([rms_v, ent, zcr, flux, rolloff, centroid, bandwidth, rel_ent, nwpd])


def window_features(window: Window, cfg: EngineConfig | None = None) -> WindowSummary:
    """Summary statistics over an ambient-kind window (40 frames)."""
    cfg = cfg or EngineConfig()
    if window.kind != "ambient":
        raise ValueError(f"window_features expects an ambient window, got {window.kind!r}")
    frames = np.stack([f.samples for f in window.frames])
    feats = frame_feature_matrix(frames)
    means = feats.mean(axis=0)
    variances = feats.var(axis=0)
    rms_col = feats[:, 0]
    mean_rms = float(np.mean(rms_col))
    lefr = float(np.mean(rms_col < cfg.lefr_ratio * mean_rms)) if mean_rms > 0 else 0.0
    mfcc_means = mfcc_frames(frames).mean(axis=0)
    return WindowSummary(means, variances, lefr, mfcc_means)


# ---------------------------------------------------------------------------
# Pitch

def yin_pitch(
    samples: np.ndarray,
    fmin: float = 50.0,
    fmax: float = 500.0,
    threshold: float = 0.15,
) -> float | None:
    """Fundamental frequency via the YIN difference function, or None.

    Cumulative-mean normalization, absolute threshold, then parabolic
    interpolation around the chosen lag.  Aperiodic input returns None.
    """
    x = np.asarray(samples, dtype=np.float64)
    tau_max = int(SAMPLE_RATE / fmin)
    tau_min = max(2, int(np.ceil(SAMPLE_RATE / fmax)))
    if len(x) < tau_max + 16:
        raise ValueError(f"need at least {tau_max + 16} samples for fmin={fmin}")
    d = kernels.yin_difference(x, tau_max)

    cum = np.cumsum(d[1:])
    cmndf = np.ones(tau_max + 1)
    nz = cum > 0
    taus = np.arange(1, tau_max + 1)
    cmndf[1:][nz] = d[1:][nz] * taus[nz] / cum[nz]

    tau = None
    for t in range(tau_min, tau_max + 1):
        if cmndf[t] < threshold:
            tau = t
            while tau + 1 <= tau_max and cmndf[tau + 1] < cmndf[tau]:
                tau += 1
            break
    if tau is None:
        return None

    # octave-error correction: a near-as-deep dip at an integer divisor of the
    # chosen lag means the true period is the shorter one
    for div in (4, 3, 2):
        cand = int(round(tau / div))
        if cand >= tau_min and cmndf[cand] < 1.5 * threshold:
            tau = cand
            while tau + 1 <= tau_max and cmndf[tau + 1] < cmndf[tau]:
                tau += 1
            while tau - 1 >= tau_min and cmndf[tau - 1] < cmndf[tau]:
                tau -= 1
            break

    if 1 <= tau < tau_max:
        a, b, c = cmndf[tau - 1], cmndf[tau], cmndf[tau + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if abs(denom) > 1e-18 else 0.0
        tau_hat = tau + float(np.clip(shift, -1.0, 1.0))
    else:
        tau_hat = float(tau)
    f0 = SAMPLE_RATE / tau_hat
    if not (fmin <= f0 <= fmax):
        return None
    return float(f0)


def mean_pitch(window: Window, cfg: EngineConfig | None = None) -> float | None:
    """Mean pitch across voiced frames of a speaker_count window.

    Returns None when fewer than the configured fraction of frames carry a
    detectable pitch.
    """
    cfg = cfg or EngineConfig()
    if window.kind != "speaker_count":
        raise ValueError(f"mean_pitch expects a speaker_count window, got {window.kind!r}")
    pitches = []
    for frame in window.frames:
        p = yin_pitch(frame.samples, cfg.pitch_fmin_hz, cfg.pitch_fmax_hz, cfg.yin_threshold)
        if p is not None:
            pitches.append(p)
    if len(pitches) < cfg.voiced_min_fraction * window.n_frames:
        return None
    return float(np.mean(pitches))


# ---------------------------------------------------------------------------
# MFCC

def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(n_filters: int = 24, n_fft: int = 256) -> np.ndarray:
    """Triangular filters spaced on the mel scale over 0..4 kHz."""
    points = _mel_inv(np.linspace(_mel(0.0), _mel(SAMPLE_RATE / 2.0), n_filters + 2))
    bins = np.floor((n_fft + 1) * points / SAMPLE_RATE).astype(int)
    bank = np.zeros((n_filters, n_fft // 2 + 1))
    for j in range(n_filters):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        for i in range(left, center):
            bank[j, i] = (i - left) / max(center - left, 1)
        for i in range(center, right):
            bank[j, i] = (right - i) / max(right - center, 1)
    return bank


_MEL_BANK = _mel_filterbank()
_HAMMING_256 = np.hamming(256)
_HAMMING_240 = np.hamming(240)
_LOG_FLOOR = 1e-10


def mfcc_frames(frames: np.ndarray, n_coeffs: int = 20) -> np.ndarray:
    """MFCC vectors for a (n_frames, 256) block, shape (n_frames, n_coeffs)."""
    frames = np.asarray(frames, dtype=np.float64)
    windowed = frames * _HAMMING_256
    power = np.abs(np.fft.rfft(windowed, n=256, axis=1)) ** 2
    energies = power @ _MEL_BANK.T
    logs = np.log(np.maximum(energies, _LOG_FLOOR))
    return dct(logs, type=2, axis=1, norm="ortho")[:, :n_coeffs]


def mfcc(frame_samples: np.ndarray, n_coeffs: int = 20) -> np.ndarray:
    return mfcc_frames(np.asarray(frame_samples)[np.newaxis, :], n_coeffs)[0]


# ---------------------------------------------------------------------------
# PLP (16 static + 16 delta coefficients per 30 ms frame)

def _bark(f):
    return 6.0 * np.arcsinh(np.asarray(f, dtype=np.float64) / 600.0)


def _build_plp_tables(n_fft: int = 256, order: int = 12):
    """Critical-band filterbank, equal-loudness weights and IDFT cosines."""
    freqs = np.arange(n_fft // 2 + 1) * SAMPLE_RATE / n_fft
    bin_barks = _bark(freqs)
    n_bands = int(np.floor(_bark(SAMPLE_RATE / 2.0)))  # 15 bands at 8 kHz
    centers_bark = np.arange(1, n_bands + 1, dtype=np.float64)

    bank = np.zeros((n_bands, len(freqs)))
    for j, center in enumerate(centers_bark):
        offset = bin_barks - center
        shape = np.zeros_like(offset)
        rising = (offset >= -1.3) & (offset <= -0.5)
        flat = (offset > -0.5) & (offset < 0.5)
        falling = (offset >= 0.5) & (offset <= 2.5)
        shape[rising] = 10.0 ** (2.5 * (offset[rising] + 0.5))
        shape[flat] = 1.0
        shape[falling] = 10.0 ** (-(offset[falling] - 0.5))
        bank[j] = shape

    center_hz = 600.0 * np.sinh(centers_bark / 6.0)
    f2 = center_hz**2
    loudness = ((f2 + 56.8e6) * f2**2) / ((f2 + 6.3e6) ** 2 * (f2 + 0.38e9))

    # IDFT of the even spectrum made of the bands plus duplicated edges
    m = n_bands + 2
    j = np.arange(m)
    lags = np.arange(order + 1)
    cosines = np.cos(np.pi * np.outer(lags, j) / (m - 1))
    cosines[:, 0] *= 0.5
    cosines[:, -1] *= 0.5
    return bank, loudness, cosines


_PLP_BANK, _PLP_LOUDNESS, _PLP_COSINES = _build_plp_tables()


def _levinson_batch(autocorr: np.ndarray, order: int):
    """Levinson-Durbin across rows; returns (lp_coeffs (n, order), error (n,))."""
    n = autocorr.shape[0]
    a = np.zeros((n, order + 1))
    a[:, 0] = 1.0
    err = np.maximum(autocorr[:, 0].copy(), _LOG_FLOOR)
    for m in range(1, order + 1):
        acc = autocorr[:, m].copy()
        for k in range(1, m):
            acc += a[:, k] * autocorr[:, m - k]
        reflect = -acc / err
        prev = a[:, 1:m].copy()
        a[:, 1:m] = prev + reflect[:, np.newaxis] * prev[:, ::-1]
        a[:, m] = reflect
        err = np.maximum(err * (1.0 - reflect**2), _LOG_FLOOR)
    # predictor convention x[t] ~ sum_k lp[k] x[t-k]
    return -a[:, 1:], err


def _lp_to_cepstra(lp: np.ndarray, err: np.ndarray, n_ceps: int) -> np.ndarray:
    """Cepstra of the all-pole model, c0 = log prediction error."""
    n, order = lp.shape
    ceps = np.zeros((n, n_ceps))
    ceps[:, 0] = np.log(err)
    for m in range(1, n_ceps):
        acc = lp[:, m - 1].copy() if m <= order else np.zeros(n)
        for k in range(1, m):
            if m - k <= order:
                acc += (k / m) * ceps[:, k] * lp[:, m - k - 1]
        ceps[:, m] = acc
    return ceps


def _deltas(static: np.ndarray, span: int = 2) -> np.ndarray:
    padded = np.concatenate([static[:1].repeat(span, axis=0), static, static[-1:].repeat(span, axis=0)])
    n = static.shape[0]
    num = np.zeros_like(static)
    for d in range(1, span + 1):
        num += d * (padded[span + d : span + d + n] - padded[span - d : span - d + n])
    return num / (2.0 * sum(d * d for d in range(1, span + 1)))


def plp(window: Window, cfg: EngineConfig | None = None) -> np.ndarray:
    """PLP features for a speech window: (498, 32) static+delta matrix."""
    cfg = cfg or EngineConfig()
    if window.kind != "speech":
        raise ValueError(f"plp expects a speech window, got {window.kind!r}")
    frames = np.stack([f.samples for f in window.frames])
    return plp_frames(frames, cfg)


def plp_frames(frames: np.ndarray, cfg: EngineConfig | None = None) -> np.ndarray:
    cfg = cfg or EngineConfig()
    frames = np.asarray(frames, dtype=np.float64)
    windowed = frames * _HAMMING_240[np.newaxis, : frames.shape[1]]
    power = np.abs(np.fft.rfft(windowed, n=256, axis=1)) ** 2
    bands = power @ _PLP_BANK.T
    loud = (np.maximum(bands * _PLP_LOUDNESS, _LOG_FLOOR)) ** 0.33
    padded = np.concatenate([loud[:, :1], loud, loud[:, -1:]], axis=1)
    autocorr = padded @ _PLP_COSINES.T / (padded.shape[1] - 1)
    lp, err = _levinson_batch(autocorr, cfg.plp_order)
    static = _lp_to_cepstra(lp, err, cfg.n_plp_static)
    return np.hstack([static, _deltas(static)])


# ---------------------------------------------------------------------------
# Feature dumps (test oracle interface)

def write_feature_csv(path: str | Path, summaries: list[WindowSummary]) -> None:
    """CSV dump: one row per (window, feature) pair."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "feature_name", "value"])
        for idx, summary in enumerate(summaries):
            vec = summary.tree_vector()
            for name, value in zip(TREE_FEATURE_NAMES, vec):
                writer.writerow([idx, name, repr(float(value))])
