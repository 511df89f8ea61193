"""Synthetic audio corpora for training and evaluation.

Voices are source-filter constructs: a sawtooth glottal source with vibrato
and jitter, shaped by a per-speaker formant cascade, spectral tilt and a
syllabic amplitude envelope.  Emotional styles modulate pitch range, vibrato,
energy dynamics and brightness; ambient classes are band-limited noise and
tone textures.  Everything is seeded and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioStream
from .config import SAMPLE_RATE


@dataclass(frozen=True)
class VoiceProfile:
    name: str
    gender: str  # male | female
    f0_hz: float
    formant_mult: float  # vocal-tract scaling applied to the shared vowel set
    nasal_hz: float  # speaker-specific fixed resonance
    tilt: float  # 0..1, larger = darker


@dataclass(frozen=True)
class StyleParams:
    """Prosodic style knobs layered on a voice."""

    name: str = "neutral_normal"
    f0_scale: float = 1.0
    vibrato_depth: float = 0.02
    vibrato_rate_hz: float = 4.0
    jitter: float = 0.005
    am_depth: float = 0.35
    am_rate_hz: float = 3.0
    brightness: float = 0.0  # -1 darker .. +1 brighter


# shared vowel inventory: (F1, F2, F3) centers in Hz before speaker scaling
VOWELS = (
    (730.0, 1090.0, 2440.0),  # a
    (530.0, 1840.0, 2480.0),  # e
    (390.0, 1990.0, 2550.0),  # i
    (570.0, 840.0, 2410.0),  # o
    (440.0, 1020.0, 2240.0),  # u
)
_FORMANT_BW = (140.0, 170.0, 210.0)

VOICES = (
    VoiceProfile("spk_m1", "male", 110.0, 0.82, 2600.0, 0.72),
    VoiceProfile("spk_m2", "male", 125.0, 1.12, 3600.0, 0.05),
    VoiceProfile("spk_m3", "male", 140.0, 0.93, 2100.0, 0.50),
    VoiceProfile("spk_f1", "female", 205.0, 1.10, 3100.0, 0.10),
    VoiceProfile("spk_f2", "female", 220.0, 1.32, 2300.0, 0.65),
    VoiceProfile("spk_f3", "female", 235.0, 0.95, 3700.0, 0.38),
)

# narrow emotion -> broad category
EMOTION_GROUPS = {
    "disgust": "anger",
    "dominant": "anger",
    "hot_anger": "anger",
    "panic": "fear",
    "elation": "happiness",
    "interest": "happiness",
    "happiness": "happiness",
    "boredom": "neutral",
    "neutral_distant": "neutral",
    "neutral_conversation": "neutral",
    "neutral_normal": "neutral",
    "neutral_tete": "neutral",
    "passive": "neutral",
    "sadness": "sadness",
}
NARROW_EMOTIONS = tuple(EMOTION_GROUPS)
NON_NEUTRAL_EMOTIONS = tuple(e for e, b in EMOTION_GROUPS.items() if b != "neutral")
NEUTRAL_EMOTIONS = tuple(e for e, b in EMOTION_GROUPS.items() if b == "neutral")

EMOTION_STYLES = {
    "disgust": StyleParams("disgust", 0.88, 0.05, 5.0, 0.015, 0.50, 2.5, -0.6),
    "dominant": StyleParams("dominant", 0.85, 0.04, 4.5, 0.012, 0.55, 3.0, -0.5),
    "hot_anger": StyleParams("hot_anger", 0.92, 0.09, 6.5, 0.025, 0.70, 3.5, 0.7),
    "panic": StyleParams("panic", 1.25, 0.12, 7.5, 0.030, 0.75, 4.5, 0.9),
    "elation": StyleParams("elation", 1.20, 0.10, 6.0, 0.020, 0.60, 4.0, 0.5),
    "interest": StyleParams("interest", 1.10, 0.06, 5.0, 0.012, 0.50, 3.5, 0.2),
    "happiness": StyleParams("happiness", 1.15, 0.08, 5.5, 0.018, 0.55, 4.0, 0.4),
    "boredom": StyleParams("boredom", 0.95, 0.02, 3.5, 0.006, 0.30, 2.0, -0.2),
    "neutral_distant": StyleParams("neutral_distant", 0.98, 0.02, 4.0, 0.005, 0.32, 2.5, -0.1),
    "neutral_conversation": StyleParams("neutral_conversation", 1.00, 0.025, 4.0, 0.006, 0.38, 3.0, 0.0),
    "neutral_normal": StyleParams("neutral_normal", 1.00, 0.02, 4.0, 0.005, 0.35, 3.0, 0.0),
    "neutral_tete": StyleParams("neutral_tete", 1.02, 0.022, 4.2, 0.006, 0.36, 2.8, 0.1),
    "passive": StyleParams("passive", 0.96, 0.018, 3.2, 0.005, 0.30, 2.2, -0.3),
    "sadness": StyleParams("sadness", 0.80, 0.03, 3.0, 0.008, 0.30, 1.5, -0.8),
}

AMBIENT_CLASSES = ("music", "traffic", "water", "other")


def voice_utterance(
    profile: VoiceProfile,
    duration_s: float,
    rng: np.random.Generator,
    style: StyleParams | None = None,
    level: float = 0.45,
) -> np.ndarray:
    """One utterance: a vowel sequence through the speaker's vocal tract.

    Every speaker articulates the same vowel inventory; identity comes from
    pitch, vocal-tract scaling and spectral tilt, so class overlap is the
    shared phonetic content rather than disjoint spectra.
    """
    style = style or StyleParams()
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    f0 = profile.f0_hz * style.f0_scale
    vibrato = 1.0 + style.vibrato_depth * np.sin(
        2 * np.pi * style.vibrato_rate_hz * t + rng.uniform(0, 2 * np.pi)
    )
    jitter = 1.0 + style.jitter * _smooth_noise(n, 30.0, rng)
    inst_freq = f0 * vibrato * jitter
    phase = np.cumsum(inst_freq) / SAMPLE_RATE
    # sawtooth with a reinforced fundamental keeps the period dominant after
    # narrow resonances pick out inter-harmonic regions
    source = 2.0 * (phase % 1.0) - 1.0 + 1.5 * np.sin(2.0 * np.pi * phase)

    y = np.zeros(n)
    fade = int(0.010 * SAMPLE_RATE)
    pos = 0
    detune = 1.0 + rng.uniform(-0.015, 0.015)
    deck: list[int] = []
    while pos < n:
        seg_len = int(rng.uniform(0.12, 0.22) * SAMPLE_RATE)
        end = min(pos + seg_len, n)
        if not deck:
            # draw vowels without replacement so windows get balanced coverage
            deck = list(rng.permutation(len(VOWELS)))
        vowel = VOWELS[deck.pop()]
        lo = max(pos - fade, 0)  # overlap into the previous segment for a crossfade
        warm = min(lo, 480)  # prime the filters so ring-in stays out of the mix
        chunk = source[lo - warm : end]
        for center, bw in zip(vowel, _FORMANT_BW):
            chunk = _resonator(chunk, center * profile.formant_mult * detune, bw)
        # speaker-specific spectral bump; parallel and low-gain so the ringing
        # never competes with the glottal periodicity
        chunk = chunk + 0.5 * _resonator(chunk, profile.nasal_hz * detune, 300.0)
        chunk = chunk[warm:]
        ramp = np.ones(end - lo)
        if lo > 0:
            ramp[:fade] = np.linspace(0.0, 1.0, fade)
            y[lo : lo + fade] *= np.linspace(1.0, 0.0, fade)
        y[lo:end] += chunk * ramp
        pos = end

    tilt = np.clip(profile.tilt - 0.25 * style.brightness, 0.02, 0.95)
    lp = lfilter([1.0 - 0.9], [1.0, -0.9], y)
    y = (1.0 - tilt) * y + tilt * lp

    y = y / max(np.max(np.abs(y)), 1e-9)  # unit peak before mixing breath noise
    env = 1.0 - style.am_depth * (0.5 + 0.5 * np.sin(
        2 * np.pi * style.am_rate_hz * t + rng.uniform(0, 2 * np.pi)
    ))
    y = y * env + 0.004 * rng.standard_normal(n)

    peak = np.max(np.abs(y))
    return level * y / max(peak, 1e-9)


def _resonator(x: np.ndarray, center_hz: float, bandwidth_hz: float) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth_hz / SAMPLE_RATE)
    theta = 2 * np.pi * center_hz / SAMPLE_RATE
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    b = [1.0 - r]
    return lfilter(b, a, x)


def _smooth_noise(n: int, cutoff_hz: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-scale slowly-varying noise (one-pole smoothed white noise)."""
    alpha = np.exp(-2 * np.pi * cutoff_hz / SAMPLE_RATE)
    x = lfilter([1 - alpha], [1, -alpha], rng.standard_normal(n))
    peak = np.max(np.abs(x))
    return x / max(peak, 1e-9)


def _bandnoise(n: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal(n)
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    y = np.fft.irfft(spectrum, n=n)
    return y / max(np.max(np.abs(y)), 1e-9)


def ambient_signal(klass: str, duration_s: float, rng: np.random.Generator, level: float = 0.4) -> np.ndarray:
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    if klass == "music":
        # chord tones with a slow progression and gentle tremolo
        roots = [220.0, 261.63, 196.0, 246.94]
        seg = max(int(0.75 * SAMPLE_RATE), 1)
        y = np.zeros(n)
        for i in range(0, n, seg):
            root = roots[(i // seg) % len(roots)] * (1.0 + rng.uniform(-0.01, 0.01))
            tt = t[i : i + seg]
            chunk = np.zeros(len(tt))
            for mult, amp in ((1.0, 1.0), (1.25, 0.7), (1.5, 0.8), (2.0, 0.5), (3.0, 0.25)):
                chunk += amp * np.sin(2 * np.pi * root * mult * tt)
            y[i : i + seg] = chunk
        y *= 1.0 - 0.15 * (0.5 + 0.5 * np.sin(2 * np.pi * 5.0 * t))
    elif klass == "traffic":
        rumble = _bandnoise(n, 40.0, 550.0, rng)
        hum = 0.35 * np.sin(2 * np.pi * 90.0 * t) + 0.2 * np.sin(2 * np.pi * 180.0 * t)
        swell = 1.0 - 0.3 * (0.5 + 0.5 * np.sin(2 * np.pi * 0.4 * t + rng.uniform(0, 6.28)))
        y = (rumble + hum) * swell
    elif klass == "water":
        body = _bandnoise(n, 1500.0, 3200.0, rng)
        bubbles = 1.0 - 0.25 * (0.5 + 0.5 * np.sin(2 * np.pi * 11.0 * t + rng.uniform(0, 6.28)))
        y = body * bubbles
    elif klass == "other":
        base = _bandnoise(n, 500.0, 2500.0, rng) * 0.6
        chirp_f = 600.0 + 900.0 * (0.5 + 0.5 * np.sin(2 * np.pi * 0.9 * t))
        chirp = 0.6 * np.sin(2 * np.pi * np.cumsum(chirp_f) / SAMPLE_RATE)
        y = base + chirp
    else:
        raise ValueError(f"unknown ambient class: {klass}")
    return level * y / max(np.max(np.abs(y)), 1e-9)


def ambient_stream(klass: str, duration_s: float, seed: int) -> AudioStream:
    rng = np.random.default_rng(seed)
    return AudioStream(ambient_signal(klass, duration_s, rng))


def speech_stream(
    profile: VoiceProfile,
    duration_s: float,
    seed: int,
    style: StyleParams | None = None,
) -> AudioStream:
    rng = np.random.default_rng(seed)
    return AudioStream(voice_utterance(profile, duration_s, rng, style))


def conversation_stream(
    speakers: list[VoiceProfile],
    duration_s: float,
    seed: int,
    style: StyleParams | None = None,
    utterance_s: tuple[float, float] = (2.4, 4.0),
    gap_s: tuple[float, float] = (0.2, 0.6),
) -> tuple[AudioStream, int]:
    """Alternating utterances from the given speakers, returns (stream, k)."""
    rng = np.random.default_rng(seed)
    n_total = int(round(duration_s * SAMPLE_RATE))
    out = np.zeros(n_total)
    pos = 0
    turn = 0
    order = list(range(len(speakers)))
    rng.shuffle(order)
    while pos < n_total:
        profile = speakers[order[turn % len(order)]]
        dur = rng.uniform(*utterance_s)
        utt = voice_utterance(profile, dur, rng, style)
        end = min(pos + len(utt), n_total)
        out[pos:end] = utt[: end - pos]
        pos = end + int(rng.uniform(*gap_s) * SAMPLE_RATE)
        turn += 1
        if turn % len(order) == 0:
            rng.shuffle(order)
    return AudioStream(out), len(speakers)


def emotion_stream(
    narrow: str,
    profile: VoiceProfile,
    duration_s: float,
    seed: int,
) -> AudioStream:
    style = EMOTION_STYLES[narrow]
    return speech_stream(profile, duration_s, seed, style)


def valence_style(neutral: bool, rng: np.random.Generator) -> StyleParams:
    """Random style drawn from the neutral or the emotional cluster."""
    pool = NEUTRAL_EMOTIONS if neutral else NON_NEUTRAL_EMOTIONS
    name = pool[rng.integers(len(pool))]
    base = EMOTION_STYLES[name]
    return replace(base, vibrato_rate_hz=base.vibrato_rate_hz * rng.uniform(0.9, 1.1))
