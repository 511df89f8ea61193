"""PCM audio ingestion, frame/window geometry and synthetic test signals.

All pipelines consume mono 8 kHz audio.  Three window geometries exist:

* ``ambient``        -- 40 non-overlapping 32 ms frames (1.28 s), tumbling
* ``speaker_count``  -- 3 s of 32 ms frames with 50% overlap, tumbling
* ``speech``         -- 5 s of 30 ms frames with a 10 ms hop, tumbling

Frames tile each window from its first sample; the last frame of a window is
zero-padded when the hop grid overhangs the window end (only the
speaker_count geometry needs this, 64 samples).  Trailing partial windows of
a stream are dropped, never padded.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import SAMPLE_RATE

TRACE_CLASSES = ("silence", "speech", "music", "traffic", "water", "other")


class AudioFormatError(ValueError):
    """Unreadable or unsupported audio input."""


@dataclass
class AudioStream:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int = SAMPLE_RATE
    origin: str = "synthetic"

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"streams are fixed at {SAMPLE_RATE} Hz")
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Frame:
    samples: np.ndarray
    start_index: int


@dataclass
class Window:
    kind: str
    frames: list[Frame]
    start_index: int

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class WindowGeometry:
    kind: str
    frame_len: int
    frame_hop: int
    window_len: int  # samples per window; windows are tumbling (hop == len)

    @property
    def frames_per_window(self) -> int:
        return int(np.ceil((self.window_len - self.frame_len) / self.frame_hop)) + 1


GEOMETRY = {
    "ambient": WindowGeometry("ambient", 256, 256, 40 * 256),
    "speaker_count": WindowGeometry("speaker_count", 256, 128, 3 * SAMPLE_RATE),
    "speech": WindowGeometry("speech", 240, 80, 5 * SAMPLE_RATE),
}


def frame_samples(samples: np.ndarray, geom: WindowGeometry, offset: int = 0) -> list[Frame]:
    """Cut one window's worth of samples into frames (zero-padded overhang)."""
    frames = []
    for i in range(geom.frames_per_window):
        start = i * geom.frame_hop
        chunk = samples[start : start + geom.frame_len]
        if len(chunk) < geom.frame_len:
            chunk = np.concatenate([chunk, np.zeros(geom.frame_len - len(chunk))])
        frames.append(Frame(chunk, offset + start))
    return frames


def frame_stream(stream: AudioStream, kind: str) -> list[Window]:
    """Tile a stream into windows of the given kind, dropping a partial tail."""
    geom = GEOMETRY[kind]
    n = len(stream.samples)
    if n < geom.window_len:
        raise ValueError(
            f"stream of {n} samples is shorter than one {kind} window ({geom.window_len})"
        )
    windows = []
    for start in range(0, n - geom.window_len + 1, geom.window_len):
        chunk = stream.samples[start : start + geom.window_len]
        windows.append(Window(kind, frame_samples(chunk, geom, offset=start), start))
    return windows


# ---------------------------------------------------------------------------
# WAV input/output (RIFF, PCM-16, mono only)

def read_stream(path: str | Path, resample: bool = False) -> AudioStream:
    """Read a mono 16-bit PCM WAV file as a normalized 8 kHz stream.

    Files at other rates are rejected unless ``resample`` is set, in which
    case linear interpolation brings them to 8 kHz.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"malformed WAV file {path}: {exc}") from exc
    if n_channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {n_channels} channels")
    if sampwidth != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if rate != SAMPLE_RATE:
        if not resample:
            raise AudioFormatError(
                f"{path}: rate {rate} Hz != {SAMPLE_RATE} Hz (pass resample=True to convert)"
            )
        samples = _linear_resample(samples, rate, SAMPLE_RATE)
    return AudioStream(samples, origin="file")


def write_stream(path: str | Path, stream: AudioStream) -> None:
    pcm = np.clip(np.round(stream.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(stream.sample_rate)
        wf.writeframes(pcm.tobytes())


def _linear_resample(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    n_out = int(round(len(samples) * dst_rate / src_rate))
    if n_out == 0:
        return np.zeros(0)
    src_t = np.arange(len(samples)) / src_rate
    dst_t = np.arange(n_out) / dst_rate
    return np.interp(dst_t, src_t, samples)


# ---------------------------------------------------------------------------
# Synthetic signals

@dataclass(frozen=True)
class SignalSpec:
    """Description of a deterministic test signal.

    kind is one of ``tone``, ``noise``, ``silence`` or ``mixture``; a mixture
    sums its parts.  Noise can be band-limited with ``noise_band`` (Hz).
    """

    kind: str
    freq_hz: float = 440.0
    amplitude: float = 0.9
    noise_band: tuple[float, float] | None = None
    parts: tuple["SignalSpec", ...] = ()


def synth_signal(spec: SignalSpec, duration_s: float, seed: int = 0) -> AudioStream:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    samples = _render(spec, n, rng)
    return AudioStream(samples, origin="synthetic")


def _render(spec: SignalSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    nyquist = SAMPLE_RATE / 2
    if spec.kind == "silence":
        return np.zeros(n)
    if spec.kind == "tone":
        if spec.freq_hz >= nyquist:
            raise ValueError(f"tone at {spec.freq_hz} Hz is at or above Nyquist ({nyquist})")
        t = np.arange(n) / SAMPLE_RATE
        return spec.amplitude * np.sin(2 * np.pi * spec.freq_hz * t)
    if spec.kind == "noise":
        x = rng.standard_normal(n)
        if spec.noise_band is not None:
            lo, hi = spec.noise_band
            if hi >= nyquist:
                raise ValueError(f"noise band edge {hi} Hz is at or above Nyquist")
            x = _bandpass(x, lo, hi)
        peak = np.max(np.abs(x)) if n else 1.0
        return spec.amplitude * x / max(peak, 1e-12)
    if spec.kind == "mixture":
        out = np.zeros(n)
        for part in spec.parts:
            out += _render(part, n, rng)
        peak = np.max(np.abs(out)) if n else 1.0
        if peak > 1.0:
            out /= peak
        return out
    raise ValueError(f"unknown signal kind: {spec.kind}")


def _bandpass(x: np.ndarray, lo_hz: float, hi_hz: float) -> np.ndarray:
    """Brick-wall bandpass via the frequency domain; fine for test signals."""
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / SAMPLE_RATE)
    spectrum[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    return np.fft.irfft(spectrum, n=len(x))


# ---------------------------------------------------------------------------
# Daily sound traces (drive the energy simulator)

@dataclass(frozen=True)
class TraceSegment:
    start_s: float
    duration_s: float
    klass: str
    label: str = ""


@dataclass
class SoundTrace:
    segments: list[TraceSegment] = field(default_factory=list)

    def __post_init__(self):
        for seg in self.segments:
            if seg.duration_s <= 0:
                raise ValueError(f"non-positive segment duration: {seg}")
            if seg.klass not in TRACE_CLASSES:
                raise ValueError(f"unknown trace class: {seg.klass}")

    @property
    def total_s(self) -> float:
        return sum(seg.duration_s for seg in self.segments)

    def seconds_by_class(self) -> dict[str, float]:
        out = {c: 0.0 for c in TRACE_CLASSES}
        for seg in self.segments:
            out[seg.klass] += seg.duration_s
        return out


def write_trace(path: str | Path, trace: SoundTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_s", "duration_s", "class", "label"])
        for seg in trace.segments:
            writer.writerow([f"{seg.start_s:.3f}", f"{seg.duration_s:.3f}", seg.klass, seg.label])


def read_trace(path: str | Path) -> SoundTrace:
    segments = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["start_s", "duration_s", "class", "label"]:
            raise ValueError(f"{path}: unexpected trace header {reader.fieldnames}")
        for row in reader:
            segments.append(
                TraceSegment(
                    float(row["start_s"]),
                    float(row["duration_s"]),
                    row["class"],
                    row["label"],
                )
            )
    return SoundTrace(segments)


def make_daily_trace(
    speech_hours: float,
    seed: int = 42,
    silence_hours: float = 8.0,
    day_hours: float = 24.0,
    chunk_s: float = 300.0,
) -> SoundTrace:
    """Build a 24 h trace with the requested speech budget.

    Silence defaults to a third of the day; the remainder is split evenly
    between the ambient classes.  Chunks are shuffled deterministically so
    that speech, silence and ambience interleave.
    """
    if speech_hours + silence_hours > day_hours:
        raise ValueError("speech plus silence exceeds the day length")
    ambient_hours = day_hours - silence_hours - speech_hours
    ambient_classes = ("music", "traffic", "water", "other")
    budget_s = {"speech": speech_hours * 3600.0, "silence": silence_hours * 3600.0}
    for c in ambient_classes:
        budget_s[c] = ambient_hours * 3600.0 / len(ambient_classes)

    chunks: list[str] = []
    for klass, total in budget_s.items():
        n_full, rem = divmod(total, chunk_s)
        chunks.extend([klass] * int(n_full))
        if rem > 1e-9:
            chunks.append(klass)  # the final short chunk is sized below
    rng = np.random.default_rng(seed)
    rng.shuffle(chunks)

    remaining = dict(budget_s)
    segments = []
    t = 0.0
    for klass in chunks:
        dur = min(chunk_s, remaining[klass])
        if dur <= 1e-9:
            continue
        remaining[klass] -= dur
        segments.append(TraceSegment(t, dur, klass))
        t += dur
    return SoundTrace(segments)
