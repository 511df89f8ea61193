"""Runtime constants and key-value config files.

Every tunable that the pipelines depend on lives in :class:`EngineConfig` so
that a single config file (or CLI flags) can override it.  The file format is
deliberately plain: one ``key = value`` per line, ``#`` comments, no sections.
The same format is used for the power/runtime constants shipped with the
energy simulator.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

ENV_CONFIG = "DSPEAR_CONFIG"

SAMPLE_RATE = 8000  # Hz, fixed for every pipeline


@dataclass(frozen=True)
class EngineConfig:
    seed: int = 42

    # silence admission filter
    silence_rms_threshold: float = 0.01  # ~ -40 dBFS
    silence_entropy_bits: float = 6.5
    silence_hangover_frames: int = 40

    # frame feature extraction
    rolloff_fraction: float = 0.85
    lefr_ratio: float = 0.5  # "low energy" = below this fraction of window mean RMS
    log_floor: float = 1e-10

    # pitch tracking
    yin_threshold: float = 0.15
    pitch_fmin_hz: float = 50.0
    pitch_fmax_hz: float = 500.0
    voiced_min_fraction: float = 0.2

    # gender decision on mean pitch
    male_pitch_max_hz: float = 160.0
    female_pitch_min_hz: float = 190.0

    # cepstral features
    n_mfcc: int = 20
    n_mel_filters: int = 24
    plp_order: int = 12
    n_plp_static: int = 16

    # similarity detectors (cosine angle, degrees)
    ambient_similarity_deg: float = 20.0
    speaker_similarity_deg: float = 15.0
    emotion_similarity_deg: float = 10.0

    # speaker counting
    crowd_merge_angle_deg: float = 15.0
    conversation_gap_s: float = 60.0

    # speaker identification
    unknown_margin_nats: float = 0.0

    # model training
    map_relevance: float = 16.0
    em_max_iter: int = 100
    em_rel_tol: float = 1e-4
    variance_floor_fraction: float = 1e-4
    ambient_components: int = 66
    background_components: int = 128

    # model placement budget (bytes)
    dsp_code_limit_bytes: int = 2 * 1024 * 1024
    dsp_code_reserve_bytes: int = 600 * 1024
    emotion_model_cost_bytes: int = 260 * 1024
    ambient_model_cost_bytes: int = 87 * 1024


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, target_type: type):
    if target_type is bool:
        return value.lower() in ("1", "true", "yes", "on")
    return target_type(value)


def config_from_mapping(mapping: dict[str, str], base: EngineConfig | None = None) -> EngineConfig:
    base = base or EngineConfig()
    known = {f.name: f.type for f in fields(EngineConfig)}
    updates = {}
    for key, value in mapping.items():
        if key not in known:
            raise KeyError(f"unknown config key: {key}")
        current = getattr(base, key)
        updates[key] = _coerce(value, type(current))
    return replace(base, **updates)


def load_config(path: str | os.PathLike | None = None) -> EngineConfig:
    """Load config with precedence: explicit path > $DSPEAR_CONFIG > defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is None:
        return EngineConfig()
    text = Path(path).read_text()
    return config_from_mapping(parse_kv_text(text))
