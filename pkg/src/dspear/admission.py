"""Stage gating: silence filter, speech/ambient filter, neutral-emotion
filter and the cosine-similarity detectors that propagate labels.

The silence filter is a small deterministic state machine over frames: one
acoustic event admits everything until a full hangover window of consecutive
silent frames has passed.  Each similarity detector owns mutable state bound
to a single pipeline stream; calls on one detector must be serialized by the
caller (distinct detectors are independent).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EngineConfig
from .models import DecisionTreeModel, GmmModel, gmm_loglik, tree_classify

ADMIT = "admit"
REJECT = "reject"
PROPAGATE = "propagate"


@dataclass
class GateDecision:
    verdict: str  # admit | reject | propagate
    label: str | None = None  # carried only by propagate


@dataclass
class SilenceFilter:
    """Frame-level silence gating with hangover.

    A frame counts as non-silent when RMS exceeds the level threshold while
    spectral entropy stays below the tonality threshold.
    """

    rms_threshold: float = 0.01
    entropy_threshold: float = 6.5
    hangover_frames: int = 40
    _active: bool = False
    _consecutive_silent: int = 0

    @classmethod
    def from_config(cls, cfg: EngineConfig) -> "SilenceFilter":
        return cls(cfg.silence_rms_threshold, cfg.silence_entropy_bits, cfg.silence_hangover_frames)

    def reset(self) -> None:
        self._active = False
        self._consecutive_silent = 0

    def step(self, rms: float, entropy_bits: float) -> GateDecision:
        non_silent = rms > self.rms_threshold and entropy_bits < self.entropy_threshold
        if non_silent:
            self._active = True
            self._consecutive_silent = 0
            return GateDecision(ADMIT)
        if not self._active:
            return GateDecision(REJECT)
        self._consecutive_silent += 1
        if self._consecutive_silent >= self.hangover_frames:
            # the hangover frames themselves are admitted; gating resumes after
            self._active = False
            self._consecutive_silent = 0
        return GateDecision(ADMIT)


def speech_gate(summary_vector: np.ndarray, tree: DecisionTreeModel) -> str:
    """Route a 1.28 s window summary to the speech or ambient branch."""
    verdict, _ = tree_classify(tree, summary_vector)
    return verdict


def neutral_gate(plp_matrix: np.ndarray, neutral: GmmModel, filler: GmmModel) -> str:
    """neutral | non_neutral by comparing two mixture likelihoods.

    A tie counts as neutral so the short-circuit wins in the degenerate case.
    """
    if neutral.dim != filler.dim:
        raise ValueError("neutral and filler models disagree on dimensionality")
    ll_neutral = gmm_loglik(neutral, plp_matrix)
    ll_filler = gmm_loglik(filler, plp_matrix)
    return "neutral" if ll_neutral >= ll_filler else "non_neutral"


def cosine_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 180.0
    cos = float(np.dot(a, b) / (na * nb))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


@dataclass
class SimilarityDetector:
    """Propagates the previous label when consecutive summaries are close.

    The comparison is always against the immediately preceding summary
    (whether or not that window was classified), so the propagated fraction
    grows monotonically with the threshold on any fixed stream.  After an
    admit the caller must call :meth:`commit` with the classified label.
    """

    name: str
    threshold_deg: float
    last_summary: np.ndarray | None = None
    last_label: str | None = None
    propagated: int = 0
    classified: int = 0
    _pending: np.ndarray | None = field(default=None, repr=False)

    def gate(self, summary: np.ndarray) -> GateDecision:
        summary = np.asarray(summary, dtype=np.float64)
        if not np.all(np.isfinite(summary)):
            raise ValueError("summary vector contains non-finite values")
        if float(np.linalg.norm(summary)) == 0.0:
            self._pending = summary
            return GateDecision(ADMIT)
        if self.last_summary is None or self.last_label is None:
            self._pending = summary
            return GateDecision(ADMIT)
        angle = cosine_angle_deg(summary, self.last_summary)
        if angle <= self.threshold_deg:
            self.propagated += 1
            self.last_summary = summary
            return GateDecision(PROPAGATE, self.last_label)
        self._pending = summary
        return GateDecision(ADMIT)

    def commit(self, label: str) -> None:
        """Record the classification outcome for the last admitted summary."""
        if self._pending is None:
            raise RuntimeError("commit() without a preceding admit")
        self.classified += 1
        self.last_summary = self._pending
        self.last_label = label
        self._pending = None

    @property
    def saved_fraction(self) -> float:
        total = self.propagated + self.classified
        return self.propagated / total if total else 0.0

    def stats_row(self) -> tuple[str, int, int, float]:
        return (self.name, self.propagated, self.classified, self.saved_fraction)
