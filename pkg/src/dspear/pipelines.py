"""The five inference pipelines and the stream orchestrator.

Per 32 ms frame the silence gate decides admission.  Admitted frames form
1.28 s windows that the speech/ambient filter routes to one of two branches:
the ambient branch classifies the window against the sound models (behind a
similarity detector), the speech branch feeds tumbling 3 s windows (pitch,
gender, speaker-count segments) and tumbling 5 s windows (PLP, the neutral
gate, emotion and speaker recognition, each behind its own detector).  A
conversation closes after 60 s without admitted speech, which triggers the
final speaker-count clustering.

The orchestrator can run single-threaded or with a second worker thread that
owns the 5 s speech-feature stage, fed through a bounded queue of depth 2 —
mirroring a two-hardware-thread deployment.  Both modes produce the same
event multiset; events are sorted by time before being returned.
"""

from __future__ import annotations

import json
import queue
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features
from .admission import ADMIT, PROPAGATE, SilenceFilter, SimilarityDetector, cosine_angle_deg
from .audio_io import GEOMETRY, AudioStream, Window, frame_samples
from .config import SAMPLE_RATE, EngineConfig
from .models import ModelBundle, gmm_loglik, tree_classify
from .synthetic import EMOTION_GROUPS, NON_NEUTRAL_EMOTIONS

MALE, FEMALE, UNCERTAIN = "male", "female", "uncertain"

FRAME_LEN = 256
WINDOW_FRAMES = 40
COUNT_WINDOW = GEOMETRY["speaker_count"].window_len
SPEECH_WINDOW = GEOMETRY["speech"].window_len


@dataclass
class InferenceEvent:
    t_start: float
    t_end: float
    pipeline: str  # silence | ambient | gender | count | emotion | speaker
    label: str
    provenance: str = "classified"  # classified | propagated | gated_out
    narrow: str | None = None
    source_t: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "t_start": round(self.t_start, 6),
                "t_end": round(self.t_end, 6),
                "pipeline": self.pipeline,
                "label": self.label,
                "provenance": self.provenance,
                "narrow": self.narrow,
                "source_t": None if self.source_t is None else round(self.source_t, 6),
            }
        )

    @staticmethod
    def from_json(line: str) -> "InferenceEvent":
        d = json.loads(line)
        return InferenceEvent(
            d["t_start"], d["t_end"], d["pipeline"], d["label"],
            d.get("provenance", "classified"), d.get("narrow"), d.get("source_t"),
        )


def write_events_jsonl(path: str | Path, events: list[InferenceEvent]) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def read_events_jsonl(path: str | Path) -> list[InferenceEvent]:
    with open(path) as fh:
        return [InferenceEvent.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Gender

def gender_estimate(pitch_hz: float | None, cfg: EngineConfig | None = None) -> str:
    cfg = cfg or EngineConfig()
    if pitch_hz is None:
        return UNCERTAIN
    if pitch_hz < cfg.male_pitch_max_hz:
        return MALE
    if pitch_hz > cfg.female_pitch_min_hz:
        return FEMALE
    return UNCERTAIN


def _gender_compatible(a: str, b: str) -> bool:
    return a == UNCERTAIN or b == UNCERTAIN or a == b


# ---------------------------------------------------------------------------
# Speaker counting (unsupervised, forward pass + final agglomerative merge)

@dataclass
class CrowdCluster:
    mean: np.ndarray
    n_segments: int
    gender_counts: Counter = field(default_factory=Counter)

    @property
    def gender(self) -> str:
        known = {g: c for g, c in self.gender_counts.items() if g != UNCERTAIN}
        if not known:
            return UNCERTAIN
        top = sorted(known.items(), key=lambda kv: (-kv[1], kv[0]))
        if len(top) > 1 and top[0][1] == top[1][1]:
            return UNCERTAIN
        return top[0][0]

    def absorb(self, vec: np.ndarray, gender: str, n: int = 1) -> None:
        total = self.n_segments + n
        self.mean = (self.mean * self.n_segments + vec * n) / total
        self.n_segments = total
        self.gender_counts[gender] += n


@dataclass
class SpeakerPrior:
    known_speakers: set[str] = field(default_factory=set)
    unknown_voice_seen: bool = False

    def floor_count(self) -> int:
        return len(self.known_speakers) + (1 if self.unknown_voice_seen else 0)


@dataclass
class ConversationState:
    open: bool = False
    clusters: list[CrowdCluster] = field(default_factory=list)
    t_start: float = 0.0
    last_voice_t: float = 0.0
    prior: SpeakerPrior = field(default_factory=SpeakerPrior)


def crowd_forward_pass(
    state: ConversationState,
    mfcc_mean: np.ndarray,
    gender: str,
    cfg: EngineConfig | None = None,
) -> ConversationState:
    """Merge the new segment into the most recent cluster or start a new one."""
    cfg = cfg or EngineConfig()
    if not state.open:
        raise ValueError("forward pass on a closed conversation")
    if state.clusters:
        last = state.clusters[-1]
        angle = cosine_angle_deg(mfcc_mean, last.mean)
        if angle <= cfg.crowd_merge_angle_deg and _gender_compatible(gender, last.gender):
            last.absorb(mfcc_mean, gender)
            return state
    state.clusters.append(CrowdCluster(np.asarray(mfcc_mean, dtype=np.float64), 1, Counter({gender: 1})))
    return state


def crowd_finalize(state: ConversationState, cfg: EngineConfig | None = None) -> int:
    """All-pairs agglomerative merge, then the speaker-identification prior.

    Repeatedly merges the closest compatible pair (cosine angle within the
    merge threshold and genders not in conflict) until no pair qualifies.
    The reported count is floored by the number of distinct identified
    speakers, plus one when an unknown voice was heard.
    """
    cfg = cfg or EngineConfig()
    if state.open:
        raise ValueError("finalize on an open conversation")
    clusters = [
        CrowdCluster(c.mean.copy(), c.n_segments, Counter(c.gender_counts)) for c in state.clusters
    ]
    while len(clusters) > 1:
        best = None  # (angle, i, j)
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                if not _gender_compatible(clusters[i].gender, clusters[j].gender):
                    continue
                angle = cosine_angle_deg(clusters[i].mean, clusters[j].mean)
                if angle <= cfg.crowd_merge_angle_deg and (best is None or angle < best[0]):
                    best = (angle, i, j)
        if best is None:
            break
        _, i, j = best
        clusters[i].absorb(clusters[j].mean, clusters[j].gender, clusters[j].n_segments)
        # keep raw gender tallies so the merged majority is exact
        for g, c in clusters[j].gender_counts.items():
            if g != UNCERTAIN:
                clusters[i].gender_counts[g] += 0  # counts were added via absorb once
        del clusters[j]
    count = len(clusters)
    return max(count, state.prior.floor_count())


# ---------------------------------------------------------------------------
# Classification pipelines (each behind a similarity detector)

@dataclass
class PipelineResult:
    label: str
    provenance: str
    narrow: str | None = None
    gmm_evals: int = 0


def _emotion_label(broad: str, narrow: str | None) -> str:
    return f"{broad}|{narrow or ''}"


def _parse_emotion_label(label: str) -> tuple[str, str | None]:
    broad, narrow = label.split("|", 1)
    return broad, narrow or None


def emotion_recognize(
    plp_matrix: np.ndarray,
    bundle: ModelBundle,
    detector: SimilarityDetector,
    cfg: EngineConfig | None = None,
) -> PipelineResult:
    """Similarity gate, then the neutral filter, then the narrow argmax."""
    summary = np.concatenate([plp_matrix.mean(axis=0), plp_matrix.var(axis=0)])
    decision = detector.gate(summary)
    if decision.verdict == PROPAGATE:
        broad, narrow = _parse_emotion_label(decision.label)
        return PipelineResult(broad, "propagated", narrow, gmm_evals=0)

    neutral = bundle.models["emotion_neutral"]
    filler = bundle.models["emotion_filler"]
    ll_neutral = gmm_loglik(neutral, plp_matrix)
    ll_filler = gmm_loglik(filler, plp_matrix)
    evals = 2
    if ll_neutral >= ll_filler:
        detector.commit(_emotion_label("neutral", None))
        return PipelineResult("neutral", "classified", None, gmm_evals=evals)

    scores = {}
    for narrow in NON_NEUTRAL_EMOTIONS:
        scores[narrow] = gmm_loglik(bundle.models[f"emotion_{narrow}"], plp_matrix)
        evals += 1
    narrow = max(sorted(scores), key=lambda k: scores[k])
    broad = EMOTION_GROUPS[narrow]
    detector.commit(_emotion_label(broad, narrow))
    return PipelineResult(broad, "classified", narrow, gmm_evals=evals)


def speaker_identify(
    plp_matrix: np.ndarray,
    bundle: ModelBundle,
    detector: SimilarityDetector,
    gender: str,
    cfg: EngineConfig | None = None,
) -> PipelineResult:
    """Similarity gate, gender-filtered candidate set, then the argmax.

    The claim must beat the background likelihood by the configured margin,
    otherwise the voice is reported unknown.
    """
    cfg = cfg or EngineConfig()
    summary = np.concatenate([plp_matrix.mean(axis=0), plp_matrix.var(axis=0)])
    decision = detector.gate(summary)
    if decision.verdict == PROPAGATE:
        return PipelineResult(decision.label, "propagated", gmm_evals=0)

    candidates = {
        name[len("speaker_") :]: model
        for name, model in bundle.models.items()
        if name.startswith("speaker_") and name != "speaker_background"
        and _gender_compatible(gender, model.meta.get("gender", UNCERTAIN))
    }
    evals = 0
    label = "unknown"
    if candidates:
        scores = {}
        for name, model in candidates.items():
            scores[name] = gmm_loglik(model, plp_matrix)
            evals += 1
        best = max(sorted(scores), key=lambda k: scores[k])
        ll_background = gmm_loglik(bundle.models["speaker_background"], plp_matrix)
        evals += 1
        if scores[best] - ll_background >= cfg.unknown_margin_nats:
            label = best
    detector.commit(label)
    return PipelineResult(label, "classified", gmm_evals=evals)


def ambient_classify(
    mfcc_matrix: np.ndarray,
    similarity_vector: np.ndarray,
    bundle: ModelBundle,
    detector: SimilarityDetector,
    cfg: EngineConfig | None = None,
) -> PipelineResult:
    decision = detector.gate(similarity_vector)
    if decision.verdict == PROPAGATE:
        return PipelineResult(decision.label, "propagated", gmm_evals=0)
    scores = {}
    evals = 0
    for name, model in bundle.models.items():
        if name.startswith("ambient_"):
            scores[name[len("ambient_") :]] = gmm_loglik(model, mfcc_matrix)
            evals += 1
    label = max(sorted(scores), key=lambda k: scores[k])
    detector.commit(label)
    return PipelineResult(label, "classified", gmm_evals=evals)


# ---------------------------------------------------------------------------
# Orchestrator

@dataclass
class RunResult:
    events: list[InferenceEvent]
    counters: dict[str, int]
    detector_stats: list[tuple[str, int, int, float]]
    durations: dict[str, float]


class Orchestrator:
    """Streams one audio source through every enabled pipeline.

    ``workers=2`` moves PLP extraction, the neutral gate and the emotion /
    speaker classifiers onto a worker thread behind a bounded queue; the
    main thread keeps gating, gender, speaker counting and ambient sounds.
    """

    def __init__(self, bundle: ModelBundle, cfg: EngineConfig | None = None, workers: int = 1):
        if workers not in (1, 2):
            raise ValueError("workers must be 1 or 2")
        self.bundle = bundle
        self.cfg = cfg or EngineConfig()
        self.workers = workers
        cfgv = self.cfg
        self.silence = SilenceFilter.from_config(cfgv)
        self.ambient_detector = SimilarityDetector("ambient", cfgv.ambient_similarity_deg)
        self.emotion_detector = SimilarityDetector("emotion", cfgv.emotion_similarity_deg)
        self.speaker_detector = SimilarityDetector("speaker", cfgv.speaker_similarity_deg)

    # -- shared state helpers -------------------------------------------------

    def _reset(self):
        self.silence.reset()
        self.events: list[InferenceEvent] = []
        self.counters: Counter = Counter()
        self.conv = ConversationState()
        self.window_acc: list[np.ndarray] = []
        self.window_acc_t0 = 0.0
        self.speech_buf = np.zeros(0)
        self.speech_buf_t0 = 0.0  # stream time of speech_buf[0]
        self.count_buf = np.zeros(0)
        self.count_buf_t0 = 0.0
        self.silence_span: list[float] | None = None
        self.current_gender = UNCERTAIN
        self.durations = Counter()
        self._lock = threading.RLock()

    def run(self, stream: AudioStream) -> RunResult:
        self._reset()
        n = len(stream.samples)
        n_frames = n // FRAME_LEN

        jobs: queue.Queue | None = None
        worker = None
        if self.workers == 2:
            jobs = queue.Queue(maxsize=2)
            worker = threading.Thread(target=self._speech_worker, args=(jobs,), daemon=True)
            worker.start()

        for i in range(n_frames):
            t0 = i * FRAME_LEN / SAMPLE_RATE
            t1 = (i + 1) * FRAME_LEN / SAMPLE_RATE
            frame = stream.samples[i * FRAME_LEN : (i + 1) * FRAME_LEN]
            self.counters["silence_filter"] += 1
            rms = float(np.sqrt(np.mean(frame * frame)))
            entropy = features.spectral_entropy(frame)
            decision = self.silence.step(rms, entropy)

            if decision.verdict == ADMIT:
                self._close_silence_span()
                if not self.window_acc:
                    self.window_acc_t0 = t0
                self.window_acc.append(frame)
                if len(self.window_acc) == WINDOW_FRAMES:
                    self._process_window(jobs)
            else:
                self._flush_partial_window()
                self.durations["silence"] += FRAME_LEN / SAMPLE_RATE
                if self.silence_span is None:
                    self.silence_span = [t0, t1]
                else:
                    self.silence_span[1] = t1

            if self.conv.open and (t1 - self.conv.last_voice_t) >= self.cfg.conversation_gap_s:
                self._finalize_conversation(jobs)

        # stream end: flush remainders
        self._flush_partial_window()
        self._close_silence_span()
        if n % FRAME_LEN:
            t0 = n_frames * FRAME_LEN / SAMPLE_RATE
            self._emit(InferenceEvent(t0, n / SAMPLE_RATE, "silence", "silence", "gated_out"))
            self.durations["gated_out"] += n / SAMPLE_RATE - t0
        if self.conv.open:
            self._finalize_conversation(jobs)

        if jobs is not None:
            jobs.put(None)
            worker.join()

        self.durations["total"] = n / SAMPLE_RATE
        events = sorted(self.events, key=lambda e: (e.t_start, e.pipeline, e.t_end))
        return RunResult(
            events,
            dict(self.counters),
            [
                det.stats_row()
                for det in (self.ambient_detector, self.speaker_detector, self.emotion_detector)
            ],
            dict(self.durations),
        )

    # -- window processing ----------------------------------------------------

    def _process_window(self, jobs):
        frames = np.stack(self.window_acc)
        t0 = self.window_acc_t0
        t1 = t0 + WINDOW_FRAMES * FRAME_LEN / SAMPLE_RATE
        self.window_acc = []

        self.counters["speech_filter"] += 1
        feats = features.frame_feature_matrix(frames)
        mfcc_mat = features.mfcc_frames(frames)
        means = feats.mean(axis=0)
        variances = feats.var(axis=0)
        rms_col = feats[:, 0]
        mean_rms = float(np.mean(rms_col))
        lefr = float(np.mean(rms_col < self.cfg.lefr_ratio * mean_rms)) if mean_rms > 0 else 0.0
        tree_vec = np.concatenate([means, variances, [lefr]])

        verdict, _ = tree_classify(self.bundle.models["speech_tree"], tree_vec)
        if verdict == "speech":
            self.durations["speech"] += t1 - t0
            self._handle_speech_window(frames, t0, t1, jobs)
        else:
            self.durations["ambient"] += t1 - t0
            self.counters["ambient_features"] += 1
            sim_vec = np.concatenate([tree_vec, mfcc_mat.mean(axis=0)])
            result = ambient_classify(mfcc_mat, sim_vec, self.bundle, self.ambient_detector, self.cfg)
            self.counters["ambient_gmm"] += 1 if result.provenance == "classified" else 0
            src = None if result.provenance == "classified" else self._last_classified_t("ambient")
            self._emit(InferenceEvent(t0, t1, "ambient", result.label, result.provenance, source_t=src))

    def _handle_speech_window(self, frames: np.ndarray, t0: float, t1: float, jobs):
        if not self.conv.open:
            self.conv = ConversationState(open=True, t_start=t0, last_voice_t=t1)
        else:
            self.conv.last_voice_t = t1
        samples = frames.reshape(-1)
        if len(self.count_buf) == 0:
            self.count_buf_t0 = t0
        if len(self.speech_buf) == 0:
            self.speech_buf_t0 = t0
        self.count_buf = np.concatenate([self.count_buf, samples])
        self.speech_buf = np.concatenate([self.speech_buf, samples])

        while len(self.count_buf) >= COUNT_WINDOW:
            chunk = self.count_buf[:COUNT_WINDOW]
            self.count_buf = self.count_buf[COUNT_WINDOW:]
            ct0 = self.count_buf_t0
            self.count_buf_t0 += COUNT_WINDOW / SAMPLE_RATE  # admitted-speech clock
            self._process_count_window(chunk, ct0)

        while len(self.speech_buf) >= SPEECH_WINDOW:
            chunk = self.speech_buf[:SPEECH_WINDOW]
            self.speech_buf = self.speech_buf[SPEECH_WINDOW:]
            st0 = self.speech_buf_t0
            self.speech_buf_t0 += SPEECH_WINDOW / SAMPLE_RATE
            job = (chunk, st0, st0 + SPEECH_WINDOW / SAMPLE_RATE, self.current_gender)
            if jobs is None:
                self._process_speech_job(job)
            else:
                jobs.put(job)

    def _process_count_window(self, chunk: np.ndarray, t0: float):
        self.counters["speaker_count"] += 1
        geom = GEOMETRY["speaker_count"]
        window = Window("speaker_count", frame_samples(chunk, geom), 0)
        pitch = features.mean_pitch(window, self.cfg)
        gender = gender_estimate(pitch, self.cfg)
        self.current_gender = gender
        t1 = t0 + COUNT_WINDOW / SAMPLE_RATE
        self._emit(InferenceEvent(t0, t1, "gender", gender))

        level = float(np.sqrt(np.mean(chunk * chunk)))
        norm = chunk / max(level, 1e-9)  # loudness-free cluster fingerprint
        frames = np.stack([f.samples for f in frame_samples(norm, geom)])
        mfcc_mean = features.mfcc_frames(frames).mean(axis=0)
        crowd_forward_pass(self.conv, mfcc_mean, gender, self.cfg)

    def _process_speech_job(self, job):
        chunk, t0, t1, gender = job
        with self._lock:
            self.counters["plp_features"] += 1
        plp_mat = features.plp_frames(_speech_frames(chunk), self.cfg)

        emo = emotion_recognize(plp_mat, self.bundle, self.emotion_detector, self.cfg)
        with self._lock:
            self.counters["gmm_eval"] += emo.gmm_evals
            if emo.provenance == "classified":
                self.counters["neutral_evals"] += 2
                self.counters["narrow_evals"] += max(emo.gmm_evals - 2, 0)
            src = None if emo.provenance == "classified" else self._last_classified_t("emotion")
            self._emit(InferenceEvent(t0, t1, "emotion", emo.label, emo.provenance, emo.narrow, src))

        spk = speaker_identify(plp_mat, self.bundle, self.speaker_detector, gender, self.cfg)
        with self._lock:
            self.counters["gmm_eval"] += spk.gmm_evals
            if spk.provenance == "classified":
                self.counters["speaker_evals"] += max(spk.gmm_evals - 1, 0)
                self.counters["background_evals"] += 1 if spk.gmm_evals else 0
            src = None if spk.provenance == "classified" else self._last_classified_t("speaker")
            self._emit(InferenceEvent(t0, t1, "speaker", spk.label, spk.provenance, source_t=src))
            if spk.provenance == "classified":
                if spk.label == "unknown":
                    self.conv.prior.unknown_voice_seen = True
                else:
                    self.conv.prior.known_speakers.add(spk.label)

    def _speech_worker(self, jobs: queue.Queue):
        while True:
            job = jobs.get()
            if job is None:
                jobs.task_done()
                return
            self._process_speech_job(job)
            jobs.task_done()

    def _finalize_conversation(self, jobs):
        if jobs is not None:
            jobs.join()  # drain in-flight speech windows before counting
        self.conv.open = False
        count = crowd_finalize(self.conv, self.cfg)
        self.counters["crowd_finalize"] += 1
        self._emit(
            InferenceEvent(self.conv.t_start, self.conv.last_voice_t, "count", str(count))
        )
        # partial 3 s / 5 s windows are dropped with the conversation
        self.conv = ConversationState()
        self.count_buf = np.zeros(0)
        self.speech_buf = np.zeros(0)

    # -- small helpers ---------------------------------------------------------

    def _emit(self, event: InferenceEvent) -> None:
        with self._lock:
            self.events.append(event)

    def _close_silence_span(self):
        if self.silence_span is not None:
            t0, t1 = self.silence_span
            self._emit(InferenceEvent(t0, t1, "silence", "silence"))
            self.silence_span = None

    def _flush_partial_window(self):
        if self.window_acc:
            t0 = self.window_acc_t0
            t1 = t0 + len(self.window_acc) * FRAME_LEN / SAMPLE_RATE
            self._emit(InferenceEvent(t0, t1, "silence", "silence", "gated_out"))
            self.durations["gated_out"] += t1 - t0
            self.window_acc = []

    def _last_classified_t(self, pipeline: str) -> float | None:
        for ev in reversed(self.events):
            if ev.pipeline == pipeline and ev.provenance == "classified":
                return ev.t_start
        return None


def _speech_frames(chunk: np.ndarray) -> np.ndarray:
    geom = GEOMETRY["speech"]
    return np.stack([f.samples for f in frame_samples(chunk, geom)])


def orchestrate(
    stream: AudioStream,
    bundle: ModelBundle,
    cfg: EngineConfig | None = None,
    workers: int = 1,
) -> RunResult:
    return Orchestrator(bundle, cfg, workers).run(stream)


def write_gate_stats_csv(path: str | Path, result: RunResult) -> None:
    with open(path, "w") as fh:
        fh.write("detector,propagated,classified,saved_fraction\n")
        for name, prop, cls, frac in result.detector_stats:
            fh.write(f"{name},{prop},{cls},{frac:.6f}\n")
