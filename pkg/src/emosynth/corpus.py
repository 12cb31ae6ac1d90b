"""Corpus data model, on-disk formats, and a parametric synthetic corpus.

An utterance bundles a phoneme sequence, syllable alignments, a mel matrix
(log-domain values, frames x mel_bins), an emotion category id, and raw text.
Real corpora arrive through a tab-separated manifest; the synthetic generator
produces desk-scale corpora with known per-syllable latent strengths so that
strength recovery and control behaviour can be checked against ground truth.

File formats
------------
Manifest: UTF-8, first line ``#categories:`` followed by the M category
labels, then one record per line with tab-separated fields
``id, text, emotion_label, phoneme_path, alignment_path, mel_path``.
Paths are resolved relative to the manifest's directory.

Mel file: 16-byte header (magic ``MELF``, rows, cols, element size as
little-endian uint32) followed by row-major little-endian float32 data.

Alignment file: one line per syllable with four integers
``phoneme_start phoneme_end frame_start frame_end`` (all inclusive).

Phoneme file: a single line of space-separated integer phoneme ids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MEL_MAGIC = b"MELF"
MEL_HEADER = struct.Struct("<4sIII")

# Nominal frame shift in milliseconds. Metadata only: the toolkit never
# touches raw audio, so this value is not used in any computation.
FRAME_SHIFT_MS = 20.0


class CorpusError(ValueError):
    """Raised for malformed manifests, corrupt files, or invalid alignments."""


@dataclass(frozen=True)
class PhonemeSequence:
    """Integer phoneme ids for one utterance."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.ids) < 1:
            raise CorpusError("phoneme sequence must contain at least one id")
        if any(i < 0 for i in self.ids):
            raise CorpusError("phoneme ids must be non-negative")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class SyllableSpan:
    """Inclusive phoneme-index and frame-index range covered by one syllable."""

    phoneme_start: int
    phoneme_end: int
    frame_start: int
    frame_end: int

    def __post_init__(self) -> None:
        if self.phoneme_start > self.phoneme_end:
            raise CorpusError(
                f"phoneme span reversed: {self.phoneme_start} > {self.phoneme_end}"
            )
        if self.frame_start > self.frame_end:
            raise CorpusError(
                f"frame span reversed: {self.frame_start} > {self.frame_end}"
            )

    @property
    def n_phonemes(self) -> int:
        return self.phoneme_end - self.phoneme_start + 1

    @property
    def n_frames(self) -> int:
        return self.frame_end - self.frame_start + 1


def check_partition(spans: tuple[SyllableSpan, ...], n_phonemes: int, n_frames: int) -> None:
    """Verify that spans tile [0, n_phonemes-1] and [0, n_frames-1] in order."""
    if not spans:
        raise CorpusError("utterance has no syllable spans")
    expect_p, expect_f = 0, 0
    for k, span in enumerate(spans):
        if span.phoneme_start != expect_p:
            raise CorpusError(
                f"syllable {k}: phoneme span starts at {span.phoneme_start}, expected {expect_p}"
            )
        if span.frame_start != expect_f:
            raise CorpusError(
                f"syllable {k}: frame span starts at {span.frame_start}, expected {expect_f}"
            )
        expect_p = span.phoneme_end + 1
        expect_f = span.frame_end + 1
    if expect_p != n_phonemes:
        raise CorpusError(f"syllable spans cover {expect_p} phonemes, utterance has {n_phonemes}")
    if expect_f != n_frames:
        raise CorpusError(f"syllable spans cover {expect_f} frames, mel has {n_frames}")


@dataclass(frozen=True)
class Utterance:
    """One text-audio-emotion training triad plus alignment.

    ``latent_strengths`` and ``latent_offset`` are populated by the synthetic
    generator only; they record the ground truth used by oracle checks and are
    never read by training or inference code.
    """

    id: str
    phonemes: PhonemeSequence
    syllables: tuple[SyllableSpan, ...]
    mel: np.ndarray
    emotion: int
    text: str
    latent_strengths: tuple[float, ...] | None = None
    latent_offset: float | None = None

    def __post_init__(self) -> None:
        if self.mel.ndim != 2:
            raise CorpusError(f"mel must be 2-D, got shape {self.mel.shape}")
        if self.mel.shape[1] < 2:
            raise CorpusError("mel must have at least 2 channels")
        if self.emotion < 0:
            raise CorpusError(f"invalid emotion id {self.emotion}")
        if len(self.syllables) > len(self.phonemes):
            raise CorpusError("more syllables than phonemes")
        check_partition(self.syllables, len(self.phonemes), self.mel.shape[0])
        if self.latent_strengths is not None and len(self.latent_strengths) != len(self.syllables):
            raise CorpusError("latent strengths length must equal syllable count")
        self.mel.setflags(write=False)

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]

    @property
    def n_syllables(self) -> int:
        return len(self.syllables)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    text: str
    emotion_label: str
    phoneme_path: Path
    alignment_path: Path
    mel_path: Path


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    category_names: tuple[str, ...]

    def category_id(self, label: str) -> int:
        return self.category_names.index(label)

    @property
    def neutral_id(self) -> int:
        return self.category_names.index("neutral")


def expand_syllable_strengths(
    strengths, syllables: tuple[SyllableSpan, ...] | list[SyllableSpan]
) -> np.ndarray:
    """Expand K per-syllable strengths to one value per phoneme position.

    Each phoneme receives the strength of its enclosing syllable, so the
    output has the same length as the phoneme sequence.
    """
    strengths = np.asarray(strengths, dtype=np.float64)
    if strengths.ndim != 1 or len(strengths) != len(syllables):
        raise CorpusError(
            f"got {len(strengths)} strengths for {len(syllables)} syllables"
        )
    expect = 0
    out: list[np.ndarray] = []
    for k, span in enumerate(syllables):
        if span.phoneme_start != expect:
            raise CorpusError(f"syllable {k} does not continue the phoneme partition")
        out.append(np.full(span.n_phonemes, strengths[k]))
        expect = span.phoneme_end + 1
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# Mel / alignment / phoneme file I/O
# ---------------------------------------------------------------------------


def write_mel(path: str | Path, mel: np.ndarray) -> None:
    mel = np.ascontiguousarray(mel, dtype="<f4")
    if mel.ndim != 2:
        raise CorpusError(f"mel must be 2-D, got shape {mel.shape}")
    with open(path, "wb") as fh:
        fh.write(MEL_HEADER.pack(MEL_MAGIC, mel.shape[0], mel.shape[1], 4))
        fh.write(mel.tobytes())


def read_mel(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(MEL_HEADER.size)
        if len(header) != MEL_HEADER.size:
            raise CorpusError(f"{path}: truncated mel header")
        magic, rows, cols, elem = MEL_HEADER.unpack(header)
        if magic != MEL_MAGIC:
            raise CorpusError(f"{path}: bad magic {magic!r}")
        if elem != 4:
            raise CorpusError(f"{path}: unsupported element size {elem}")
        data = fh.read(rows * cols * 4)
    if len(data) != rows * cols * 4:
        raise CorpusError(f"{path}: truncated mel data")
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float32)


def write_alignment(path: str | Path, spans: tuple[SyllableSpan, ...]) -> None:
    lines = [
        f"{s.phoneme_start} {s.phoneme_end} {s.frame_start} {s.frame_end}"
        for s in spans
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_alignment(path: str | Path) -> tuple[SyllableSpan, ...]:
    spans = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise CorpusError(f"{path}:{lineno}: expected 4 integers, got {line!r}")
        try:
            ps, pe, fs, fe = (int(p) for p in parts)
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: non-integer field") from exc
        spans.append(SyllableSpan(ps, pe, fs, fe))
    return tuple(spans)


def write_phonemes(path: str | Path, phonemes: PhonemeSequence) -> None:
    Path(path).write_text(" ".join(str(i) for i in phonemes.ids) + "\n", encoding="utf-8")


def read_phonemes(path: str | Path) -> PhonemeSequence:
    text = Path(path).read_text(encoding="utf-8").strip()
    try:
        ids = tuple(int(tok) for tok in text.split())
    except ValueError as exc:
        raise CorpusError(f"{path}: non-integer phoneme id") from exc
    return PhonemeSequence(ids)


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse and validate a corpus manifest.

    Every problem is reported with its line number. Referenced files must
    exist at load time; utterances themselves are loaded lazily via
    :func:`load_utterance`.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"manifest not found: {path}")
    base = path.parent
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#categories:"):
        raise CorpusError(f"{path}:1: missing '#categories:' header line")
    category_names = tuple(lines[0].split("\t")[1:])
    if len(category_names) < 2:
        raise CorpusError(f"{path}:1: need at least 2 categories, got {len(category_names)}")
    if "neutral" not in category_names:
        raise CorpusError(f"{path}:1: categories must include 'neutral'")
    if len(set(category_names)) != len(category_names):
        raise CorpusError(f"{path}:1: duplicate category names")

    entries = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise CorpusError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
        uid, text, label, phon_rel, align_rel, mel_rel = fields
        if uid in seen_ids:
            raise CorpusError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen_ids.add(uid)
        if label not in category_names:
            raise CorpusError(f"{path}:{lineno}: unknown emotion label {label!r}")
        entry = ManifestEntry(
            id=uid,
            text=text,
            emotion_label=label,
            phoneme_path=base / phon_rel,
            alignment_path=base / align_rel,
            mel_path=base / mel_rel,
        )
        for p in (entry.phoneme_path, entry.alignment_path, entry.mel_path):
            if not p.is_file():
                raise CorpusError(f"{path}:{lineno}: referenced file not found: {p}")
        entries.append(entry)
    return CorpusManifest(entries=tuple(entries), category_names=category_names)


def load_utterance(manifest: CorpusManifest, entry: ManifestEntry) -> Utterance:
    return Utterance(
        id=entry.id,
        phonemes=read_phonemes(entry.phoneme_path),
        syllables=read_alignment(entry.alignment_path),
        mel=read_mel(entry.mel_path),
        emotion=manifest.category_id(entry.emotion_label),
        text=entry.text,
    )


def load_corpus(manifest: CorpusManifest) -> list[Utterance]:
    return [load_utterance(manifest, e) for e in manifest.entries]


def write_corpus(
    corpus: list[Utterance], category_names: tuple[str, ...], out_dir: str | Path
) -> Path:
    """Write utterances plus a manifest under ``out_dir``; returns manifest path."""
    out_dir = Path(out_dir)
    for sub in ("phonemes", "alignments", "mels"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    records = ["#categories:\t" + "\t".join(category_names)]
    for utt in corpus:
        if "\t" in utt.text or "\n" in utt.text:
            raise CorpusError(f"utterance {utt.id}: text may not contain tabs or newlines")
        phon_rel = f"phonemes/{utt.id}.txt"
        align_rel = f"alignments/{utt.id}.txt"
        mel_rel = f"mels/{utt.id}.mel"
        write_phonemes(out_dir / phon_rel, utt.phonemes)
        write_alignment(out_dir / align_rel, utt.syllables)
        write_mel(out_dir / mel_rel, utt.mel)
        label = category_names[utt.emotion]
        records.append("\t".join([utt.id, utt.text, label, phon_rel, align_rel, mel_rel]))
    manifest_path = out_dir / "manifest.tsv"
    manifest_path.write_text("\n".join(records) + "\n", encoding="utf-8")
    return manifest_path


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic generative process.

    The generated mel matrix is the documented ground truth every oracle
    check depends on. For frame t belonging to syllable k of an utterance
    with emotion e, per-syllable strength s_k, and per-utterance offset o:

        mel[t, 0] = base_f0[e]     + strength_alpha * s_k + o + noise
        mel[t, 1] = base_energy[e] + strength_alpha * s_k + o + noise
        mel[t, 2 + (phoneme_id % (mel_bins - 2))] += 1.0   (identity bump)

    Noise is uniform on [-noise_scale, +noise_scale] per cell and the offset
    is uniform on [-offset_scale, +offset_scale], so every channel mean over
    a span is inside a hard bound of its noiseless value. Each phoneme lasts
    ``frames_base + floor(frames_slope * s_k + 0.5)`` frames, i.e. duration
    grows affinely with strength. Neutral utterances have s_k = 0 everywhere;
    emotional strengths are drawn uniformly from [0, 1].
    """

    category_names: tuple[str, ...] = (
        "neutral", "happiness", "anger", "sadness", "surprise", "fear", "disgust",
    )
    phoneme_vocab: int = 40
    mel_bins: int = 20
    base_f0: tuple[float, ...] = (0.0, 1.0, 0.8, 0.35, 1.2, 0.5, 0.2)
    base_energy: tuple[float, ...] = (0.0, 0.8, 1.0, 0.3, 0.9, 0.4, 0.5)
    strength_alpha: float = 1.0
    offset_scale: float = 0.1
    noise_scale: float = 0.02
    syllable_range: tuple[int, int] = (4, 20)
    phonemes_per_syllable: tuple[int, int] = (1, 3)
    frames_base: int = 2
    frames_slope: float = 2.0
    words_per_category: int = 6
    shared_words: int = 10
    emotion_word_prob: float = 0.75

    def __post_init__(self) -> None:
        m = len(self.category_names)
        if m < 2:
            raise CorpusError(f"need at least 2 categories, got {m}")
        if "neutral" not in self.category_names:
            raise CorpusError("categories must include 'neutral'")
        if self.mel_bins < 2:
            raise CorpusError(f"mel_bins must be >= 2, got {self.mel_bins}")
        if self.strength_alpha <= 0:
            raise CorpusError(f"strength_alpha must be > 0, got {self.strength_alpha}")
        if len(self.base_f0) != m or len(self.base_energy) != m:
            raise CorpusError("base_f0 and base_energy must have one entry per category")
        if self.frames_base < 1:
            raise CorpusError("frames_base must be >= 1")

    @property
    def neutral_id(self) -> int:
        return self.category_names.index("neutral")

    @property
    def pitch_raising_categories(self) -> tuple[int, ...]:
        # strength_alpha > 0 adds to channel 0 for every emotional category,
        # so all non-neutral categories respond to strength with higher F0
        return tuple(
            i for i in range(len(self.category_names)) if i != self.neutral_id
        )


def render_utterance(
    config: SyntheticConfig,
    uid: str,
    emotion: int,
    syllable_phonemes: list[list[int]],
    strengths,
    offset: float,
    rng: np.random.Generator,
    text: str = "",
) -> Utterance:
    """Render one utterance from explicit latent variables.

    This is the generative formula itself: tests pin mel statistics against
    it directly. Only the additive cell noise is drawn from ``rng``.
    """
    strengths = np.asarray(strengths, dtype=np.float64)
    if len(strengths) != len(syllable_phonemes):
        raise CorpusError("one strength per syllable required")
    phoneme_ids: list[int] = []
    spans: list[SyllableSpan] = []
    frames: list[np.ndarray] = []
    frame_pos = 0
    for k, phons in enumerate(syllable_phonemes):
        s = float(strengths[k])
        p_start, f_start = len(phoneme_ids), frame_pos
        n_frames_per_phone = config.frames_base + int(config.frames_slope * s + 0.5)
        for phone in phons:
            if not 0 <= phone < config.phoneme_vocab:
                raise CorpusError(f"phoneme id {phone} outside vocabulary")
            phoneme_ids.append(phone)
            for _ in range(n_frames_per_phone):
                frame = np.zeros(config.mel_bins, dtype=np.float64)
                frame[0] = config.base_f0[emotion] + config.strength_alpha * s + offset
                frame[1] = config.base_energy[emotion] + config.strength_alpha * s + offset
                frame[2 + (phone % (config.mel_bins - 2))] += 1.0
                frames.append(frame)
                frame_pos += 1
        spans.append(SyllableSpan(p_start, len(phoneme_ids) - 1, f_start, frame_pos - 1))
    mel = np.stack(frames)
    mel += rng.uniform(-config.noise_scale, config.noise_scale, size=mel.shape)
    return Utterance(
        id=uid,
        phonemes=PhonemeSequence(tuple(phoneme_ids)),
        syllables=tuple(spans),
        mel=mel.astype(np.float32),
        emotion=emotion,
        text=text,
        latent_strengths=tuple(float(s) for s in strengths),
        latent_offset=float(offset),
    )


def _synthetic_text(config: SyntheticConfig, emotion: int, n_words: int, rng: np.random.Generator) -> str:
    """Emotion-correlated token sequence: category words mixed with shared filler."""
    category = config.category_names[emotion]
    own = [f"{category}{i}" for i in range(config.words_per_category)]
    shared = [f"word{i}" for i in range(config.shared_words)]
    words = [
        own[rng.integers(len(own))]
        if rng.random() < config.emotion_word_prob
        else shared[rng.integers(len(shared))]
        for _ in range(n_words)
    ]
    return " ".join(words)


def generate_synthetic_corpus(
    seed: int, n_per_emotion: int, config: SyntheticConfig | None = None
) -> list[Utterance]:
    """Generate ``n_per_emotion`` utterances for every category, neutral included.

    Deterministic for a fixed seed and config. Latent strengths and offsets
    are recorded on each utterance for oracle checks.
    """
    config = config or SyntheticConfig()
    if n_per_emotion < 1:
        raise CorpusError(f"n_per_emotion must be >= 1, got {n_per_emotion}")
    rng = np.random.default_rng(seed)
    corpus: list[Utterance] = []
    for emotion, category in enumerate(config.category_names):
        for k in range(n_per_emotion):
            lo, hi = config.syllable_range
            n_syll = int(rng.integers(lo, hi + 1))
            plo, phi = config.phonemes_per_syllable
            syllable_phonemes = [
                list(rng.integers(0, config.phoneme_vocab, size=rng.integers(plo, phi + 1)))
                for _ in range(n_syll)
            ]
            if emotion == config.neutral_id:
                strengths = np.zeros(n_syll)
            else:
                strengths = rng.uniform(0.0, 1.0, size=n_syll)
            offset = float(rng.uniform(-config.offset_scale, config.offset_scale))
            text = _synthetic_text(config, emotion, n_syll, rng)
            corpus.append(
                render_utterance(
                    config, f"synth-{category}-{k:04d}", emotion,
                    syllable_phonemes, strengths, offset, rng, text=text,
                )
            )
    return corpus
