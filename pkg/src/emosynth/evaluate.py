"""Objective evaluation: mel-cepstral distortion under DTW, F0 curves, and
report files.

Mel matrices in this toolkit are log-domain, so cepstra come straight from
an orthonormal DCT-II of each frame; the 0th coefficient is discarded and
the next 12 are compared. Two cepstral sequences are aligned by dynamic time
warping with steps {(1,0), (0,1), (1,1)} under Euclidean frame distance, and
the distortion is the mean over the alignment path of

    (10 / ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2),   d = 1..12.

Reports are written as tab-separated tables plus a JSON copy, with optional
PNG figures rendered alongside.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
from scipy.fft import dct
from scipy.spatial.distance import cdist

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .features import frame_feature_tracks  # noqa: E402

N_CEPSTRA = 13  # c0..c12; c0 is dropped in the distance
MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)


def mel_to_cepstra(mel: np.ndarray, n_cepstra: int = N_CEPSTRA) -> np.ndarray:
    """Orthonormal DCT-II per frame, truncated to ``n_cepstra`` coefficients."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] < 1:
        raise ValueError("mel must be a non-empty 2-D matrix")
    return dct(mel, type=2, norm="ortho", axis=1)[:, :n_cepstra]


def _dtw_path(dist: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost monotone path through a distance matrix."""
    n, m = dist.shape
    cost = np.full((n + 1, m + 1), np.inf)
    cost[0, 0] = 0.0
    for i in range(1, n + 1):
        row = dist[i - 1]
        for j in range(1, m + 1):
            cost[i, j] = row[j - 1] + min(cost[i - 1, j], cost[i, j - 1], cost[i - 1, j - 1])
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        # diagonal first on ties keeps zero-cost identity alignments diagonal
        moves = ((i - 1, j - 1), (i - 1, j), (i, j - 1))
        i, j = min(moves, key=lambda ij: cost[ij])
        path.append((i - 1, j - 1))
    path.reverse()
    return path


def _mcd_and_path_length(mel_a: np.ndarray, mel_b: np.ndarray) -> tuple[float, int]:
    mel_a, mel_b = np.asarray(mel_a), np.asarray(mel_b)
    if mel_a.ndim != 2 or mel_b.ndim != 2 or mel_a.shape[1] != mel_b.shape[1]:
        raise ValueError(
            f"mel inputs disagree on bin count: {mel_a.shape} vs {mel_b.shape}"
        )
    ca = mel_to_cepstra(mel_a)[:, 1:]
    cb = mel_to_cepstra(mel_b)[:, 1:]
    dist = cdist(ca, cb, metric="euclidean")
    path = _dtw_path(dist)
    mcd = MCD_CONST * float(np.mean([dist[i, j] for i, j in path]))
    return mcd, len(path)


def mcd_dtw(mel_a: np.ndarray, mel_b: np.ndarray) -> float:
    """Mel-cepstral distortion in dB over a DTW alignment of the two inputs."""
    return _mcd_and_path_length(mel_a, mel_b)[0]


def mcd_frame_mean(mel_a: np.ndarray, mel_b: np.ndarray) -> float:
    """Closed-form MCD without warping; inputs must have equal length."""
    ca = mel_to_cepstra(mel_a)[:, 1:]
    cb = mel_to_cepstra(mel_b)[:, 1:]
    if ca.shape != cb.shape:
        raise ValueError("frame-mean MCD requires equal-length inputs")
    return MCD_CONST * float(np.linalg.norm(ca - cb, axis=1).mean())


def dtw_path_length(mel_a: np.ndarray, mel_b: np.ndarray) -> int:
    return _mcd_and_path_length(mel_a, mel_b)[1]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MCDReport:
    """Per-utterance MCD values with per-emotion and overall means."""

    utterance_ids: tuple[str, ...]
    emotions: tuple[str, ...]
    mcd_values: tuple[float, ...]
    path_lengths: tuple[int, ...]

    def per_emotion_means(self) -> dict[str, float]:
        sums: dict[str, list[float]] = {}
        for emotion, value in zip(self.emotions, self.mcd_values):
            sums.setdefault(emotion, []).append(value)
        return {emotion: float(np.mean(vals)) for emotion, vals in sorted(sums.items())}

    @property
    def overall_mean(self) -> float:
        return float(np.mean(self.mcd_values))


def build_mcd_report(
    entries: list[tuple[str, str, np.ndarray, np.ndarray]]
) -> MCDReport:
    """Entries are (utterance id, emotion label, synthesized mel, reference mel)."""
    if not entries:
        raise ValueError("cannot build a report from zero entries")
    ids, emotions, values, lengths = [], [], [], []
    for uid, emotion, synth, ref in entries:
        ids.append(uid)
        emotions.append(emotion)
        values.append(mcd_dtw(synth, ref))
        lengths.append(dtw_path_length(synth, ref))
    return MCDReport(
        utterance_ids=tuple(ids),
        emotions=tuple(emotions),
        mcd_values=tuple(values),
        path_lengths=tuple(lengths),
    )


def write_mcd_report(report: MCDReport, out_dir: str | Path, stem: str = "mcd") -> list[Path]:
    """Write the TSV table, a JSON copy, and a per-emotion bar chart."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv_path = out_dir / f"{stem}.tsv"
    lines = ["utterance_id\temotion\tmcd_db\tpath_length"]
    for uid, emotion, value, length in zip(
        report.utterance_ids, report.emotions, report.mcd_values, report.path_lengths
    ):
        lines.append(f"{uid}\t{emotion}\t{value:.6f}\t{length}")
    per_emotion = report.per_emotion_means()
    for emotion, mean in per_emotion.items():
        lines.append(f"mean:{emotion}\t{emotion}\t{mean:.6f}\t-")
    lines.append(f"mean:overall\t-\t{report.overall_mean:.6f}\t-")
    tsv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    json_path = out_dir / f"{stem}.json"
    json_path.write_text(
        json.dumps(
            {
                "utterances": [
                    {"id": uid, "emotion": emo, "mcd_db": val, "path_length": length}
                    for uid, emo, val, length in zip(
                        report.utterance_ids, report.emotions, report.mcd_values, report.path_lengths
                    )
                ],
                "per_emotion_mean_db": per_emotion,
                "overall_mean_db": report.overall_mean,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )

    png_path = out_dir / f"{stem}.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(list(per_emotion.keys()), list(per_emotion.values()), color="tab:blue")
    ax.set_ylabel("MCD (dB)")
    ax.set_title("Mean mel-cepstral distortion per emotion")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return [tsv_path, json_path, png_path]


# ---------------------------------------------------------------------------
# F0 curves
# ---------------------------------------------------------------------------


def f0_proxy_curve(mel: np.ndarray) -> np.ndarray:
    """Per-frame F0 proxy of a mel matrix."""
    return frame_feature_tracks(mel).f0_proxy


def emit_curve_plot(curves: list[tuple[str, np.ndarray]], path: str | Path, title: str = "F0 proxy") -> Path:
    """Render labeled line curves to a PNG file."""
    if not curves:
        raise ValueError("no curves to plot")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, values in curves:
        ax.plot(np.asarray(values, dtype=np.float64), label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel("F0 proxy")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
