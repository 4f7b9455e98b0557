"""Quantitative metrics: Fréchet motion distance and generation diversity.

FMD is the Fréchet distance between Gaussian fits of two feature sets
(content features or style features from the frozen stage-1 encoder).
Diversity compares generated clips against the single source sequence in
joint-averaged 6D-rotation feature space, at whole-sequence scale (global)
and sliding-window scale (local).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .bvh import resample
from .errors import ConfigError, NumericalError, ShapeError
from .skeleton import MotionClip

_COV_JITTER = 1e-6


@dataclass
class FeatureSet:
    """K x C matrix of feature vectors with a content/style label."""

    features: np.ndarray
    label: str = "content"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be (K, C), got {self.features.shape}")
        if self.features.shape[0] < 2:
            raise ShapeError("need K >= 2 samples for covariance estimation")


def fmd(a: FeatureSet, b: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with a 1e-6
    jitter on both covariances before the matrix square root and small
    negative round-off clamped to zero.

    Raises
    ------
    NumericalError
        If the stabilized square root still comes out materially complex
        or the result is negative beyond the jitter budget.
    """
    if a.features.shape[1] != b.features.shape[1]:
        raise ShapeError(
            f"feature widths differ: {a.features.shape[1]} vs {b.features.shape[1]}"
        )
    c = a.features.shape[1]
    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    sig_a = np.cov(a.features, rowvar=False)
    sig_b = np.cov(b.features, rowvar=False)
    sig_a = np.atleast_2d(sig_a) + _COV_JITTER * np.eye(c)
    sig_b = np.atleast_2d(sig_b) + _COV_JITTER * np.eye(c)

    covmean, _ = linalg.sqrtm(sig_a @ sig_b, disp=False)
    if np.iscomplexobj(covmean):
        imag = np.max(np.abs(covmean.imag))
        if imag > 1e-6:
            raise NumericalError(
                f"covariance sqrt has imaginary magnitude {imag:.3e} "
                f"(cond a={np.linalg.cond(sig_a):.2e}, "
                f"b={np.linalg.cond(sig_b):.2e})"
            )
        covmean = covmean.real

    mean_term = float(np.sum((mu_a - mu_b) ** 2))
    trace_term = float(np.trace(sig_a + sig_b - 2.0 * covmean))
    value = mean_term + trace_term
    # the jitter biases the trace by up to -2*C*jitter on identical sets
    budget = 2.0 * c * _COV_JITTER + 1e-8
    if value < -budget:
        raise NumericalError(f"FMD came out negative beyond round-off: {value:.3e}")
    return max(value, 0.0)


def _frame_features(clip: MotionClip) -> np.ndarray:
    """Joint-averaged 6D features per frame, (T, 6)."""
    return clip.rotations.mean(axis=1)


def _window_distance(a, b):
    """Mean over frames of the euclidean frame-feature distance."""
    return float(np.linalg.norm(a - b, axis=-1).mean())


def diversity(samples, source: MotionClip, window=16):
    """(global, local) diversity of generated clips against the source.

    Global: per sample, the whole-sequence feature distance to the source
    after linear alignment to the source length, averaged over samples.
    Local: per sample, non-overlapping windows are matched against every
    source window (stride 1) and the nearest distance is kept; averaged
    over windows and samples. Both run in joint-averaged 6D feature space,
    so they apply across skeleton topologies.
    """
    if len(samples) < 2:
        raise ConfigError("need at least 2 samples")
    shortest = min([s.num_frames for s in samples] + [source.num_frames])
    if window > shortest:
        raise ConfigError(
            f"window {window} exceeds shortest clip length {shortest}"
        )

    src = _frame_features(source)
    t_src = src.shape[0]
    source_windows = np.stack(
        [src[i:i + window] for i in range(t_src - window + 1)]
    )

    glo_terms, loc_terms = [], []
    for clip in samples:
        feats = _frame_features(clip)
        if clip.num_frames != t_src:
            feats = _frame_features(resample(clip, t_src))
        glo_terms.append(_window_distance(feats, src))

        feats = _frame_features(clip)
        t = feats.shape[0]
        starts = list(range(0, t - window + 1, window))
        dists = []
        for start in starts:
            chunk = feats[start:start + window]
            best = min(
                _window_distance(chunk, sw) for sw in source_windows
            )
            dists.append(best)
        loc_terms.append(float(np.mean(dists)))

    return float(np.mean(glo_terms)), float(np.mean(loc_terms))


def write_report(path, rows):
    """Persist metric rows as JSON plus a plain-text table.

    rows: list of {"metric": str, "value": float, "config": dict}. The text
    table sits next to the JSON with a .txt suffix.
    """
    path = str(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2)
    width = max([len(r["metric"]) for r in rows] + [6])
    lines = [f"{'metric'.ljust(width)}  value      config"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        cfg = json.dumps(r.get("config", {}), sort_keys=True)
        lines.append(f"{r['metric'].ljust(width)}  {r['value']:<9.4f}  {cfg}")
    txt = path.rsplit(".", 1)[0] + ".txt"
    with open(txt, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return txt
