"""ROC/AUC metrics, corpus reports and the PCA separability diagnostic."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .hsidata import atomic_write


def _flatten(scores, truth):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = np.asarray(getattr(truth, "labels", truth)).astype(bool).reshape(-1)
    if s.shape != t.shape:
        raise ValueError(f"score map has {s.size} pixels but the mask has {t.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(t.sum())
    if n_pos == 0 or n_pos == t.size:
        raise ValueError("mask must contain both anomaly and background pixels")
    return s, t


def _midranks(s):
    order = np.argsort(s, kind="mergesort")
    ranked = s[order]
    starts = np.flatnonzero(np.r_[True, ranked[1:] != ranked[:-1]])
    ends = np.r_[starts[1:], ranked.size]
    # 1-based average rank of each tie group
    group_rank = 0.5 * (starts + 1 + ends)
    ranks = np.empty_like(s)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def auc(scores, truth):
    """Mann-Whitney AUC; tied anomaly/background pairs count one half."""
    s, t = _flatten(scores, truth)
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    u = _midranks(s)[t].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    pf: np.ndarray
    pd: np.ndarray

    def area(self):
        return float(np.sum(np.diff(self.pf) * (self.pd[1:] + self.pd[:-1]) / 2.0))


def roc(scores, truth):
    """ROC points for every distinct threshold, from (0, 0) at +inf down to (1, 1)."""
    s, t = _flatten(scores, truth)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, t_sorted = s[order], t[order]
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(t_sorted)[last]
    fp = np.cumsum(~t_sorted)[last]
    n_pos = tp[-1]
    n_neg = fp[-1]
    thresholds = np.r_[np.inf, s_sorted[last]]
    return RocCurve(thresholds, np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos])


@dataclass
class SceneReport:
    scene_id: str
    auc: float
    curve: RocCurve | None = None
    seconds: float | None = None


def mauc(reports):
    """Unweighted mean of per-scene AUCs; accepts reports or plain numbers."""
    values = [r.auc if isinstance(r, SceneReport) else float(r) for r in reports]
    if not values:
        raise ValueError("mAUC of an empty report list is undefined")
    return float(np.mean(values))


def evaluate_scene(scene_id, scores, truth, seconds=None):
    return SceneReport(scene_id, auc(scores, truth), roc(scores, truth), seconds)


@dataclass
class EvalReport:
    scenes: list = field(default_factory=list)

    @property
    def mauc(self):
        return mauc(self.scenes)

    def to_csv(self, timing=False):
        out = io.StringIO()
        out.write("scene_id,auc,seconds\n")
        for r in self.scenes:
            sec = f"{r.seconds:.6f}" if timing and r.seconds is not None else ""
            out.write(f"{r.scene_id},{r.auc:.12f},{sec}\n")
        out.write(f"mAUC,{self.mauc:.12f},\n")
        return out.getvalue()

    def write(self, path, timing=False):
        atomic_write(path, self.to_csv(timing).encode("ascii"))


def roc_csv(curve: RocCurve):
    out = io.StringIO()
    out.write("threshold,pf,pd\n")
    for th, pf, pd in zip(curve.thresholds, curve.pf, curve.pd):
        out.write(f"{float(th)!r},{float(pf)!r},{float(pd)!r}\n")
    return out.getvalue()


def write_roc(path, curve: RocCurve):
    atomic_write(path, roc_csv(curve).encode("ascii"))


# --------------------------------------------------------------------------
# PCA diagnostic


@dataclass(frozen=True)
class PcaResult:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    projections: np.ndarray
    labels: np.ndarray
    rank_deficient: bool

    def to_csv(self):
        k = self.vectors.shape[1]
        out = io.StringIO()
        if self.rank_deficient:
            out.write(f"# warning: covariance rank {k} is below the requested component count\n")
        out.write(",".join([f"pc{i + 1}" for i in range(k)] + ["label"]) + "\n")
        for row, lab in zip(self.projections, self.labels):
            out.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")
        return out.getvalue()

    def write(self, path):
        atomic_write(path, self.to_csv().encode("ascii"))


def _sym_eig(cov):
    diag, vecs, _ = kernels.jacobi_eigh(cov)
    order = np.argsort(-diag, kind="stable")
    vals, vecs = diag[order], vecs[:, order]
    # largest-magnitude component positive (first one wins a tie)
    pivot = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])]
    return vals, vecs * np.where(pivot < 0, -1.0, 1.0)


def pca_diag(cube, truth, k=3, rank_tol=1e-12):
    """Project centered pixels onto the leading ``k`` principal axes."""
    data = np.asarray(getattr(cube, "data", cube), dtype=np.float64)
    b = data.shape[0]
    pixels = data.reshape(b, -1).T
    labels = np.asarray(getattr(truth, "labels", truth)).astype(bool).reshape(-1)
    if labels.size != pixels.shape[0]:
        raise ValueError("mask and cube sizes differ")
    if k < 1 or pixels.shape[0] < k or b < k:
        raise ValueError(f"need at least k={k} pixels and bands")
    xc = pixels - pixels.mean(axis=0)
    cov = xc.T @ xc / pixels.shape[0]
    vals, vecs = _sym_eig(0.5 * (cov + cov.T))
    top = vals[0] if vals.size else 0.0
    rank = int(np.sum(vals > rank_tol * max(top, 0.0))) if top > 0 else 0
    keep = min(k, rank)
    return PcaResult(vals[:keep], vecs[:, :keep], xc @ vecs[:, :keep], labels, keep < k)
