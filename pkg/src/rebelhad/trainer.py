"""Two-stage training schedule, checkpoints and the loss-ablation harness."""
from __future__ import annotations

import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses
from .detector import detect
from .errors import NumericalError
from .evaluation import auc, mauc
from .hsidata import atomic_write
from .losses import STAGE1_TERMS, STAGE2_TERMS, Stage1Weights, Stage2Weights
from .networks import (
    Frn,
    SpaFen,
    SpectralStageModel,
    SpeFen,
    load_spatial,
    load_spe_fen,
    prune_to_spe_fen,
    save_spatial,
    save_spe_fen,
)
from .numerics import ops
from .numerics.params import AdamState, adam_step
from .rng import SplitMix64

# Each stage draws from its own stream so the two schedules stay independent.
_SHUFFLE_SALT = 0x5EED_0001
_STUDENT_SALT = 0x5EED_0002
_FRN_SALT = 0x5EED_0003


@dataclass
class TrainConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.95
    batch: int = 16
    epochs: int = 60
    seed: int = 0
    stage1: Stage1Weights = field(default_factory=Stage1Weights)
    stage2: Stage2Weights = field(default_factory=Stage2Weights)
    enabled_losses: frozenset | None = None

    def __post_init__(self):
        if int(self.batch) != self.batch or self.batch < 1:
            raise ValueError(f"batch must be a positive integer, got {self.batch}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError(f"epochs must be a positive integer, got {self.epochs}")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("need lr > 0 and betas in [0, 1)")
        if self.enabled_losses is not None:
            self.enabled_losses = frozenset(self.enabled_losses)
            unknown = self.enabled_losses - set(STAGE1_TERMS) - set(STAGE2_TERMS)
            if unknown:
                raise ValueError(f"unknown loss names {sorted(unknown)}")

    def enabled(self, terms):
        if self.enabled_losses is None:
            return tuple(terms)
        return tuple(t for t in terms if t in self.enabled_losses)

    def adam(self):
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2)

    def to_dict(self):
        d = asdict(self)
        d["enabled_losses"] = None if self.enabled_losses is None else sorted(self.enabled_losses)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "stage1" in d:
            d["stage1"] = Stage1Weights(**d["stage1"])
        if "stage2" in d:
            d["stage2"] = Stage2Weights(**d["stage2"])
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TrainLog:
    terms: tuple
    records: list = field(default_factory=list)

    def append(self, record):
        for k, v in record.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise NumericalError(f"non-finite {k} in epoch {record.get('epoch')}")
        self.records.append(record)

    @property
    def totals(self):
        return [r["total"] for r in self.records]

    def columns(self):
        return ["epoch", *self.terms, "total", "seconds", "param_norm"]

    def to_csv(self):
        out = io.StringIO()
        cols = self.columns()
        out.write(",".join(cols) + "\n")
        for r in self.records:
            out.write(",".join(str(r["epoch"]) if c == "epoch" else f"{r[c]:.10g}" for c in cols) + "\n")
        return out.getvalue()

    def write(self, path):
        atomic_write(path, self.to_csv().encode("ascii"))


def _stack(corpus):
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")
    arrays = [np.asarray(getattr(c, "data", c), dtype=np.float64) for c in corpus]
    shape = arrays[0].shape
    for i, a in enumerate(arrays):
        if a.ndim != 3 or a.shape != shape:
            raise ValueError(f"corpus cube {i} has shape {a.shape}, expected {shape}")
    if shape[1] % 4 or shape[2] % 4:
        raise ValueError(f"spatial size {shape[1:]} must be divisible by 4")
    return np.stack(arrays)


def _batches(rng, n, batch):
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def _trainable_norm(*trees):
    sq = sum(float((p.value * p.value).sum()) for t in trees for _, p in t if not p.frozen)
    return math.sqrt(sq)


def _check_grads(*trees):
    for t in trees:
        for name, p in t:
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in {name}")


def _epoch_record(epoch, sums, count, terms, started, *trees):
    rec = {"epoch": epoch}
    rec.update({k: sums[k] / count for k in (*terms, "total")})
    rec["seconds"] = time.perf_counter() - started
    rec["param_norm"] = _trainable_norm(*trees)
    return rec


# --------------------------------------------------------------------------
# stage 1


def stage1_step(model: SpectralStageModel, xb, cfg: TrainConfig):
    """Forward, loss and backward for one batch; gradients are left accumulated."""
    out, cache = model.forward(xb)
    coef = losses.stage1_coefficients(cfg.stage1, cfg.enabled(STAGE1_TERMS))
    gs, fs = [out["g1"], out["g2"], out["g3"]], [out["f1"], out["f2"], out["f3"]]
    sim, (dgs, dfs) = losses.loss_sim_grad(gs, fs)
    mse, dmse = losses.loss_mse_grad(xb, out["h_r"])
    z, dz = losses.loss_z_grad(out["o"])
    parts = {"sim": sim, "mse": mse, "z": z}
    total = losses.stage1_total(parts, cfg.stage1, cfg.enabled(STAGE1_TERMS))
    grads = {}
    if coef["sim"]:
        for key, d in zip(("g1", "g2", "g3"), dgs):
            grads[key] = coef["sim"] * d
        for key, d in zip(("f1", "f2", "f3"), dfs):
            grads[key] = coef["sim"] * d
    if coef["mse"]:
        grads["h_r"] = coef["mse"] * dmse
    if coef["z"]:
        grads["o"] = coef["z"] * dz
    model.backward(grads, cache)
    return parts, total


def fit_spectral(corpus, cfg: TrainConfig = TrainConfig(), widths=None):
    """Train the full stage-1 model; returns ``(model, log)``."""
    x = _stack(corpus)
    kw = {} if widths is None else {"widths": widths}
    model = SpectralStageModel(x.shape[1], seed=cfg.seed, **kw)
    rng = SplitMix64(cfg.seed ^ _SHUFFLE_SALT)
    state = cfg.adam()
    log = TrainLog(STAGE1_TERMS)
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        sums = dict.fromkeys((*STAGE1_TERMS, "total"), 0.0)
        for idx in _batches(rng, len(x), cfg.batch):
            parts, total = stage1_step(model, x[idx], cfg)
            _check_grads(model.params)
            adam_step(model.params, state)
            for k in STAGE1_TERMS:
                sums[k] += parts[k] * len(idx)
            sums["total"] += total * len(idx)
        log.append(_epoch_record(epoch, sums, len(x), STAGE1_TERMS, started, model.params))
    return model, log


def train_stage1(corpus, cfg: TrainConfig = TrainConfig()):
    """Train stage 1 and prune to the frozen spectral network."""
    model, log = fit_spectral(corpus, cfg)
    return prune_to_spe_fen(model), log


# --------------------------------------------------------------------------
# stage 2


def stage2_step(spa: SpaFen, frn: Frn, xb, f_spe, cfg: TrainConfig):
    """One stage-2 batch. The teacher feature is a constant; only the student and decoder get gradient."""
    enabled = cfg.enabled(STAGE2_TERMS)
    coef = losses.stage2_coefficients(cfg.stage2, enabled)
    out, c_spa = spa.forward(xb)
    f_spa = out["f_spa"]
    cc, dcc = losses.loss_cc_grad(f_spe, f_spa)
    cos, dcos = losses.loss_cos_grad(f_spe, f_spa)
    var, dvar = losses.loss_var_grad(f_spa, cfg.stage2.tau)
    h_hat, c_frn = frn.forward(f_spe + f_spa)
    recon, drecon = losses.loss_recon_grad(xb, h_hat, cfg.stage2.ssim)
    parts = {"cc": cc, "cos": cos, "var": var, "recon": recon}
    total = losses.stage2_total(parts, cfg.stage2, enabled)
    d_fspa = coef["cc"] * dcc + coef["cos"] * dcos + coef["var"] * dvar
    if coef["recon"]:
        d_fspa = d_fspa + frn.backward(coef["recon"] * drecon, c_frn)
    spa.backward(d_fspa, c_spa)
    return parts, total


def teacher_features(teacher: SpeFen, x, chunk=16):
    return np.concatenate([teacher.forward(x[i:i + chunk]) for i in range(0, len(x), chunk)])


def train_stage2(corpus, teacher: SpeFen, cfg: TrainConfig = TrainConfig()):
    """Train the spatial student and the restoration decoder against a frozen teacher."""
    x = _stack(corpus)
    if teacher.bands != x.shape[1]:
        raise ValueError(f"teacher expects {teacher.bands} bands, corpus has {x.shape[1]}")
    f_spe_all = teacher_features(teacher, x)
    spa = SpaFen(x.shape[1], seed=cfg.seed ^ _STUDENT_SALT)
    frn = Frn(x.shape[1], seed=cfg.seed ^ _FRN_SALT)
    rng = SplitMix64(cfg.seed ^ _SHUFFLE_SALT)
    s_spa, s_frn = cfg.adam(), cfg.adam()
    log = TrainLog(STAGE2_TERMS + ("abs_cos",))
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        sums = dict.fromkeys((*STAGE2_TERMS, "abs_cos", "total"), 0.0)
        for idx in _batches(rng, len(x), cfg.batch):
            parts, total = stage2_step(spa, frn, x[idx], f_spe_all[idx], cfg)
            _check_grads(spa.params, frn.params)
            adam_step(spa.params, s_spa)
            adam_step(frn.params, s_frn)
            for k in STAGE2_TERMS:
                sums[k] += parts[k] * len(idx)
            sums["abs_cos"] += abs(parts["cos"] - 1.0) * len(idx)
            sums["total"] += total * len(idx)
        log.append(_epoch_record(epoch, sums, len(x), STAGE2_TERMS + ("abs_cos",), started,
                                 spa.params, frn.params))
    return spa, frn, log


def mean_abs_cosine(teacher: SpeFen, spa: SpaFen, corpus):
    """Corpus average of the per-scene ``|cos(F_spe, F_spa)|``."""
    vals = []
    for cube in corpus:
        data = np.asarray(getattr(cube, "data", cube), dtype=np.float64)
        f_spe = teacher.forward(data)
        f_spa = spa.forward(data)[0]["f_spa"]
        vals.append(abs(ops.cosine_sim(f_spe, f_spa)))
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# checkpoints


def save_model(path, model):
    """Write a SpeFen, or a ``(SpaFen, Frn)`` pair, as an RSM1 file."""
    if isinstance(model, SpeFen):
        save_spe_fen(model, path)
    elif isinstance(model, tuple) and len(model) == 2:
        save_spatial(model[0], model[1], path)
    else:
        raise TypeError(f"cannot save {type(model).__name__}")


def load_model(path, stage):
    if stage == "spectral":
        return load_spe_fen(path)
    if stage == "spatial":
        return load_spatial(path)
    raise ValueError(f"stage must be 'spectral' or 'spatial', got {stage!r}")


# --------------------------------------------------------------------------
# ablation

STAGE1_GRID = (
    frozenset({"z"}),
    frozenset({"mse", "sim"}),
    frozenset({"z", "mse"}),
    frozenset({"z", "sim"}),
    frozenset({"z", "mse", "sim"}),
)
STAGE2_GRID = (
    frozenset({"cc", "cos", "var"}),
    frozenset({"recon"}),
    frozenset({"cc", "cos", "recon"}),
    frozenset({"cc", "var", "recon"}),
    frozenset({"cos", "var", "recon"}),
    frozenset({"cc", "cos", "var", "recon"}),
)


@dataclass(frozen=True)
class AblationRow:
    enabled: frozenset
    mauc: float


def _with_losses(cfg, enabled):
    d = cfg.to_dict()
    d["enabled_losses"] = sorted(enabled)
    return TrainConfig.from_dict(d)


def _validate_grid(grid, terms):
    if not grid:
        raise ValueError("ablation grid is empty")
    for entry in grid:
        bad = set(entry) - set(terms)
        if bad or not entry:
            raise ValueError(f"invalid ablation entry {sorted(entry)} for terms {terms}")


def run_ablation(corpus, test_set, cfg: TrainConfig, grid, stage=1, fusion="add", teacher=None):
    """Train once per grid entry and score the held-out ``(cube, mask)`` pairs.

    Stage-1 rows detect with the spectral path only. Stage-2 rows share one
    teacher (trained with every stage-1 loss unless given) and use ``fusion``.
    """
    terms = STAGE1_TERMS if stage == 1 else STAGE2_TERMS
    if stage not in (1, 2):
        raise ValueError("stage must be 1 or 2")
    _validate_grid(grid, terms)
    if stage == 2 and teacher is None:
        teacher, _ = train_stage1(corpus, _with_losses(cfg, STAGE1_TERMS))
    rows = []
    for entry in grid:
        run_cfg = _with_losses(cfg, entry)
        if stage == 1:
            spe, _ = train_stage1(corpus, run_cfg)
            aucs = [auc(detect(c, spe, None, "add"), m) for c, m in test_set]
        else:
            spa, _, _ = train_stage2(corpus, teacher, run_cfg)
            aucs = [auc(detect(c, teacher, spa, fusion), m) for c, m in test_set]
        rows.append(AblationRow(frozenset(entry), mauc(aucs)))
    return rows


def ablation_csv(rows, stage=1):
    terms = STAGE1_TERMS if stage == 1 else STAGE2_TERMS
    out = io.StringIO()
    out.write(",".join(terms) + ",mAUC\n")
    for r in rows:
        out.write(",".join("1" if t in r.enabled else "0" for t in terms) + f",{r.mauc:.12f}\n")
    return out.getvalue()
