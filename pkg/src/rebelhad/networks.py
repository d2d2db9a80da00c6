"""Desk-scale networks for both training stages and the RSM1 model file.

All models take batches shaped ``(N, bands, H, W)`` and own a
:class:`~rebelhad.numerics.ParamTree`. ``forward`` is pure: it returns the
outputs together with a cache that ``backward`` consumes.
"""
from __future__ import annotations

import json

import numpy as np

from .errors import ModelFormatError
from .hsidata import atomic_write
from .numerics import ops
from .numerics.layers import Conv2d, ReLU, ResidualBlock, SEBlock, Sequential, Sigmoid
from .numerics.params import ParamTree
from .rng import SplitMix64

WIDTHS = (16, 32, 64)
STUDENT_WIDTH = 32
COMPRESS_HIDDEN = 8
SPP_SCALES = (1, 2, 4)
SE_REDUCTION = 4


def _as_batch(x):
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def _check_divisible(x, by=4):
    h, w = x.shape[-2:]
    if h % by or w % by:
        raise ValueError(f"spatial dims {h}x{w} must be divisible by {by}")


def _check_bands(x, bands):
    if x.shape[1] != bands:
        raise ValueError(f"input has {x.shape[1]} bands, model expects {bands}")


def se_reduction_for(channels, preferred=SE_REDUCTION):
    """Largest reduction <= ``preferred`` that divides ``channels``."""
    for r in range(preferred, 0, -1):
        if channels % r == 0:
            return r
    return 1


class SpectralStageModel:
    """Stage-1 encoder/decoder with feature fusion and spectral alignment head.

    The residual stages of the encoder are frozen; the channel-wise input
    layer, the fusion module, the decoder, the output layer, the shared
    projection and the one-channel alignment projection are trainable.
    """

    kind = "SpectralStageModel"

    def __init__(self, bands, widths=WIDTHS, seed=0):
        c1, c2, c3 = widths
        self.bands, self.widths, self.seed = bands, tuple(widths), seed
        self.cwl_enc = Conv2d("cwl_enc", bands, c1, 1)
        self.enc1 = Sequential(ResidualBlock("enc1.block1", c1), ResidualBlock("enc1.block2", c1))
        self.enc2 = Sequential(Conv2d("enc2.down", c1, c2, 3, 2, 1), ReLU(), ResidualBlock("enc2.block", c2))
        self.enc3 = Sequential(Conv2d("enc3.down", c2, c3, 3, 2, 1), ReLU(), ResidualBlock("enc3.block", c3))
        self.mffm_f1 = Sequential(
            Conv2d("mffm.f1a", c1, c2, 3, 2, 1), ReLU(), Conv2d("mffm.f1b", c2, c3, 3, 2, 1), ReLU()
        )
        self.mffm_f2 = Sequential(Conv2d("mffm.f2", c2, c3, 3, 2, 1), ReLU())
        self.mffm_fuse = Conv2d("mffm.fuse", 3 * c3, c3, 1)
        self.dec3 = Sequential(ResidualBlock("dec3.block", c3, transpose=True))
        self.dec2 = Sequential(
            Conv2d("dec2.up", c3, c2, 2, 2, 0, transpose=True), ReLU(), ResidualBlock("dec2.block", c2, transpose=True)
        )
        self.dec1 = Sequential(
            Conv2d("dec1.up", c2, c1, 2, 2, 0, transpose=True), ReLU(), ResidualBlock("dec1.block", c1, transpose=True)
        )
        self.cwl_dec = Conv2d("cwl_dec", c1, bands, 1)
        self.fpl = Conv2d("fpl", c1, bands, 1)
        self.zcl = Conv2d("zcl_proj", bands, 1, 1)

        self.params = ParamTree()
        rng = SplitMix64(seed)
        self.cwl_enc.init(self.params, rng)
        for frozen_part in (self.enc1, self.enc2, self.enc3):
            frozen_part.init(self.params, rng, frozen=True)
        for part in (self.mffm_f1, self.mffm_f2, self.mffm_fuse, self.dec3, self.dec2, self.dec1,
                     self.cwl_dec, self.fpl, self.zcl):
            part.init(self.params, rng)

    FROZEN_PREFIXES = ("enc1.", "enc2.", "enc3.")

    def forward(self, x):
        x = _as_batch(x)
        _check_bands(x, self.bands)
        _check_divisible(x)
        p = self.params
        e0, c_cwl = self.cwl_enc.forward(p, x)
        f1, c_e1 = self.enc1.forward(p, e0)
        f2, c_e2 = self.enc2.forward(p, f1)
        f3, c_e3 = self.enc3.forward(p, f2)
        m1, c_m1 = self.mffm_f1.forward(p, f1)
        m2, c_m2 = self.mffm_f2.forward(p, f2)
        cat = np.concatenate([m1, m2, f3], axis=1)
        phi, c_fuse = self.mffm_fuse.forward(p, cat)
        g3, c_d3 = self.dec3.forward(p, phi)
        g2, c_d2 = self.dec2.forward(p, g3)
        g1, c_d1 = self.dec1.forward(p, g2)
        h_r, c_out = self.cwl_dec.forward(p, g1)
        fe_p, c_fpe = self.fpl.forward(p, f1)
        gd_p, c_fpd = self.fpl.forward(p, g1)
        diff = fe_p - gd_p
        o, c_zcl = self.zcl.forward(p, np.abs(diff))
        out = {
            "f1": f1, "f2": f2, "f3": f3, "phi": phi,
            "g3": g3, "g2": g2, "g1": g1,
            "h_r": h_r, "fe_p": fe_p, "gd_p": gd_p, "o": o,
        }
        cache = (c_cwl, c_e1, c_e2, c_e3, c_m1, c_m2, c_fuse, c_d3, c_d2, c_d1, c_out, c_fpe, c_fpd, diff, c_zcl)
        return out, cache

    def backward(self, grads, cache):
        """Accumulate parameter gradients given output gradients (missing keys mean zero)."""
        (c_cwl, c_e1, c_e2, c_e3, c_m1, c_m2, c_fuse, c_d3, c_d2, c_d1,
         c_out, c_fpe, c_fpd, diff, c_zcl) = cache
        p = self.params
        c3 = self.widths[2]

        def acc(a, b):
            if b is None:
                return a
            return b.copy() if a is None else a + b

        df1, df2, df3 = grads.get("f1"), grads.get("f2"), grads.get("f3")
        dg1, dg2, dg3 = grads.get("g1"), grads.get("g2"), grads.get("g3")
        dfe, dgd = grads.get("fe_p"), grads.get("gd_p")
        if grads.get("o") is not None:
            dabs = self.zcl.backward(p, grads["o"], c_zcl)
            ddiff = dabs * np.sign(diff)
            dfe, dgd = acc(dfe, ddiff), acc(dgd, -ddiff)
        if dfe is not None:
            df1 = acc(df1, self.fpl.backward(p, dfe, c_fpe))
        if dgd is not None:
            dg1 = acc(dg1, self.fpl.backward(p, dgd, c_fpd))
        if grads.get("h_r") is not None:
            dg1 = acc(dg1, self.cwl_dec.backward(p, grads["h_r"], c_out))
        if dg1 is not None:
            dg2 = acc(dg2, self.dec1.backward(p, dg1, c_d1))
        if dg2 is not None:
            dg3 = acc(dg3, self.dec2.backward(p, dg2, c_d2))
        dphi = grads.get("phi")
        if dg3 is not None:
            dphi = acc(dphi, self.dec3.backward(p, dg3, c_d3))
        if dphi is not None:
            dcat = self.mffm_fuse.backward(p, dphi, c_fuse)
            df1 = acc(df1, self.mffm_f1.backward(p, dcat[:, :c3], c_m1))
            df2 = acc(df2, self.mffm_f2.backward(p, dcat[:, c3:2 * c3], c_m2))
            df3 = acc(df3, dcat[:, 2 * c3:])
        if df3 is not None:
            df2 = acc(df2, self.enc3.backward(p, df3, c_e3))
        if df2 is not None:
            df1 = acc(df1, self.enc2.backward(p, df2, c_e2))
        if df1 is not None:
            de0 = self.enc1.backward(p, df1, c_e1)
            self.cwl_enc.backward(p, de0, c_cwl, need_dx=False)

    def spe_path(self, x):
        """``fpl(enc1(cwl_enc(x)))``: the sub-path retained by pruning."""
        x = _as_batch(x)
        p = self.params
        e0, _ = self.cwl_enc.forward(p, x)
        f1, _ = self.enc1.forward(p, e0)
        return self.fpl.forward(p, f1)[0]


class SpeFen:
    """Pruned spectral network: channel-wise layer, first residual stage, projection."""

    kind = "SpeFen"
    PREFIXES = ("cwl_enc.", "enc1.", "fpl.")

    def __init__(self, bands, widths=WIDTHS, params=None, seed=0):
        c1 = widths[0]
        self.bands, self.widths, self.seed = bands, tuple(widths), seed
        self.cwl_enc = Conv2d("cwl_enc", bands, c1, 1)
        self.enc1 = Sequential(ResidualBlock("enc1.block1", c1), ResidualBlock("enc1.block2", c1))
        self.fpl = Conv2d("fpl", c1, bands, 1)
        if params is None:
            params = ParamTree()
            rng = SplitMix64(seed)
            for part in (self.cwl_enc, self.enc1, self.fpl):
                part.init(params, rng)
        self.params = params

    def forward(self, x):
        x = _as_batch(x)
        _check_bands(x, self.bands)
        p = self.params
        e0, _ = self.cwl_enc.forward(p, x)
        f1, _ = self.enc1.forward(p, e0)
        return self.fpl.forward(p, f1)[0]

    def freeze(self):
        self.params.set_frozen("", True)
        return self


def prune_to_spe_fen(model: SpectralStageModel) -> SpeFen:
    """Copy the spectral sub-path of a trained stage-1 model; the copy is frozen."""
    params = model.params.subtree(SpeFen.PREFIXES)
    return SpeFen(model.bands, model.widths, params=params, seed=model.seed).freeze()


def spe_fen_forward(fen: SpeFen, cube):
    return fen.forward(cube)


class SpaFen:
    """Spatial student: spectral compression, frozen backbone, pyramid pooling, SE, projection."""

    kind = "SpaFen"
    FROZEN_PREFIXES = ("bb.",)

    def __init__(self, bands, width=STUDENT_WIDTH, seed=0, params=None):
        self.bands, self.width, self.seed = bands, width, seed
        ds = width
        half = ds // 2
        self.compress = Sequential(
            Conv2d("compress.c1", bands, COMPRESS_HIDDEN, 1), ReLU(),
            Conv2d("compress.c2", COMPRESS_HIDDEN, 3, 1), Sigmoid(),
        )
        self.backbone = Sequential(
            Conv2d("bb.stem", 3, half, 3, 2, 1), ReLU(), ResidualBlock("bb.block1", half),
            Conv2d("bb.down", half, ds, 3, 2, 1), ReLU(), ResidualBlock("bb.block2", ds),
        )
        self.spp_fuse = Conv2d("spp.fuse", len(SPP_SCALES) * ds, ds, 1)
        self.se = SEBlock("se", ds, SE_REDUCTION)
        self.proj = Conv2d("proj", ds, bands, 1)
        if params is None:
            params = ParamTree()
            rng = SplitMix64(seed)
            self.compress.init(params, rng)
            self.backbone.init(params, rng, frozen=True)
            for part in (self.spp_fuse, self.se, self.proj):
                part.init(params, rng)
        self.params = params

    def forward(self, x):
        x = _as_batch(x)
        _check_bands(x, self.bands)
        _check_divisible(x)
        p = self.params
        h, w = x.shape[-2:]
        h3c, c_comp = self.compress.forward(p, x)
        f_res, c_bb = self.backbone.forward(p, h3c)
        rh, rw = f_res.shape[-2:]
        pooled = [ops.resize_bilinear(ops.adaptive_avg_pool(f_res, s), rh, rw) for s in SPP_SCALES]
        f_cat = np.concatenate(pooled, axis=1)
        f_fuse, c_fuse = self.spp_fuse.forward(p, f_cat)
        f_se, c_se = self.se.forward(p, f_fuse)
        up = ops.resize_bilinear(f_se, h, w)
        f_spa, c_proj = self.proj.forward(p, up)
        out = {"h3c": h3c, "f_res": f_res, "f_cat": f_cat, "f_fuse": f_fuse, "f_se": f_se, "f_spa": f_spa}
        return out, (c_comp, c_bb, c_fuse, c_se, c_proj, (rh, rw))

    def backward(self, d_fspa, cache):
        c_comp, c_bb, c_fuse, c_se, c_proj, (rh, rw) = cache
        p = self.params
        dup = self.proj.backward(p, d_fspa, c_proj)
        dse = ops.resize_bilinear_backward(dup, (rh, rw))
        dfuse = self.se.backward(p, dse, c_se)
        dcat = self.spp_fuse.backward(p, dfuse, c_fuse)
        ds = self.width
        dres = 0.0
        for i, s in enumerate(SPP_SCALES):
            dpool = ops.resize_bilinear_backward(dcat[:, i * ds:(i + 1) * ds], (s, s))
            dres = dres + ops.adaptive_avg_pool_backward(dpool, (rh, rw))
        dh3c = self.backbone.backward(p, dres, c_bb)
        self.compress.backward(p, dh3c, c_comp, need_dx=False)


def spa_fen_forward(fen: SpaFen, cube):
    return fen.forward(cube)[0]["f_spa"]


class Frn:
    """Resolution-preserving decoder: two (SE, residual) stages and a 1x1 output layer."""

    kind = "Frn"

    def __init__(self, bands, seed=0, params=None):
        self.bands, self.seed = bands, seed
        r = se_reduction_for(bands)
        self.body = Sequential(
            SEBlock("frn.se1", bands, r), ResidualBlock("frn.res1", bands),
            SEBlock("frn.se2", bands, r), ResidualBlock("frn.res2", bands),
            Conv2d("frn.out", bands, bands, 1),
        )
        if params is None:
            params = ParamTree()
            self.body.init(params, SplitMix64(seed))
        self.params = params

    def forward(self, fused):
        fused = _as_batch(fused)
        _check_bands(fused, self.bands)
        return self.body.forward(self.params, fused)

    def backward(self, dy, cache):
        return self.body.backward(self.params, dy, cache)


def frn_forward(frn: Frn, fused):
    return frn.forward(fused)[0]


# --------------------------------------------------------------------------
# RSM1 model files: one JSON header line, then float64 LE payloads in entry order


def encode_model(stage, bands, widths, seed, trees):
    """``trees`` maps a component prefix (e.g. ``"spa_fen"``) to its ParamTree."""
    entries, payload = [], []
    for comp, tree in trees.items():
        for name, p in tree:
            entries.append({"name": f"{comp}/{name}", "shape": list(p.value.shape), "frozen": bool(p.frozen)})
            payload.append(p.value.astype("<f8").tobytes())
    header = {"format": "RSM1", "stage": stage, "B": int(bands), "widths": widths, "seed": int(seed),
              "entries": entries}
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + b"".join(payload)


def decode_model(raw, expected_stage=None, source="<bytes>"):
    """Return ``(header, {component: ParamTree})``."""
    nl = raw.find(b"\n")
    if nl < 0:
        raise ModelFormatError(f"{source}: missing header terminator")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{source}: header is not valid JSON") from exc
    if not isinstance(header, dict) or header.get("format") != "RSM1":
        raise ModelFormatError(f"{source}: format field is not RSM1")
    if expected_stage is not None and header.get("stage") != expected_stage:
        raise ModelFormatError(f"{source}: stage is {header.get('stage')!r}, expected {expected_stage!r}")
    body = memoryview(raw)[nl + 1:]
    need = sum(8 * int(np.prod(e["shape"], dtype=np.int64)) for e in header["entries"])
    if len(body) != need:
        raise ModelFormatError(f"{source}: payload is {len(body)} bytes, header describes {need}")
    trees, off = {}, 0
    for e in header["entries"]:
        comp, _, name = e["name"].partition("/")
        size = int(np.prod(e["shape"], dtype=np.int64))
        value = np.frombuffer(body, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(e["shape"])
        off += 8 * size
        trees.setdefault(comp, ParamTree()).add(name, value, bool(e["frozen"]))
    return header, trees


def save_spe_fen(fen: SpeFen, path):
    atomic_write(path, encode_model("spectral", fen.bands, {"encoder": list(fen.widths)}, fen.seed,
                                    {"spe_fen": fen.params}))


def load_spe_fen(path) -> SpeFen:
    header, trees = decode_model(_read(path), "spectral", str(path))
    if "spe_fen" not in trees:
        raise ModelFormatError(f"{path}: spectral model has no spe_fen component")
    widths = tuple(header["widths"]["encoder"])
    fen = SpeFen(header["B"], widths, params=trees["spe_fen"], seed=header["seed"])
    _check_names(fen.params, SpeFen(header["B"], widths).params, path)
    return fen


def save_spatial(spa: SpaFen, frn: Frn, path):
    atomic_write(path, encode_model("spatial", spa.bands, {"student": spa.width}, spa.seed,
                                    {"spa_fen": spa.params, "frn": frn.params}))


def load_spatial(path) -> tuple[SpaFen, Frn]:
    header, trees = decode_model(_read(path), "spatial", str(path))
    b, width = header["B"], header["widths"]["student"]
    if "spa_fen" not in trees or "frn" not in trees:
        raise ModelFormatError(f"{path}: spatial model needs spa_fen and frn components")
    spa = SpaFen(b, width, seed=header["seed"], params=trees["spa_fen"])
    frn = Frn(b, seed=header["seed"], params=trees["frn"])
    _check_names(spa.params, SpaFen(b, width).params, path)
    _check_names(frn.params, Frn(b).params, path)
    return spa, frn


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _check_names(got, reference, path):
    if got.names() != reference.names():
        raise ModelFormatError(f"{path}: parameter names do not match the architecture")
    for name, p in reference:
        if got[name].value.shape != p.value.shape:
            raise ModelFormatError(f"{path}: {name} has shape {got[name].value.shape}, expected {p.value.shape}")


__all__ = [
    "Frn", "SpaFen", "SpeFen", "SpectralStageModel", "decode_model", "encode_model", "frn_forward",
    "load_spatial", "load_spe_fen", "prune_to_spe_fen", "save_spatial", "save_spe_fen", "se_reduction_for",
    "spa_fen_forward", "spe_fen_forward",
]
