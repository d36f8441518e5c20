"""Toy spatio-temporal denoising UNet with pooled-embedding cross-attention.

Latent video tensors are laid out ``[b, c, f, h, w]`` (batch, channels,
frames, height, width). Temporal attention runs on sequences reshaped to
``[b*h*w, f, c]``; spatial attention runs on ``[b*f, h*w, c]``. The
conditioning signal is one globally pooled token ``[b, 1, D]``, so every
cross-attention site sees exactly one key per query: its softmax weights
are identically 1.0 and the site's output is an affine function of the
embedding alone. The surgery module exploits that; this module provides
the untransformed reference behaviour plus the folded execution paths.

A model is a :class:`ModelSpec` plus a flat ``{name: ndarray}`` weight
dict. ``build_weights`` draws every parameter from one seeded stream in a
fixed order, so a (spec, seed, dtype) triple pins the model bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, FormatError, ShapeError, StateError
from .tensorops import Rng, affine, layer_norm, matmul, rng_uniform, softmax_lastdim
from .vten import read_vten, write_vten

SELF_KINDS = ("ssa", "tsa")
CROSS_KINDS = ("sca", "tca")
FORWARD_MODES = ("baseline", "modified", "vcut-cached")


# ---------------------------------------------------------------------------
# Reshape choreography between the video layout and the two sequence layouts.


def reshape_temporal(z: np.ndarray) -> np.ndarray:
    """[b, c, f, h, w] -> [b*h*w, f, c] (pixels become the batch)."""
    if z.ndim != 5:
        raise ShapeError(f"latent video must be rank 5, got {z.shape}")
    b, c, f, h, w = z.shape
    return z.transpose(0, 3, 4, 2, 1).reshape(b * h * w, f, c)


def reshape_temporal_inverse(x: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    n, f, c = x.shape
    if n != b * h * w:
        raise ShapeError(f"sequence batch {n} does not factor as {b}*{h}*{w}")
    return x.reshape(b, h, w, f, c).transpose(0, 4, 3, 1, 2)


def reshape_spatial(z: np.ndarray) -> np.ndarray:
    """[b, c, f, h, w] -> [b*f, h*w, c] (frames become the batch)."""
    if z.ndim != 5:
        raise ShapeError(f"latent video must be rank 5, got {z.shape}")
    b, c, f, h, w = z.shape
    return z.transpose(0, 2, 3, 4, 1).reshape(b * f, h * w, c)


def reshape_spatial_inverse(x: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    n, hw, c = x.shape
    if hw != h * w or n % b:
        raise ShapeError(f"sequence shape {x.shape} does not factor back to b={b}, h={h}, w={w}")
    f = n // b
    return x.reshape(b, f, h, w, c).transpose(0, 4, 1, 2, 3)


# ---------------------------------------------------------------------------
# Attention.


@dataclass(frozen=True)
class AttentionSite:
    """One attention mechanism: projections plus head bookkeeping.

    Weight matrices map row vectors (``x @ w + b``). For cross kinds the
    key/value projections read from the cross source of width ``cross_dim``.
    """

    kind: str
    channels: int
    heads: int
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    cross_dim: int | None = None
    site_id: str = "site"

    def __post_init__(self):
        if self.kind not in SELF_KINDS + CROSS_KINDS:
            raise ConfigError(f"unknown attention kind {self.kind!r}")
        if self.channels % self.heads:
            raise ConfigError(
                f"{self.site_id}: channels {self.channels} not divisible by heads {self.heads}"
            )
        kv_in = self.cross_dim if self.kind in CROSS_KINDS else self.channels
        if self.kind in CROSS_KINDS and not self.cross_dim:
            raise ConfigError(f"{self.site_id}: cross attention needs cross_dim")
        if self.w_k.shape[0] != kv_in or self.w_v.shape[0] != kv_in:
            raise ConfigError(
                f"{self.site_id}: key/value input extent {self.w_k.shape[0]} != {kv_in}"
            )


def random_attention_site(
    rng: Rng, kind: str, channels: int, heads: int, cross_dim: int | None = None,
    dtype=np.float32, site_id: str = "site",
) -> AttentionSite:
    """Seeded site with 1/sqrt(fan_in)-scaled weights and small biases."""
    kv_in = cross_dim if kind in CROSS_KINDS else channels

    def mat(d_in, d_out):
        s = 1.0 / np.sqrt(d_in)
        return rng_uniform(rng, -s, s, (d_in, d_out), dtype)

    def vec(d_in, d_out):
        s = 0.5 / np.sqrt(d_in)
        return rng_uniform(rng, -s, s, (d_out,), dtype)

    return AttentionSite(
        kind=kind, channels=channels, heads=heads, cross_dim=cross_dim, site_id=site_id,
        w_q=mat(channels, channels), b_q=vec(channels, channels),
        w_k=mat(kv_in, channels), b_k=vec(kv_in, channels),
        w_v=mat(kv_in, channels), b_v=vec(kv_in, channels),
        w_o=mat(channels, channels), b_o=vec(channels, channels),
    )


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, l, c = x.shape
    d = c // heads
    return x.reshape(b, l, heads, d).transpose(0, 2, 1, 3).reshape(b * heads, l, d)


def _merge_heads(x: np.ndarray, heads: int) -> np.ndarray:
    bh, l, d = x.shape
    b = bh // heads
    return x.reshape(b, heads, l, d).transpose(0, 2, 1, 3).reshape(b, l, heads * d)


def _attend(site: AttentionSite, q, k, v, return_scores: bool):
    qh = _split_heads(q, site.heads)
    kh = _split_heads(k, site.heads)
    vh = _split_heads(v, site.heads)
    d_k = site.channels // site.heads
    scale = q.dtype.type(1.0 / np.sqrt(d_k))
    scores = softmax_lastdim(matmul(qh, kh.transpose(0, 2, 1)) * scale)
    out = affine(_merge_heads(matmul(scores, vh), site.heads), site.w_o, site.b_o)
    return (out, scores) if return_scores else out


def self_attention(site: AttentionSite, x: np.ndarray) -> np.ndarray:
    """Multi-head self-attention over [B, L, c]; output shape equals input."""
    if site.kind not in SELF_KINDS:
        raise ArgumentError(f"self_attention got a {site.kind} site")
    q = affine(x, site.w_q, site.b_q)
    k = affine(x, site.w_k, site.b_k)
    v = affine(x, site.w_v, site.b_v)
    return _attend(site, q, k, v, return_scores=False)


def cross_attention(site: AttentionSite, x: np.ndarray, e: np.ndarray, return_scores: bool = False):
    """Attention with queries from x [B, L, c] and keys/values from e [B, 1, D].

    The single pooled token means the [B*heads, L, 1] score tensor is all
    ones after softmax and the output is constant along L: every row equals
    ``(e @ w_v + b_v) @ w_o + b_o`` for its batch element, whatever x is.
    """
    if site.kind not in CROSS_KINDS:
        raise ArgumentError(f"cross_attention got a {site.kind} site")
    if e.ndim != 3 or e.shape[1] != 1:
        raise ShapeError(
            f"conditioning must be a single pooled token [B, 1, D]; "
            f"got {e.shape} (multi-token conditioning is rejected)"
        )
    if e.shape[0] != x.shape[0]:
        raise ShapeError(f"batch mismatch: x {x.shape} vs embedding {e.shape}")
    if e.shape[2] != site.cross_dim:
        raise ShapeError(f"embedding width {e.shape[2]} != site cross_dim {site.cross_dim}")
    q = affine(x, site.w_q, site.b_q)
    k = affine(e, site.w_k, site.b_k)
    v = affine(e, site.w_v, site.b_v)
    return _attend(site, q, k, v, return_scores=return_scores)


def degenerate_output(site: AttentionSite, e: np.ndarray) -> np.ndarray:
    """The constant [B, c] vector a cross site emits for embedding e."""
    value = affine(e[:, 0, :], site.w_v, site.b_v)
    return affine(value, site.w_o, site.b_o)


# ---------------------------------------------------------------------------
# Model specification.


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of the toy UNet.

    ``channels``/``enc_blocks``/``attn_levels`` are per resolution level;
    the decoder mirrors the encoder with one extra block per level. The
    middle of the UNet always carries one attention group. ``folded=True``
    marks a model whose cross-attention was replaced by cached affine maps.
    """

    latent_channels: int = 4
    channels: tuple = (8, 16)
    enc_blocks: tuple = (1, 1)
    attn_levels: tuple = (True, True)
    heads: int = 2
    embed_dim: int = 16
    frames: int = 3
    time_dim: int = 8
    ff_mult: int = 4
    norm_eps: float = 1e-5
    folded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "enc_blocks", tuple(int(n) for n in self.enc_blocks))
        object.__setattr__(self, "attn_levels", tuple(bool(a) for a in self.attn_levels))
        self.validate()

    def validate(self):
        L = len(self.channels)
        if L < 1 or len(self.enc_blocks) != L or len(self.attn_levels) != L:
            raise ConfigError(
                f"channels/enc_blocks/attn_levels lengths disagree: "
                f"{len(self.channels)}/{len(self.enc_blocks)}/{len(self.attn_levels)}"
            )
        if min(self.channels) < 1 or min(self.enc_blocks) < 1:
            raise ConfigError("channels and enc_blocks must be positive")
        if self.frames < 1 or self.latent_channels < 1 or self.embed_dim < 1:
            raise ConfigError("frames, latent_channels and embed_dim must be positive")
        if self.time_dim % 2:
            raise ConfigError(f"time_dim must be even, got {self.time_dim}")
        for lvl, (c, has_attn) in enumerate(zip(self.channels, self.attn_levels)):
            if has_attn and c % self.heads:
                raise ConfigError(f"level {lvl}: channels {c} not divisible by heads {self.heads}")
        if self.channels[-1] % self.heads:
            raise ConfigError("middle channels must be divisible by heads")

    @property
    def num_levels(self) -> int:
        return len(self.channels)

    def dec_blocks(self, level: int) -> int:
        return self.enc_blocks[level] + 1

    def site_counts(self) -> dict:
        """Attention sites per cross/self kind, split by UNet section."""
        enc = sum(n for n, a in zip(self.enc_blocks, self.attn_levels) if a)
        dec = sum(n + 1 for n, a in zip(self.enc_blocks, self.attn_levels) if a)
        return {"encoder": enc, "middle": 1, "decoder": dec, "total": enc + 1 + dec}

    def to_json(self) -> dict:
        return {
            "format": "vcut-model-spec",
            "version": 1,
            "latent_channels": self.latent_channels,
            "channels": list(self.channels),
            "enc_blocks": list(self.enc_blocks),
            "attn_levels": list(self.attn_levels),
            "heads": self.heads,
            "embed_dim": self.embed_dim,
            "frames": self.frames,
            "time_dim": self.time_dim,
            "ff_mult": self.ff_mult,
            "norm_eps": self.norm_eps,
            "folded": self.folded,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelSpec":
        if doc.get("format") != "vcut-model-spec" or doc.get("version") != 1:
            raise FormatError("not a vcut model spec document")
        fields = {k: v for k, v in doc.items() if k not in ("format", "version")}
        try:
            return cls(**fields)
        except TypeError as exc:
            raise FormatError(f"bad model spec fields: {exc}") from exc


def svd_layout_spec(
    latent_channels: int = 4,
    channels: tuple = (8, 12, 16, 16),
    heads: int = 2,
    embed_dim: int = 32,
    frames: int = 3,
    time_dim: int = 8,
) -> ModelSpec:
    """Smallest spec with the production site layout: per attention kind,
    6 encoder sites, 1 middle site and 9 decoder sites (16 total)."""
    spec = ModelSpec(
        latent_channels=latent_channels,
        channels=channels,
        enc_blocks=(2,) * len(channels),
        attn_levels=tuple(i < len(channels) - 1 for i in range(len(channels))),
        heads=heads,
        embed_dim=embed_dim,
        frames=frames,
        time_dim=time_dim,
    )
    counts = spec.site_counts()
    if (counts["encoder"], counts["middle"], counts["decoder"]) != (6, 1, 9):
        raise ConfigError(f"layout does not produce 6/1/9 sites: {counts}")
    return spec


# ---------------------------------------------------------------------------
# Parameter manifest. build_weights and forward_unet both follow this walk,
# so the draw order, the file manifest and the execution order coincide.


def _skip_channels(spec: ModelSpec) -> list:
    out = [spec.channels[0]]
    for lvl, c in enumerate(spec.channels):
        out.extend([c] * spec.enc_blocks[lvl])
        if lvl < spec.num_levels - 1:
            out.append(c)
    return out


def _attention_param_entries(prefix, c, heads, kv_in):
    for proj, d_in in (("q", c), ("k", kv_in), ("v", kv_in), ("o", c)):
        yield f"{prefix}.{proj}.w", "matrix", (d_in, c), d_in
        yield f"{prefix}.{proj}.b", "zeros", (c,), d_in


def _norm_entries(prefix, c):
    yield f"{prefix}.g", "ones", (c,), c
    yield f"{prefix}.b", "zeros", (c,), c


def _affine_entries(prefix, d_in, d_out):
    yield f"{prefix}.w", "matrix", (d_in, d_out), d_in
    yield f"{prefix}.b", "zeros", (d_out,), d_in


def _conv2d_entries(prefix, c_in, c_out):
    yield f"{prefix}.w", "matrix", (3, 3, c_in, c_out), 9 * c_in
    yield f"{prefix}.b", "zeros", (c_out,), 9 * c_in


def _tconv_entries(prefix, c):
    yield f"{prefix}.w", "matrix", (3, c), 3
    yield f"{prefix}.b", "zeros", (c,), 3


def _res2d_entries(prefix, c_in, c_out, time_dim):
    yield from _norm_entries(f"{prefix}.n1", c_in)
    yield from _conv2d_entries(f"{prefix}.conv1", c_in, c_out)
    yield from _affine_entries(f"{prefix}.temb", time_dim, c_out)
    yield from _norm_entries(f"{prefix}.n2", c_out)
    yield from _conv2d_entries(f"{prefix}.conv2", c_out, c_out)
    if c_in != c_out:
        yield from _affine_entries(f"{prefix}.skip", c_in, c_out)


def _tres_entries(prefix, c, time_dim):
    yield from _norm_entries(f"{prefix}.n1", c)
    yield from _tconv_entries(f"{prefix}.conv1", c)
    yield from _affine_entries(f"{prefix}.temb", time_dim, c)
    yield from _norm_entries(f"{prefix}.n2", c)
    yield from _tconv_entries(f"{prefix}.conv2", c)


def _tx_entries(prefix, c, heads, spec: ModelSpec, temporal: bool):
    self_name, cross_name = ("tsa", "tca") if temporal else ("ssa", "sca")
    yield from _norm_entries(f"{prefix}.n1", c)
    yield from _attention_param_entries(f"{prefix}.{self_name}", c, heads, c)
    if spec.folded:
        if not temporal:  # spatial cross folds to one affine map; temporal cross is gone
            yield from _affine_entries(f"{prefix}.fold", spec.embed_dim, c)
    else:
        yield from _norm_entries(f"{prefix}.n2", c)
        yield from _attention_param_entries(f"{prefix}.{cross_name}", c, heads, spec.embed_dim)
    yield from _norm_entries(f"{prefix}.n3", c)
    yield from _affine_entries(f"{prefix}.ff1", c, spec.ff_mult * c)
    yield from _affine_entries(f"{prefix}.ff2", spec.ff_mult * c, c)


def iter_parameters(spec: ModelSpec):
    """Yield (name, init_kind, shape, fan_in) in construction order."""
    yield from _conv2d_entries("conv_in", spec.latent_channels, spec.channels[0])
    c_prev = spec.channels[0]
    for lvl, c in enumerate(spec.channels):
        for blk in range(spec.enc_blocks[lvl]):
            pre = f"enc{lvl}.b{blk}"
            yield from _res2d_entries(f"{pre}.res", c_prev, c, spec.time_dim)
            if spec.attn_levels[lvl]:
                yield from _tx_entries(f"{pre}.stx", c, spec.heads, spec, temporal=False)
            yield from _tres_entries(f"{pre}.tres", c, spec.time_dim)
            if spec.attn_levels[lvl]:
                yield from _tx_entries(f"{pre}.ttx", c, spec.heads, spec, temporal=True)
            c_prev = c
        if lvl < spec.num_levels - 1:
            yield from _conv2d_entries(f"enc{lvl}.down", c, c)
    c_mid = spec.channels[-1]
    yield from _res2d_entries("mid.res0", c_prev, c_mid, spec.time_dim)
    yield from _tx_entries("mid.stx", c_mid, spec.heads, spec, temporal=False)
    yield from _tres_entries("mid.tres", c_mid, spec.time_dim)
    yield from _tx_entries("mid.ttx", c_mid, spec.heads, spec, temporal=True)
    yield from _res2d_entries("mid.res1", c_mid, c_mid, spec.time_dim)
    skips = _skip_channels(spec)
    c_prev = c_mid
    for lvl in reversed(range(spec.num_levels)):
        c = spec.channels[lvl]
        for blk in range(spec.dec_blocks(lvl)):
            pre = f"dec{lvl}.b{blk}"
            c_skip = skips.pop()
            yield from _res2d_entries(f"{pre}.res", c_prev + c_skip, c, spec.time_dim)
            if spec.attn_levels[lvl]:
                yield from _tx_entries(f"{pre}.stx", c, spec.heads, spec, temporal=False)
            yield from _tres_entries(f"{pre}.tres", c, spec.time_dim)
            if spec.attn_levels[lvl]:
                yield from _tx_entries(f"{pre}.ttx", c, spec.heads, spec, temporal=True)
            c_prev = c
        if lvl > 0:
            yield from _conv2d_entries(f"dec{lvl}.up", c, c)
    yield from _norm_entries("out_norm", spec.channels[0])
    yield from _conv2d_entries("conv_out", spec.channels[0], spec.latent_channels)


def build_weights(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> dict:
    """Draw every parameter from one SplitMix64 stream in manifest order."""
    rng = Rng(seed)
    weights = {}
    for name, kind, shape, fan_in in iter_parameters(spec):
        if kind == "matrix":
            s = 1.0 / np.sqrt(fan_in)
            weights[name] = rng_uniform(rng, -s, s, shape, dtype)
        elif kind == "zeros":
            weights[name] = np.zeros(shape, dtype)
        elif kind == "ones":
            weights[name] = np.ones(shape, dtype)
        else:  # pragma: no cover - manifest kinds are fixed above
            raise ConfigError(f"unknown init kind {kind}")
    return weights


def parameter_count(weights: dict) -> int:
    return sum(int(v.size) for v in weights.values())


# ---------------------------------------------------------------------------
# Forward pass.


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form GELU; keeps the computation platform-deterministic."""
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)))


def timestep_embedding(t_index: int, dim: int, batch: int, dtype) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / max(half, 1))
    ang = float(t_index) * freqs
    emb = np.concatenate([np.cos(ang), np.sin(ang)]).astype(dtype)
    return np.tile(emb, (batch, 1))


def null_embedding(batch: int, dim: int, dtype=np.float32) -> np.ndarray:
    """The unconditional token: all zeros, [b, 1, D]."""
    return np.zeros((batch, 1, dim), dtype)


def random_embedding(rng: Rng, batch: int, dim: int, dtype=np.float32) -> np.ndarray:
    return rng_uniform(rng, -1.0, 1.0, (batch, 1, dim), dtype)


def _channel_norm(x5, gain, bias, eps):
    # layer norm over the channel axis of [b, c, f, h, w]
    moved = x5.transpose(0, 2, 3, 4, 1)
    return layer_norm(moved, gain, bias, eps).transpose(0, 4, 1, 2, 3)


def _conv2d(x5, w, b, stride=1):
    bb, c_in, f, h, wdt = x5.shape
    c_out = w.shape[3]
    frames = x5.transpose(0, 2, 3, 4, 1).reshape(bb * f, h, wdt, c_in)
    padded = np.pad(frames, ((0, 0), (1, 1), (1, 1), (0, 0)))
    oh, ow = h // stride, wdt // stride
    out = np.zeros((bb * f, oh, ow, c_out), x5.dtype)
    for di in range(3):
        for dj in range(3):
            slab = padded[:, di : di + stride * oh : stride, dj : dj + stride * ow : stride, :]
            out += matmul(slab.reshape(-1, c_in), w[di, dj]).reshape(out.shape)
    out += b
    return out.reshape(bb, f, oh, ow, c_out).transpose(0, 4, 1, 2, 3)


def _tconv(x5, w, b):
    # depthwise temporal mixing, kernel 3, zero-padded to same length
    f = x5.shape[2]
    padded = np.pad(x5, ((0, 0), (0, 0), (1, 1), (0, 0), (0, 0)))
    out = np.zeros_like(x5)
    for dt in range(3):
        out += padded[:, :, dt : dt + f] * w[dt][None, :, None, None, None]
    return out + b[None, :, None, None, None]


def _upsample2x(x5):
    return np.repeat(np.repeat(x5, 2, axis=3), 2, axis=4)


class _Forward:
    """Single forward pass; carries the cross-site cursors."""

    def __init__(self, spec, weights, mode, embedding, conditioner, tca_constants):
        self.spec = spec
        self.p = weights
        self.mode = mode
        self.e = embedding
        self.conditioner = conditioner
        self.tca_constants = tca_constants
        self.sca_index = 0
        self.tca_index = 0

    def site(self, prefix, kind, c):
        cross = kind in CROSS_KINDS
        return AttentionSite(
            kind=kind, channels=c, heads=self.spec.heads,
            cross_dim=self.spec.embed_dim if cross else None, site_id=prefix,
            w_q=self.p[f"{prefix}.q.w"], b_q=self.p[f"{prefix}.q.b"],
            w_k=self.p[f"{prefix}.k.w"], b_k=self.p[f"{prefix}.k.b"],
            w_v=self.p[f"{prefix}.v.w"], b_v=self.p[f"{prefix}.v.b"],
            w_o=self.p[f"{prefix}.o.w"], b_o=self.p[f"{prefix}.o.b"],
        )

    def norm(self, x, prefix):
        return layer_norm(x, self.p[f"{prefix}.g"], self.p[f"{prefix}.b"], self.spec.norm_eps)

    def ff(self, x, prefix):
        hidden = gelu(affine(x, self.p[f"{prefix}.ff1.w"], self.p[f"{prefix}.ff1.b"]))
        return affine(hidden, self.p[f"{prefix}.ff2.w"], self.p[f"{prefix}.ff2.b"])

    def res2d(self, x, prefix, temb):
        h = _conv2d(gelu(_channel_norm(x, self.p[f"{prefix}.n1.g"], self.p[f"{prefix}.n1.b"], self.spec.norm_eps)),
                    self.p[f"{prefix}.conv1.w"], self.p[f"{prefix}.conv1.b"])
        t = affine(temb, self.p[f"{prefix}.temb.w"], self.p[f"{prefix}.temb.b"])
        h = h + t[:, :, None, None, None]
        h = _conv2d(gelu(_channel_norm(h, self.p[f"{prefix}.n2.g"], self.p[f"{prefix}.n2.b"], self.spec.norm_eps)),
                    self.p[f"{prefix}.conv2.w"], self.p[f"{prefix}.conv2.b"])
        if f"{prefix}.skip.w" in self.p:
            x = affine(x.transpose(0, 2, 3, 4, 1), self.p[f"{prefix}.skip.w"],
                       self.p[f"{prefix}.skip.b"]).transpose(0, 4, 1, 2, 3)
        return x + h

    def tres(self, x, prefix, temb):
        h = _tconv(gelu(_channel_norm(x, self.p[f"{prefix}.n1.g"], self.p[f"{prefix}.n1.b"], self.spec.norm_eps)),
                   self.p[f"{prefix}.conv1.w"], self.p[f"{prefix}.conv1.b"])
        t = affine(temb, self.p[f"{prefix}.temb.w"], self.p[f"{prefix}.temb.b"])
        h = h + t[:, :, None, None, None]
        h = _tconv(gelu(_channel_norm(h, self.p[f"{prefix}.n2.g"], self.p[f"{prefix}.n2.b"], self.spec.norm_eps)),
                   self.p[f"{prefix}.conv2.w"], self.p[f"{prefix}.conv2.b"])
        return x + h

    def _fold_vector(self, prefix):
        # affine image of the embedding under the site's value/output pair
        if self.spec.folded:
            return affine(self.e[:, 0, :], self.p[f"{prefix}.fold.w"], self.p[f"{prefix}.fold.b"])
        w_fold = matmul(self.p[f"{prefix}.sca.v.w"], self.p[f"{prefix}.sca.o.w"])
        b_fold = (matmul(self.p[f"{prefix}.sca.v.b"][None, :], self.p[f"{prefix}.sca.o.w"])
                  + self.p[f"{prefix}.sca.o.b"])[0]
        return affine(self.e[:, 0, :], w_fold, b_fold)

    def spatial_tx(self, x, prefix, c):
        b, _, f, hh, ww = x.shape
        u = reshape_spatial(x)
        u = u + self_attention(self.site(f"{prefix}.ssa", "ssa", c), self.norm(u, f"{prefix}.n1"))
        if self.mode == "baseline":
            e_rep = np.repeat(self.e, f, axis=0)
            u = u + cross_attention(self.site(f"{prefix}.sca", "sca", c),
                                    self.norm(u, f"{prefix}.n2"), e_rep)
        else:
            if self.mode == "vcut-cached":
                vec = self.conditioner[self.sca_index]
                if vec.shape != (b, c):
                    raise ShapeError(
                        f"cached conditioner {self.sca_index} has shape {vec.shape}, wanted {(b, c)}"
                    )
            else:
                vec = self._fold_vector(prefix)
            self.sca_index += 1
            u = u + np.repeat(vec, f, axis=0)[:, None, :]
        u = u + self.ff(self.norm(u, f"{prefix}.n3"), prefix)
        return reshape_spatial_inverse(u, b, hh, ww)

    def temporal_tx(self, x, prefix, c):
        b, _, f, hh, ww = x.shape
        u = reshape_temporal(x)
        u = u + self_attention(self.site(f"{prefix}.tsa", "tsa", c), self.norm(u, f"{prefix}.n1"))
        if self.mode == "baseline":
            e_rep = np.repeat(self.e, hh * ww, axis=0)
            u = u + cross_attention(self.site(f"{prefix}.tca", "tca", c),
                                    self.norm(u, f"{prefix}.n2"), e_rep)
        elif self.tca_constants is not None:
            const = self.tca_constants[self.tca_index]
            if const.shape != (b, c):
                raise ShapeError(f"temporal constant {self.tca_index} has shape {const.shape}, wanted {(b, c)}")
            u = u + np.repeat(const, hh * ww, axis=0)[:, None, :]
        if self.mode != "baseline":
            self.tca_index += 1
        u = u + self.ff(self.norm(u, f"{prefix}.n3"), prefix)
        return reshape_temporal_inverse(u, b, hh, ww)


def count_cross_sites(spec: ModelSpec) -> int:
    return spec.site_counts()["total"]


def forward_unet(
    spec: ModelSpec,
    weights: dict,
    z: np.ndarray,
    t_index: int,
    embedding: np.ndarray | None = None,
    mode: str = "baseline",
    conditioner=None,
    tca_constants=None,
) -> np.ndarray:
    """One denoiser evaluation; returns the noise prediction, same shape as z.

    Modes: ``baseline`` runs the cross-attention sites as attention;
    ``modified`` replaces each spatial cross site by the affine image of the
    embedding and drops temporal cross sites (``tca_constants`` re-adds their
    per-site constants for decomposition checks); ``vcut-cached`` injects
    precomputed per-site vectors instead of touching the embedding at all.
    """
    if mode not in FORWARD_MODES:
        raise ArgumentError(f"unknown mode {mode!r}; expected one of {FORWARD_MODES}")
    if z.ndim != 5:
        raise ShapeError(f"latent video must be [b, c, f, h, w], got {z.shape}")
    b, c_lat, f, h, w = z.shape
    if c_lat != spec.latent_channels:
        raise ShapeError(f"latent channels {c_lat} != spec {spec.latent_channels}")
    if f != spec.frames:
        raise ConfigError(f"frame count {f} != spec frames {spec.frames}")
    factor = 2 ** (spec.num_levels - 1)
    if h % factor or w % factor:
        raise ShapeError(f"h, w must be divisible by {factor} for {spec.num_levels} levels, got {h}x{w}")
    if mode == "baseline" and spec.folded:
        raise ConfigError("baseline mode needs an unfolded model")
    if mode in ("baseline", "modified"):
        if embedding is None:
            raise ArgumentError(f"mode {mode!r} requires an embedding")
        if embedding.ndim != 3 or embedding.shape != (b, 1, spec.embed_dim):
            raise ShapeError(f"embedding must be [b, 1, {spec.embed_dim}], got shape {embedding.shape}")
    if mode == "vcut-cached":
        n_sca = count_cross_sites(spec)
        if conditioner is None:
            raise StateError("vcut-cached mode requires a folded-conditioner cache")
        if len(conditioner) != n_sca:
            raise StateError(f"conditioner has {len(conditioner)} entries, model has {n_sca} spatial cross sites")

    run = _Forward(spec, weights, mode, embedding, conditioner, tca_constants)
    temb = timestep_embedding(t_index, spec.time_dim, b, z.dtype)

    x = _conv2d(z, weights["conv_in.w"], weights["conv_in.b"])
    skips = [x]
    for lvl, c in enumerate(spec.channels):
        for blk in range(spec.enc_blocks[lvl]):
            pre = f"enc{lvl}.b{blk}"
            x = run.res2d(x, f"{pre}.res", temb)
            if spec.attn_levels[lvl]:
                x = run.spatial_tx(x, f"{pre}.stx", c)
            x = run.tres(x, f"{pre}.tres", temb)
            if spec.attn_levels[lvl]:
                x = run.temporal_tx(x, f"{pre}.ttx", c)
            skips.append(x)
        if lvl < spec.num_levels - 1:
            x = _conv2d(x, weights[f"enc{lvl}.down.w"], weights[f"enc{lvl}.down.b"], stride=2)
            skips.append(x)

    c_mid = spec.channels[-1]
    x = run.res2d(x, "mid.res0", temb)
    x = run.spatial_tx(x, "mid.stx", c_mid)
    x = run.tres(x, "mid.tres", temb)
    x = run.temporal_tx(x, "mid.ttx", c_mid)
    x = run.res2d(x, "mid.res1", temb)

    for lvl in reversed(range(spec.num_levels)):
        c = spec.channels[lvl]
        for blk in range(spec.dec_blocks(lvl)):
            pre = f"dec{lvl}.b{blk}"
            skip = skips.pop()
            if skip.shape[2:] != x.shape[2:]:
                raise ShapeError(f"skip connection shape drift at {pre}: {skip.shape} vs {x.shape}")
            x = np.concatenate([x, skip], axis=1)
            x = run.res2d(x, f"{pre}.res", temb)
            if spec.attn_levels[lvl]:
                x = run.spatial_tx(x, f"{pre}.stx", c)
            x = run.tres(x, f"{pre}.tres", temb)
            if spec.attn_levels[lvl]:
                x = run.temporal_tx(x, f"{pre}.ttx", c)
        if lvl > 0:
            x = _upsample2x(x)
            x = _conv2d(x, weights[f"dec{lvl}.up.w"], weights[f"dec{lvl}.up.b"])

    x = _channel_norm(x, weights["out_norm.g"], weights["out_norm.b"], spec.norm_eps)
    out = _conv2d(gelu(x), weights["conv_out.w"], weights["conv_out.b"])
    if out.shape != z.shape:
        raise ShapeError(f"internal consistency: output {out.shape} != input {z.shape}")
    return out


# ---------------------------------------------------------------------------
# On-disk form: spec.json + manifest.json + one VTEN file per parameter.


def save_model(dirpath, spec: ModelSpec, weights: dict) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    (d / "spec.json").write_text(json.dumps(spec.to_json(), indent=2))
    entries = []
    for name in weights:
        fname = name + ".vten"
        write_vten(d / fname, weights[name])
        entries.append({"name": name, "file": fname})
    manifest = {"format": "vcut-weights", "version": 1, "parameters": entries}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_model(dirpath):
    d = Path(dirpath)
    try:
        spec = ModelSpec.from_json(json.loads((d / "spec.json").read_text()))
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{dirpath}: missing {exc.filename}") from exc
    if manifest.get("format") != "vcut-weights" or manifest.get("version") != 1:
        raise FormatError(f"{dirpath}: not a weight manifest")
    weights = {}
    for entry in manifest["parameters"]:
        try:
            weights[entry["name"]] = read_vten(d / entry["file"])
        except FileNotFoundError as exc:
            raise FormatError(f"{dirpath}: manifest lists missing file {entry['file']}") from exc
    expected = {name for name, _, _, _ in iter_parameters(spec)}
    if set(weights) != expected:
        missing = sorted(expected - set(weights))[:4]
        extra = sorted(set(weights) - expected)[:4]
        raise FormatError(f"{dirpath}: manifest mismatch (missing {missing}, extra {extra})")
    return spec, weights
