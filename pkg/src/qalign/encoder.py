"""Tiny transformer encoder with a span-prediction head and a tap point.

Pure numpy, float64 throughout.  Residual blocks use the classic
post-layer-norm ordering with a GELU feed-forward (tanh approximation, whose
exact derivative is used in the backward pass).  ``forward`` exposes two
read-outs from one shared parameter set: per-token start/end logits from the
final layer, and the hidden state after block ``tap_layer`` ("tapped"), which
feeds the pooled embeddings used by the contrastive objective.

``backward`` computes exact reverse-mode gradients of any scalar loss given
the upstream gradients at the two read-out points; it is verified against
central finite differences in the test suite.

Parameters are a plain ``{name: ndarray}`` dict in the canonical order given
by :func:`param_spec`.  Checkpoints are a JSON manifest (config, seed, step,
tensor names/shapes/dtypes) plus a flat little-endian blob holding the raw
tensor bytes in manifest order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

LN_EPS = 1e-12
MASK_NEG = -1e30  # pre-softmax score for masked keys; underflows to exactly 0
_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715
_CKPT_MAGIC = "qalign-checkpoint"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ffn: int = 256
    max_positions: int = 512
    tap_layer: int = 3

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise InputError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if not 1 <= self.tap_layer <= self.n_layers:
            raise InputError(
                f"tap_layer={self.tap_layer} outside [1, {self.n_layers}]"
            )


def param_spec(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, init-kind) list; kind is gauss, zeros, or ones."""
    d, f = cfg.d_model, cfg.d_ffn
    spec = [
        ("embed.token", (cfg.vocab_size, d), "gauss"),
        ("embed.position", (cfg.max_positions, d), "gauss"),
        ("embed.segment", (2, d), "gauss"),
    ]
    for i in range(1, cfg.n_layers + 1):
        for proj in ("q", "k", "v", "o"):
            spec.append((f"layer{i}.attn.w{proj}", (d, d), "gauss"))
            spec.append((f"layer{i}.attn.b{proj}", (d,), "zeros"))
        spec.append((f"layer{i}.ln1.gain", (d,), "ones"))
        spec.append((f"layer{i}.ln1.bias", (d,), "zeros"))
        spec.append((f"layer{i}.ffn.w1", (d, f), "gauss"))
        spec.append((f"layer{i}.ffn.b1", (f,), "zeros"))
        spec.append((f"layer{i}.ffn.w2", (f, d), "gauss"))
        spec.append((f"layer{i}.ffn.b2", (d,), "zeros"))
        spec.append((f"layer{i}.ln2.gain", (d,), "ones"))
        spec.append((f"layer{i}.ln2.bias", (d,), "zeros"))
    spec.append(("qa.weight", (d, 2), "gauss"))
    spec.append(("qa.bias", (2,), "zeros"))
    return spec


def init_params(cfg: EncoderConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded init: N(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, kind in param_spec(cfg):
        if kind == "gauss":
            params[name] = rng.normal(0.0, 0.02, size=shape)
        elif kind == "zeros":
            params[name] = np.zeros(shape)
        else:
            params[name] = np.ones(shape)
    return params


def num_params(cfg: EncoderConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_spec(cfg))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    th = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def _layernorm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv)


def _layernorm_backward(dy, cache, gain):
    xhat, inv = cache
    dgain = (dy * xhat).sum(axis=(0, 1))
    dbias = dy.sum(axis=(0, 1))
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


@dataclass
class LayerCache:
    x0: np.ndarray
    qh: np.ndarray
    kh: np.ndarray
    vh: np.ndarray
    probs: np.ndarray
    ctx: np.ndarray
    x1: np.ndarray
    u: np.ndarray
    a: np.ndarray
    ln1: tuple
    ln2: tuple


@dataclass
class ForwardCache:
    ids: np.ndarray
    attention_mask: np.ndarray
    segment_ids: np.ndarray
    layers: list[LayerCache]
    final: np.ndarray


@dataclass
class ForwardResult:
    start_logits: np.ndarray  # [n, t]
    end_logits: np.ndarray  # [n, t]
    tapped: np.ndarray  # [n, t, d], hidden state after block tap_layer
    cache: ForwardCache | None


def _split_heads(x, n_heads):
    n, t, d = x.shape
    return x.reshape(n, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, t, h * dh)


def _check_batch(cfg, ids, attention_mask, segment_ids):
    if ids.ndim != 2:
        raise InputError(f"ids must be [n, t], got shape {ids.shape}")
    if attention_mask.shape != ids.shape or segment_ids.shape != ids.shape:
        raise InputError("ids, attention_mask, and segment_ids must share one shape")
    if ids.shape[1] > cfg.max_positions:
        raise InputError(
            f"sequence length {ids.shape[1]} exceeds max_positions={cfg.max_positions}"
        )
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError("token id outside [0, vocab_size)")
    if segment_ids.min() < 0 or segment_ids.max() > 1:
        raise InputError("segment ids must be 0 or 1")


def forward(
    params: dict[str, np.ndarray],
    cfg: EncoderConfig,
    ids: np.ndarray,
    attention_mask: np.ndarray,
    segment_ids: np.ndarray,
    want_cache: bool = False,
) -> ForwardResult:
    """Run the encoder; attention gives masked (pad) keys exactly zero weight."""
    ids = np.asarray(ids, dtype=np.int64)
    attention_mask = np.asarray(attention_mask, dtype=np.float64)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    _check_batch(cfg, ids, attention_mask, segment_ids)
    n, t = ids.shape
    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)

    x = (
        params["embed.token"][ids]
        + params["embed.position"][:t][None, :, :]
        + params["embed.segment"][segment_ids]
    )
    add_mask = (1.0 - attention_mask)[:, None, None, :] * MASK_NEG

    layer_caches = []
    tapped = None
    for i in range(1, cfg.n_layers + 1):
        prefix = f"layer{i}."
        x0 = x
        q = x0 @ params[prefix + "attn.wq"] + params[prefix + "attn.bq"]
        k = x0 @ params[prefix + "attn.wk"] + params[prefix + "attn.bk"]
        v = x0 @ params[prefix + "attn.wv"] + params[prefix + "attn.bv"]
        qh, kh, vh = (_split_heads(z, cfg.n_heads) for z in (q, k, v))
        scores = qh @ kh.transpose(0, 1, 3, 2) * scale + add_mask
        probs = _softmax(scores)
        ctx = _merge_heads(probs @ vh)
        proj = ctx @ params[prefix + "attn.wo"] + params[prefix + "attn.bo"]
        x1, ln1 = _layernorm_forward(
            x0 + proj, params[prefix + "ln1.gain"], params[prefix + "ln1.bias"]
        )
        u = x1 @ params[prefix + "ffn.w1"] + params[prefix + "ffn.b1"]
        a = _gelu(u)
        f = a @ params[prefix + "ffn.w2"] + params[prefix + "ffn.b2"]
        x, ln2 = _layernorm_forward(
            x1 + f, params[prefix + "ln2.gain"], params[prefix + "ln2.bias"]
        )
        if want_cache:
            layer_caches.append(LayerCache(x0, qh, kh, vh, probs, ctx, x1, u, a, ln1, ln2))
        if i == cfg.tap_layer:
            tapped = x

    logits = x @ params["qa.weight"] + params["qa.bias"]
    cache = None
    if want_cache:
        cache = ForwardCache(ids, attention_mask, segment_ids, layer_caches, x)
    return ForwardResult(logits[:, :, 0], logits[:, :, 1], tapped, cache)


def gap(tapped: np.ndarray, attention_mask: np.ndarray) -> np.ndarray:
    """Masked mean over token positions: one pooled vector per row."""
    mask = np.asarray(attention_mask, dtype=np.float64)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise InputError("gap requires at least one active position per row")
    return (tapped * mask[:, :, None]).sum(axis=1) / counts[:, None]


def gap_backward(d_pooled: np.ndarray, attention_mask: np.ndarray) -> np.ndarray:
    """Gradient of :func:`gap` with respect to the token embeddings."""
    mask = np.asarray(attention_mask, dtype=np.float64)
    counts = mask.sum(axis=1)
    return d_pooled[:, None, :] * (mask / counts[:, None])[:, :, None]


def backward(
    params: dict[str, np.ndarray],
    cfg: EncoderConfig,
    cache: ForwardCache,
    d_start_logits: np.ndarray | None = None,
    d_end_logits: np.ndarray | None = None,
    d_tapped: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every parameter tensor.

    ``d_start_logits``/``d_end_logits`` are the loss gradients at the QA
    head; ``d_tapped`` is the loss gradient at the tap read-out.  Either side
    may be omitted (treated as zero), so one routine serves both the task
    batch and the paired batch (which contributes only through the tap).
    """
    n, t = cache.ids.shape
    scale = 1.0 / np.sqrt(cfg.d_model // cfg.n_heads)
    grads: dict[str, np.ndarray] = {}

    if d_start_logits is None and d_end_logits is None:
        dx = np.zeros_like(cache.final)
        grads["qa.weight"] = np.zeros_like(params["qa.weight"])
        grads["qa.bias"] = np.zeros_like(params["qa.bias"])
    else:
        zeros = np.zeros((n, t))
        dlogits = np.stack(
            [
                zeros if d_start_logits is None else d_start_logits,
                zeros if d_end_logits is None else d_end_logits,
            ],
            axis=-1,
        )
        dx = dlogits @ params["qa.weight"].T
        grads["qa.weight"] = np.einsum("ntd,ntk->dk", cache.final, dlogits)
        grads["qa.bias"] = dlogits.sum(axis=(0, 1))

    for i in range(cfg.n_layers, 0, -1):
        if i == cfg.tap_layer and d_tapped is not None:
            dx = dx + d_tapped
        prefix = f"layer{i}."
        lc = cache.layers[i - 1]

        ds2, dg2, db2 = _layernorm_backward(dx, lc.ln2, params[prefix + "ln2.gain"])
        grads[prefix + "ln2.gain"] = dg2
        grads[prefix + "ln2.bias"] = db2
        dx1 = ds2.copy()
        da = ds2 @ params[prefix + "ffn.w2"].T
        grads[prefix + "ffn.w2"] = np.einsum("ntf,ntd->fd", lc.a, ds2)
        grads[prefix + "ffn.b2"] = ds2.sum(axis=(0, 1))
        du = da * _gelu_grad(lc.u)
        grads[prefix + "ffn.w1"] = np.einsum("ntd,ntf->df", lc.x1, du)
        grads[prefix + "ffn.b1"] = du.sum(axis=(0, 1))
        dx1 += du @ params[prefix + "ffn.w1"].T

        ds1, dg1, db1 = _layernorm_backward(dx1, lc.ln1, params[prefix + "ln1.gain"])
        grads[prefix + "ln1.gain"] = dg1
        grads[prefix + "ln1.bias"] = db1
        dx0 = ds1.copy()
        dctx = ds1 @ params[prefix + "attn.wo"].T
        grads[prefix + "attn.wo"] = np.einsum("ntd,nte->de", lc.ctx, ds1)
        grads[prefix + "attn.bo"] = ds1.sum(axis=(0, 1))

        dctxh = _split_heads(dctx, cfg.n_heads)
        dprobs = dctxh @ lc.vh.transpose(0, 1, 3, 2)
        dvh = lc.probs.transpose(0, 1, 3, 2) @ dctxh
        dscores = lc.probs * (dprobs - (dprobs * lc.probs).sum(axis=-1, keepdims=True))
        dqh = (dscores @ lc.kh) * scale
        dkh = (dscores.transpose(0, 1, 3, 2) @ lc.qh) * scale
        for dz, proj in ((dqh, "q"), (dkh, "k"), (dvh, "v")):
            dz_flat = _merge_heads(dz)
            grads[prefix + f"attn.w{proj}"] = np.einsum("ntd,nte->de", lc.x0, dz_flat)
            grads[prefix + f"attn.b{proj}"] = dz_flat.sum(axis=(0, 1))
            dx0 += dz_flat @ params[prefix + f"attn.w{proj}"].T
        dx = dx0

    grads["embed.token"] = np.zeros_like(params["embed.token"])
    np.add.at(grads["embed.token"], cache.ids, dx)
    grads["embed.position"] = np.zeros_like(params["embed.position"])
    grads["embed.position"][:t] = dx.sum(axis=0)
    grads["embed.segment"] = np.zeros_like(params["embed.segment"])
    np.add.at(grads["embed.segment"], cache.segment_ids, dx)
    return {name: grads[name] for name, _, _ in param_spec(cfg)}


# ---------------------------------------------------------------------------
# Tensor blobs and checkpoints


def pack_tensors(tensors: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    """Flatten named tensors into (manifest entries, little-endian blob)."""
    entries = []
    chunks = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        )
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return entries, b"".join(chunks)


def unpack_tensors(entries: list[dict], blob: bytes) -> dict[str, np.ndarray]:
    tensors = {}
    cursor = 0
    for entry in entries:
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(blob[cursor : cursor + nbytes], dtype=dtype).reshape(
            entry["shape"]
        )
        tensors[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
        cursor += nbytes
    if cursor != len(blob):
        raise InputError("tensor blob size does not match its manifest")
    return tensors


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: EncoderConfig
    seed: int
    step: int


def save_checkpoint(
    out_dir: str | Path,
    params: dict[str, np.ndarray],
    cfg: EncoderConfig,
    seed: int,
    step: int,
) -> Path:
    """Write manifest.json + tensors.bin into ``out_dir`` and return it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, blob = pack_tensors(params)
    manifest = {
        "format": _CKPT_MAGIC,
        "version": 1,
        "config": asdict(cfg),
        "seed": seed,
        "step": step,
        "tensors": entries,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "tensors.bin", "wb") as fh:
        fh.write(blob)
    return out_dir


def load_checkpoint(ckpt_dir: str | Path) -> Checkpoint:
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / "manifest.json"
    if not manifest_path.is_file():
        raise InputError(f"checkpoint manifest not found: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != _CKPT_MAGIC:
        raise InputError(f"{manifest_path}: not a checkpoint manifest")
    with open(ckpt_dir / "tensors.bin", "rb") as fh:
        blob = fh.read()
    params = unpack_tensors(manifest["tensors"], blob)
    return Checkpoint(
        params=params,
        config=EncoderConfig(**manifest["config"]),
        seed=manifest["seed"],
        step=manifest["step"],
    )
