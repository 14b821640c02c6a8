"""Desk-scale encoder: frozen random conv front-end + frozen sinusoidal
positions + trainable residual body + pooled heads (classifier, BYOL
projector/predictor)."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from serlab import tensor as T
from serlab.rng import RngStream

N_CLASSES = 4


class ModelError(ValueError):
    pass


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_blocks: int = 2
    n_mels: int = 80
    conv_kernel: int = 3
    conv_strides: tuple[int, int] = (2, 2)
    max_frames: int = 400
    block_kind: str = "feedforward_residual"  # | single_head_attention
    dropout_rate: float = 0.1
    proj_hidden: int = 128
    proj_dim: int = 32
    pool_excludes_padding: bool = False

    def validate(self) -> None:
        if self.block_kind not in ("feedforward_residual", "single_head_attention"):
            raise ModelError(f"unknown block kind {self.block_kind!r}")
        if self.d_model < 1 or self.n_blocks < 0 or self.max_frames < self.conv_kernel:
            raise ModelError("degenerate encoder config")

    def conv_out_len(self, t: int) -> int:
        pad = self.conv_kernel // 2
        for s in self.conv_strides:
            t = (t + 2 * pad - self.conv_kernel) // s + 1
        return t

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_strides"] = list(self.conv_strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        if "conv_strides" in d:
            d["conv_strides"] = tuple(d["conv_strides"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def sinusoid_table(n_pos: int, d_model: int) -> np.ndarray:
    """Standard sinusoidal positions; a shorter table is always the prefix of
    a longer one, which is what positional-table cropping relies on."""
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    table = np.zeros((n_pos, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(np.float32)


def _orthogonal_rows(rng: np.random.Generator, n_rows: int, n_cols: int) -> np.ndarray:
    """Semi-orthogonal matrix with orthonormal rows (n_rows <= n_cols)."""
    g = rng.standard_normal((n_cols, n_rows))
    q, r = np.linalg.qr(g)
    q *= np.sign(np.diag(r))
    return q.T.astype(np.float32)


def _linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return (rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)).astype(np.float32)


def init_params(config: EncoderConfig, stream: RngStream) -> T.ParameterStore:
    """Fresh parameter store; conv front-end and positional table are frozen."""
    config.validate()
    store = T.ParameterStore()
    d, k = config.d_model, config.conv_kernel
    rng = stream.split("conv").generator()
    store.add("conv1.w", _orthogonal_rows(rng, d, config.n_mels * k).reshape(d, config.n_mels, k), frozen=True)
    store.add("conv1.b", np.zeros(d, dtype=np.float32), frozen=True)
    store.add("conv2.w", _orthogonal_rows(rng, d, d * k).reshape(d, d, k), frozen=True)
    store.add("conv2.b", np.zeros(d, dtype=np.float32), frozen=True)
    store.add("posenc", sinusoid_table(config.conv_out_len(config.max_frames), d), frozen=True)
    for i in range(config.n_blocks):
        rng = stream.split("block", i).generator()
        if config.block_kind == "single_head_attention":
            store.add(f"block{i}.attn_ln_g", np.ones(d, dtype=np.float32))
            store.add(f"block{i}.attn_ln_b", np.zeros(d, dtype=np.float32))
            for nm in ("wq", "wk", "wv", "wo"):
                store.add(f"block{i}.{nm}", _linear(rng, d, d))
        store.add(f"block{i}.ln_g", np.ones(d, dtype=np.float32))
        store.add(f"block{i}.ln_b", np.zeros(d, dtype=np.float32))
        store.add(f"block{i}.w1", _linear(rng, d, 4 * d))
        store.add(f"block{i}.b1", np.zeros(4 * d, dtype=np.float32))
        store.add(f"block{i}.w2", _linear(rng, 4 * d, d))
        store.add(f"block{i}.b2", np.zeros(d, dtype=np.float32))
    rng = stream.split("head").generator()
    store.add("head.w1", _linear(rng, d, d))
    store.add("head.b1", np.zeros(d, dtype=np.float32))
    store.add("head.w2", _linear(rng, d, N_CLASSES))
    store.add("head.b2", np.zeros(N_CLASSES, dtype=np.float32))
    rng = stream.split("projector").generator()
    store.add("proj.w1", _linear(rng, d, config.proj_hidden))
    store.add("proj.b1", np.zeros(config.proj_hidden, dtype=np.float32))
    store.add("proj.w2", _linear(rng, config.proj_hidden, config.proj_dim))
    store.add("proj.b2", np.zeros(config.proj_dim, dtype=np.float32))
    rng = stream.split("predictor").generator()
    store.add("pred.w1", _linear(rng, config.proj_dim, config.proj_hidden))
    store.add("pred.b1", np.zeros(config.proj_hidden, dtype=np.float32))
    store.add("pred.w2", _linear(rng, config.proj_hidden, config.proj_dim))
    store.add("pred.b2", np.zeros(config.proj_dim, dtype=np.float32))
    return store


def _ff_sublayer(h, bound, prefix):
    ln = T.layer_norm(h, bound[f"{prefix}.ln_g"], bound[f"{prefix}.ln_b"])
    z = T.gelu(T.add(T.matmul(ln, bound[f"{prefix}.w1"]), bound[f"{prefix}.b1"]))
    return T.add(h, T.add(T.matmul(z, bound[f"{prefix}.w2"]), bound[f"{prefix}.b2"]))


def _attention_sublayer(h, bound, prefix, d_model):
    ln = T.layer_norm(h, bound[f"{prefix}.attn_ln_g"], bound[f"{prefix}.attn_ln_b"])
    q = T.matmul(ln, bound[f"{prefix}.wq"])
    k = T.matmul(ln, bound[f"{prefix}.wk"])
    v = T.matmul(ln, bound[f"{prefix}.wv"])
    scores = T.mul(T.matmul(q, T.transpose_last2(k)), 1.0 / np.sqrt(d_model))
    ctx = T.matmul(T.softmax(scores), v)
    return T.add(h, T.matmul(ctx, bound[f"{prefix}.wo"]))


def encode(
    batch: np.ndarray,
    bound: dict[str, T.Tensor],
    config: EncoderConfig,
    train_mode: bool = False,
    lengths: np.ndarray | None = None,
) -> T.Tensor:
    """Mel batch (B, n_mels, T) to pooled embeddings (B, d_model)."""
    if batch.ndim != 3 or batch.shape[1] != config.n_mels:
        raise ModelError(f"expected (B, {config.n_mels}, T) input, got {batch.shape}")
    if batch.shape[2] > config.max_frames:
        raise ModelError(f"{batch.shape[2]} frames exceed the {config.max_frames}-frame budget")
    pad = config.conv_kernel // 2
    h = T.gelu(T.conv1d(T.constant(batch), bound["conv1.w"], bound["conv1.b"],
                        stride=config.conv_strides[0], padding=pad))
    h = T.gelu(T.conv1d(h, bound["conv2.w"], bound["conv2.b"],
                        stride=config.conv_strides[1], padding=pad))
    h = T.transpose_last2(h)  # (B, T', d)
    t_out = h.value.shape[1]
    h = T.add(h, T.slice_rows(bound["posenc"], 0, t_out))
    for i in range(config.n_blocks):
        if config.block_kind == "single_head_attention":
            h = _attention_sublayer(h, bound, f"block{i}", config.d_model)
        h = _ff_sublayer(h, bound, f"block{i}")
    mask = None
    if config.pool_excludes_padding and lengths is not None:
        pad_out = np.array([config.conv_out_len(int(n)) for n in lengths])
        mask = (np.arange(t_out)[None, :] < pad_out[:, None]).astype(batch.dtype)
    return T.mean_pool_time(h, mask)


def classify(
    emb: T.Tensor,
    bound: dict[str, T.Tensor],
    config: EncoderConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> T.Tensor:
    """Two fully connected layers with dropout between them; (B, 4) logits."""
    h = T.relu(T.add(T.matmul(emb, bound["head.w1"]), bound["head.b1"]))
    h = T.dropout(h, config.dropout_rate, train_mode, rng)
    return T.add(T.matmul(h, bound["head.w2"]), bound["head.b2"])


def project_predict(
    emb: T.Tensor, bound: dict[str, T.Tensor], role: str = "projector"
) -> T.Tensor:
    """BYOL heads: linear -> batch standardize -> gelu -> linear.

    The online network chains projector then predictor; the target network
    stops at the projector.
    """
    prefix = {"projector": "proj", "predictor": "pred"}.get(role)
    if prefix is None:
        raise ModelError(f"role must be 'projector' or 'predictor', got {role!r}")
    h = T.add(T.matmul(emb, bound[f"{prefix}.w1"]), bound[f"{prefix}.b1"])
    h = T.gelu(T.batch_standardize(h))
    return T.add(T.matmul(h, bound[f"{prefix}.w2"]), bound[f"{prefix}.b2"])
