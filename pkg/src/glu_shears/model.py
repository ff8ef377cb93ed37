"""GLU MLP forward pass and a minimal decoder-only transformer.

The transformer is deliberately small: token embedding, pre-norm blocks
(causal multi-head attention with rotary position encoding, then a gated
MLP), a final norm, and an output head. It exists to exercise pruning,
evaluation, and profiling end to end at desk scale; it is not a training
stack. All weights are stored output-major, [out_features, in_features],
matching the checkpoint layout the archive format targets, so removing a
neuron means dropping a row of the gate/up projections and the matching
column of the down projection.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._validation import as_f32_matrix
from .archive import TensorArchive, read_archive, write_archive
from .tensors import ShapeError, hadamard, matmul, ordered_sum, silu

__all__ = [
    "ModelConfig",
    "GluLayer",
    "TransformerBlock",
    "ToyTransformer",
    "TOY_CONFIG",
    "glu_forward",
    "rmsnorm",
    "block_forward",
    "model_logits",
    "init_toy_model",
    "save_model",
    "load_model",
    "write_model_dir",
    "read_model_dir",
    "config_to_json",
    "config_from_json",
]


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int
    intermediate_size: int
    num_layers: int
    num_heads: int
    vocab_size: int
    rope_theta: float = 10000.0
    rms_eps: float = 1e-5

    def __post_init__(self):
        if self.intermediate_size < 1:
            raise ValueError(f"intermediate_size must be >= 1, got {self.intermediate_size}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.num_heads < 1 or self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} must be divisible by "
                f"num_heads {self.num_heads}"
            )
        if self.vocab_size < 1:
            raise ValueError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.rope_theta <= 0 or self.rms_eps <= 0:
            raise ValueError("rope_theta and rms_eps must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    @property
    def expansion_ratio(self) -> float:
        return self.intermediate_size / self.hidden_size


# Smallest shape that exercises every code path; baseline ratio 4.0x.
TOY_CONFIG = ModelConfig(
    hidden_size=64,
    intermediate_size=256,
    num_layers=2,
    num_heads=4,
    vocab_size=259,
)

_CONFIG_FIELDS = tuple(ModelConfig.__dataclass_fields__)


def config_to_json(config: ModelConfig) -> str:
    return json.dumps(asdict(config), indent=2) + "\n"


def config_from_json(text: str) -> ModelConfig:
    doc = json.loads(text)
    if not isinstance(doc, dict) or set(doc) != set(_CONFIG_FIELDS):
        raise ValueError(
            f"config document must contain exactly the fields {sorted(_CONFIG_FIELDS)}"
        )
    return ModelConfig(**doc)


@dataclass
class GluLayer:
    """The (gate, up, down) projection triple of one MLP block."""

    w_gate: np.ndarray  # [d_ff, d_model]
    w_up: np.ndarray  # [d_ff, d_model]
    w_down: np.ndarray  # [d_model, d_ff]

    def __post_init__(self):
        self.w_gate = as_f32_matrix(self.w_gate, "w_gate")
        self.w_up = as_f32_matrix(self.w_up, "w_up")
        self.w_down = as_f32_matrix(self.w_down, "w_down")
        self.validate()

    def validate(self) -> None:
        if self.w_gate.shape != self.w_up.shape:
            raise ShapeError(
                f"gate and up projections must share a shape: "
                f"{self.w_gate.shape} vs {self.w_up.shape}"
            )
        d_ff, d_model = self.w_gate.shape
        if self.w_down.shape != (d_model, d_ff):
            raise ShapeError(
                f"down projection shape {self.w_down.shape} incompatible with "
                f"gate/up shape {self.w_gate.shape}"
            )

    @property
    def d_ff(self) -> int:
        return self.w_gate.shape[0]

    @property
    def d_model(self) -> int:
        return self.w_gate.shape[1]


@dataclass
class TransformerBlock:
    w_q: np.ndarray  # [d_model, d_model]
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    input_norm: np.ndarray  # [d_model]
    post_attn_norm: np.ndarray  # [d_model]
    mlp: GluLayer


@dataclass
class ToyTransformer:
    config: ModelConfig
    embed: np.ndarray  # [vocab, d_model]
    blocks: list[TransformerBlock]
    final_norm: np.ndarray
    lm_head: np.ndarray  # [vocab, d_model]


def glu_forward(x, layer: GluLayer) -> np.ndarray:
    """Gated MLP: (x @ W_up^T) elementwise-gated by SiLU(x @ W_gate^T), then down.

    Accepts a single vector or a row batch [n, d_model]; returns the same rank.
    """
    arr = np.asarray(x, dtype=np.float32)
    was_vector = arr.ndim == 1
    if was_vector:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != layer.d_model:
        raise ShapeError(
            f"input width {arr.shape[-1] if arr.ndim else '?'} does not match "
            f"d_model {layer.d_model}"
        )
    up = matmul(arr, layer.w_up.T)
    gate = silu(matmul(arr, layer.w_gate.T))
    out = matmul(hadamard(up, gate), layer.w_down.T)
    return out[0] if was_vector else out


def rmsnorm(x, weight, eps: float) -> np.ndarray:
    """x / sqrt(mean(x^2) + eps), scaled by a per-channel weight."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    arr = np.asarray(x, dtype=np.float32)
    w = np.asarray(weight, dtype=np.float32)
    ms = ordered_sum(arr * arr, axis=-1) / np.float32(arr.shape[-1])
    return arr / np.sqrt(ms + np.float32(eps))[..., None] * w


def _linear(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """y = x @ w.T over the last axis, any leading batch shape."""
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    out = matmul(flat, w.T)
    return out.reshape(*lead, w.shape[0])


@lru_cache(maxsize=32)
def _rope_tables(seq_len: int, head_dim: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = theta ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.arange(seq_len, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles).astype(np.float32), np.sin(angles).astype(np.float32)


def _apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate head-dim pairs (half-split convention); x is [B, H, L, hd]."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1)


def _attention(x: np.ndarray, block: TransformerBlock, config: ModelConfig) -> np.ndarray:
    """Causal multi-head attention with rotary positions; x is [B, L, d_model]."""
    batch, seq_len, d_model = x.shape
    heads, head_dim = config.num_heads, config.head_dim

    def split(h):
        return h.reshape(batch, seq_len, heads, head_dim).transpose(0, 2, 1, 3)

    q = split(_linear(x, block.w_q))
    k = split(_linear(x, block.w_k))
    v = split(_linear(x, block.w_v))
    cos, sin = _rope_tables(seq_len, head_dim, config.rope_theta)
    q = _apply_rope(q, cos, sin)
    k = _apply_rope(k, cos, sin)

    scores = np.zeros((batch, heads, seq_len, seq_len), dtype=np.float32)
    for t in range(head_dim):
        scores += q[:, :, :, t, None] * k[:, :, None, :, t]
    scores *= np.float32(1.0 / math.sqrt(head_dim))
    future = np.triu(np.ones((seq_len, seq_len), dtype=bool), k=1)
    scores = np.where(future, np.float32(-np.inf), scores)

    peak = scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores - peak)
    weights /= ordered_sum(weights, axis=-1)[..., None]

    out = np.zeros((batch, heads, seq_len, head_dim), dtype=np.float32)
    for j in range(seq_len):
        out += weights[:, :, :, j, None] * v[:, :, None, j, :]
    merged = out.transpose(0, 2, 1, 3).reshape(batch, seq_len, d_model)
    return _linear(merged, block.w_o)


def block_forward(x, block: TransformerBlock, config: ModelConfig) -> np.ndarray:
    """Pre-norm residual block: norm -> attention -> residual -> norm -> MLP -> residual."""
    arr = np.asarray(x, dtype=np.float32)
    was_2d = arr.ndim == 2
    if was_2d:
        arr = arr[None, :, :]
    if arr.shape[-1] != config.hidden_size:
        raise ShapeError(
            f"sequence width {arr.shape[-1]} does not match hidden_size {config.hidden_size}"
        )
    h = arr + _attention(rmsnorm(arr, block.input_norm, config.rms_eps), block, config)
    batch, seq_len, d_model = h.shape
    mlp_in = rmsnorm(h, block.post_attn_norm, config.rms_eps)
    mlp_out = glu_forward(mlp_in.reshape(-1, d_model), block.mlp).reshape(batch, seq_len, d_model)
    out = h + mlp_out
    return out[0] if was_2d else out


def model_logits(model: ToyTransformer, token_ids) -> np.ndarray:
    """Per-position logits for a sequence [L] or batch [B, L] of token ids."""
    ids = np.asarray(token_ids, dtype=np.int64)
    was_1d = ids.ndim == 1
    if was_1d:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise ValueError("token ids must be a non-empty sequence or batch of sequences")
    if ids.size and (ids.min() < 0 or ids.max() >= model.config.vocab_size):
        raise ValueError(
            f"token id out of range: vocab size is {model.config.vocab_size}, "
            f"got ids in [{ids.min()}, {ids.max()}]"
        )
    x = model.embed[ids].astype(np.float32)
    for block in model.blocks:
        x = block_forward(x, block, model.config)
    x = rmsnorm(x, model.final_norm, model.config.rms_eps)
    logits = _linear(x, model.lm_head)
    return logits[0] if was_1d else logits


def init_toy_model(seed: int, config: ModelConfig | None = None) -> ToyTransformer:
    """Seeded toy model; weights ~ N(0, 0.02), norm weights at one.

    Draw order is fixed (embedding, per-block q/k/v/o then gate/up/down,
    output head) so one seed always produces one model.
    """
    cfg = config or TOY_CONFIG
    rng = np.random.default_rng(seed)
    d, d_ff, vocab = cfg.hidden_size, cfg.intermediate_size, cfg.vocab_size

    def draw(*shape):
        return rng.normal(0.0, 0.02, size=shape).astype(np.float32)

    embed = draw(vocab, d)
    blocks = []
    for _ in range(cfg.num_layers):
        blocks.append(
            TransformerBlock(
                w_q=draw(d, d),
                w_k=draw(d, d),
                w_v=draw(d, d),
                w_o=draw(d, d),
                input_norm=np.ones(d, dtype=np.float32),
                post_attn_norm=np.ones(d, dtype=np.float32),
                mlp=GluLayer(w_gate=draw(d_ff, d), w_up=draw(d_ff, d), w_down=draw(d, d_ff)),
            )
        )
    final_norm = np.ones(d, dtype=np.float32)
    lm_head = draw(vocab, d)
    return ToyTransformer(cfg, embed, blocks, final_norm, lm_head)


_EMBED = "model.embed_tokens.weight"
_FINAL_NORM = "model.norm.weight"
_LM_HEAD = "lm_head.weight"


def _layer_names(i: int) -> dict[str, str]:
    base = f"model.layers.{i}"
    return {
        "q": f"{base}.self_attn.q_proj.weight",
        "k": f"{base}.self_attn.k_proj.weight",
        "v": f"{base}.self_attn.v_proj.weight",
        "o": f"{base}.self_attn.o_proj.weight",
        "input_norm": f"{base}.input_layernorm.weight",
        "post_attn_norm": f"{base}.post_attention_layernorm.weight",
        "gate": f"{base}.mlp.gate_proj.weight",
        "up": f"{base}.mlp.up_proj.weight",
        "down": f"{base}.mlp.down_proj.weight",
    }


def save_model(model: ToyTransformer, kind: str = "F32") -> TensorArchive:
    """Pack all weights into an archive under the layer naming convention."""
    archive = TensorArchive()
    archive.add_array(_EMBED, model.embed, kind)
    for i, block in enumerate(model.blocks):
        names = _layer_names(i)
        archive.add_array(names["q"], block.w_q, kind)
        archive.add_array(names["k"], block.w_k, kind)
        archive.add_array(names["v"], block.w_v, kind)
        archive.add_array(names["o"], block.w_o, kind)
        archive.add_array(names["input_norm"], block.input_norm, kind)
        archive.add_array(names["post_attn_norm"], block.post_attn_norm, kind)
        archive.add_array(names["gate"], block.mlp.w_gate, kind)
        archive.add_array(names["up"], block.mlp.w_up, kind)
        archive.add_array(names["down"], block.mlp.w_down, kind)
    archive.add_array(_FINAL_NORM, model.final_norm, kind)
    archive.add_array(_LM_HEAD, model.lm_head, kind)
    return archive


def _take(archive: TensorArchive, name: str, shape: tuple[int, ...]) -> np.ndarray:
    if name not in archive:
        raise ValueError(f"archive is missing tensor '{name}'")
    arr = archive.get_array(name)
    if arr.shape != shape:
        raise ValueError(f"tensor '{name}' has shape {arr.shape}, config requires {shape}")
    return arr


def load_model(archive: TensorArchive, config: ModelConfig) -> ToyTransformer:
    """Bind archive tensors against a config; BF16 entries are upcast to F32."""
    d, d_ff, vocab = config.hidden_size, config.intermediate_size, config.vocab_size
    embed = _take(archive, _EMBED, (vocab, d))
    blocks = []
    for i in range(config.num_layers):
        names = _layer_names(i)
        blocks.append(
            TransformerBlock(
                w_q=_take(archive, names["q"], (d, d)),
                w_k=_take(archive, names["k"], (d, d)),
                w_v=_take(archive, names["v"], (d, d)),
                w_o=_take(archive, names["o"], (d, d)),
                input_norm=_take(archive, names["input_norm"], (d,)),
                post_attn_norm=_take(archive, names["post_attn_norm"], (d,)),
                mlp=GluLayer(
                    w_gate=_take(archive, names["gate"], (d_ff, d)),
                    w_up=_take(archive, names["up"], (d_ff, d)),
                    w_down=_take(archive, names["down"], (d, d_ff)),
                ),
            )
        )
    final_norm = _take(archive, _FINAL_NORM, (d,))
    lm_head = _take(archive, _LM_HEAD, (vocab, d))
    return ToyTransformer(config, embed, blocks, final_norm, lm_head)


def write_model_dir(model: ToyTransformer, directory, kind: str = "F32") -> Path:
    """Write config.json plus model.safetensors into a directory."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_to_json(model.config))
    write_archive(save_model(model, kind), out / "model.safetensors")
    return out


def read_model_dir(directory) -> ToyTransformer:
    base = Path(directory)
    config = config_from_json((base / "config.json").read_text())
    archive = read_archive(base / "model.safetensors")
    return load_model(archive, config)
