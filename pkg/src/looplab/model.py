"""GPT-2-style causal decoder plus the prompt read-in/read-out maps.

The backbone is pre-norm: x + attn(ln1(x)), then x + mlp(ln2(x)), with a
final layer norm after the last block. Positional embeddings are learned
and added by ``backbone_forward`` itself (behind a flag) so that looped
callers can re-apply them on every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as en
from .engine import ShapeError, Tensor
from .rng import derive_rng
from .tasks import EncodedPrompt


@dataclass(frozen=True)
class ModelConfig:
    d_embed: int = 64
    heads: int = 4
    layers: int = 1
    d_max: int = 5
    k_max: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.d_embed < 1 or self.heads < 1:
            raise ValueError("d_embed and heads must be >= 1")
        if self.d_embed % self.heads != 0:
            raise ValueError(
                f"d_embed ({self.d_embed}) must be divisible by heads ({self.heads})")
        if self.layers < 0:
            raise ValueError("layers must be >= 0 (0 is a test-only identity stack)")
        if self.d_max < 1 or self.k_max < 1:
            raise ValueError("d_max and k_max must be >= 1")

    @property
    def n_positions(self) -> int:
        return 2 * self.k_max + 1

    @property
    def head_dim(self) -> int:
        return self.d_embed // self.heads

    def to_dict(self) -> dict:
        return {"d_embed": self.d_embed, "heads": self.heads, "layers": self.layers,
                "d_max": self.d_max, "k_max": self.k_max, "seed": self.seed}


_PROJ_STD = 0.02


def _weight_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D = cfg.d_embed
    shapes: dict[str, tuple[int, ...]] = {
        "read_in.w": (cfg.d_max, D),
        "read_in.b": (D,),
        "pos": (cfg.n_positions, D),
    }
    for i in range(cfg.layers):
        p = f"layer{i}."
        shapes[p + "ln1.g"] = (D,)
        shapes[p + "ln1.b"] = (D,)
        shapes[p + "attn.wq"] = (D, D)
        shapes[p + "attn.wk"] = (D, D)
        shapes[p + "attn.wv"] = (D, D)
        shapes[p + "attn.bq"] = (D,)
        shapes[p + "attn.bk"] = (D,)
        shapes[p + "attn.bv"] = (D,)
        shapes[p + "attn.wo"] = (D, D)
        shapes[p + "attn.bo"] = (D,)
        shapes[p + "ln2.g"] = (D,)
        shapes[p + "ln2.b"] = (D,)
        shapes[p + "mlp.w1"] = (D, 4 * D)
        shapes[p + "mlp.b1"] = (4 * D,)
        shapes[p + "mlp.w2"] = (4 * D, D)
        shapes[p + "mlp.b2"] = (D,)
    if cfg.layers > 0:
        shapes["lnf.g"] = (D,)
        shapes["lnf.b"] = (D,)
    shapes["read_out.w"] = (D, 1)
    shapes["read_out.b"] = (1,)
    return shapes


class ModelWeights:
    """Named parameter collection; checkpointable bit-exactly."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def named(self) -> dict[str, Tensor]:
        return self.params

    def grads(self) -> dict[str, np.ndarray]:
        return {n: p.grad for n, p in self.params.items() if p.grad is not None}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> "ModelWeights":
        params = {n: en.parameter(p.data.astype(dtype), dtype=dtype)
                  for n, p in self.params.items()}
        return ModelWeights(self.config, params)


def init_weights(config: ModelConfig, seed: int | None = None,
                 dtype=np.float32) -> ModelWeights:
    """Deterministic init: N(0, 0.02) projections and embeddings, zero
    biases, unit layer-norm gains."""
    seed = config.seed if seed is None else seed
    rng = derive_rng(seed, "model_init")
    params: dict[str, Tensor] = {}
    for name, shape in _weight_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("g",):
            data = np.ones(shape)
        elif leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, _PROJ_STD, size=shape)
        params[name] = en.parameter(data.astype(dtype), dtype=dtype)
    return ModelWeights(config, params)


def parameter_counts(config: ModelConfig) -> dict[str, int]:
    """Closed-form parameter tally.

    backbone = L*(12 D^2 + 13 D) + 2 D  (blocks plus final norm; the
    convention that reproduces the reference 9.48M / 0.79M figures).
    Positional embeddings and the read-in/read-out maps are reported
    separately and in the combined total.
    """
    D, L = config.d_embed, config.layers
    backbone = L * (12 * D * D + 13 * D) + (2 * D if L > 0 else 0)
    read_in = config.d_max * D + D
    read_out = D + 1
    positional = config.n_positions * D
    return {
        "backbone": backbone,
        "read_in": read_in,
        "read_out": read_out,
        "positional": positional,
        "total": backbone + read_in + read_out + positional,
    }


def count_parameters(weights: ModelWeights) -> int:
    return sum(p.data.size for p in weights.params.values())


# ---------------------------------------------------------------------------
# forward maps
# ---------------------------------------------------------------------------


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected (S, d) or (B, S, d), got {x.shape}")


def embed_prompt(prompt: EncodedPrompt | np.ndarray, weights: ModelWeights) -> Tensor:
    """Linear read-in of the token matrix; positional embeddings are NOT
    added here (the loop adds them on every iteration)."""
    cfg = weights.config
    tokens = prompt.tokens if isinstance(prompt, EncodedPrompt) else prompt
    arr, squeeze = _as_batched(np.asarray(tokens))
    if arr.shape[-1] != cfg.d_max:
        raise ShapeError(
            f"prompt token width {arr.shape[-1]} != d_max {cfg.d_max}")
    if arr.shape[-2] > cfg.n_positions:
        raise ShapeError(
            f"prompt length {arr.shape[-2]} exceeds n_positions {cfg.n_positions} (k > k_max)")
    dtype = weights["read_in.w"].dtype
    t = en.Tensor(arr.astype(dtype))
    out = en.add(en.matmul(t, weights["read_in.w"]), weights["read_in.b"])
    if squeeze:
        out = en.reshape(out, out.shape[1:])
    return out


def causal_mask(s: int, dtype) -> Tensor:
    """Additive mask: large negative above the diagonal so softmax rows
    put exactly zero weight on future positions."""
    m = np.triu(np.full((s, s), -1e30), k=1).astype(dtype)
    return en.Tensor(m)


def _attention(x: Tensor, weights: ModelWeights, prefix: str,
               capture: dict | None) -> Tensor:
    cfg = weights.config
    B, S, D = x.shape
    H, Dh = cfg.heads, cfg.head_dim

    def heads(t: Tensor) -> Tensor:
        return en.transpose(en.reshape(t, (B, S, H, Dh)), (0, 2, 1, 3))

    q = heads(en.add(en.matmul(x, weights[prefix + "attn.wq"]), weights[prefix + "attn.bq"]))
    k = heads(en.add(en.matmul(x, weights[prefix + "attn.wk"]), weights[prefix + "attn.bk"]))
    v = heads(en.add(en.matmul(x, weights[prefix + "attn.wv"]), weights[prefix + "attn.bv"]))

    scores = en.matmul(q, en.swap_last(k)) * float(1.0 / np.sqrt(Dh))
    scores = en.add(scores, causal_mask(S, x.dtype))
    attn = en.softmax_rows(scores)
    if capture is not None:
        capture.setdefault("attn", []).append(attn.data)
    ctx = en.matmul(attn, v)  # (B, H, S, Dh)
    ctx = en.reshape(en.transpose(ctx, (0, 2, 1, 3)), (B, S, D))
    return en.add(en.matmul(ctx, weights[prefix + "attn.wo"]), weights[prefix + "attn.bo"])


def _mlp(x: Tensor, weights: ModelWeights, prefix: str) -> Tensor:
    h = en.gelu(en.add(en.matmul(x, weights[prefix + "mlp.w1"]), weights[prefix + "mlp.b1"]))
    return en.add(en.matmul(h, weights[prefix + "mlp.w2"]), weights[prefix + "mlp.b2"])


def backbone_forward(H: Tensor, weights: ModelWeights, add_positional: bool = True,
                     capture: dict | None = None) -> Tensor:
    """One application of the decoder stack; causal throughout, so output
    row i depends only on input rows <= i."""
    cfg = weights.config
    squeeze = H.ndim == 2
    if squeeze:
        H = en.reshape(H, (1,) + H.shape)
    if H.ndim != 3 or H.shape[-1] != cfg.d_embed:
        raise ShapeError(f"backbone expects (B, S, {cfg.d_embed}), got {H.shape}")
    S = H.shape[1]
    if S > cfg.n_positions:
        raise ShapeError(f"sequence length {S} exceeds n_positions {cfg.n_positions}")

    x = H
    if add_positional:
        pos = en.index_select(weights["pos"], 0, np.arange(S))
        x = en.add(x, pos)
    for i in range(cfg.layers):
        p = f"layer{i}."
        a = en.layer_norm(x, weights[p + "ln1.g"], weights[p + "ln1.b"])
        x = en.add(x, _attention(a, weights, p, capture))
        m = en.layer_norm(x, weights[p + "ln2.g"], weights[p + "ln2.b"])
        x = en.add(x, _mlp(m, weights, p))
    if cfg.layers > 0:
        x = en.layer_norm(x, weights["lnf.g"], weights["lnf.b"])
    if squeeze:
        x = en.reshape(x, x.shape[1:])
    return x


def read_out(H: Tensor, weights: ModelWeights) -> Tensor:
    """Predictions at the input-token positions 0, 2, ..., 2k."""
    squeeze = H.ndim == 2
    if squeeze:
        H = en.reshape(H, (1,) + H.shape)
    B, S, _ = H.shape
    y = en.add(en.matmul(H, weights["read_out.w"]), weights["read_out.b"])
    y = en.reshape(y, (B, S))
    preds = en.index_select(y, 1, np.arange(0, S, 2))
    if squeeze:
        preds = en.reshape(preds, preds.shape[1:])
    return preds
