"""Cross-attention transformer over patch tokens.

Inpaint tokens P are updated against a fixed context set R through n_g groups
of n_b pre-norm residual blocks. Queries and keys are rotated by a decomposed
three-axis rotary embedding over (u, v, relative timestep), so attention
logits depend only on coordinate differences. After the first block of each
group, the context is reduced to the top-k tokens by summed attention mass;
the kept tokens pass through a straight-through gate so the selection scores
still receive gradient.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor, layer_norm, matmul, relu, rotate_pairs, softmax, take_flat

# ---------------------------------------------------------------------
# rotary embedding


@dataclass(frozen=True)
class RoPEConfig:
    head_dim: int
    d_axes: tuple  # per-axis sub-dims (d_u, d_v, d_t), summing to head_dim
    scales: tuple = (100.0, 100.0, 10.0)
    base: float = 10000.0

    def __post_init__(self):
        if sum(self.d_axes) != self.head_dim:
            raise ConfigError(f"axis dims {self.d_axes} do not sum to head dim {self.head_dim}")
        if any(d % 2 for d in self.d_axes):
            raise ConfigError(f"axis dims must be even, got {self.d_axes}")
        if len(self.d_axes) != 3 or len(self.scales) != 3:
            raise ConfigError("rotary embedding expects exactly three coordinate axes")


def rope_config(cfg) -> RoPEConfig:
    head_dim = cfg.model_dim // cfg.heads
    third = head_dim // 3
    return RoPEConfig(
        head_dim=head_dim,
        d_axes=(third, third, head_dim - 2 * third),
        scales=(cfg.rope_spatial, cfg.rope_spatial, cfg.rope_temporal),
    )


def axis_frequencies(rope: RoPEConfig, axis: int) -> np.ndarray:
    """Rotation frequencies for one coordinate axis: base^(-2j/d_axis) * scale."""
    da = rope.d_axes[axis]
    j = np.arange(da // 2, dtype=np.float64)
    return rope.base ** (-2.0 * j / da) * rope.scales[axis]


def rope_tables(coords, rope: RoPEConfig):
    """Per-token cos/sin tables, [n, head_dim/2] float32.

    Frequencies decrease strictly within an axis; angles are computed in
    float64 and the tables cast once so both sides of an attention product
    see identical rounding.
    """
    coords = np.asarray(coords, dtype=np.float64)
    parts = []
    for axis in range(len(rope.d_axes)):
        omega = axis_frequencies(rope, axis)
        parts.append(coords[:, axis, None] * omega[None, :])
    ang = np.concatenate(parts, axis=1)
    return np.cos(ang).astype(np.float32), np.sin(ang).astype(np.float32)


def rope_rotate(v: Tensor, coords, rope: RoPEConfig) -> Tensor:
    """Rotate per-head features by their token's coordinate angles.

    ``v`` is [heads, n, head_dim] (or [n, head_dim]); consecutive feature
    pairs form the rotation lanes, axes are applied independently. ``coords``
    is [n, 3], or a precomputed (cos, sin) pair from rope_tables so repeated
    blocks can share one table.
    """
    d = v.shape[-1]
    if d != rope.head_dim:
        raise DimensionError(f"feature dim {d} does not match rotary head dim {rope.head_dim}")
    cos, sin = coords if isinstance(coords, tuple) else rope_tables(coords, rope)
    return rotate_pairs(v, cos, sin)


# ---------------------------------------------------------------------
# weights


def _glorot(rng, fan_in, fan_out):
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, (fan_in, fan_out)).astype(np.float32), requires_grad=True)


def _zeros(n):
    return Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)


def _ones(n):
    return Tensor(np.ones(n, dtype=np.float32), requires_grad=True)


def init_transformer_params(cfg, rng) -> dict:
    """Shared token embeddings plus n_g*n_b cross-attention blocks."""
    d_tok, d = cfg.token_dim(), cfg.model_dim
    params = {
        "emb.in.w": _glorot(rng, d_tok, d),
        "emb.in.b": _zeros(d),
        "emb.out.w": _glorot(rng, d, d_tok),
        "emb.out.b": _zeros(d_tok),
    }
    for k in range(cfg.n_g * cfg.n_b):
        p = f"blk{k}."
        params[p + "ln1.g"] = _ones(d)
        params[p + "ln1.b"] = _zeros(d)
        params[p + "wq"] = _glorot(rng, d, d)
        params[p + "wk"] = _glorot(rng, d, d)
        params[p + "wv"] = _glorot(rng, d, d)
        params[p + "wo"] = _glorot(rng, d, d)
        params[p + "bo"] = _zeros(d)
        params[p + "ln2.g"] = _ones(d)
        params[p + "ln2.b"] = _zeros(d)
        params[p + "ffn.w1"] = _glorot(rng, d, 4 * d)
        params[p + "ffn.b1"] = _zeros(4 * d)
        params[p + "ffn.w2"] = _glorot(rng, 4 * d, d)
        params[p + "ffn.b2"] = _zeros(d)
    return params


def embed_in(tokens: Tensor, params) -> Tensor:
    return matmul(tokens, params["emb.in.w"]) + params["emb.in.b"]


def embed_out(p: Tensor, params) -> Tensor:
    return matmul(p, params["emb.out.w"]) + params["emb.out.b"]


# ---------------------------------------------------------------------
# attention blocks


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def cross_attention(p_norm, p_pos, r, r_pos, params, kidx, rope, heads, use_rope):
    """One multi-head attention read of the context.

    ``p_pos``/``r_pos`` are token coordinates or precomputed rotary tables.
    Returns (update, attn_mean, macs): the residual update for the inpaint
    tokens, the head-averaged attention matrix [nP, nR] used for
    sparsification scores, and the multiply-accumulate count. An empty
    context yields a zero update and a zero-width attention matrix.
    """
    pre = f"blk{kidx}."
    n_p, d = p_norm.shape
    n_r = r.shape[0]
    if n_r == 0:
        zero_update = Tensor(np.zeros((n_p, d), dtype=np.float32))
        return zero_update, Tensor(np.zeros((n_p, 0), dtype=np.float32)), 0

    q = _split_heads(matmul(p_norm, params[pre + "wq"]), heads)
    k = _split_heads(matmul(r, params[pre + "wk"]), heads)
    v = _split_heads(matmul(r, params[pre + "wv"]), heads)
    if use_rope:
        q = rope_rotate(q, p_pos, rope)
        k = rope_rotate(k, r_pos, rope)
    dh = d // heads
    logits = matmul(q * (1.0 / math.sqrt(dh)), k.transpose(0, 2, 1))
    attn = softmax(logits, axis=-1)
    mixed = matmul(attn, v).transpose(1, 0, 2).reshape(n_p, d)
    update = matmul(mixed, params[pre + "wo"]) + params[pre + "bo"]
    macs = 2 * n_p * d * d + 2 * n_r * d * d + 2 * n_p * n_r * d
    return update, attn.mean(axis=0), macs


def transformer_block(p, p_pos, r, r_pos, params, kidx, rope, heads, use_rope):
    """Pre-norm residual attention, then pre-norm residual feed-forward.

    The context r enters raw: it is projected fresh by this block's key and
    value matrices and never receives residual updates of its own.
    """
    pre = f"blk{kidx}."
    p_norm = layer_norm(p, params[pre + "ln1.g"], params[pre + "ln1.b"])
    update, attn, macs = cross_attention(p_norm, p_pos, r, r_pos, params, kidx, rope, heads, use_rope)
    p = p + update
    h = layer_norm(p, params[pre + "ln2.g"], params[pre + "ln2.b"])
    f = matmul(relu(matmul(h, params[pre + "ffn.w1"]) + params[pre + "ffn.b1"]), params[pre + "ffn.w2"])
    return p + (f + params[pre + "ffn.b2"]), attn, macs


# ---------------------------------------------------------------------
# sparsification


def topk_sparsify(attn_mean, r, r_coords, rho, k_min, training):
    """Keep the top-k context tokens by summed attention mass.

    k = max(k_min, ceil(rho*|R|)), capped at |R|; ties broken toward the
    lower token index; kept tokens stay in their original order. During
    training each kept row is scaled by 1 + (s - stop_grad(s)), which is
    exactly 1 in the forward pass but routes gradient into the scores.
    """
    n_r = r.shape[0]
    s = attn_mean.sum(axis=0)
    k = min(n_r, max(k_min, math.ceil(rho * n_r)))
    order = np.argsort(-s.data, kind="stable")
    kept = np.sort(order[:k])
    d = r.shape[1]
    idx = kept[:, None] * d + np.arange(d)[None, :]
    r_kept = take_flat(r, idx, out_shape=(k, d))
    if training:
        gate = s - s.detach() + 1.0
        g_kept = take_flat(gate, kept, out_shape=(k,)).reshape(k, 1)
        r_kept = r_kept * g_kept
    return r_kept, r_coords[kept], kept


# ---------------------------------------------------------------------
# grouped execution


def run_groups(p, p_coords, r, r_coords, params, cfg, *, rho=None, training=False):
    """Run the full n_g x n_b block stack.

    ``rho=None`` is the dense path: no sparsification machinery runs at all.
    With a ratio, the context is pruned right after the first block of each
    group using that block's attention, and the reduction is cumulative.
    Returns (p_final, stats) where stats carries MAC counts (total and for
    post-sparsify blocks) and the context size seen by every block.
    """
    rope = rope_config(cfg)
    p_tab = rope_tables(p_coords, rope)
    r_tab = rope_tables(r_coords, rope)
    stats = {"macs_total": 0, "macs_post": 0, "context_sizes": []}
    for g in range(cfg.n_g):
        for b in range(cfg.n_b):
            kidx = g * cfg.n_b + b
            stats["context_sizes"].append(int(r.shape[0]))
            p, attn, macs = transformer_block(
                p, p_tab, r, r_tab, params, kidx, rope, cfg.heads, cfg.use_rope
            )
            stats["macs_total"] += macs
            if b > 0:
                stats["macs_post"] += macs
            if b == 0 and rho is not None and r.shape[0] > 0:
                r, r_coords, kept = topk_sparsify(attn, r, r_coords, rho, cfg.k_min, training)
                r_tab = (r_tab[0][kept], r_tab[1][kept])
    return p, stats
