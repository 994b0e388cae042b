"""Generator bundle and the full per-frame pipeline.

One parameter dict carries the encoder, the patch transformer, and the
decoder. A frame pass assembles the inpaint/context sets, runs the grouped
cross-attention, decodes both the processed patches and the target view's
untouched patches, blends them into an intermediate image, and composites
with the rendered frame through its error mask.
"""

from dataclasses import dataclass, field

import numpy as np

from .attention import embed_in, embed_out, init_transformer_params, run_groups
from .config import RunConfig, parse_config_text, resolved_text
from .decoding import blend_patches, decode_patches, final_blend, init_decoder_params, to_chw
from .features import build_context, init_encoder_params
from .mvt import load_checkpoint, save_checkpoint
from .tensor import Tensor, concat


def init_generator(cfg: RunConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    params.update(init_encoder_params(cfg, rng))
    params.update(init_transformer_params(cfg, rng))
    params.update(init_decoder_params(cfg, rng))
    return params


def trainable(params: dict) -> list:
    return [p for p in params.values() if p.requires_grad]


def save_model(ckpt_dir, params: dict, cfg: RunConfig, extra: dict | None = None) -> None:
    """Checkpoint the weights next to the resolved config that produced them."""
    meta = {k: v for k, v in (line.split("=", 1) for line in resolved_text(cfg).splitlines())}
    for k, v in (extra or {}).items():
        meta[f"_{k}"] = v
    save_checkpoint(ckpt_dir, {k: p.data for k, p in params.items()}, meta)


def load_model(ckpt_dir):
    """Restore (params, cfg, extra) from a checkpoint directory."""
    arrays, meta = load_checkpoint(ckpt_dir)
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    cfg_lines = "\n".join(f"{k}={v}" for k, v in meta.items() if not k.startswith("_"))
    cfg = parse_config_text(cfg_lines)
    extra = {k[1:]: v for k, v in meta.items() if k.startswith("_")}
    return params, cfg, extra


@dataclass
class FrameResult:
    """Everything a caller needs from one inpainting pass over frame t."""

    f_hat: Tensor  # composited output, [3,H,W]
    f_tilde: Tensor  # pre-composite decoded image, [3,H,W]
    frame: np.ndarray  # rendered input frame, [3,H,W]
    err: np.ndarray  # error mask, [H,W]
    covered: np.ndarray  # blend coverage, [H,W] bool
    stats: dict = field(default_factory=dict)


def forward_frame(t, dataset, params, cfg: RunConfig, *, cache=None, rho=None,
                  training=False) -> FrameResult:
    """Run the whole pipeline on frame ``t`` of a dataset.

    ``rho`` of None keeps the dense attention path; ``cache`` is an optional
    mapping reused across steps so already-encoded frames are not re-encoded.
    """
    p_set, r_set = build_context(t, dataset, params, cfg, cache)
    novel = dataset.novel(t)
    frame = to_chw(novel.rgb)
    err = novel.error_mask.astype(np.float32)

    stats = {"n_p": len(p_set), "n_r": len(r_set), "macs_total": 0, "macs_post": 0,
             "context_sizes": []}

    decode_toks, rows, cols = [], [], []
    if len(p_set):
        p_emb = p_set.emb if p_set.emb is not None else embed_in(p_set.tokens, params)
        if len(r_set) == 0:
            r_emb = Tensor(np.zeros((0, cfg.model_dim), np.float32))
        else:
            r_emb = r_set.emb if r_set.emb is not None else embed_in(r_set.tokens, params)
        processed, astats = run_groups(p_emb, p_set.coords, r_emb, r_set.coords, params,
                                       cfg, rho=rho, training=training)
        stats.update(astats)
        decode_toks.append(embed_out(processed, params))
        rows.append(p_set.rows)
        cols.append(p_set.cols)

    # The target view's clean patches ride along in the context set; decode
    # them too so the blended image covers the whole object.
    own = (r_set.camera_ids == dataset.target_cam) & (r_set.timesteps == t)
    if own.any():
        ctx = r_set.subset(own)
        decode_toks.append(ctx.tokens)
        rows.append(ctx.rows)
        cols.append(ctx.cols)

    h, w = dataset.H, dataset.W
    if decode_toks:
        toks = decode_toks[0] if len(decode_toks) == 1 else concat(decode_toks, axis=0)
        patches = decode_patches(toks, params, cfg)
        f_tilde, covered = blend_patches(patches, np.concatenate(rows), np.concatenate(cols),
                                         (h, w), cfg)
    else:
        f_tilde = Tensor(np.zeros((3, h, w), np.float32))
        covered = np.zeros((h, w), bool)

    f_hat = final_blend(f_tilde, frame, err)
    return FrameResult(f_hat=f_hat, f_tilde=f_tilde, frame=frame, err=err,
                       covered=covered, stats=stats)
