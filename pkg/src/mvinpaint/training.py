"""Masked reconstruction losses, the patch discriminator, and the train loop.

The objective is a weighted sum of per-pixel L1 inside and outside the error
region, measured on the intermediate image before compositing, plus a small
adversarial term on the composited result. One discriminator update runs on
the detached output before each generator update.
"""

import math

import numpy as np

from .config import RunConfig
from .decoding import to_chw
from .errors import NumericError
from .metrics import psnr
from .model import forward_frame, init_generator, trainable
from .tensor import Adam, Tensor, absolute, clip, conv2d, leaky_relu, log, no_grad, sigmoid


def loss_in(f_tilde: Tensor, target: np.ndarray, err: np.ndarray) -> Tensor:
    """Mean absolute error over the error region, channel-summed per pixel.

    Normalized by the mask's own L1 norm; an empty mask contributes 0.
    """
    norm = float(err.sum())
    if norm == 0.0:
        return Tensor(np.float32(0.0))
    diff = absolute(f_tilde - Tensor(target))
    return (diff * Tensor(err[None, :, :])).sum() * (1.0 / norm)


def loss_out(f_tilde: Tensor, target: np.ndarray, err: np.ndarray) -> Tensor:
    """Mirror of loss_in on the mask complement."""
    return loss_in(f_tilde, target, 1.0 - err)


def init_discriminator(cfg: RunConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    plan = [(3, 16), (16, 32), (32, 64), (64, 1)]
    params = {}
    for i, (ci, co) in enumerate(plan):
        std = np.sqrt(2.0 / (ci * 9))
        params[f"disc.c{i}.w"] = Tensor(
            rng.normal(0.0, std, (co, ci, 3, 3)).astype(np.float32), requires_grad=True
        )
        params[f"disc.c{i}.b"] = Tensor(np.zeros(co, np.float32), requires_grad=True)
    return params


def discriminator(img, disc: dict) -> Tensor:
    """Probability that ``img`` ([3,H,W]) is a real frame, clamped away from {0,1}."""
    x = img if isinstance(img, Tensor) else Tensor(img)
    for i in range(4):
        x = conv2d(x, disc[f"disc.c{i}.w"], disc[f"disc.c{i}.b"], stride=2, padding=1)
        if i < 3:
            x = leaky_relu(x, 0.2)
    return clip(sigmoid(x.mean()), 1e-6, 1.0 - 1e-6)


def disc_loss(disc: dict, real: np.ndarray, fake) -> Tensor:
    """Negated two-sided objective: minimizing it maximizes
    log D(real) + log(1 - D(fake))."""
    d_real = discriminator(real, disc)
    d_fake = discriminator(fake, disc)
    return (log(d_real) + log(1.0 - d_fake)) * -1.0


def gen_loss(disc: dict, fake: Tensor) -> Tensor:
    """Non-saturating generator objective: -log D(fake)."""
    return log(discriminator(fake, disc)) * -1.0


def total_loss(l_in: Tensor, l_out: Tensor, g_adv, cfg: RunConfig) -> Tensor:
    out = (l_in + l_out) * cfg.lambda_img
    if cfg.lambda_adv > 0.0:
        out = out + g_adv * cfg.lambda_adv
    return out


def train_step(t, dataset, params, disc, opt_g: Adam, opt_d: Adam, cfg: RunConfig,
               rho=None) -> dict:
    """One discriminator update on the detached output, then one generator update."""
    res = forward_frame(t, dataset, params, cfg, rho=rho, training=True)
    target = to_chw(dataset.gt(t).rgb)
    l_in = loss_in(res.f_tilde, target, res.err)
    l_out = loss_out(res.f_tilde, target, res.err)

    d_val = g_val = 0.0
    g_adv = None
    if cfg.lambda_adv > 0.0:
        d_l = disc_loss(disc, target, res.f_hat.data.copy())
        opt_d.zero_grad()
        d_l.backward()
        opt_d.step()
        d_val = float(d_l.data)
        g_adv = gen_loss(disc, res.f_hat)
        g_val = float(g_adv.data)

    total = total_loss(l_in, l_out, g_adv, cfg)
    opt_g.zero_grad()
    total.backward()
    opt_g.step()
    return {
        "t": t,
        "l_in": float(l_in.data),
        "l_out": float(l_out.data),
        "d_loss": d_val,
        "g_loss": g_val,
        "total": float(total.data),
    }


def validation_frames(dataset, cfg: RunConfig):
    """Held-out tail of the stream: the last ``val_frames`` timesteps."""
    lo = max(0, dataset.T - cfg.val_frames)
    return list(range(lo, dataset.T))


def validation_psnr(dataset, params, cfg: RunConfig, max_frames=2) -> float:
    """Inpainted-region PSNR averaged over a few held-out frames."""
    frames = validation_frames(dataset, cfg)
    if len(frames) > max_frames:
        idx = np.linspace(0, len(frames) - 1, max_frames).round().astype(int)
        frames = [frames[i] for i in idx]
    scores = []
    with no_grad():
        for t in frames:
            res = forward_frame(t, dataset, params, cfg)
            gt = to_chw(dataset.gt(t).rgb)
            scores.append(psnr(res.f_hat.data, gt, mask=res.err))
    finite = [s for s in scores if math.isfinite(s)]
    return float(np.mean(finite)) if finite else math.inf


def train(dataset, cfg: RunConfig, *, rho=None, on_step=None):
    """Full training run; returns (params, disc, per-step metric rows).

    Frames are sampled uniformly from the stream with the validation tail
    held out. A non-finite loss aborts with the offending step's components.
    """
    params = init_generator(cfg, cfg.seed)
    disc = init_discriminator(cfg, cfg.seed + 1)
    opt_g = Adam(trainable(params), lr=cfg.lr)
    opt_d = Adam(trainable(disc), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    hi = max(1, dataset.T - cfg.val_frames)

    rows = []
    for step in range(cfg.steps):
        t = int(rng.integers(0, hi))
        rec = train_step(t, dataset, params, disc, opt_g, opt_d, cfg, rho=rho)
        bad = [k for k in ("l_in", "l_out", "d_loss", "g_loss") if not math.isfinite(rec[k])]
        if bad:
            raise NumericError(
                f"step {step}: non-finite loss components {bad}: "
                + ", ".join(f"{k}={rec[k]:.4g}" for k in ("l_in", "l_out", "d_loss", "g_loss"))
            )
        rec["step"] = step
        if (step + 1) % cfg.log_every == 0 or step == cfg.steps - 1:
            rec["psnr_val"] = validation_psnr(dataset, params, cfg)
        else:
            rec["psnr_val"] = math.nan
        rows.append(rec)
        if on_step is not None:
            on_step(rec)
    return params, disc, rows


def write_metrics_csv(path, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "L_in", "L_out", "d_loss", "g_loss", "psnr_val"])
        for r in rows:
            w.writerow([r["step"], repr(r["l_in"]), repr(r["l_out"]), repr(r["d_loss"]),
                        repr(r["g_loss"]), repr(r["psnr_val"])])
