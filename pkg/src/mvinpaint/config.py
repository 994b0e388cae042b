"""Run configuration: one flat key=value namespace shared by every command.

A config file is plain ``key = value`` lines (``#`` comments allowed); CLI
flags override file values, which override the defaults below. Unknown keys
are rejected rather than ignored so typos fail loudly.
"""

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .rig import SceneSpec

_ABLATIONS = ("single-cam", "no-masks", "no-temporal", "no-rope")

# keys a config file may change when the architecture is pinned by a checkpoint
RUNTIME_KEYS = ("rho", "bench_rhos", "use_cache", "deterministic", "seed",
                "val_frames", "log_every")


@dataclass
class RunConfig:
    # synthetic scene
    shape: str = "sphere"
    radius: float = 1.0
    texture_seed: int = 7
    n_cameras: int = 5
    ring_radius: float = 3.0
    ring_height: float = 0.6
    width: int = 64
    height: int = 64
    n_frames: int = 64
    degradation: float = 0.05  # proxy vertex quantization, in object-radius units
    rot_speed: float = 0.025
    trans_amp: float = 0.15
    target_cam: int = 5

    # temporal context window
    n_c: int = 3
    n_w: int = 3
    k_w: int = 10

    # encoder and patch grid
    channels: int = 32
    s_f: int = 4
    patch: int = 7
    overlap: int = 3
    use_pseudo_depth: bool = True

    # attention stack
    model_dim: int = 192
    heads: int = 4
    n_g: int = 2
    n_b: int = 4
    rho: float = 1.0
    k_min: int = 16
    rope_spatial: float = 100.0
    rope_temporal: float = 10.0

    # training
    steps: int = 2000
    lr: float = 1e-4
    lambda_img: float = 1.0
    lambda_adv: float = 0.01
    seed: int = 0
    val_frames: int = 8
    log_every: int = 50

    # ablation switches
    use_multiview: bool = True
    use_masks: bool = True
    use_temporal: bool = True
    use_rope: bool = True

    # runtime
    use_cache: bool = True
    deterministic: bool = False
    bench_rhos: str = "1.0,0.5,0.25,0.1"

    def __post_init__(self):
        if self.k_w <= 1:
            raise ConfigError(f"k_w must exceed 1, got {self.k_w}")
        if not 0 <= self.overlap < self.patch:
            raise ConfigError(f"overlap must satisfy 0 <= O < P, got O={self.overlap} P={self.patch}")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")
        if self.channels % 2:
            raise ConfigError(f"channels must be even, got {self.channels}")
        if self.s_f < 1 or self.s_f & (self.s_f - 1):
            raise ConfigError(f"s_f must be a power of 2, got {self.s_f}")
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if (self.model_dim // self.heads) % 6:
            raise ConfigError(
                f"head dim {self.model_dim // self.heads} must be divisible by 6 "
                "(three coordinate axes, two lanes per rotation)"
            )
        if self.n_g < 1 or self.n_b < 1:
            raise ConfigError(f"need at least one group and one block, got n_g={self.n_g} n_b={self.n_b}")
        if self.n_c < 0 or self.n_w < 0:
            raise ConfigError(f"context counts must be non-negative, got n_c={self.n_c} n_w={self.n_w}")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if self.k_min < 1:
            raise ConfigError(f"k_min must be positive, got {self.k_min}")

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(
            shape=self.shape,
            radius=self.radius,
            texture_seed=self.texture_seed,
            n_cameras=self.n_cameras,
            ring_radius=self.ring_radius,
            ring_height=self.ring_height,
            width=self.width,
            height=self.height,
            n_frames=self.n_frames,
            quant_step=self.degradation,
            rot_speed=self.rot_speed,
            trans_amp=self.trans_amp,
            target_cam=self.target_cam,
        )

    def token_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def encoder_in_channels(self) -> int:
        return 6 if self.use_pseudo_depth else 5

    def window_span(self) -> int:
        return self.k_w * self.n_w


def _coerce(name, text, typ):
    text = text.strip()
    if typ is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {name}: expected a boolean, got {text!r}")
    try:
        return typ(text)
    except ValueError as exc:
        raise ConfigError(f"config key {name}: {exc}") from None


def _field_types():
    named = {"str": str, "int": int, "float": float, "bool": bool}
    return {
        f.name: (f.type if isinstance(f.type, type) else named[f.type])
        for f in dataclasses.fields(RunConfig)
    }


def config_pairs(text) -> dict:
    """The coerced key=value assignments a config text actually contains."""
    types = _field_types()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val, types[key])
    return values


def parse_config_text(text, overrides=None):
    """Build a RunConfig from key=value text plus override pairs."""
    types = _field_types()
    values = config_pairs(text)
    for key, val in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"override of unknown config key {key!r}")
        values[key] = val if not isinstance(val, str) else _coerce(key, val, types[key])
    return RunConfig(**values)


def load_config(path=None, overrides=None) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config_text(text, overrides)


def apply_ablation(cfg: RunConfig, name: str) -> RunConfig:
    if name not in _ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}, expected one of {', '.join(_ABLATIONS)}")
    field = {
        "single-cam": "use_multiview",
        "no-masks": "use_masks",
        "no-temporal": "use_temporal",
        "no-rope": "use_rope",
    }[name]
    return dataclasses.replace(cfg, **{field: False})


def resolved_text(cfg: RunConfig) -> str:
    """Canonical key=value dump, sorted; hashing input and artifact echo."""
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(sorted(lines)) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(resolved_text(cfg).encode()).hexdigest()[:12]


def save_config(cfg: RunConfig, path):
    Path(path).write_text(f"# sha256:{config_hash(cfg)}\n" + resolved_text(cfg))
