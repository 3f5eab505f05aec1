"""Run configuration: defaults plus a flat key = value override file."""

from dataclasses import asdict, dataclass, fields


@dataclass
class RunConfig:
    # dataset
    n_points: int = 512
    n_shape_classes: int = 5
    max_objects: int = 8
    min_objects: int = 2
    class_prior: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    floor_min: float = 2.5
    floor_max: float = 3.5
    size_min: float = 0.25
    size_max: float = 0.5
    scene_scale: float = 3.0
    train_fraction: float = 0.8

    # autoencoder
    codes_per_class: int = 64
    code_dim: int = 128
    vae_variant: str = "v4"
    lambda_cd: float = 10.0
    usage_decay: float = 0.99
    reinit_eps: float = 1e-3
    cosine_lookup: bool = False
    kl_weight: float = 1e-3
    encoder_hidden: tuple = (64, 128, 256)
    decoder_hidden: tuple = (256, 512)
    vae_batch: int = 32
    vae_steps: int = 20000
    vae_lr: float = 1e-3

    # flow model
    flow_hidden: int = 256
    time_dim: int = 16
    lambda_translation: float = 1.0
    lambda_rotation: float = 1.0
    lambda_size: float = 1.0
    lambda_class: float = 1.0
    lambda_feature: float = 1.0
    flow_batch: int = 64
    flow_steps: int = 6000
    flow_lr: float = 1e-3
    sample_steps: int = 100

    def to_dict(self):
        return asdict(self)

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return RunConfig(**d)


def _coerce(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        inner = like[0] if like else 1.0
        return tuple(_coerce(part.strip(), inner) for part in raw.split(",") if part.strip())
    return raw


def load_config(path, base: RunConfig = None) -> RunConfig:
    """Parse `key = value` lines ('#' comments allowed) over the defaults."""
    cfg = base or RunConfig()
    types = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    overrides = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = _coerce(raw, types[key])
    return cfg.replace(**overrides)
