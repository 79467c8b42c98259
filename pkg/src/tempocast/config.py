"""Flat dotted-key run configuration: parsing, defaults, echoing.

The on-disk format is one `key = value` per line with `#` comments, e.g.

    data.source = synthetic
    model.depth = 6
    train.lr = 0.001

Every key has a schema entry with a type and default; unknown keys and
untypable values raise ConfigError. The resolved config is echoed into
every output artifact so a run can be reproduced from any of its files.
"""

from .data import generate_synthetic, load_csv
from .errors import ConfigError
from .model import ModelConfig, TrainConfig

# name -> (type tag, default). Types: int, float, str.
SCHEMA = {
    "seed": ("int", 0),
    "data.source": ("str", "synthetic"),
    "data.path": ("str", ""),
    "data.granularity": ("str", "hourly"),
    "data.n_steps": ("int", 2000),
    "data.n_vars": ("int", 1),
    "data.start": ("str", "2020-01-06 00:00:00"),
    "data.kappa": ("float", 1.0),
    "data.noise_std": ("float", 0.1),
    "data.ar_std": ("float", 0.35),
    "data.ar_rho": ("float", 0.98),
    "data.daily_amp": ("float", 1.0),
    "data.seed": ("int", 0),
    "model.depth": ("int", 6),
    "model.width": ("int", 64),
    "model.heads": ("int", 4),
    "model.ffn_mult": ("int", 4),
    "model.max_seq": ("int", 256),
    "model.lookback": ("int", 96),
    "model.patch_len": ("int", 16),
    "model.patch_stride": ("int", 16),
    "model.n_tokens": ("int", 4),
    "model.insert_layers": ("str", ""),
    "model.visibility": ("str", "suffix-global"),
    "model.cross_heads": ("int", 1),
    "model.cond_ffn_scope": ("str", "sequence"),
    "model.span_policy": ("str", "per-patch"),
    "model.loss_positions": ("str", "all"),
    "model.variant": ("str", "conditioned"),
    "model.lora_rank": ("int", 4),
    "model.backbone_seed": ("int", 0),
    "train.epochs": ("int", 10),
    "train.batch_size": ("int", 16),
    "train.lr": ("float", 1e-3),
    "train.beta1": ("float", 0.9),
    "train.beta2": ("float", 0.999),
    "train.weight_decay": ("float", 0.0),
    "train.patience": ("int", 3),
    "train.max_steps": ("int", 0),
    "train.split": ("str", "chronological"),
    "train.window_stride": ("int", 8),
    "train.horizon": ("int", 32),
    "forecast.horizon": ("int", 32),
    "ablate.variants": ("str", "conditioned,pos-embed,prefix-prompt,full-ft,partial-ft,lora"),
    "ablate.seeds": ("str", "0,1,2"),
    "ablate.split": ("str", "interleaved"),
    "ablate.window_stride": ("int", 8),
}


def _convert(key, raw):
    kind, _ = SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError("config key %s: cannot parse %r as %s" % (key, raw, kind)) from None


def default_config():
    return {k: v for k, (_, v) in SCHEMA.items()}


def parse_config_text(text, source="<config>"):
    """Parse `key = value` lines into a typed dict (unset keys absent)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError("%s line %d: expected 'key = value'" % (source, lineno))
        key, _, raw = s.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError("%s line %d: unknown config key %r" % (source, lineno, key))
        if key in out:
            raise ConfigError("%s line %d: duplicate key %r" % (source, lineno, key))
        out[key] = _convert(key, raw)
    return out


def load_config(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError("cannot read config %s: %s" % (path, e)) from None
    return parse_config_text(text, source=str(path))


def resolve_config(*layers):
    """Merge layers (later wins) onto the defaults; all keys end up typed."""
    cfg = default_config()
    for layer in layers:
        for key, value in layer.items():
            if key not in SCHEMA:
                raise ConfigError("unknown config key %r" % key)
            cfg[key] = _convert(key, str(value)) if isinstance(value, str) else value
    return cfg


def serialize_config(cfg):
    """Canonical `key = value` text in schema order (the echo format)."""
    lines = []
    for key in SCHEMA:
        v = cfg[key]
        if isinstance(v, float):
            lines.append("%s = %r" % (key, v))
        else:
            lines.append("%s = %s" % (key, v))
    return "\n".join(lines) + "\n"


def parse_int_list(raw, key):
    if not raw.strip():
        return ()
    try:
        return tuple(int(p.strip()) for p in raw.split(","))
    except ValueError:
        raise ConfigError("config key %s: expected comma-separated integers, got %r" % (key, raw)) from None


def build_model_config(cfg):
    layers = parse_int_list(cfg["model.insert_layers"], "model.insert_layers")
    return ModelConfig(
        depth=cfg["model.depth"],
        width=cfg["model.width"],
        heads=cfg["model.heads"],
        ffn_mult=cfg["model.ffn_mult"],
        max_seq=cfg["model.max_seq"],
        lookback=cfg["model.lookback"],
        patch_len=cfg["model.patch_len"],
        patch_stride=cfg["model.patch_stride"],
        n_tokens=cfg["model.n_tokens"],
        insert_layers=layers or None,
        visibility=cfg["model.visibility"],
        cross_heads=cfg["model.cross_heads"],
        cond_ffn_scope=cfg["model.cond_ffn_scope"],
        span_policy=cfg["model.span_policy"],
        loss_positions=cfg["model.loss_positions"],
        variant=cfg["model.variant"],
        lora_rank=cfg["model.lora_rank"],
        seed=cfg["seed"],
        backbone_seed=cfg["model.backbone_seed"],
    ).validate()


def build_train_config(cfg):
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        weight_decay=cfg["train.weight_decay"],
        patience=cfg["train.patience"],
        max_steps=cfg["train.max_steps"],
        seed=cfg["seed"],
    ).validate()


def build_series(cfg):
    """Materialize the dataset a config points at."""
    source = cfg["data.source"]
    if source == "csv":
        if not cfg["data.path"]:
            raise ConfigError("data.source = csv requires data.path")
        return load_csv(cfg["data.path"], cfg["data.granularity"])
    if source == "synthetic":
        return generate_synthetic(
            cfg["data.n_steps"],
            n_vars=cfg["data.n_vars"],
            start=cfg["data.start"],
            granularity=cfg["data.granularity"],
            kappa=cfg["data.kappa"],
            noise_std=cfg["data.noise_std"],
            ar_std=cfg["data.ar_std"],
            ar_rho=cfg["data.ar_rho"],
            daily_amp=cfg["data.daily_amp"],
            seed=cfg["data.seed"],
        )
    raise ConfigError("data.source must be 'csv' or 'synthetic', got %r" % source)
