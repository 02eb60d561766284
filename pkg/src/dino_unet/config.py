"""Architecture, training and run-file configuration."""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

VARIANT_DIMS = {"desk": 32, "S": 384, "B": 768, "L": 1024, "7B": 4096}
# (depth, heads) of the backbone stub per variant.
VARIANT_BACKBONE = {"desk": (4, 2), "S": (12, 6), "B": (12, 12), "L": (24, 16), "7B": (40, 32)}


class ConfigError(ValueError):
    pass


def _even_taps(depth: int, n: int) -> list[int]:
    return [round(depth * (i + 1) / n) for i in range(n)]


@dataclass
class BackboneConfig:
    patch_size: int = 16
    embed_dim: int = 32
    depth: int = 4
    num_heads: int = 2
    tap_layers: list[int] | None = None
    image_size: int = 64  # reference size of the positional grid
    mlp_ratio: int = 4

    def taps(self, n: int) -> list[int]:
        return list(self.tap_layers) if self.tap_layers is not None else _even_taps(self.depth, n)

    def validate(self, n_scales: int) -> None:
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"backbone.embed_dim={self.embed_dim} not divisible by num_heads={self.num_heads}")
        taps = self.taps(n_scales)
        if any(b <= a for a, b in zip(taps, taps[1:])) or taps[0] < 1 or taps[-1] > self.depth:
            raise ConfigError(f"backbone.tap_layers={taps} must be strictly increasing within [1, {self.depth}]")
        if len(taps) != n_scales:
            raise ConfigError(f"backbone.tap_layers has {len(taps)} entries, adapter.num_scales={n_scales}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"backbone.image_size={self.image_size} not a multiple of patch_size={self.patch_size}")


@dataclass
class AdapterConfig:
    num_scales: int = 4
    pyramid_strides: list[int] = field(default_factory=lambda: [4, 8, 16, 32])
    channels: int = 32
    num_points: int = 4
    num_heads: int = 1
    interaction_residual: bool = True
    spm_channels: int | None = None

    @property
    def stem_channels(self) -> int:
        return self.spm_channels if self.spm_channels is not None else self.channels

    def validate(self) -> None:
        s = self.pyramid_strides
        if len(s) != self.num_scales:
            raise ConfigError(f"adapter.pyramid_strides has {len(s)} entries, num_scales={self.num_scales}")
        if s[0] != 4 or any(b != 2 * a for a, b in zip(s, s[1:])):
            raise ConfigError(f"adapter.pyramid_strides={s} must start at 4 and double each scale")
        if self.num_points < 1:
            raise ConfigError("adapter.num_points must be >= 1")
        if self.channels % self.num_heads:
            raise ConfigError(f"adapter.channels={self.channels} not divisible by num_heads={self.num_heads}")


@dataclass
class FapmConfig:
    rank: int = 16
    in_dim: int = 32
    out_dims: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    se_reduction: int = 4
    dw_kernel: int = 3
    dw_activation: bool = False

    def se_hidden(self, d_out: int) -> int:
        return max(1, -(-d_out // self.se_reduction))

    def validate(self) -> None:
        if self.rank < 1:
            raise ConfigError("fapm.rank must be >= 1")
        if self.dw_kernel % 2 == 0:
            raise ConfigError(f"fapm.dw_kernel={self.dw_kernel} must be odd")


@dataclass
class DecoderConfig:
    skip_dims: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    num_classes: int = 4
    final_upsample_factor: int = 4

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("decoder.num_classes must be >= 2")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    fapm: FapmConfig = field(default_factory=FapmConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    seed: int = 0
    variant: str = "desk"
    projection: str = "fapm"  # or "baseline": one 1x1 conv per scale

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        return cls.build(variant="desk", **kw)

    @classmethod
    def build(cls, variant: str = "desk", embed_dim: int | None = None, rank: int | None = None,
              out_dims: list[int] | None = None, num_classes: int = 4, seed: int = 0,
              projection: str = "fapm", **extra) -> "ModelConfig":
        if variant not in VARIANT_DIMS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANT_DIMS)}")
        d = embed_dim if embed_dim is not None else VARIANT_DIMS[variant]
        depth, heads = VARIANT_BACKBONE[variant]
        if rank is None:
            rank = 16 if variant == "desk" else 256
        if out_dims is None:
            out_dims = [16, 32, 64, 128] if variant == "desk" else [64, 128, 256, 512]
        cfg = cls(
            backbone=BackboneConfig(embed_dim=d, depth=depth, num_heads=heads),
            adapter=AdapterConfig(channels=d, num_scales=len(out_dims),
                                  pyramid_strides=[4 * 2 ** i for i in range(len(out_dims))]),
            fapm=FapmConfig(rank=rank, in_dim=d, out_dims=list(out_dims)),
            decoder=DecoderConfig(skip_dims=list(out_dims), num_classes=num_classes),
            seed=seed, variant=variant, projection=projection,
        )
        for key, value in extra.items():
            set_model_key(cfg, key, value)
        cfg.validate()
        return cfg

    @property
    def embed_dim(self) -> int:
        return self.backbone.embed_dim

    @property
    def max_stride(self) -> int:
        return self.adapter.pyramid_strides[-1]

    def validate(self) -> None:
        pairs = [
            ("backbone.embed_dim", self.backbone.embed_dim, "adapter.channels", self.adapter.channels),
            ("adapter.channels", self.adapter.channels, "fapm.in_dim", self.fapm.in_dim),
            ("fapm.out_dims", self.fapm.out_dims, "decoder.skip_dims", self.decoder.skip_dims),
            ("adapter.num_scales", self.adapter.num_scales, "len(fapm.out_dims)", len(self.fapm.out_dims)),
        ]
        for a_name, a, b_name, b in pairs:
            if a != b:
                raise ConfigError(f"inconsistent dims: {a_name}={a} vs {b_name}={b}")
        if self.projection not in ("fapm", "baseline"):
            raise ConfigError(f"projection must be 'fapm' or 'baseline', got {self.projection!r}")
        if self.decoder.final_upsample_factor != self.adapter.pyramid_strides[0]:
            raise ConfigError("decoder.final_upsample_factor must equal the first pyramid stride")
        self.adapter.validate()
        self.backbone.validate(self.adapter.num_scales)
        self.fapm.validate()
        self.decoder.validate()


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    steps_per_epoch: int = 10
    poly_power: float = 0.9
    batch_size: int = 4
    dtype: str = "float32"
    seed: int = 0

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def validate(self) -> None:
        if not self.lr0 > 0:
            raise ConfigError(f"train.lr0 must be > 0, got {self.lr0}")
        if self.total_steps < 1:
            raise ConfigError("train.epochs * train.steps_per_epoch must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"train.dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class DataConfig:
    n: int = 4
    image_size: int = 64
    num_classes: int = 4
    seed: int = 0
    window: int = 0  # 0 = full-image inference
    overlap: float = 0.5


# --------------------------------------------------------------------------- run-config file

_MODEL_KEYS = {
    "variant": ("", "variant", str),
    "seed": ("", "seed", int),
    "projection": ("", "projection", str),
    "embed_dim": (None, None, int),
    "depth": ("backbone", "depth", int),
    "num_heads": ("backbone", "num_heads", int),
    "patch_size": ("backbone", "patch_size", int),
    "tap_layers": ("backbone", "tap_layers", "intlist?"),
    "image_size": ("backbone", "image_size", int),
    "num_points": ("adapter", "num_points", int),
    "attn_heads": ("adapter", "num_heads", int),
    "interaction_residual": ("adapter", "interaction_residual", bool),
    "spm_channels": ("adapter", "spm_channels", "int?"),
    "rank": ("fapm", "rank", int),
    "out_dims": (None, None, "intlist"),
    "se_reduction": ("fapm", "se_reduction", int),
    "dw_kernel": ("fapm", "dw_kernel", int),
    "dw_activation": ("fapm", "dw_activation", bool),
    "num_classes": ("decoder", "num_classes", int),
}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_DATA_KEYS = {f.name: f.type for f in dataclasses.fields(DataConfig)}


def _parse_value(kind, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int?":
            return None if raw.lower() in ("", "none") else int(raw)
        if kind == "intlist":
            return [int(v) for v in raw.replace(",", " ").split()]
        if kind == "intlist?":
            return None if raw.lower() in ("", "none") else [int(v) for v in raw.replace(",", " ").split()]
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def set_model_key(cfg: ModelConfig, key: str, value) -> None:
    if key not in _MODEL_KEYS:
        raise ConfigError(f"unknown key model.{key}")
    if key == "embed_dim":
        cfg.backbone.embed_dim = cfg.adapter.channels = cfg.fapm.in_dim = int(value)
        return
    if key == "out_dims":
        dims = list(value)
        cfg.fapm.out_dims = list(dims)
        cfg.decoder.skip_dims = list(dims)
        cfg.adapter.num_scales = len(dims)
        cfg.adapter.pyramid_strides = [4 * 2 ** i for i in range(len(dims))]
        return
    section, attr, _ = _MODEL_KEYS[key]
    setattr(getattr(cfg, section) if section else cfg, attr, value)


def _model_values(cfg: ModelConfig) -> dict:
    out = {}
    for key, (section, attr, _) in _MODEL_KEYS.items():
        if key == "embed_dim":
            out[key] = cfg.backbone.embed_dim
        elif key == "out_dims":
            out[key] = cfg.fapm.out_dims
        else:
            out[key] = getattr(getattr(cfg, section) if section else cfg, attr)
    return out


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write("[model]\n")
        for k, v in _model_values(self.model).items():
            buf.write(f"{k} = {_format_value(v)}\n")
        for name, obj in (("train", self.train), ("data", self.data)):
            buf.write(f"\n[{name}]\n")
            for f in dataclasses.fields(obj):
                buf.write(f"{f.name} = {_format_value(getattr(obj, f.name))}\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config syntax: {exc}".splitlines()[0]) from None
        for section in parser.sections():
            if section not in ("model", "train", "data"):
                raise ConfigError(f"unknown section [{section}]")

        model_kw = {}
        if parser.has_section("model"):
            for key, raw in parser.items("model"):
                if key not in _MODEL_KEYS:
                    raise ConfigError(f"unknown key model.{key}")
                model_kw[key] = _parse_value(_MODEL_KEYS[key][2], raw, f"model.{key}")
        variant = model_kw.pop("variant", "desk")
        base_keys = {k: model_kw.pop(k) for k in ("embed_dim", "rank", "out_dims", "num_classes", "seed",
                                                   "projection") if k in model_kw}
        cfg = ModelConfig.build(variant=variant, **base_keys)
        for key, value in model_kw.items():
            set_model_key(cfg, key, value)
        cfg.validate()

        def fill(obj, section, keys):
            if not parser.has_section(section):
                return obj
            for key, raw in parser.items(section):
                if key not in keys:
                    raise ConfigError(f"unknown key {section}.{key}")
                setattr(obj, key, _parse_value(keys[key], raw, f"{section}.{key}"))
            return obj

        train = fill(TrainConfig(), "train", _TRAIN_KEYS)
        train.validate()
        data = fill(DataConfig(), "data", _DATA_KEYS)
        return cls(model=cfg, train=train, data=data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())
