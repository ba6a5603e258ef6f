"""Flat ``key = value`` configuration with ``gen.*``, ``train.*`` and ``probe.*`` keys."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .data import AugmentConfig, GenConfig
from .errors import ConfigurationError
from .evaluation import ProbeConfig
from .trainer import TrainConfig


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


# key -> (parser, default, description)
KEYS: dict[str, tuple] = {
    "gen.num_classes": (int, 10, "number of classes C"),
    "gen.sequences_per_class": (int, 30, "sequences generated per class (train + eval)"),
    "gen.eval_per_class": (int, 10, "sequences per class held out when --eval-out is given"),
    "gen.frames": (int, 16, "frames per sequence L"),
    "gen.raw_dim": (int, 64, "frame vector length"),
    "gen.prototype_scale": (float, 1.0, "std of class prototypes"),
    "gen.drift_scale": (float, 2.0, "length of the temporal drift over a sequence"),
    "gen.frame_noise_sigma": (float, 0.1, "per-frame Gaussian noise std"),
    "gen.seed": (int, 0, "generator seed"),
    "train.epochs": (int, 600, "training epochs"),
    "train.batch_size": (int, 32, "sequences per step"),
    "train.lr0": (float, 0.05, "initial learning rate (cosine-decayed to 0)"),
    "train.sgd_momentum": (float, 0.9, "SGD momentum"),
    "train.temperature": (float, 0.1, "InfoNCE temperature"),
    "train.key_momentum": (float, 0.999, "key-encoder momentum coefficient"),
    "train.queue_capacity": (int, 1024, "memory queue capacity"),
    "train.loss_weights": (_floats, (1.0, 1.0, 1.0), "weights of inter, intra, temporal losses"),
    "train.seed": (int, 0, "training seed"),
    "train.backbone_widths": (_ints, (64, 64), "backbone layer widths"),
    "train.head_hidden": (int, 64, "projection head hidden width"),
    "train.embed_dim": (int, 16, "embedding dimension d"),
    "train.aug_noise": (float, 0.1, "augmentation noise std"),
    "train.aug_drop": (float, 0.2, "augmentation coordinate dropout probability"),
    "train.aug_scale": (float, 0.1, "augmentation global scale jitter"),
    "probe.iterations": (int, 500, "gradient-descent iterations of the linear probe"),
    "probe.lr": (float, 0.5, "linear probe learning rate"),
    "probe.seed": (int, 0, "probe seed"),
    "probe.order_samples": (int, 1000, "triplets drawn for order accuracy"),
}


@dataclass
class Config:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in KEYS.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def gen(self) -> GenConfig:
        v = self.values
        return GenConfig(v["gen.num_classes"], v["gen.sequences_per_class"], v["gen.frames"],
                         v["gen.raw_dim"], v["gen.prototype_scale"], v["gen.drift_scale"],
                         v["gen.frame_noise_sigma"], v["gen.seed"])

    def augment(self) -> AugmentConfig:
        v = self.values
        return AugmentConfig(v["train.aug_noise"], v["train.aug_drop"], v["train.aug_scale"])

    def train(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"], batch_size=v["train.batch_size"], lr0=v["train.lr0"],
            sgd_momentum=v["train.sgd_momentum"], temperature=v["train.temperature"],
            key_momentum=v["train.key_momentum"], queue_capacity=v["train.queue_capacity"],
            loss_weights=tuple(v["train.loss_weights"]), seed=v["train.seed"],
            backbone_widths=tuple(v["train.backbone_widths"]), head_hidden=v["train.head_hidden"],
            embed_dim=v["train.embed_dim"], augment=self.augment(),
        )

    def probe(self) -> ProbeConfig:
        v = self.values
        return ProbeConfig(v["probe.iterations"], v["probe.lr"], v["probe.seed"], v["probe.order_samples"])

    def dump(self) -> str:
        lines = []
        for k, val in self.values.items():
            text = ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in val) \
                if isinstance(val, tuple) else str(val)
            lines.append(f"{k} = {text}")
        return "\n".join(lines)


def parse_config(text: str) -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        try:
            cfg.values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value {value!r} for {key}: {exc}") from exc
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    return parse_config(Path(path).read_text())
