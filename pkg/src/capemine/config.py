"""Run configuration: one flat JSON namespace, validated field by field."""

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .errors import ContractViolation

ABLATIONS = (
    "none",
    "identical-reference-points",
    "all-ones-links",
    "identity-links",
    "mixup-test-padding",
    "zero-test-padding",
)


class ConfigError(ContractViolation):
    def __init__(self, field_name, message):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class RunConfig:
    # model
    K: int = 16
    M: int = 4
    L: int = 3
    D: int = 32
    S: int = 4
    alpha: float = 1.0
    beta: float = 0.5
    sigma_h: float = 0.1
    ffn_hidden: int = 64
    backbone_width: int = 32
    image_size: int = 64
    strides: list = field(default_factory=lambda: [4, 8, 16])
    share_layers: bool = False
    detach_refs: bool = True
    reference_mode: str = "links"
    # data
    kc_min: int = 5
    kc_max: int = 12
    base_classes: int = 10
    novel_classes: int = 3
    instances_per_class: int = 40
    data_seed: int = 0
    # optimization
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 2000
    shots: int = 1
    log_every: int = 20
    eval_every: int = 0
    eval_episodes: int = 200
    eval_seed: int = 12345
    use_mixup_loss: bool = True
    train_padding: str = "mixup"
    # output
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            kind = f.type
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
                setattr(self, f.name, value)
            if kind is bool and not isinstance(value, bool):
                raise ConfigError(f.name, f"expected a boolean, got {value!r}")
            if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
                raise ConfigError(f.name, f"expected an integer, got {value!r}")
            if kind is float and not isinstance(value, float):
                raise ConfigError(f.name, f"expected a number, got {value!r}")
            if kind is str and not isinstance(value, str):
                raise ConfigError(f.name, f"expected a string, got {value!r}")
        for name in ("K", "M", "L", "D", "S", "ffn_hidden", "backbone_width", "image_size",
                     "base_classes", "novel_classes", "shots", "log_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be at least 1")
        if self.iterations < 0:
            raise ConfigError("iterations", "must be non-negative")
        if self.D % self.M:
            raise ConfigError("D", f"{self.D} is not divisible by M={self.M}")
        if not 1 <= self.kc_min <= self.kc_max:
            raise ConfigError("kc_min", f"need 1 <= kc_min <= kc_max, got {self.kc_min}, {self.kc_max}")
        if self.K < self.kc_max:
            raise ConfigError("K", f"{self.K} is smaller than the largest class size kc_max={self.kc_max}")
        if self.alpha <= 0:
            raise ConfigError("alpha", "must be positive")
        if self.beta < 0:
            raise ConfigError("beta", "must be non-negative")
        if self.sigma_h <= 0:
            raise ConfigError("sigma_h", "must be positive")
        if self.lr < 0:
            raise ConfigError("lr", "must be non-negative")
        if not isinstance(self.strides, list) or not self.strides or any(
                not isinstance(s, int) or s < 2 or s & (s - 1) for s in self.strides):
            raise ConfigError("strides", f"expected a list of powers of two >= 2, got {self.strides!r}")
        if any(b != 2 * a for a, b in zip(self.strides, self.strides[1:])):
            raise ConfigError("strides", "each level must double the previous stride")
        if self.image_size % self.strides[-1]:
            raise ConfigError("image_size", f"{self.image_size} is not divisible by stride {self.strides[-1]}")
        if self.instances_per_class < self.shots + 1:
            raise ConfigError("instances_per_class", f"need at least shots + 1 = {self.shots + 1}")
        if self.reference_mode not in ("links", "identical"):
            raise ConfigError("reference_mode", "expected 'links' or 'identical'")
        if self.train_padding not in ("mixup", "zero", "uniform"):
            raise ConfigError("train_padding", "expected 'mixup', 'zero' or 'uniform'")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<document>", f"invalid JSON at offset {exc.pos}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("<document>", "top level must be an object")
        return cls.from_dict(data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def replace(self, **changes):
        return RunConfig.from_dict({**self.to_dict(), **changes})

    def model_dict(self):
        keys = ("K", "M", "L", "D", "S", "alpha", "beta", "sigma_h", "ffn_hidden", "backbone_width",
                "image_size", "strides", "share_layers", "detach_refs", "reference_mode")
        return {k: getattr(self, k) for k in keys}


def micro_config(**changes):
    """Tiny geometry used for end-to-end gradient checks."""
    base = dict(K=4, D=8, M=2, L=2, S=2, ffn_hidden=8, backbone_width=4, image_size=8,
                strides=[2, 4, 8], kc_min=3, kc_max=4, instances_per_class=4, base_classes=2,
                novel_classes=1)
    base.update(changes)
    return RunConfig(**base)
