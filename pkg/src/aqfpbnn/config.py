"""Key = value run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
List-valued keys take comma-separated values. Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data and files
    data_dir: str = "data/mnist"
    dataset: str = "mnist"
    checkpoint: str = "model.aqbn"
    metrics: str = ""
    seed: int | None = None
    # training
    epochs: int = 15
    batch_size: int = 128
    lr0: float = 0.05
    warmup_epochs: float = 1.0
    tau_start: float = 0.85
    tau_end: float = 0.99
    momentum: float = 0.9
    weight_decay: float = 0.0
    recu: bool = True
    expectation_forward: bool = False
    shift_augment: int = 0
    train_samples: int = 0
    hidden_activation: str = "sc"
    # device / hardware
    crossbar_size: int = 16
    delta_i_in: float = 2.4
    bitstream_length: int = 16
    att_a: float = 70.0
    att_b: float = 0.5
    # evaluation
    limit: int = 0
    mode: str = "expectation"
    # sweep
    sizes: list = field(default_factory=lambda: [4, 8, 16, 18, 36, 72, 144])
    delta_i_ins: list = field(default_factory=lambda: [2.4])
    lengths: list = field(default_factory=lambda: [16])
    dist_mu: float = 0.0
    dist_sigma: float = 1.0
    v_th: float = 0.0
    max_energy_aj: float | None = None
    max_jj: int | None = None
    objective: str = "ame=1"
    clocking: str = "4-phase"
    memory_3phase: bool = False
    cooling: str = "4.2K"

    def as_dict(self):
        return asdict(self)


_TYPES = {
    "seed": int, "max_energy_aj": float, "max_jj": int,
    "sizes": int, "delta_i_ins": float, "lengths": int,
}


def _convert(key, raw: str, default):
    raw = raw.strip()
    try:
        if key in ("sizes", "delta_i_ins", "lengths"):
            return [_TYPES[key](v) for v in raw.split(",") if v.strip()]
        if key in ("seed", "max_energy_aj", "max_jj"):
            return None if raw.lower() in ("", "none") else _TYPES[key](raw)
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {key!r}: {raw!r}") from None


def field_names():
    return [f.name for f in fields(RunConfig)]


def parse_text(text: str, source="<config>") -> dict:
    """Parse key = value text into a dict of typed values (only keys present)."""
    defaults = RunConfig()
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not hasattr(defaults, key):
            raise ConfigError(f"{source}:{n}: unknown configuration key {key!r}")
        out[key] = _convert(key, value, getattr(defaults, key))
    return out


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_text(fh.read(), str(path))
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> tuple[RunConfig, set]:
    """Defaults, then config-file values, then CLI overrides (None = not given).

    Returns the config and the set of keys that were set explicitly.
    """
    cfg = RunConfig()
    explicit = set()
    for src in (file_values or {}, overrides or {}):
        for k, v in src.items():
            if v is None and src is overrides:
                continue
            if not hasattr(cfg, k):
                raise ConfigError(f"unknown configuration key {k!r}")
            setattr(cfg, k, v)
            explicit.add(k)
    return cfg, explicit


def parse_objective(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"objective terms look like name=weight, got {part!r}")
        k, v = part.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"objective weight for {k.strip()!r} is not a number") from None
    return out
