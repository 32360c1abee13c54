"""Run configuration: INI-style sections, lossless round trip, strict keys."""

import configparser
from dataclasses import dataclass, field, fields
import io


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    arch: str = "784-256-32-256-784"
    hidden_activation: str = "relu"
    loss: str = "bce_with_sigmoid"
    middle_linear: bool = True


@dataclass
class OptimizerConfig:
    name: str = "kbfgs"
    lr: float = 0.03
    damping: float = 0.3
    beta: float = 0.9
    mu1: float = 0.2
    update_freq: int = 1
    lbfgs_memory: int = 100
    hessian_action: str = "minibatched"
    weight_decay: float = 0.0
    lr_decay_epochs: int = 0
    lr_decay_factor: float = 0.1
    stat_freq: int = 1
    inv_freq: int = 20


@dataclass
class DataConfig:
    source: str = "curves"
    path: str = ""
    n_samples: int = 0
    dims: str = "28"
    phi: float = 1.0
    seed: int = 1234


@dataclass
class RunSection:
    epochs: int = 20
    batch_size: int = 1000
    seed: int = 0
    eval_every: int = 0
    drop_last: bool = False
    log_wallclock: bool = False
    output: str = "run.csv"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)

    SECTIONS = ("model", "optimizer", "data", "run")

    def render(self):
        cp = configparser.ConfigParser(interpolation=None)
        for sec in self.SECTIONS:
            cp[sec] = {f.name: _render_value(getattr(getattr(self, sec), f.name))
                       for f in fields(getattr(self, sec))}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def parse(cls, text):
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls()
        for sec in cp.sections():
            if sec not in cls.SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in cp[sec].items():
                cfg.set(f"{sec}.{key}", raw)
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.render())

    def set(self, dotted, raw):
        """Set ``section.key`` from a string (or already-typed) value."""
        try:
            sec, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"expected section.key, got {dotted!r}") from None
        if sec not in self.SECTIONS:
            raise ConfigError(f"unknown section {sec!r}")
        obj = getattr(self, sec)
        types = {f.name: f.type for f in fields(obj)}
        if key not in types:
            raise ConfigError(f"unknown key {sec}.{key}")
        setattr(obj, key, _coerce(types[key], raw, dotted))
        return self

    def replace(self, **overrides):
        cfg = RunConfig.parse(self.render())
        for k, v in overrides.items():
            cfg.set(k.replace("__", "."), v)
        return cfg


def _render_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(tp, raw, name):
    tp = tp if isinstance(tp, str) else tp.__name__
    if not isinstance(raw, str):
        raw = _render_value(raw)
    try:
        if tp == "bool":
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if tp == "int":
            return int(raw)
        if tp == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name} ({tp})") from None


def _preset(**kv):
    cfg = RunConfig()
    cfg.model.arch = "mnist"
    cfg.model.loss = "bce_with_sigmoid"
    cfg.data.source = "mnist"
    cfg.run.batch_size = 1000
    for k, v in kv.items():
        cfg.set(k.replace("__", "."), v)
    return cfg


# Best (lr, damping) values reported for MNIST; batch size 1000 throughout.
PRESETS = {
    "mnist-ae-kbfgs": lambda: _preset(optimizer__name="kbfgs", optimizer__lr=0.03, optimizer__damping=0.3,
                                      optimizer__update_freq=1),
    "mnist-ae-kbfgs-amortized": lambda: _preset(optimizer__name="kbfgs", optimizer__lr=0.3,
                                                optimizer__damping=30.0, optimizer__update_freq=20),
    "mnist-ae-kbfgsl": lambda: _preset(optimizer__name="kbfgsl", optimizer__lr=0.03, optimizer__damping=0.3),
    "mnist-ae-kfac": lambda: _preset(optimizer__name="kfac", optimizer__lr=0.3, optimizer__damping=10.0,
                                     optimizer__stat_freq=1, optimizer__inv_freq=20),
    "mnist-ae-adam": lambda: _preset(optimizer__name="adam", optimizer__lr=1e-4, optimizer__damping=1e-4),
    "mnist-ae-sgdm": lambda: _preset(optimizer__name="sgdm", optimizer__lr=0.003),
}


def preset_config(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
