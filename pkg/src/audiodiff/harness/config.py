"""Run configuration in INI form: one section per subsystem, unknown keys rejected.

Example::

    [run]
    seed = 0
    out_dir = runs/default

    [train]
    mode = difference
    epochs = 30

``model.init_seed`` and ``train.seed`` default to ``run.seed`` unless set
explicitly in their own sections.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..difflearn import TrainConfig
from ..dsp import MelConfig
from ..evalkit import DecodingConfig
from ..model import ModelConfig
from ..scenegen import SceneConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    probe_seed: int = 0


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    dsp: MelConfig = field(default_factory=MelConfig)
    scenegen: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: DecodingConfig = field(default_factory=DecodingConfig)
    source: Path | None = None

    SECTIONS = ("run", "dsp", "scenegen", "model", "train", "eval")

    @property
    def out_dir(self) -> Path:
        p = Path(self.run.out_dir)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    def validate(self) -> None:
        try:
            self.scenegen.validate()
            self.model.validate()
            self.train.validate()
            self.eval.validate()
            MelConfig(**dataclasses.asdict(self.dsp))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.model.n_mels != self.dsp.n_mels:
            raise ConfigError(f"model.n_mels={self.model.n_mels} but dsp.n_mels={self.dsp.n_mels}")
        if self.train.L_max > self.model.max_len + 1:
            raise ConfigError("train.L_max may exceed model.max_len by at most one (the final target token)")

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in self.SECTIONS}

    def dumps(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name, values in self.to_dict().items():
            cp[name] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def corpus_hash(self) -> str:
        """Digest of everything a trained model must agree on with its corpus."""
        d = self.to_dict()
        model = {k: v for k, v in d["model"].items() if k != "init_seed"}
        key = {"seed": self.run.seed, "dsp": d["dsp"], "scenegen": d["scenegen"], "model": model}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _parse(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    cfg = RunConfig(source=source)
    unknown = set(cp.sections()) - set(RunConfig.SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    explicit: set[str] = set()
    for name in RunConfig.SECTIONS:
        if not cp.has_section(name):
            continue
        section = getattr(cfg, name)
        # configparser folds keys to lower case
        fields = {f.name.lower(): f.name for f in dataclasses.fields(section)}
        updates = {}
        for low, raw in cp.items(name):
            if low not in fields:
                raise ConfigError(f"unknown key [{name}] {low}")
            key = fields[low]
            updates[key] = _parse(raw, getattr(section, key), f"[{name}] {key}")
            explicit.add(f"{name}.{key}")
        try:
            setattr(cfg, name, dataclasses.replace(section, **updates))
        except ValueError as e:
            raise ConfigError(f"[{name}] {e}") from e
    if "model.init_seed" not in explicit:
        cfg.model.init_seed = cfg.run.seed
    if "train.seed" not in explicit:
        cfg.train.seed = cfg.run.seed
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=path.resolve())
