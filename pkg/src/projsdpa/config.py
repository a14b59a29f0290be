"""JSON run configuration: model, attention and training settings in one flat document."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .model import ConfigError, ModelConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # data
    task: str = "corpus"  # "corpus" (tab-separated file) or "copy" (synthetic identity task)
    vocab_cap: int = 15000
    max_pairs: int | None = None
    copy_vocab: int = 20
    copy_len: int = 8
    copy_min_len: int | None = None
    copy_pairs: int = 2500
    # model / attention
    d_model: int = 128
    num_heads: int = 8
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    ff_dim: int = 512
    max_len: int = 10
    variant: str = "standard"
    sigma2_self: float = 0.01
    sigma2_cross: float = 0.05
    normalize_rows: bool = False
    attention_scale: float | None = None
    learn_sigma2: bool = False
    ln_eps: float = 1e-5
    # training
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    split: tuple = (0.7, 0.15, 0.15)
    record_timing: bool = True
    eval_workers: int = 1
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.task not in ("corpus", "copy"):
            raise ConfigError(f"task must be 'corpus' or 'copy', got {self.task!r}")
        if self.vocab_cap < 5:
            raise ConfigError("vocab_cap must be >= 5")
        if self.max_pairs is not None and self.max_pairs < 1:
            raise ConfigError("max_pairs must be >= 1 when set")
        if self.copy_vocab < 5 or self.copy_len < 1 or self.copy_pairs < 1:
            raise ConfigError("copy task needs copy_vocab >= 5, copy_len >= 1, copy_pairs >= 1")
        if self.copy_min_len is not None and not 1 <= self.copy_min_len <= self.copy_len:
            raise ConfigError("copy_min_len must lie in 1..copy_len")
        if self.task == "copy" and self.copy_len + 1 > self.max_len:
            raise ConfigError("max_len must leave room for the start/end marker (copy_len + 1)")
        self.split = tuple(self.split)
        # surface model/train errors now, before any data is touched
        self.model_config(max(self.vocab_cap, 5), max(self.vocab_cap, 5))
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, value in d.items():
            _check_type(key, value, known[key].type)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Parse and validate a JSON file; I/O and JSON errors surface as ``OSError``/``ConfigError``."""
        text = Path(path).read_text(encoding="utf-8")
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    def model_config(self, src_vocab: int, tgt_vocab: int) -> ModelConfig:
        return ModelConfig(
            d_model=self.d_model,
            num_heads=self.num_heads,
            num_encoder_layers=self.num_encoder_layers,
            num_decoder_layers=self.num_decoder_layers,
            ff_dim=self.ff_dim,
            src_vocab=src_vocab,
            tgt_vocab=tgt_vocab,
            max_len=self.max_len,
            variant=self.variant,
            sigma2_self=self.sigma2_self,
            sigma2_cross=self.sigma2_cross,
            normalize_rows=self.normalize_rows,
            seed=self.seed,
            ln_eps=self.ln_eps,
            attention_scale=self.attention_scale,
            learn_sigma2=self.learn_sigma2,
        )

    def train_config(self, metrics_path=None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            seed=self.seed,
            split=self.split,
            metrics_path=None if metrics_path is None else str(metrics_path),
            record_timing=self.record_timing,
            eval_workers=self.eval_workers,
            max_steps=self.max_steps,
        )


def _check_type(key, value, annotation: str) -> None:
    ann = str(annotation)
    if value is None:
        if "None" not in ann:
            raise ConfigError(f"{key}: null is not allowed")
        return
    if "bool" in ann:
        ok = isinstance(value, bool)
    elif "float" in ann:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif "int" in ann:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif "str" in ann:
        ok = isinstance(value, str)
    elif "tuple" in ann:
        ok = isinstance(value, list) and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
        )
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{key}: expected {ann}, got {type(value).__name__} {value!r}")
