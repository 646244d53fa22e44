"""Service configuration: JSON file + PLUGCHAT_* environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .decoding import GenerationParams

ENV_PREFIX = "PLUGCHAT_"


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    checkpoint_path: str = ""
    rewrite_checkpoint_path: str = ""
    vocab_path: str = ""
    merges_path: str = ""
    template_file: str = ""  # empty -> builtin inference templates
    template_lang: str = "en"
    index_path: str = ""  # empty -> no local search backend
    data_dir: str = "plugchat-data"
    recent_turns: int = 4
    search_top_n: int = 10
    search_enabled_default: bool = True
    refusal_template: str = (
        "I would rather not talk about that. Could we discuss something else?"
    )
    generation: dict = field(default_factory=dict)  # GenerationParams overrides

    def generation_params(self) -> GenerationParams:
        return GenerationParams(**self.generation)


def load_config(path: str | Path | None = None, env: dict | None = None) -> ServiceConfig:
    """Read the JSON config file (when given), then apply PLUGCHAT_<FIELD>
    environment overrides, coerced to the field's type."""
    data: dict = {}
    if path:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    env = dict(os.environ if env is None else env)
    config = ServiceConfig(**data)
    for f in fields(ServiceConfig):
        key = ENV_PREFIX + f.name.upper()
        if key not in env:
            continue
        raw = env[key]
        if f.type == "int":
            setattr(config, f.name, int(raw))
        elif f.type == "bool":
            setattr(config, f.name, raw.strip().lower() in ("1", "true", "yes", "on"))
        elif f.type == "dict":
            setattr(config, f.name, json.loads(raw))
        else:
            setattr(config, f.name, raw)
    return config
