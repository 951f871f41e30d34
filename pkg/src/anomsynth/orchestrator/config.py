"""Run configuration: one JSON document, env vars only for secrets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..backends import BackendSuite, ChatCompletionsVLLM, mock_suite
from ..errors import ConfigError
from ..maskgen import MaskGenConfig
from ..synthpipe import DEFAULT_PROMPT_TEMPLATE, DEFAULT_STEPS, DEFAULT_T_STAR

DEFAULT_COUNT = 500


@dataclass
class RunConfig:
    seed: int = 0
    backends: dict = field(default_factory=lambda: {"profile": "mock"})
    synthesis: dict = field(default_factory=dict)
    maskgen: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        cfg = cls(
            seed=int(doc.get("seed", 0)),
            backends=dict(doc.get("backends", {"profile": "mock"})),
            synthesis=dict(doc.get("synthesis", {})),
            maskgen=dict(doc.get("maskgen", {})),
            counts=dict(doc.get("counts", {})),
            paths=dict(doc.get("paths", {})),
        )
        # relative paths resolve against the config file's directory
        base = path.parent
        cfg.paths = {k: str((base / v).resolve()) if not Path(v).is_absolute() else v for k, v in cfg.paths.items()}
        return cfg

    def path(self, key: str, default: str | None = None) -> Path:
        value = self.paths.get(key, default)
        if value is None:
            raise ConfigError(f"config is missing paths.{key}")
        return Path(value)

    @property
    def t_star(self) -> int:
        return int(self.synthesis.get("t_star", DEFAULT_T_STAR))

    @property
    def steps(self) -> int:
        return int(self.synthesis.get("steps", DEFAULT_STEPS))

    @property
    def prompt_template(self) -> str:
        return self.synthesis.get("prompt_template", DEFAULT_PROMPT_TEMPLATE)

    @property
    def count(self) -> int:
        return int(self.counts.get("per_object", DEFAULT_COUNT))

    def maskgen_config(self) -> MaskGenConfig:
        known = {k: self.maskgen[k] for k in ("l_rate", "h_rate", "thresh1", "thresh2", "max_retries") if k in self.maskgen}
        return MaskGenConfig(**known)

    def build_suite(self, steps: int | None = None) -> BackendSuite:
        cfg = self.backends
        profile = cfg.get("profile", "mock")
        if profile != "mock":
            raise ConfigError(f"unknown backend profile {profile!r}; only 'mock' builds a full suite")
        suite = mock_suite(
            seed=int(cfg.get("seed", self.seed)),
            embed_dim=int(cfg.get("embed_dim", 16)),
            segmenter_threshold=float(cfg.get("segmenter_threshold", 0.5)),
            noise_mode=cfg.get("noise", "oracle"),
            total_steps=steps if steps is not None else self.steps,
            n_classes=int(cfg.get("n_classes", 10)),
            feature_dim=int(cfg.get("feature_dim", 32)),
        )
        vllm_cfg = cfg.get("vllm")
        if isinstance(vllm_cfg, dict) and "endpoint" in vllm_cfg:
            suite.vllm = ChatCompletionsVLLM(
                endpoint=vllm_cfg["endpoint"],
                model=vllm_cfg.get("model", "gpt-4-vision"),
                api_key_env=vllm_cfg.get("api_key_env", "ANOMSYNTH_VLLM_API_KEY"),
            )
        return suite
