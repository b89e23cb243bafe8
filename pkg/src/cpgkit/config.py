"""Runtime configuration: JSON file, environment overrides, CLI flags.

Precedence is flags over environment over file over defaults. Environment
variables cover the provider wiring only (CPGKIT_EMBED_ENDPOINT,
CPGKIT_EMBED_MODEL, CPGKIT_GEN_ENDPOINT, CPGKIT_GEN_MODEL).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

from .errors import ParseError, ValidationError
from .graph_builder import DEFAULT_TREATMENT_KEYWORDS
from .qa import DEFAULT_DISCUSSION_TEMPLATE, DEFAULT_SYNTH_TEMPLATE


@dataclass(frozen=True)
class BuilderConfig:
    gap_y: float | None = None  # None: 0.8 x median font size
    gap_x: float | None = None  # None: 2 x median char width
    join_tol: float = 2.0
    attach_tol: float = 6.0
    angle_tol: float = 5.0

    def validate(self) -> None:
        for name in ("join_tol", "attach_tol", "angle_tol"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"builder.{name} must be positive")
        for name in ("gap_y", "gap_x"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValidationError(f"builder.{name} must be positive when set")


@dataclass(frozen=True)
class RetrievalConfig:
    k1: float = 1.5
    b: float = 0.75
    rrf_k: int = 60
    top_m_per_retriever: int = 20
    final_top: int = 2

    def validate(self) -> None:
        if self.k1 <= 0:
            raise ValidationError("retrieval.k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValidationError("retrieval.b must be within [0, 1]")
        if self.rrf_k < 1 or self.top_m_per_retriever < 1 or self.final_top < 1:
            raise ValidationError("retrieval ranks and counts must be >= 1")


@dataclass(frozen=True)
class TreatmentConfig:
    keywords: tuple[str, ...] = DEFAULT_TREATMENT_KEYWORDS
    allowlist_file: str | None = None
    blocklist_file: str | None = None


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str | None = None
    model: str | None = None
    dimension: int = 64
    max_tokens: int = 512

    @property
    def configured(self) -> bool:
        return bool(self.endpoint and self.model)


@dataclass(frozen=True)
class Config:
    builder: BuilderConfig = BuilderConfig()
    retrieval: RetrievalConfig = RetrievalConfig()
    treatment: TreatmentConfig = TreatmentConfig()
    embedding: ProviderConfig = ProviderConfig()
    generation: ProviderConfig = ProviderConfig()
    discussion_template_file: str | None = None
    synth_template_file: str | None = None
    path_cap: int = 8
    answer_max_tokens: int = 256
    answer_temperature: float = 0.0

    def validate(self) -> None:
        self.builder.validate()
        self.retrieval.validate()
        if self.path_cap < 1:
            raise ValidationError("path_cap must be >= 1")
        if self.answer_max_tokens < 1:
            raise ValidationError("answer_max_tokens must be >= 1")
        for name in (
            "discussion_template_file",
            "synth_template_file",
        ):
            self._check_file(name, getattr(self, name))
        self._check_file("treatment.allowlist_file", self.treatment.allowlist_file)
        self._check_file("treatment.blocklist_file", self.treatment.blocklist_file)

    @staticmethod
    def _check_file(name: str, path: str | None) -> None:
        if path is not None and not Path(path).is_file():
            raise ValidationError(f"{name}: file not found: {path}")

    def discussion_template(self) -> str:
        if self.discussion_template_file:
            return Path(self.discussion_template_file).read_text(encoding="utf-8")
        return DEFAULT_DISCUSSION_TEMPLATE

    def synth_template(self) -> str:
        if self.synth_template_file:
            return Path(self.synth_template_file).read_text(encoding="utf-8")
        return DEFAULT_SYNTH_TEMPLATE


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ParseError(f"config.{name}: expected an object")
    return value


def _build(cls, raw: dict, where: str):
    known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(raw) - known
    if unknown:
        raise ParseError(f"config.{where}: unknown keys {sorted(unknown)}")
    kwargs = dict(raw)
    if "keywords" in kwargs:
        kwargs["keywords"] = tuple(kwargs["keywords"])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ParseError(f"config.{where}: {exc}") from exc


def load_config(
    path: str | os.PathLike | None = None, env: Mapping[str, str] | None = None
) -> Config:
    """Read config from a JSON file (optional) and apply env overrides."""
    env = os.environ if env is None else env
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file: invalid JSON ({exc.msg})") from exc
        if not isinstance(raw, dict):
            raise ParseError("config file: top-level value must be an object")

    top_level = {
        k: raw[k]
        for k in (
            "discussion_template_file",
            "synth_template_file",
            "path_cap",
            "answer_max_tokens",
            "answer_temperature",
        )
        if k in raw
    }
    config = Config(
        builder=_build(BuilderConfig, _section(raw, "builder"), "builder"),
        retrieval=_build(RetrievalConfig, _section(raw, "retrieval"), "retrieval"),
        treatment=_build(TreatmentConfig, _section(raw, "treatment"), "treatment"),
        embedding=_build(ProviderConfig, _section(raw, "embedding"), "embedding"),
        generation=_build(ProviderConfig, _section(raw, "generation"), "generation"),
        **top_level,
    )

    embed_over = {}
    if env.get("CPGKIT_EMBED_ENDPOINT"):
        embed_over["endpoint"] = env["CPGKIT_EMBED_ENDPOINT"]
    if env.get("CPGKIT_EMBED_MODEL"):
        embed_over["model"] = env["CPGKIT_EMBED_MODEL"]
    gen_over = {}
    if env.get("CPGKIT_GEN_ENDPOINT"):
        gen_over["endpoint"] = env["CPGKIT_GEN_ENDPOINT"]
    if env.get("CPGKIT_GEN_MODEL"):
        gen_over["model"] = env["CPGKIT_GEN_MODEL"]
    if embed_over:
        config = replace(config, embedding=replace(config.embedding, **embed_over))
    if gen_over:
        config = replace(config, generation=replace(config.generation, **gen_over))

    config.validate()
    return config


def load_override_list(path: str | None) -> frozenset[str]:
    """Node-id override files: one id per line, '#' starts a comment."""
    if path is None:
        return frozenset()
    ids = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        entry = line.split("#", 1)[0].strip()
        if entry:
            ids.add(entry)
    return frozenset(ids)
