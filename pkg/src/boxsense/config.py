"""Flat key=value run configuration with a content digest for provenance.

One file captures everything a run needs: generation scale, curation cap,
model hyperparameters, and artifact paths.  The resolved configuration is
rendered back to canonical text and hashed; every artifact header carries the
short digest so outputs can be traced to the exact settings that made them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

from .model import OrmConfig, desk_preset, full_scale_preset

PRESETS = {"desk": desk_preset, "full": full_scale_preset}


class ConfigError(ValueError):
    """Raised on unreadable or ill-typed configuration input."""


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 42
    categories: tuple[str, ...] = ("easy", "medium", "hard")
    episodes_per_category: int = 2000
    cap_per_mode: int = 250
    stride: int = 5
    dataset_path: str = "dataset.jsonl"
    checkpoint_path: str = "checkpoint.json"
    out_dir: str = "out"
    orm: OrmConfig = field(default_factory=desk_preset)

    def __post_init__(self):
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")
        if self.episodes_per_category < 0:
            raise ConfigError("episodes_per_category must be non-negative")
        if self.cap_per_mode <= 0:
            raise ConfigError("cap_per_mode must be positive")
        if self.stride <= 0:
            raise ConfigError("stride must be positive")
        if not self.categories:
            raise ConfigError("categories must not be empty")


def _parse_scalar(key: str, value: str, target_type):
    try:
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {target_type.__name__}, got {value!r}") from exc
    return value


_RUN_INT_KEYS = {"master_seed", "episodes_per_category", "cap_per_mode", "stride"}
_RUN_STR_KEYS = {"dataset_path", "checkpoint_path", "out_dir"}
_ORM_INT_KEYS = {
    "embed_dim", "num_blocks", "num_heads", "ff_hidden", "mlp_hidden",
    "epochs", "batch_size", "seed", "max_tokens",
}
_ORM_FLOAT_KEYS = {"learning_rate"}


def parse_run_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped.

    The optional ``orm.preset`` key (``desk`` or ``full``) is applied first,
    then any explicit ``orm.*`` keys override individual fields.
    """
    run_kwargs: dict = {}
    preset_name = "desk"
    orm_kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key == "categories":
            run_kwargs["categories"] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key in _RUN_INT_KEYS:
            run_kwargs[key] = _parse_scalar(key, value, int)
        elif key in _RUN_STR_KEYS:
            run_kwargs[key] = value
        elif key == "orm.preset":
            if value not in PRESETS:
                raise ConfigError(f"line {lineno}: unknown preset {value!r}")
            preset_name = value
        elif key == "orm.channel_mask":
            orm_kwargs["channel_mask"] = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key == "orm.alphas":
            orm_kwargs["alphas"] = tuple(
                _parse_scalar(key, v.strip(), float) for v in value.split(",")
            )
        elif key.startswith("orm.") and key[4:] in _ORM_INT_KEYS:
            orm_kwargs[key[4:]] = _parse_scalar(key, value, int)
        elif key.startswith("orm.") and key[4:] in _ORM_FLOAT_KEYS:
            orm_kwargs[key[4:]] = _parse_scalar(key, value, float)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        orm = PRESETS[preset_name](**orm_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(orm=orm, **run_kwargs)


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(text)


def resolved_text(config: RunConfig) -> str:
    """Canonical flat rendering; parsing it back reproduces the config."""
    lines = [
        f"master_seed = {config.master_seed}",
        f"categories = {','.join(config.categories)}",
        f"episodes_per_category = {config.episodes_per_category}",
        f"cap_per_mode = {config.cap_per_mode}",
        f"stride = {config.stride}",
        f"dataset_path = {config.dataset_path}",
        f"checkpoint_path = {config.checkpoint_path}",
        f"out_dir = {config.out_dir}",
    ]
    for f_ in fields(OrmConfig):
        value = getattr(config.orm, f_.name)
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        else:
            rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"orm.{f_.name} = {rendered}")
    return "\n".join(lines) + "\n"


def config_digest(config: RunConfig) -> str:
    """12 hex chars identifying the resolved configuration."""
    return hashlib.sha256(resolved_text(config).encode("utf-8")).hexdigest()[:12]


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Non-None keyword overrides win over file values; orm fields via orm_*."""
    run_changes = {}
    orm_changes = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key.startswith("orm_"):
            orm_changes[key[4:]] = value
        else:
            run_changes[key] = value
    orm = replace(config.orm, **orm_changes) if orm_changes else config.orm
    return replace(config, orm=orm, **run_changes)
