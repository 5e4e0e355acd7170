"""Pipeline configuration: nested frozen dataclasses read from JSON with dotted overrides."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..frontend.system import FrontEndConfig
from ..mapping.optimizer import MapperConfig


@dataclass(frozen=True)
class PipelineConfig:
    frontend: FrontEndConfig = field(default_factory=FrontEndConfig)
    mapper: MapperConfig = field(default_factory=MapperConfig)
    queue_capacity: int = 4
    # Sleep so frames arrive at the rate given by their timestamps.
    pace: bool = False
    # Mapper schedule.  With ``continuous`` off the mapper runs a fixed number of
    # iterations per packet, which makes runs reproducible; with it on, it keeps
    # iterating while waiting for packets.
    continuous: bool = False
    iterations_per_packet: int = 100
    final_iterations: int = 1000
    eval_every: int = 5
    max_frames: int | None = None
    save_renders: bool = False

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def _build(tp, value):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp) and isinstance(value, dict):
        return from_dict(tp, value)
    if origin is tuple and isinstance(value, (list, tuple)):
        return tuple(value)
    if origin in (typing.Union, types.UnionType):
        for arg in typing.get_args(tp):
            if arg is type(None):
                if value is None:
                    return None
                continue
            return _build(arg, value)
    return value


def from_dict(cls, data: dict):
    """Instantiate dataclass ``cls`` from a nested dict; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: _build(hints[k], v) for k, v in data.items()})


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value`` to a nested dict; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ValueError(f"override {assignment!r} must look like key.path=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return data


def _merge(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> PipelineConfig:
    data = to_dict(PipelineConfig())
    if path is not None:
        _merge(data, json.loads(Path(path).read_text()))
    for item in overrides:
        apply_override(data, item)
    return from_dict(PipelineConfig, data)
