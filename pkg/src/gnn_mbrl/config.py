"""Flat ``section.key = value`` run configuration shared by all subcommands.

Example::

    # physics shared by gen/train/eval
    world.dt = 0.5
    gnn.hidden_dim = 64
    cem.n_samples = 64
    eval.planner = gnn_mpc
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .evaluation import EvalConfig
from .gnn import GnnConfig
from .planners import CemConfig, MctsConfig
from .sim import WorldConfig

SECTIONS = {
    "world": WorldConfig,
    "gnn": GnnConfig,
    "cem": CemConfig,
    "mcts": MctsConfig,
    "eval": EvalConfig,
}


class ConfigFileError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    cem: CemConfig = field(default_factory=CemConfig)
    mcts: MctsConfig = field(default_factory=MctsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def text(self) -> str:
        lines = []
        for section in SECTIONS:
            obj = getattr(self, section)
            lines += [f"{section}.{f.name} = {_fmt(getattr(obj, f.name))}" for f in fields(obj)]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_value(raw: str, typ: str, where: str):
    raw = raw.strip()
    optional = "None" in typ
    if optional and raw.lower() in ("none", ""):
        return None
    base = typ.replace("| None", "").strip()
    try:
        if base == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigFileError(f"{where}: cannot parse {raw!r} as {base}") from None


def parse_assignments(lines, source: str = "<config>") -> dict[str, dict[str, object]]:
    """Parse ``section.key = value`` lines into ``{section: {key: value}}``; unknown keys raise."""
    out: dict[str, dict[str, object]] = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigFileError(f"{where}: expected 'section.key = value', got {line!r}")
        lhs, rhs = line.split("=", 1)
        section, _, key = lhs.strip().partition(".")
        if section not in SECTIONS:
            raise ConfigFileError(f"{where}: unknown section {section!r}")
        types = {f.name: f.type for f in fields(SECTIONS[section])}
        if key not in types:
            raise ConfigFileError(f"{where}: unknown key {section}.{key}")
        out[section][key] = _parse_value(rhs, str(types[key]), where)
    return out


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Config file (optional) then ``--set`` overrides, validated eagerly.

    ``gnn.pos_scale`` / ``gnn.vel_scale`` follow the world's arena side and
    speed clamp unless set explicitly.
    """
    values: dict[str, dict[str, object]] = {s: {} for s in SECTIONS}
    if path is not None:
        text = Path(path).read_text()
        for s, kv in parse_assignments(text.splitlines(), str(path)).items():
            values[s].update(kv)
    for s, kv in parse_assignments(list(overrides), "--set").items():
        values[s].update(kv)
    try:
        world = WorldConfig(**values["world"])
        gnn_kw = dict(values["gnn"])
        gnn_kw.setdefault("pos_scale", world.arena_side)
        gnn_kw.setdefault("vel_scale", world.max_speed)
        return RunConfig(
            world=world,
            gnn=GnnConfig(**gnn_kw),
            cem=CemConfig(**values["cem"]),
            mcts=MctsConfig(**values["mcts"]),
            eval=EvalConfig(**values["eval"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigFileError(str(exc)) from exc


def with_overrides(obj, **kw):
    return replace(obj, **{k: v for k, v in kw.items() if v is not None})
