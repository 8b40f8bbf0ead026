"""Sectioned ``key = value`` run configuration.

Every key is optional; unknown sections or keys are errors so typos do not
silently fall back to defaults. Errors carry the file line of the offending
entry.

Example::

    [run]
    id = composite-dcc
    seed = 0

    [scene]
    kind = composite
    width = 32
    height = 32

    [train]
    iters = 1000
    init = grid
    grid = 6

    [adc]
    criterion = dcc
    tau_p = 0.5
"""

from __future__ import annotations

import configparser
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .adc import AdcConfig, Criterion, Placement
from .optim import LearningRates, TrainConfig
from .scenes import SCENE_KINDS, SceneSpec
from .toybench import ALL_MODES, BenchConfig


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "<config>", line: int | None = None, key: str | None = None):
        where = path if line is None else f"{path}:{line}"
        field_ = f" [{key}]" if key else ""
        super().__init__(f"{where}{field_}: {message}")
        self.path, self.line, self.key = path, line, key


def _floats(n: int) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
        if len(parts) != n:
            raise ValueError(f"expected {n} comma-separated numbers, got {len(parts)}")
        return tuple(float(p) for p in parts)
    return parse


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        v = text.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {text!r}")
        return v
    return parse


def _modes(text: str) -> tuple[Placement, ...]:
    names = [p for p in re.split(r"[,\s]+", text.strip().lower()) if p]
    if names == ["all"]:
        return ALL_MODES
    return tuple(Placement(n) for n in names)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return v


# section -> key -> parser
SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "run": {"id": str, "seed": _u64, "jobs": int, "log_every": int},
    "scene": {"kind": _choice(SCENE_KINDS), "width": int, "height": int, "seed": _u64, "n_peaks": int,
              "sigma_range": _floats(2), "aspect_range": _floats(2), "amplitude_range": _floats(2),
              "separation_range": _floats(2), "target": str},
    "train": {"iters": int, "init": _choice(("moment", "grid", "file")), "grid": int,
              "init_path": str, "init_opacity": float, "lr_mu": float, "lr_scales": float,
              "lr_theta": float, "lr_intensity": float, "lr_opacity": float,
              "beta1": float, "beta2": float, "eps": float},
    "adc": {"enabled": _bool, "criterion": lambda t: Criterion(t.strip().lower()),
            "placement": lambda t: Placement(t.strip().lower()), "tau_p": float, "tau_s": float,
            "prune_opacity": float, "refine_period": int, "densify_until_frac": float,
            "n_candidates": int, "dense_n": int, "random_scale_divisor": float},
    "bench": {"samples": int, "modes": _modes, "warmup_iters": int, "refine_iters": int, "window": int,
              "init_opacity": float, "init_scale": float},
    "dcmap": {"input": str, "window_radius": int, "mag_floor": float, "min_count": int},
    "render": {"gaussians": str, "width": int, "height": int},
}


@dataclass
class RunConfig:
    """Parsed configuration: typed values plus where each came from."""

    path: str = "<defaults>"
    values: dict[str, dict[str, Any]] = field(default_factory=dict)
    raw: dict[str, dict[str, str]] = field(default_factory=dict)
    lines: dict[tuple[str, str], int] = field(default_factory=dict)

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def has(self, section: str, key: str) -> bool:
        return key in self.values.get(section, {})

    def set(self, section: str, key: str, value, text: str | None = None) -> None:
        """Override a value (e.g. from a command-line flag); it is echoed like any other."""
        self.values.setdefault(section, {})[key] = value
        if text is None:
            text = value.value if isinstance(value, enum.Enum) else str(value)
        self.raw.setdefault(section, {})[key] = text

    def fail(self, section: str, key: str, message: str) -> ConfigError:
        return ConfigError(message, self.path, self.lines.get((section, key)), f"{section}.{key}")

    @property
    def run_id(self) -> str:
        return self.get("run", "id", "run")

    # -- typed views -----------------------------------------------------

    def scene(self) -> SceneSpec:
        kw = {k: v for k, v in self.values.get("scene", {}).items() if k != "target"}
        kw.setdefault("seed", self.get("run", "seed", 0))
        try:
            return SceneSpec(**kw)
        except ValueError as exc:
            raise self._blame("scene", kw, exc) from None

    def adc(self) -> AdcConfig | None:
        sec = dict(self.values.get("adc", {}))
        if not sec.pop("enabled", True):
            return None
        try:
            return AdcConfig(**sec)
        except ValueError as exc:
            raise self._blame("adc", sec, exc) from None

    def learning_rates(self) -> LearningRates:
        sec = self.values.get("train", {})
        kw = {k[3:]: v for k, v in sec.items() if k.startswith("lr_")}
        try:
            return LearningRates(**kw)
        except ValueError as exc:
            raise self._blame("train", {f"lr_{k}": v for k, v in kw.items()}, exc) from None

    def train(self) -> TrainConfig:
        sec = self.values.get("train", {})
        kw = {k: sec[k] for k in ("beta1", "beta2", "eps") if k in sec}
        try:
            return TrainConfig(total_iters=sec.get("iters", 1000), lr=self.learning_rates(), adc=self.adc(),
                               seed=self.get("run", "seed", 0), log_every=self.get("run", "log_every", 100),
                               **kw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise self._blame("train", sec, exc) from None

    def bench(self) -> BenchConfig:
        sec = dict(self.values.get("bench", {}))
        adc_sec = self.values.get("adc", {})
        for k in ("n_candidates", "dense_n", "random_scale_divisor"):
            if k in adc_sec:
                sec[k] = adc_sec[k]
        try:
            return BenchConfig(seed=self.get("run", "seed", 0), scene=self.scene(), lr=self.learning_rates(), **sec)
        except ConfigError:
            raise
        except ValueError as exc:
            raise self._blame("bench", sec, exc) from None

    def _blame(self, section: str, keys, exc: Exception) -> ConfigError:
        """Attach the first key the message names, else the section."""
        msg = str(exc)
        for k in keys:
            if k in msg or k.replace("lr_", "") in msg:
                return self.fail(section, k, msg)
        return ConfigError(msg, self.path, None, section)

    # -- echo ------------------------------------------------------------

    def dumps(self) -> str:
        out = [f"# resolved configuration (source: {self.path})"]
        for sec in SCHEMA:
            if sec not in self.raw:
                continue
            out.append(f"\n[{sec}]")
            out.extend(f"{k} = {v}" for k, v in self.raw[sec].items())
        return "\n".join(out) + "\n"


_KEY_RE = re.compile(r"^\s*([^#;=:\s][^=:]*?)\s*[=:]")
_SEC_RE = re.compile(r"^\s*\[([^\]]+)\]")


def _line_map(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` entry, keyed by (section, key)."""
    where: dict[tuple[str, str], int] = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        if m := _SEC_RE.match(line):
            section = m.group(1).strip().lower()
        elif section and (m := _KEY_RE.match(line)):
            where.setdefault((section, m.group(1).strip().lower()), n)
    return where


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       empty_lines_in_values=False)
    try:
        parser.read_string(text, source=path)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("entry before any [section] header", path, exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", path, exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", path, exc.lineno, f"{exc.section}.{exc.option}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse line {line!r}", path, lineno) from None

    cfg = RunConfig(path=path, lines=_line_map(text))
    sec_lines = {m.group(1).strip().lower(): n for n, l in enumerate(text.splitlines(), 1)
                 if (m := _SEC_RE.match(l))}
    for section in parser.sections():
        name = section.lower()
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SCHEMA)}",
                              path, sec_lines.get(name))
        for key, text_value in parser.items(section):
            parse = SCHEMA[name].get(key)
            if parse is None:
                raise cfg.fail(name, key, f"unknown key; section [{name}] accepts {', '.join(SCHEMA[name])}")
            try:
                value = parse(text_value)
            except (ValueError, TypeError) as exc:
                raise cfg.fail(name, key, f"bad value {text_value!r}: {exc}") from None
            cfg.values.setdefault(name, {})[key] = value
            cfg.raw.setdefault(name, {})[key] = text_value
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}", str(p)) from None
    cfg = parse_config(text, str(p))
    _resolve_paths(cfg, p.parent)
    return cfg


def _resolve_paths(cfg: RunConfig, base: Path) -> None:
    """Relative file references are taken relative to the config file."""
    for section, key in (("scene", "target"), ("train", "init_path"), ("dcmap", "input"), ("render", "gaussians")):
        v = cfg.get(section, key)
        if v is not None and not Path(v).is_absolute():
            cfg.values[section][key] = str(base / v)


def default_config() -> RunConfig:
    return RunConfig()


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "load_config", "parse_config", "default_config"]
