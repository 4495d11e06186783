"""Plain-text run configuration.

Grammar, one statement per line::

    # comment (also allowed after a value)
    [common]            # section header: `common` or a command name
    key = value

Keys in ``[common]`` apply to every command; keys in a command section apply
only when that command runs and override ``[common]``.  Command-line flags
override both.  Grid values use ``start:stop:step`` (inclusive stop),
``log:start:stop:count`` or a comma list.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .core import ParameterError

COMMANDS = ("se", "bo", "sim", "sweep", "rates", "cstar", "plot")


class ConfigError(ParameterError):
    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


def parse_grid(text) -> list:
    """Expand a grid expression into a list of floats."""
    text = str(text).strip()
    if not text:
        raise ParameterError("empty grid")
    if text.startswith("log:"):
        parts = text[4:].split(":")
        if len(parts) != 3:
            raise ParameterError(f"log grid needs log:start:stop:count, got {text!r}")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        if lo <= 0 or hi <= 0 or count < 1:
            raise ParameterError(f"invalid log grid {text!r}")
        return [float(v) for v in np.geomspace(lo, hi, count)]
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ParameterError(f"range grid needs start:stop:step, got {text!r}")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise ParameterError(f"invalid range grid {text!r}")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + k * step, 12) for k in range(count)]
    return [float(v) for v in text.split(",") if v.strip()]


def _bool(text):
    key = str(text).strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


# key -> converter; values are type-checked when the file is read
KEYS = {
    "model": str, "alpha": float, "lambda": float, "mu": float, "rho": float, "rho_test": float,
    "d": float, "loss": str, "r": float, "c": float, "n": int, "reps": int, "seed": int,
    "mc_count": int, "tol": float, "max_iter": int, "workers": int, "mode": str, "out": str,
    "format": str, "preset": str, "regime": str, "init": str, "plot": str,
    "c_grid": parse_grid, "r_grid": parse_grid, "lambda_grid": parse_grid, "rho_grid": parse_grid,
    "alpha_grid": parse_grid, "mu_grid": parse_grid, "loss_list": str,
    "se_table": str, "sim_table": str, "bo_table": str, "x": str, "logy": _bool,
    "features": str, "epsilon": float, "label_column": int,
}


def edit_distance(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def suggest_key(key, candidates=KEYS) -> str | None:
    best = min(candidates, key=lambda k: (edit_distance(key, k), k))
    return best if edit_distance(key, best) <= 2 else None


_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")
_SECTION = re.compile(r"^\s*\[\s*([A-Za-z_-]+)\s*\]\s*$")


def parse_config_text(text, path="<config>") -> dict:
    """Return {section: {key: value}} with values already converted."""
    out = {"common": {}}
    section = "common"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1).lower()
            if section != "common" and section not in COMMANDS:
                raise ConfigError(f"unknown section [{section}]", path, lineno)
            out.setdefault(section, {})
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"expected `key = value`, got {raw.strip()!r}", path, lineno)
        key, value = m.group(1).lower(), m.group(2)
        if key not in KEYS:
            hint = suggest_key(key)
            extra = f"; did you mean `{hint}`?" if hint else ""
            raise ConfigError(f"unknown key `{key}`{extra}", path, lineno)
        if key in out[section]:
            raise ConfigError(f"duplicate key `{key}` in [{section}]", path, lineno)
        try:
            out[section][key] = KEYS[key](value)
        except (ValueError, ParameterError) as exc:
            kind = getattr(KEYS[key], "__name__", "value")
            raise ConfigError(f"`{key}` expects {kind}, got {value!r} ({exc})", path, lineno) from None
    return out


def load_config(path, command=None) -> dict:
    """Flattened key/value mapping for ``command`` (common keys first)."""
    with open(path) as fh:
        sections = parse_config_text(fh.read(), str(path))
    merged = dict(sections.get("common", {}))
    if command is not None:
        merged.update(sections.get(command, {}))
    return merged
