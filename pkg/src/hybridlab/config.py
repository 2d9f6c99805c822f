"""Scenario files: TOML sections naming grids, coefficient recipes and boundary data."""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .grid import DomainMasks, Grid, ScalarField, make_grid, make_masks, smoothstep5

MODALITIES = ("UMOT", "AET_POWER", "AET_CROSS", "AET_TRIPLE", "QPAT")


class ConfigError(ValueError):
    """A scenario file is malformed; the message names the offending field."""


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}.{key}: missing")
    return table[key]


def _num(table: dict, key: str, where: str, default=None, kind=float):
    v = table.get(key, default)
    if v is None:
        raise ConfigError(f"{where}.{key}: missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    return kind(v)


def _pair(table: dict, key: str, where: str, default=None) -> tuple[float, float]:
    v = table.get(key, default)
    if not isinstance(v, (list, tuple)) or len(v) != 2 or not all(isinstance(x, (int, float)) for x in v):
        raise ConfigError(f"{where}.{key}: expected a pair of numbers, got {v!r}")
    return float(v[0]), float(v[1])


# ---------------------------------------------------------------- coefficient recipes

def _radius(x, y, c):
    return np.hypot(x - c[0], y - c[1])


def _box_coords(x, y, box):
    x0, x1, y0, y1 = box
    return (x - x0) / (x1 - x0), (y - y0) / (y1 - y0)


def recipe_function(spec: dict, where: str):
    """Pointwise function ``(x, y) -> values`` for a coefficient recipe table."""
    kind = _need(spec, "recipe", where)
    amp = _num(spec, "amplitude", where, 1.0)
    if kind == "zero":
        return lambda x, y: np.zeros_like(x)
    if kind == "constant":
        value = _num(spec, "value", where)
        return lambda x, y: np.full_like(x, value)
    if kind == "gaussian-bump":
        c = _pair(spec, "center", where, (0.5, 0.5))
        w = _num(spec, "width", where)
        if w <= 0:
            raise ConfigError(f"{where}.width: must be positive")
        R = _num(spec, "support", where, 3.0 * w)
        return lambda x, y: amp * np.exp(-0.5 * (_radius(x, y, c) / w) ** 2) * (1 - smoothstep5(_radius(x, y, c) / R))
    if kind == "bump":
        c = _pair(spec, "center", where, (0.5, 0.5))
        R = _num(spec, "radius", where, 0.2)

        def f(x, y):
            s = np.minimum((_radius(x, y, c) / R) ** 2, 1.0)
            out = np.zeros_like(s)
            m = s < 1
            out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
            return amp * out
        return f
    if kind in ("product-sine", "poly-bump"):
        box = tuple(spec.get("box", (0.25, 0.75, 0.25, 0.75)))
        if len(box) != 4:
            raise ConfigError(f"{where}.box: expected [x0, x1, y0, y1]")
        power = _num(spec, "power", where, 3 if kind == "poly-bump" else 1, int)
        modes = _pair(spec, "modes", where, (1, 1)) if kind == "product-sine" else None

        def f(x, y):
            s, t = _box_coords(x, y, box)
            inside = (s > 0) & (s < 1) & (t > 0) & (t < 1)
            if kind == "product-sine":
                v = np.sin(modes[0] * np.pi * s) * np.sin(modes[1] * np.pi * t)
            else:
                v = (4 * s * (1 - s)) * (4 * t * (1 - t))
            return np.where(inside, amp * v ** power, 0.0)
        return f
    raise ConfigError(f"{where}.recipe: unknown recipe {kind!r}")


def make_field(grid: Grid, spec: dict | None, where: str) -> ScalarField:
    if spec is None:
        return ScalarField.zeros(grid)
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: expected a table")
    fn = recipe_function(spec, where)
    return ScalarField.from_padded(grid, grid.eval(fn).astype(complex))


# ---------------------------------------------------------------- scenario

@dataclass(frozen=True)
class Scenario:
    raw: dict
    digest: str
    grid: Grid
    masks: DomainMasks
    modality: str
    p: float | None
    seed: int
    source: str = field(default="", repr=False)

    def section(self, name: str) -> dict:
        v = self.raw.get(name, {})
        if not isinstance(v, dict):
            raise ConfigError(f"{name}: expected a table")
        return v

    def coefficient(self, name: str) -> ScalarField:
        return make_field(self.grid, self.section("coefficients").get(name), f"coefficients.{name}")

    def perturbation(self, name: str) -> ScalarField:
        return make_field(self.grid, self.section("perturbation").get(name), f"perturbation.{name}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def config_hash(text: str, overrides: dict[str, Any]) -> str:
    h = hashlib.sha256(text.encode())
    for k in sorted(overrides):
        if overrides[k] is not None:
            h.update(f"\n--{k}={overrides[k]}".encode())
    return h.hexdigest()[:12]


def parse_scenario(text: str, n: int | None = None, seed: int | None = None) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    g = raw.get("grid", {})
    nn = n if n is not None else _num(g, "n", "grid", 31, int)
    if nn < 4:
        raise ConfigError(f"grid.n: need n >= 4, got {nn}")
    grid = make_grid(nn)
    m = raw.get("masks", {})
    try:
        masks = make_masks(grid, _num(m, "m_prime", "masks", 0.25), _num(m, "m_dprime", "masks", 0.125))
    except ValueError as exc:
        raise ConfigError(f"masks: {exc}") from exc
    sc = raw.get("scenario", {})
    modality = sc.get("modality", "AET_POWER")
    if modality not in MODALITIES:
        raise ConfigError(f"scenario.modality: unknown modality {modality!r}")
    p = None
    if "p" in sc or modality.startswith("AET"):
        p = _num(sc, "p", "scenario", 2.0)
        if not p > 0:
            raise ConfigError(f"scenario.p: must be positive, got {p}")
    sd = seed if seed is not None else _num(sc, "seed", "scenario", 0, int)
    digest = config_hash(text, {"n": n, "seed": seed})
    return Scenario(raw, digest, grid, masks, modality, p, sd, text)


def load_scenario(path: str | Path, n: int | None = None, seed: int | None = None) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    return parse_scenario(text, n, seed)


# ---------------------------------------------------------------- boundary data recipes

def boundary_function(grid: Grid, spec: dict, where: str, sigma: ScalarField | None = None,
                      gamma: ScalarField | None = None) -> np.ndarray:
    """Values on the boundary ring for one ``[[boundary]]`` entry."""
    kind = _need(spec, "kind", where)
    if kind == "coordinate":
        axis = _num(spec, "axis", where, kind=int)
        if axis not in (1, 2):
            raise ConfigError(f"{where}.axis: must be 1 or 2")
        return grid.eval_boundary(lambda x, y: (x if axis == 1 else y).astype(complex))
    if kind == "exp":
        lam = _num(spec, "lam", where)
        axis = _num(spec, "axis", where, kind=int)
        sign = _num(spec, "sign", where, 1.0)
        if axis not in (1, 2):
            raise ConfigError(f"{where}.axis: must be 1 or 2")
        return grid.eval_boundary(lambda x, y: np.exp(sign * lam * (x if axis == 1 else y)).astype(complex))
    if kind == "constant":
        return np.full(grid.n_boundary, _num(spec, "value", where, 1.0), dtype=complex)
    if kind == "cgo":
        from .cgo import cgo_imag_parts, make_cgo, make_rho
        rho = make_rho(_num(spec, "rho", where), _pair(spec, "k", where, (0.0, 1.0)),
                       _pair(spec, "k_perp", where, (1.0, 0.0)))
        sig = sigma if sigma is not None else ScalarField.zeros(grid)
        trace = cgo_imag_parts(make_cgo(sig, rho, gamma)).f_I.astype(complex)
        return 1j * trace if spec.get("imaginary", False) else trace
    raise ConfigError(f"{where}.kind: unknown boundary recipe {kind!r}")


def boundary_data(sc: Scenario, sigma: ScalarField | None = None,
                  gamma: ScalarField | None = None) -> list[np.ndarray]:
    entries = sc.raw.get("boundary", [])
    if not isinstance(entries, list):
        raise ConfigError("boundary: expected an array of tables ([[boundary]])")
    return [boundary_function(sc.grid, e, f"boundary[{i}]", sigma, gamma) for i, e in enumerate(entries)]
