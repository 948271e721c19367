"""Experiment configuration: a flat ``key = value`` text file with an explicit schema version.

Every field has a default; a file only lists what it changes.  Validation runs before any
computation and reports each bad field by name.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

SCHEMA_VERSION = "1"
_SECTION = "experiment"


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` is a list of {field, message} records."""

    def __init__(self, errors: list[dict]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{e['field']}: {e['message']}" for e in self.errors))

    def to_dict(self) -> dict:
        return {"error": "config", "schema_version": SCHEMA_VERSION, "fields": self.errors}


def parse_int_list(text: str) -> tuple[int, ...]:
    """'1..6' or '1,2,5' or a mix like '1..3,7'."""
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: str = SCHEMA_VERSION
    # automorphism and lattice
    a: int = 2
    b: int = 1
    c: int = 3
    d: int = 2
    E: int = 1
    # spectra
    modes: tuple[int, ...] = (1,)
    cutoff: int = 20
    cutoffs: tuple[int, ...] = (20, 40)
    r: float = 8.0
    band_tol: float = 0.15
    kmax_bands: int = 3
    eta: float = 0.3
    method: str = "both"
    # quadrature
    quad_order: int = 16
    quad_panel: float = 0.25
    tol: float = 1e-10
    # deviation
    t_min: float = 10.0
    t_max: float = 1e5
    t_points: int = 49
    ensemble: int = 16
    # cohomology
    kmax: int = 14
    cob_tol: float = 1e-10
    site_grid: int = 16
    verify_samples: int = 50
    verify_times: tuple[float, ...] = (0.1, 1.0, 10.0)
    # renormalisation check
    samples: int = 1000
    t_range: float = 10.0
    # norms
    norm_modes: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    nu: int = 2
    norm_points: int = 0
    # run
    selftest_tol: float = 1e-12
    seed: int = 0
    observable: str = ""

    # -- derived
    @property
    def matrix(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)

    def quadrature(self):
        from .orbit import QuadratureSpec
        return QuadratureSpec(self.quad_order, self.quad_panel, self.tol)

    def automorphism(self):
        from .heis import stable_generator
        return stable_generator(self.a, self.b, self.c, self.d)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = [f"[{_SECTION}]"]
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {','.join(map(str, v)) if isinstance(v, list) else v}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return coerce({**self.to_dict(), **{k: v for k, v in kw.items() if v is not None}})


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig.__dataclass_fields__


def _convert(name: str, raw):
    default = _DEFAULTS[name].default
    if isinstance(default, tuple):
        if isinstance(raw, (list, tuple)):
            items = list(raw)
        else:
            items = None
        if default and isinstance(default[0], float):
            if items is None:
                items = [s for s in str(raw).replace(" ", "").split(",") if s]
            return tuple(float(v) for v in items)
        if items is not None:
            return tuple(int(v) for v in items)
        return parse_int_list(raw)
    if isinstance(default, bool):
        return str(raw).lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        v = float(raw)
        if v != int(v):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    if isinstance(default, float):
        return float(raw)
    return str(raw)


def coerce(values: dict) -> ExperimentConfig:
    """Build and validate a config from raw values (strings or typed)."""
    errors = []
    typed = {}
    for k, v in values.items():
        if k not in _FIELDS:
            errors.append({"field": k, "message": "unknown key"})
            continue
        try:
            typed[k] = _convert(k, v)
        except (TypeError, ValueError) as exc:
            errors.append({"field": k, "message": f"cannot parse {v!r}: {exc}"})
    if errors:
        raise ConfigError(errors)
    cfg = replace(ExperimentConfig(), **typed)
    validate(cfg)
    return cfg


def load(path: str | None = None, text: str | None = None) -> ExperimentConfig:
    if path is None and text is None:
        return ExperimentConfig()
    if text is None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([{"field": "--config", "message": f"cannot read {path}: {exc.strerror}"}]) from exc
    if not text.lstrip().startswith("["):
        text = f"[{_SECTION}]\n" + text
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([{"field": "--config", "message": f"malformed file: {exc}"}]) from exc
    if _SECTION not in parser:
        raise ConfigError([{"field": "--config", "message": f"missing [{_SECTION}] section"}])
    raw = dict(parser[_SECTION])
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError([{"field": "schema_version",
                            "message": f"unsupported version {version!r}, expected {SCHEMA_VERSION!r}"}])
    return coerce(raw)


def validate(cfg: ExperimentConfig, need_parity: bool = False) -> None:
    """Raise ConfigError listing every invalid field; spectra additionally need the parity condition."""
    from .heis import LatticeSpec, parity_ok, preserves_lattice, stable_generator

    errors = []

    def bad(name, msg):
        errors.append({"field": name, "message": msg})

    def positive(name, strict=True):
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and (v > 0 if strict else v >= 0)):
            bad(name, f"must be {'positive' if strict else 'non-negative'}, got {v!r}")

    if cfg.schema_version != SCHEMA_VERSION:
        bad("schema_version", f"unsupported version {cfg.schema_version!r}")
    if cfg.E < 1:
        bad("E", f"lattice refinement must be >= 1, got {cfg.E}")
    det = cfg.a * cfg.d - cfg.b * cfg.c
    if det != 1:
        bad("a,b,c,d", f"determinant must be 1, got {det}")
    elif abs(cfg.a + cfg.d) <= 2:
        bad("a,b,c,d", f"|trace| = {abs(cfg.a + cfg.d)} <= 2, matrix is not hyperbolic")
    else:
        A = stable_generator(*cfg.matrix)
        if cfg.E >= 1 and not preserves_lattice(A, LatticeSpec(cfg.E)):
            bad("E", f"A does not preserve the lattice with E = {cfg.E}")
        if need_parity and not parity_ok(A):
            bad("a,b,c,d", "parity condition ab = cd = 0 mod 2 fails; no exact quantum propagator")
    for name in ("cutoff", "quad_order", "t_points", "ensemble", "kmax", "site_grid", "verify_samples",
                 "samples", "kmax_bands"):
        positive(name)
    for name in ("r", "band_tol", "eta", "quad_panel", "tol", "t_min", "t_max", "cob_tol", "t_range",
                 "selftest_tol"):
        positive(name)
    positive("nu", strict=False)
    positive("norm_points", strict=False)
    positive("seed", strict=False)
    if any(c < 1 for c in cfg.cutoffs):
        bad("cutoffs", "every cutoff must be >= 1")
    if cfg.r <= 1:
        bad("r", f"escape weight needs r > 1, got {cfg.r}")
    if not 0 < cfg.band_tol < 0.5:
        bad("band_tol", f"must lie in (0, 0.5), got {cfg.band_tol}")
    if cfg.t_min >= cfg.t_max:
        bad("t_min", f"must be below t_max = {cfg.t_max}")
    if cfg.t_points < 8:
        bad("t_points", "a deviation fit needs at least 8 points")
    if cfg.quad_order < 2:
        bad("quad_order", "must be >= 2")
    if cfg.method not in ("exact", "numeric", "both"):
        bad("method", f"must be exact, numeric or both, got {cfg.method!r}")
    if any(n == 0 for n in cfg.norm_modes):
        bad("norm_modes", "mode 0 has no Bargmann norm")
    if any(t <= 0 for t in cfg.verify_times):
        bad("verify_times", "times must be positive")
    if cfg.seed >= 2 ** 64:
        bad("seed", "must fit in 64 bits")
    if errors:
        raise ConfigError(errors)


def rng(seed: int):
    """Counter-based 64-bit generator (Philox) seeded from the config."""
    import numpy as np
    return np.random.Generator(np.random.Philox(int(seed)))
