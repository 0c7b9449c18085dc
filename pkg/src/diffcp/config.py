"""Scenario configuration: flat ``key = value`` text with ``#`` comments.

Parsing is strict: unknown keys, malformed values and missing required
fields raise :class:`ConfigError`, which the command line maps to exit
code 2.  :func:`validate` resolves grids and estimates cost without
running anything.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

__all__ = ["KINDS", "ConfigError", "InitSpec", "ScenarioConfig", "parse_config", "load_config",
           "apply_overrides", "validate", "Diagnostics", "build_init"]

KINDS = ("appendix", "classical", "wholeline", "halfline", "oracle", "qcost", "report")
STEP_WARNING = 10 ** 6


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InitSpec:
    """``selfsimilar BETA``, ``uniform A B``, ``table PATH`` or ``lemma``."""

    family: str
    params: tuple = ()
    path: str | None = None

    @classmethod
    def parse(cls, text: str, base: Path | None = None) -> "InitSpec":
        parts = text.split()
        if not parts:
            raise ConfigError("init: empty value")
        fam, rest = parts[0].lower(), parts[1:]
        if fam == "selfsimilar":
            (beta,) = _numbers("init", rest, 1)
            if not beta > 0:
                raise ConfigError(f"init: selfsimilar needs beta > 0, got {beta:g}")
            if beta > 1:
                raise ConfigError(f"init: selfsimilar needs beta <= 1, got {beta:g}")
            return cls("selfsimilar", (beta,))
        if fam == "uniform":
            a, b = _numbers("init", rest, 2)
            if not 0 <= a < b:
                raise ConfigError(f"init: uniform needs 0 <= a < b, got {a:g} {b:g}")
            return cls("uniform", (a, b))
        if fam == "table":
            if len(rest) != 1:
                raise ConfigError("init: table needs exactly one path")
            p = Path(rest[0])
            if base is not None and not p.is_absolute():
                p = base / p
            if not p.is_file():
                raise ConfigError(f"init: table file not found: {p}")
            return cls("table", (), str(p))
        if fam == "lemma":
            if rest:
                raise ConfigError("init: lemma takes no parameters")
            return cls("lemma")
        raise ConfigError(f"init: unknown family {fam!r}")

    def __str__(self) -> str:
        if self.family == "table":
            return f"table {self.path}"
        return " ".join([self.family] + [repr(float(v)) for v in self.params])


def _numbers(key, tokens, n):
    if len(tokens) != n:
        raise ConfigError(f"{key}: expected {n} number(s), got {len(tokens)}")
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise ConfigError(f"{key}: not a number in {' '.join(tokens)!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{key}: values must be finite")
    return vals


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    eps: float | None = None
    t_end: float | None = None
    dt: float | None = None
    dt_factor: float | None = None
    stop_ratio: float | None = None
    x_max: float | None = None
    min_spacing: float | None = None
    grading: float | None = None
    init: InitSpec | None = None
    y: float | None = None
    x_values: tuple | None = None
    horizon: float | None = None
    record_every: int = 10
    refine: bool = True
    out: str | None = None
    tol: dict = field(default_factory=dict)


_POSITIVE = ("eps", "t_end", "dt", "dt_factor", "stop_ratio", "x_max", "min_spacing", "y",
             "horizon")
_REQUIRED = {"wholeline": ("eps",), "halfline": ("eps",), "report": ("eps",)}
_DEFAULTS = {
    "classical": dict(t_end=5.0, init="selfsimilar 0.5"),
    "wholeline": dict(stop_ratio=60.0, init="uniform 0 1", dt_factor=0.01),
    "halfline": dict(stop_ratio=60.0, init="uniform 0.2 1.2", dt_factor=0.005, grading=0.004),
    "oracle": dict(eps=0.1),
    "qcost": dict(horizon=40.0, x_values="0.25, 0.5, 1, 2, 4"),
    "report": dict(stop_ratio=60.0, init="uniform 0.2 1.2", y=1.0, x_values="0.5, 0.75, 1, 1.25, 1.5, 1.75, 2",
                   dt_factor=0.005, grading=0.004),
}
# keys that do not affect a kind are rejected rather than silently ignored
_ALLOWED = {
    "appendix": {"out", "tol"},
    "classical": {"t_end", "dt", "init", "record_every", "out", "tol"},
    "wholeline": {"eps", "t_end", "dt", "dt_factor", "stop_ratio", "init", "record_every", "out",
                  "tol"},
    "halfline": {"eps", "t_end", "dt_factor", "stop_ratio", "x_max", "min_spacing", "grading",
                 "init", "record_every", "refine", "out", "tol"},
    "oracle": {"eps", "out", "tol"},
    "qcost": {"x_values", "horizon", "out", "tol"},
    "report": {"eps", "t_end", "dt_factor", "stop_ratio", "x_max", "min_spacing", "grading",
               "init", "y", "x_values", "record_every", "out", "tol"},
}


def _split_lines(text: str):
    pairs = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k or not v:
            raise ConfigError(f"line {n}: empty key or value")
        pairs.append((k, v))
    return pairs


def _convert(key, value, base):
    if key == "kind":
        if value not in KINDS:
            raise ConfigError(f"kind: must be one of {', '.join(KINDS)}")
        return value
    if key == "init":
        return InitSpec.parse(value, base)
    if key == "x_values":
        vals = _numbers(key, value.replace(",", " ").split(), len(value.replace(",", " ").split()))
        if not vals or min(vals) <= 0:
            raise ConfigError("x_values: need at least one positive value")
        return tuple(vals)
    if key == "record_every":
        try:
            n = int(value)
        except ValueError:
            raise ConfigError("record_every: not an integer") from None
        if n < 1:
            raise ConfigError("record_every: must be >= 1")
        return n
    if key == "refine":
        low = value.lower()
        if low not in ("true", "false", "yes", "no", "1", "0"):
            raise ConfigError("refine: expected a boolean")
        return low in ("true", "yes", "1")
    if key == "out":
        return value
    if key == "grading":
        (v,) = _numbers(key, [value], 1)
        if v < 0:
            raise ConfigError("grading: must be nonnegative")
        return v
    (v,) = _numbers(key, [value], 1)
    if key in _POSITIVE and not v > 0:
        raise ConfigError(f"{key}: must be positive, got {v:g}")
    return v


def _build(pairs, base=None) -> ScenarioConfig:
    names = {f.name for f in fields(ScenarioConfig)} - {"tol"}
    raw, tol = {}, {}
    for k, v in pairs:
        if k.startswith("tol."):
            name = k[4:]
            if not name:
                raise ConfigError("tol.: missing tolerance name")
            (tol[name],) = _numbers(k, [v], 1)
            continue
        if k not in names:
            raise ConfigError(f"unknown key {k!r}")
        raw[k] = v
    if "kind" not in raw:
        raise ConfigError("missing required field 'kind'")
    kind = _convert("kind", raw.pop("kind"), base)
    allowed = _ALLOWED[kind]
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"key {k!r} does not apply to kind {kind}")
    if tol and "tol" not in allowed:
        raise ConfigError(f"tolerance overrides do not apply to kind {kind}")
    for k in _REQUIRED.get(kind, ()):
        if k not in raw:
            raise ConfigError(f"missing required field '{k}' for kind {kind}")
    merged = {k: v for k, v in _DEFAULTS.get(kind, {}).items() if k not in raw}
    merged.update(raw)
    values = {k: _convert(k, v, base) if isinstance(v, str) else v for k, v in merged.items()}
    cfg = ScenarioConfig(kind=kind, tol=tol, **values)
    if cfg.init is not None and cfg.init.family == "lemma" and kind not in ("halfline", "report"):
        raise ConfigError("init: lemma applies to the half-line kinds only")
    if kind in ("wholeline", "halfline", "report") and cfg.t_end is None and cfg.stop_ratio is None:
        raise ConfigError("need t_end or stop_ratio")
    return cfg


def parse_config(text: str, base: Path | None = None) -> ScenarioConfig:
    return _build(_split_lines(text), base)


def load_config(path, overrides=()) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return _build(_split_lines(text) + _override_pairs(overrides), p.parent)


def _override_pairs(overrides):
    out = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        out.append((k, v))
    return out


def apply_overrides(kind: str, overrides=()) -> ScenarioConfig:
    """Config for ``kind`` from command-line ``key=value`` items only."""
    return _build([("kind", kind)] + _override_pairs(overrides))


def _read_table(path):
    xs, cs = [], []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    start = 0
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        start = 1
    for r in rows[start:]:
        if not r:
            continue
        try:
            xs.append(float(r[0]))
            cs.append(float(r[1]))
        except (ValueError, IndexError):
            raise ConfigError(f"init table {path}: bad row {r!r}") from None
    return np.array(xs), np.array(cs)


def build_init(spec: InitSpec, kind: str):
    """Resolve ``spec`` into the object the kind's evolution expects."""
    from .classical import InitialTail
    from .halfline import lemma_init, normalize_first_moment
    from .measures import DensityError, GridDensity, selfsimilar_init

    if spec.family == "lemma":
        return lemma_init()
    if kind == "classical" and spec.family == "selfsimilar":
        return InitialTail.selfsimilar(spec.params[0])
    # the jumps of a uniform law are not representable by linear interpolation
    if spec.family == "uniform" and kind == "wholeline":
        from .wholeline import InitQuadrature
        return InitQuadrature.uniform(*spec.params)
    if spec.family == "uniform":
        return InitialTail.uniform(*spec.params)
    try:
        if spec.family == "selfsimilar":
            beta = spec.params[0]
            end = 1.0 / (1.0 - beta) if beta < 1 else 40.0
            d = selfsimilar_init(beta, np.linspace(0.0, end, 4001))
        else:
            x, c = _read_table(spec.path)
            d = GridDensity(x, c)
    except DensityError as e:
        raise ConfigError(f"init: {e}") from None
    if kind in ("halfline", "report"):
        d = normalize_first_moment(d)
    return d


@dataclass
class Diagnostics:
    lines: list
    warnings: list
    steps: float
    nodes: int
    memory_bytes: int


def _halfline_nodes(cfg, support_end):
    from ._fv import graded_nodes

    h0 = cfg.min_spacing if cfg.min_spacing is not None else cfg.eps / 10.0
    x_max = cfg.x_max if cfg.x_max is not None else support_end + 40.0 + 10.0 * math.sqrt(cfg.eps)
    return h0, x_max, graded_nodes(0.0, x_max, h0, cfg.grading).size


def _relative_steps(cfg, dt_factor):
    # dt = dt_factor * Lambda with Lambda growing about linearly: steps ~ log(ratio)/dt_factor
    ratio = cfg.stop_ratio
    if ratio is None or (cfg.t_end is not None and cfg.t_end < ratio):
        ratio = 1.0 + (cfg.t_end or 0.0)
    return math.log(max(ratio, 1.0 + 1e-12)) / dt_factor + 1.0


def validate(cfg: ScenarioConfig) -> Diagnostics:
    """Resolve grids and estimate steps and memory without computing."""
    lines = [f"kind = {cfg.kind}"]
    warnings = []
    steps, nodes = 0.0, 0
    for f in fields(ScenarioConfig):
        v = getattr(cfg, f.name)
        if f.name in _ALLOWED[cfg.kind] and v is not None:
            lines.append(f"{f.name} = {v}")
    for k, v in sorted(cfg.tol.items()):
        lines.append(f"tol.{k} = {v!r}")
    if cfg.init is not None:
        build_init(cfg.init, cfg.kind)
    support = 0.0
    if cfg.init is not None and cfg.init.family == "uniform":
        support = cfg.init.params[1]
    elif cfg.init is not None and cfg.init.family == "selfsimilar" and cfg.init.params[0] < 1:
        support = 1.0 / (1.0 - cfg.init.params[0])
    if cfg.kind == "classical":
        dt = cfg.dt if cfg.dt is not None else 1e-3
        steps = cfg.t_end / dt
        nodes = 2000
    elif cfg.kind == "wholeline":
        steps = cfg.t_end / cfg.dt if cfg.dt is not None and cfg.t_end else \
            _relative_steps(cfg, cfg.dt_factor)
        nodes = 3001
    elif cfg.kind in ("halfline", "report"):
        h0, x_max, nodes = _halfline_nodes(cfg, support)
        lines.append(f"grid: h0 = {h0!r}, x_max = {x_max!r} (grows by 1.5x on demand), "
                     f"grading = {cfg.grading!r}, nodes = {nodes}")
        steps = _relative_steps(cfg, cfg.dt_factor)
        if cfg.kind == "halfline" and cfg.refine:
            steps *= 3.0
    elif cfg.kind == "qcost":
        steps = float(len(cfg.x_values))
    if math.isinf(cfg.t_end or 0.0) and cfg.stop_ratio is None:
        raise ConfigError("t_end is infinite and no stop_ratio is set")
    memory = int(nodes * 8 * 16 + steps * 8 * 20)
    lines.append(f"estimated steps = {steps:.3g}")
    lines.append(f"estimated memory = {memory / 2 ** 20:.3g} MiB")
    if steps > STEP_WARNING:
        warnings.append(f"warning: estimated step count {steps:.3g} exceeds {STEP_WARNING:.0e}")
    return Diagnostics(lines, warnings, steps, nodes, memory)
