"""Flat key = value experiment configuration.

Grammar, one entry per line::

    # comment
    key = value

Values are parsed by the key's declared type: ``str``, ``int``, ``float``,
``bool`` (true/false), or comma-separated lists of those. Unknown keys,
unparsable values and violated constraints are collected and reported
together in one ``ConfigError``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

KINDS = ("qdelta3d", "rdelta1d", "dispersion", "maximal_scan", "cone_verify", "field_check")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        keys = ", ".join(k for k, _ in self.problems)
        detail = "; ".join(f"{k}: {m}" for k, m in self.problems)
        super().__init__(f"invalid config (keys: {keys}): {detail}")

    @property
    def keys(self) -> list[str]:
        return [k for k, _ in self.problems]


def _bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("true", "yes", "1"):
        return True
    if s in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv):
    def parse(s: str):
        items = [p.strip() for p in s.split(",") if p.strip()]
        return [conv(p) for p in items]

    return parse


_PARSERS = {
    "str": str.strip,
    "int": int,
    "float": float,
    "bool": _bool,
    "float_list": _list(float),
    "int_list": _list(int),
    "str_list": _list(str),
}

# key: (type, default). A default of None means "no default".
SCHEMA = {
    "experiment": ("str", None),
    "seed": ("int", 0),
    "output": ("str", "roughflow_out"),
    "workers": ("int", 1),
    "T": ("float", 1.0),
    "dt": ("float", 1e-3),
    "deltas": ("float_list", [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]),
    "K_grid": ("float_list", [2.0, 4.0, 8.0, 16.0, 32.0, 64.0]),
    "order": ("int", 8),
    "n_samples": ("int", 1000),
    "domain_lo": ("float_list", [-1.0] * 6),
    "domain_hi": ("float_list", [1.0] * 6),
    # 3-D force model
    "field": ("str", "rough"),
    "field_cap": ("float", 100.0),
    "amplitude_scale": ("float", 1.0),
    "force_mode": ("str", "electric"),
    "nu_mode": ("str", "one"),
    "method": ("str", "closed_form"),
    "chunk": ("int", 2000),
    # 1-D model
    "gamma": ("float", 2.5),
    "n_speeds": ("int", 64),
    "delta_bar_mode": ("str", "cumulative"),
    "delta_bar_C": ("float", 1.0),
    "x_range": ("float_list", [0.0, 1.0]),
    "v_range": ("float_list", [0.3, 1.3]),
    "n_audit": ("int", 3),
    # dispersion
    "s_grid": ("float_list", [4.0, 8.0, 16.0, 32.0]),
    "profile": ("str", "ball"),
    "radius": ("float", 1.0),
    # maximal scans
    "grid_files": ("str_list", []),
    "grid_n": ("int", 33),
    "grid_half_width": ("float", 2.0),
    "operator": ("str", "shell"),
    "p": ("float", 2.0),
    "n_probe": ("int", 100),
    # cone verification
    "n_trajectories": ("int", 10),
    "tol": ("float", 1e-12),
    "h": ("float", 1e-5),
    # field check
    "grid_file": ("str", ""),
}

_CHOICES = {
    "experiment": KINDS,
    "field": ("rough", "gaussian", "zero"),
    "force_mode": ("electric", "lorentz"),
    "nu_mode": ("one", "damped"),
    "method": ("closed_form", "quadrature"),
    "delta_bar_mode": ("cumulative", "constant"),
    "profile": ("ball", "gaussian"),
    "operator": ("spherical", "shell", "pair"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    @property
    def kind(self) -> str:
        return self.values["experiment"]

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def to_dict(self) -> dict:
        return dict(self.values)

    def dumps(self) -> str:
        out = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, list):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{k} = {v}")
        return "\n".join(out) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    problems = []
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append((f"line {lineno}", f"expected 'key = value', got {line!r}"))
            continue
        k, v = (p.strip() for p in line.split("=", 1))
        if k in raw:
            problems.append((k, "duplicate key"))
        raw[k] = v
    values = {}
    for k, v in raw.items():
        if k not in SCHEMA:
            problems.append((k, "unknown key"))
            continue
        typ = SCHEMA[k][0]
        try:
            values[k] = _PARSERS[typ](v)
        except ValueError as exc:
            problems.append((k, f"cannot parse {v!r} as {typ} ({exc})"))
    for k, (_, default) in SCHEMA.items():
        if k not in values and k not in dict(problems):
            if default is None:
                problems.append((k, "required key missing"))
            else:
                values[k] = list(default) if isinstance(default, list) else default
    problems.extend(_validate(values))
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(values)


def _validate(v: dict):
    bad = []
    for k, choices in _CHOICES.items():
        if k in v and v[k] not in choices:
            bad.append((k, f"must be one of {', '.join(choices)}"))
    if "dt" in v and not v["dt"] > 0:
        bad.append(("dt", "must be positive"))
    if "T" in v and not v["T"] > 0:
        bad.append(("T", "must be positive"))
    for k in ("deltas", "K_grid", "s_grid"):
        if k in v and len(v[k]) == 0:
            bad.append((k, "must be nonempty"))
    if v.get("deltas") and not all(0 < d < 1 for d in v["deltas"]):
        bad.append(("deltas", "values must lie in (0, 1)"))
    if v.get("K_grid") and not all(k > 0 for k in v["K_grid"]):
        bad.append(("K_grid", "values must be positive"))
    if v.get("s_grid") and not all(s > 0 for s in v["s_grid"]):
        bad.append(("s_grid", "values must be positive"))
    for k, n in (("domain_lo", 6), ("domain_hi", 6), ("x_range", 2), ("v_range", 2)):
        if k in v and len(v[k]) != n:
            bad.append((k, f"needs {n} values"))
    if len(v.get("domain_lo", [])) == 6 and len(v.get("domain_hi", [])) == 6:
        if not all(h > l for l, h in zip(v["domain_lo"], v["domain_hi"])):
            bad.append(("domain_hi", "must exceed domain_lo componentwise"))
    for k in ("n_samples", "workers", "chunk", "n_speeds", "n_trajectories", "n_probe", "grid_n"):
        if k in v and v[k] < 1:
            bad.append((k, "must be >= 1"))
    if "order" in v and not 2 <= v["order"] <= 512:
        bad.append(("order", "supported quadrature orders are 2..512"))
    if v.get("experiment") == "field_check" and not v.get("grid_file"):
        bad.append(("grid_file", "required for field_check"))
    return bad


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text())
