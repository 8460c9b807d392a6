"""Flat key = value run configuration with a typed schema.

The format is line-oriented text: one `key = value` pair per line, `#`
comments, blank lines ignored.  Vector values (center, modulation) are
comma-separated floats.  Units are the simulation's natural ones: box in
length units, dt/t_end in time units.  Unknown keys and malformed values
are reported with their line number.
"""

from .dynamics import SimConfig

_SCHEMA = {
    "dim": int,
    "n": int,
    "box": float,
    "eps": float,
    "dt": float,
    "t_end": float,
    "gamma": float,
    "family": str,
    "width": float,
    "center": "vector",
    "modulation": "vector",
    "snapshot_path": str,
    "snapshot_stride": int,
    "snapshots_per_octave": int,
    "seed": int,
    "nonlin_coeff": float,
    "diagnostics_start": float,
}

_REQUIRED = ("dim", "n", "box", "eps", "dt", "t_end")


def _parse_value(key, raw, where):
    kind = _SCHEMA[key]
    try:
        if kind == "vector":
            raw = raw.strip()
            return tuple(float(p) for p in raw.split(",")) if raw else ()
        return kind(raw.strip())
    except ValueError:
        raise ValueError(f"{where}: cannot parse {key} value {raw.strip()!r}") from None


def parse_config_text(text, overrides=None, source="<config>"):
    """Parse config text plus optional override mapping into a SimConfig."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, f"{source}:{lineno}")
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in _SCHEMA:
                raise ValueError(f"override: unknown key {key!r}")
            values[key] = (
                val
                if not isinstance(val, str)
                else _parse_value(key, val, f"override {key}")
            )
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ValueError(f"{source}: missing required keys: {', '.join(missing)}")
    return SimConfig(**values)


def parse_config(path=None, overrides=None):
    """Read a config file (optional) and apply flag overrides."""
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read(), overrides, source=str(path))
    return parse_config_text("", overrides, source="<flags>")


def serialize_config(config):
    """Round-trippable flat text echo of a SimConfig."""
    lines = []
    for key in _SCHEMA:
        val = getattr(config, key, None)
        if val is None:
            continue
        if key in ("center", "modulation"):
            if not val:
                continue
            val = ",".join(repr(float(v)) for v in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"
