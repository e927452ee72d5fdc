"""Plain-text key=value config files.

One `key = value` pair per line; blank lines and lines starting with `#` are
ignored. Values stay strings here; consumers coerce them. Keys may be dotted
(`fms.drift_max`) to group related settings.
"""

from .errors import ConfigError


def parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_kv(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read())


def dump_kv(pairs: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def save_kv(path, pairs: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_kv(pairs))


def coerce_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")
