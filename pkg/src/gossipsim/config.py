"""Scenario configuration files and ``key.sub=value`` overrides.

Configs are JSON objects mirroring :class:`ScenarioConfig`. Durations are
milliseconds, rates bits per second, sizes bytes. Missing keys take their
defaults; unknown keys are rejected with the closest valid spelling.
"""

import dataclasses
import difflib
import json
from enum import Enum

from .adversary import AdversaryProfile
from .protocol import MeshParams, ProtocolParams
from .scenario import ScenarioConfig, TransportParams
from .transport import WireSizes


class ConfigError(ValueError):
    """Bad configuration; ``errors`` holds one message per offending field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_NESTED = {
    "mesh": MeshParams,
    "protocol": ProtocolParams,
    "transport": TransportParams,
    "adversary": AdversaryProfile,
    "sizes": WireSizes,
}
_OPTIONAL = {"known_peers"}


def _field_map(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


def _hint(name, options):
    close = difflib.get_close_matches(name, options, n=1, cutoff=0.5)
    return f" (did you mean {close[0]!r}?)" if close else ""


def all_keys(cls=ScenarioConfig, prefix=""):
    """Every dotted key a config may set."""
    keys = []
    for name, f in _field_map(cls).items():
        if name in _NESTED and dataclasses.is_dataclass(_NESTED[name]):
            keys += all_keys(_NESTED[name], f"{prefix}{name}.")
        else:
            keys.append(prefix + name)
    return keys


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _coerce(path, value, default, errors):
    name = path.rsplit(".", 1)[-1]
    if value is None and name in _OPTIONAL:
        return None
    kind = type(default)
    if isinstance(default, Enum):
        allowed = [m.value for m in kind]
        if value in allowed:
            return kind(value)
        errors.append(f"{path}: expected one of {allowed}, got {value!r}{_hint(str(value), allowed)}")
        return default
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        errors.append(f"{path}: expected true or false, got {value!r}")
        return default
    if isinstance(default, int) or name in _OPTIONAL:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        errors.append(f"{path}: expected an integer, got {value!r}")
        return default
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        errors.append(f"{path}: expected a number, got {value!r}")
        return default
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        errors.append(f"{path}: expected a string, got {value!r}")
        return default
    if isinstance(default, list):
        if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return [float(v) for v in value]
        errors.append(f"{path}: expected a list of numbers, got {value!r}")
        return default
    return value


def _build(cls, data, prefix, errors):
    if not isinstance(data, dict):
        errors.append(f"{prefix.rstrip('.') or 'config'}: expected an object, got {type(data).__name__}")
        return cls()
    fields = _field_map(cls)
    kwargs = {}
    for key, value in data.items():
        path = prefix + key
        if key not in fields:
            errors.append(f"{path}: unknown key{_hint(key, list(fields))}")
            continue
        default = _default_of(fields[key])
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, path + ".", errors)
        else:
            kwargs[key] = _coerce(path, value, default, errors)
    return cls(**kwargs)


def config_from_dict(data):
    """Build and validate a :class:`ScenarioConfig`; raises :class:`ConfigError`."""
    errors = []
    cfg = _build(ScenarioConfig, data, "", errors)
    if errors:
        raise ConfigError(errors)
    errors = cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


def config_to_dict(cfg):
    def plain(v):
        if isinstance(v, Enum):
            return v.value
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, list):
            return [plain(x) for x in v]
        return v

    return plain(dataclasses.asdict(cfg))


def parse_value(text):
    """Override values are JSON when they parse as JSON, bare strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data, overrides):
    """Return a copy of ``data`` with each ``a.b=value`` override applied."""
    out = json.loads(json.dumps(data))
    keys = all_keys()
    errors = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            errors.append(f"{item!r}: expected KEY=VALUE")
            continue
        if key not in keys:
            errors.append(f"{key}: unknown key{_hint(key, keys)}")
            continue
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = parse_value(raw)
    if errors:
        raise ConfigError(errors)
    return out


def load_config(path=None, overrides=()):
    """Read ``path`` (or start from defaults), apply overrides, build and validate."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError([f"{path}: {exc.strerror}"]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}"]) from exc
    return config_from_dict(apply_overrides(data, overrides))


_UNITS = {
    "inter_message_delay": "ms",
    "run_limit": "ms",
    "heartbeat_interval": "ms",
    "delta": "ms",
    "cache_ttl": "ms",
    "assumed_max_latency": "ms",
    "idle_reset": "ms",
    "latency_classes": "ms",
    "bandwidth_classes": "bits/s",
    "assumed_min_rate": "bits/s",
    "message_size": "bytes",
    "large_threshold": "bytes",
    "initial_cwnd": "bytes",
}


def config_schema(cls=ScenarioConfig):
    """JSON-schema description of the config, with units in each description."""
    props = {}
    for name, f in _field_map(cls).items():
        default = _default_of(f)
        if name in _NESTED:
            props[name] = config_schema(_NESTED[name])
            continue
        if isinstance(default, Enum):
            entry = {"enum": [m.value for m in type(default)], "default": default.value}
        elif isinstance(default, bool):
            entry = {"type": "boolean", "default": default}
        elif isinstance(default, int) or name in _OPTIONAL:
            entry = {"type": ["integer", "null"] if name in _OPTIONAL else "integer", "default": default}
        elif isinstance(default, float):
            entry = {"type": "number", "default": default}
        elif isinstance(default, list):
            entry = {"type": "array", "items": {"type": "number"}, "default": default}
        else:
            entry = {"type": "string", "default": default}
        if name in _UNITS:
            entry["description"] = f"unit: {_UNITS[name]}"
        props[name] = entry
    return {"type": "object", "additionalProperties": False, "properties": props}
