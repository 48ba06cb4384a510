import os
import dotenv
import tomllib
from typing import Any

from mfgpy.common.errors import ConfigError


def _dotenv_path() -> str:
    return dotenv.find_dotenv(usecwd=True)


def _get_env_var(key: str) -> str:
    if key in os.environ:
        return os.environ[key]
    path = _dotenv_path()
    value = dotenv.get_key(path, key) if path else None
    if value is None:
        raise ConfigError(f"environment variable '{key}' is not set (checked the environment and .env)")
    return value


def _decode(raw: str, line: int, key: str) -> Any:
    """TOML scalar or array; anything TOML rejects is kept as a bare string."""
    if not raw:
        raise ConfigError("missing value", key=key, line=line)
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        if raw[0] in "\"'[{":
            raise ConfigError(f"malformed value {raw!r}", key=key, line=line) from None
        return raw


def _insert(doc: dict, dotted: str, value: Any, line: int):
    parts = dotted.split(".")
    if any(not part for part in parts):
        raise ConfigError("empty key segment", key=dotted, line=line)
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"'{part}' is a value, not a section", key=dotted, line=line)
    if parts[-1] in node:
        raise ConfigError("duplicate key", key=dotted, line=line)
    node[parts[-1]] = value


def parse_text(text: str) -> dict:
    """Flat ``key=value`` lines with dotted keys; ``[section]`` headers prefix the keys below them."""
    doc, section = {}, ""
    for line, content in enumerate(text.splitlines(), start=1):
        content = content.strip()
        if not content or content.startswith("#"):
            continue
        if content.startswith("["):
            if not content.endswith("]") or len(content) < 3:
                raise ConfigError(f"malformed section header {content!r}", line=line)
            section = content[1:-1].strip() + "."
            continue
        key, sep, raw = content.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {content!r}", line=line)
        dotted = section + key
        _insert(doc, dotted, _decode(raw.strip(), line, dotted), line)
    return doc


def get(doc: dict, *args: str) -> Any:
    if len(args) == 1:
        args = tuple(args[0].split("."))
    var = doc
    for arg in args:
        var = var[arg]
    return replace(var) if isinstance(var, (str, tuple, dict)) else var


def _replace_str(value: str) -> str:
    if value.startswith("$"):
        return _get_env_var(value[1:])
    return value


def _replace_list(values: list | tuple) -> list:
    return [replace(value) if isinstance(value, (str, list, tuple, dict)) else value for value in values]


def _replace_dict(di: dict) -> dict:
    return {key: replace(value) if isinstance(value, (str, list, tuple, dict)) else value
            for key, value in di.items()}


def replace(value: str | list | tuple | dict) -> str | list | dict:
    if isinstance(value, str):
        return _replace_str(value)
    elif isinstance(value, (list, tuple)):
        return _replace_list(value)
    elif isinstance(value, dict):
        return _replace_dict(value)
    else:
        raise ValueError(f"Unsupported type: {type(value)}")
