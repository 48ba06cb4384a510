import json
from functools import lru_cache
from pathlib import Path

import jsonschema
from jsonschema.exceptions import ValidationError, best_match

from mfgpy.common.errors import ConfigError


SCHEMA_PATH = Path(__file__).resolve().parent / "schema.json"
VALIDATOR = jsonschema.Draft202012Validator


@lru_cache(maxsize=1)
def config_schema() -> dict:
    with SCHEMA_PATH.open("r", encoding="utf-8") as file:
        schema = json.load(file)
    VALIDATOR.check_schema(schema)
    return schema


def error_key(e: ValidationError) -> str | None:
    """Dotted path of the offending key; for unknown keys, the unknown key itself."""
    path = [str(part) for part in e.absolute_path]
    if e.validator == "additionalProperties":
        unexpected = sorted(set(e.instance) - set(e.schema.get("properties", {})))
        path += unexpected[:1]
    elif e.validator == "required":
        path += [e.message.split("'")[1]]
    return ".".join(path) or None


def check(doc: dict) -> dict:
    """Validates a parsed run config and returns the schema it was checked against."""
    schema = config_schema()
    validator = VALIDATOR(schema, format_checker=VALIDATOR.FORMAT_CHECKER)
    if (e := best_match(validator.iter_errors(doc))) is not None:
        raise ConfigError(e.message, key=error_key(e))
    return schema
