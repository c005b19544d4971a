import json
import logging
from typing import Union

from pydantic import BaseModel, ValidationError

from models.errors import ParseError, SchemaError
from models.schemas import DOCUMENT_KINDS, VersionedDocument

logger = logging.getLogger(__name__)


def parse_config_text(text: str) -> VersionedDocument:
    """Validate a versioned JSON document against the model named by its kind"""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
        raise ParseError(e.msg, line=e.lineno, column=e.colno) from e

    if not isinstance(data, dict):
        raise SchemaError("config must be a JSON object", key="")
    if "version" not in data:
        raise SchemaError("missing version", key="version")
    if data["version"] != 1:
        raise SchemaError(f"unsupported version {data['version']!r}", key="version")
    kind = data.get("kind")
    if kind not in DOCUMENT_KINDS:
        raise SchemaError(f"unknown kind {kind!r}", key="kind")

    try:
        return DOCUMENT_KINDS[kind].model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        logger.error(f"Config rejected at {key}: {first['msg']}")
        raise SchemaError(f"{key}: {first['msg']}", key=key) from e


def parse_config(path: str) -> VersionedDocument:
    with open(path, "r") as f:
        text = f.read()
    logger.info(f"Loading config {path}")
    return parse_config_text(text)


def serialize_config(document: Union[VersionedDocument, BaseModel]) -> str:
    """Canonical JSON: two-space indent, field order, trailing newline"""
    return json.dumps(document.model_dump(mode="json", exclude_none=True), indent=2) + "\n"
