import hashlib
import json
import logging
import re
from typing import Any

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str | int = logging.INFO) -> None:
    """Configure the root logger once for CLI runs."""
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=[logging.StreamHandler()], force=True)


def slugify(name: str) -> str:
    """
    'UJIIndoorLoc / L=7' -> 'ujiindoorloc_l_7'
    Lowercase, non-alnum -> underscore, collapse, trim.
    """
    s = name.strip().lower()
    s = re.sub(r"[^a-z0-9]+", "_", s)
    s = re.sub(r"_+", "_", s).strip("_")
    if not s:
        raise ValueError("Run name cannot produce a valid slug.")
    return s


def canonical_json(payload: Any) -> str:
    """Stable JSON text: sorted keys, no whitespace variation."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()
