from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from typing import Any


def digest_of(data: Any) -> str:
    """sha256 over canonical JSON; stable across runs and dict orderings."""
    payload = json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def round_half_up(value: Fraction, places: int) -> float:
    scale = 10**places
    return float(Fraction(math.floor(value * scale + Fraction(1, 2)), scale))
