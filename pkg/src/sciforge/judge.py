"""Structured-output helpers for judge and generator calls.

Models are asked for strict JSON but drift: code fences, prose preambles,
trailing commentary. ``request_json`` first salvages locally, then re-asks
with the parse error attached, up to a fixed repair budget.
"""

from __future__ import annotations

import json
import logging
import re
from typing import Any, Callable

from .backends import Backends, LlmConfig
from .errors import FormatError

log = logging.getLogger(__name__)

DEFAULT_REPAIRS = 2

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)

_REPAIR_NOTE = (
    "\n\nYour previous reply could not be used: {error}\n"
    "Reply again with ONLY the JSON object or array, no prose, no code fences."
)


def salvage_json(text: str) -> Any:
    """Parse ``text`` as JSON, tolerating fences and surrounding prose.

    Tries the raw text, then any fenced block, then the first balanced
    ``{...}`` or ``[...]`` span. Raises ``ValueError`` when nothing parses.
    """
    candidates = [text.strip()]
    for block in _FENCE_RE.findall(text):
        candidates.append(block.strip())
    span = _first_balanced_span(text)
    if span is not None:
        candidates.append(span)
    for candidate in candidates:
        if not candidate:
            continue
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            continue
    raise ValueError("no parseable JSON found in model output")


def _first_balanced_span(text: str) -> str | None:
    opens = {"{": "}", "[": "]"}
    start = None
    opener = ""
    for i, ch in enumerate(text):
        if ch in opens:
            start = i
            opener = ch
            break
    if start is None:
        return None
    closer = opens[opener]
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == opener:
            depth += 1
        elif ch == closer:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def request_json(
    backends: Backends,
    prompt: str,
    *,
    check: Callable[[Any], Any] | None = None,
    repairs: int = DEFAULT_REPAIRS,
    config: LlmConfig | None = None,
    label: str = "judge",
) -> Any:
    """Ask for JSON, validating with ``check``, re-asking on failure.

    ``check`` may normalize its input and must raise ``ValueError`` to signal
    a bad payload; its return value (or the parsed JSON when ``check`` is
    None) is returned. After ``repairs`` re-asks the call gives up with
    ``FormatError``.
    """
    attempts = 1 + max(0, repairs)
    ask = prompt
    last_error = ""
    for attempt in range(attempts):
        raw = backends.llm_complete(ask, config)
        try:
            parsed = salvage_json(raw)
            return check(parsed) if check is not None else parsed
        except ValueError as exc:
            last_error = str(exc)
            log.warning("%s output rejected (attempt %d/%d): %s", label, attempt + 1, attempts, exc)
            ask = prompt + _REPAIR_NOTE.format(error=last_error)
    raise FormatError(f"{label} output unusable after {attempts} attempts: {last_error}")


def require_fields(data: Any, fields: dict[str, type | tuple[type, ...]]) -> dict[str, Any]:
    """Assert ``data`` is an object carrying every field with the right type."""
    if not isinstance(data, dict):
        raise ValueError(f"expected a JSON object, got {type(data).__name__}")
    for name, kinds in fields.items():
        if name not in data:
            raise ValueError(f"missing field {name!r}")
        if not isinstance(data[name], kinds):
            raise ValueError(f"field {name!r} has wrong type {type(data[name]).__name__}")
    return data


def clamp_score(value: Any, low: float = 0.0, high: float = 10.0) -> float:
    """Coerce a judge score to a float inside ``[low, high]``."""
    try:
        number = float(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"score {value!r} is not numeric") from exc
    return max(low, min(high, number))
