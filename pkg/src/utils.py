"""Utility functions for common operations across the application."""

import asyncio
import logging
import math
import re
import string
from typing import Any, Awaitable, Callable, Iterable, Mapping, Optional, Tuple, Type, TypeVar

T = TypeVar("T")

logger = logging.getLogger(__name__)

SCALAR_TYPES = (str, int, float, bool)

# {R<k>} chaining placeholders inside sub-prompt templates
CHAIN_PLACEHOLDER = re.compile(r"\{R(\d+)\}")
# {name} placeholders inside rule query templates
NAMED_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_\-]*)\}")

_PUNCTUATION = re.compile(r"[^\w\s]", re.UNICODE)
_WHITESPACE = re.compile(r"\s+")


async def call_with_retry(
    func: Callable[[], Awaitable[T]],
    *,
    retries: int = 1,
    base_delay: float = 0.0,
    backoff_factor: float = 2.0,
    max_delay: float = 5.0,
    exceptions: Tuple[Type[Exception], ...] = (Exception,),
    on_attempt: Optional[Callable[[int], None]] = None,
) -> T:
    """Await ``func()`` and retry it with exponential backoff.

    Args:
        func: Zero-argument coroutine factory, called once per attempt
        retries: Number of retries after the first attempt
        base_delay: Initial delay between retries (seconds)
        backoff_factor: Factor to increase delay after each retry
        max_delay: Maximum delay between retries (seconds)
        exceptions: Tuple of exception types to retry on
        on_attempt: Called with the 1-based attempt number before each attempt

    Returns:
        The result of the first successful attempt
    """
    attempt = 0
    while True:
        attempt += 1
        if on_attempt:
            on_attempt(attempt)
        try:
            return await func()
        except exceptions as e:
            if attempt > retries:
                raise
            delay = min(base_delay * (backoff_factor ** (attempt - 1)), max_delay)
            logger.warning(
                f"Attempt {attempt} failed: {e}. "
                f"Retrying in {delay:.2f} seconds..."
            )
            if delay > 0:
                await asyncio.sleep(delay)


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation and collapse whitespace. Idempotent."""
    lowered = _PUNCTUATION.sub("", text.lower())
    return _WHITESPACE.sub(" ", lowered).strip()


def human_join(items: Iterable[str], joiner: Optional[str] = None) -> str:
    """Join items as "a", "a and b" or "a, b and c", or with an explicit joiner."""
    values = list(items)
    if joiner is not None:
        return joiner.join(values)
    if len(values) <= 1:
        return "".join(values)
    return f"{', '.join(values[:-1])} and {values[-1]}"


def is_scalar(value: Any) -> bool:
    return isinstance(value, SCALAR_TYPES)


def is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def parse_scalar(text: str) -> Any:
    """数字文本转换为 int/float；转换后无法原样写回的（如 "0123"、"1.50"）保持字符串"""
    for convert in (int, float):
        try:
            value = convert(text)
        except ValueError:
            continue
        if str(value) == text and math.isfinite(value):
            return value
        return text
    return text


class _LenientFormatter(string.Formatter):
    def format_field(self, value: Any, format_spec: str) -> str:
        try:
            return super().format_field(value, format_spec)
        except (TypeError, ValueError):
            # e.g. "{x:,}" applied to an already-joined multi-value string
            return str(value)


_FORMATTER = _LenientFormatter()


def render_template(template: str, values: Mapping[str, Any]) -> str:
    """Render ``{name}`` / ``{name:spec}`` fields from ``values``.

    Raises KeyError naming the first missing field. A format spec that does not
    apply to the value's type falls back to ``str(value)``.
    """
    try:
        return _FORMATTER.vformat(template, (), values)
    except IndexError:
        raise KeyError("positional field")


def template_fields(template: str) -> list[str]:
    """Field names referenced by a format template, in order of appearance."""
    return [field for _, field, _, _ in _FORMATTER.parse(template) if field]
