"""Test cases for utils module."""

import pytest

from src.utils import (
    call_with_retry,
    human_join,
    normalize_text,
    parse_scalar,
    render_template,
    template_fields,
)


class TestCallWithRetry:
    """Test call_with_retry helper."""

    @pytest.mark.asyncio
    async def test_success_first_attempt(self):
        """Test a coroutine that succeeds immediately."""
        attempts = []

        async def func():
            return "success"

        result = await call_with_retry(func, retries=3, on_attempt=attempts.append)
        assert result == "success"
        assert attempts == [1]

    @pytest.mark.asyncio
    async def test_failure_then_success(self):
        """Test a coroutine that fails then succeeds."""
        call_count = 0

        async def func():
            nonlocal call_count
            call_count += 1
            if call_count < 3:
                raise ValueError("Test error")
            return "success"

        result = await call_with_retry(func, retries=2, base_delay=0.01)
        assert result == "success"
        assert call_count == 3

    @pytest.mark.asyncio
    async def test_max_retries_exceeded(self):
        """Test that the last exception propagates when retries run out."""
        call_count = 0

        async def func():
            nonlocal call_count
            call_count += 1
            raise ValueError("Test error")

        with pytest.raises(ValueError, match="Test error"):
            await call_with_retry(func, retries=2, base_delay=0.01)
        assert call_count == 3  # Initial call + 2 retries

    @pytest.mark.asyncio
    async def test_only_listed_exceptions_are_retried(self):
        """Test that other exception types are raised without retry."""
        call_count = 0

        async def func():
            nonlocal call_count
            call_count += 1
            raise TypeError("not retried")

        with pytest.raises(TypeError):
            await call_with_retry(func, retries=5, exceptions=(ValueError,))
        assert call_count == 1

    @pytest.mark.asyncio
    async def test_zero_retries(self):
        """Test retries=0 means a single attempt."""
        attempts = []

        async def func():
            raise ValueError("boom")

        with pytest.raises(ValueError):
            await call_with_retry(func, retries=0, on_attempt=attempts.append)
        assert attempts == [1]


class TestNormalizeText:
    """Test normalize_text."""

    def test_lowercase_punctuation_whitespace(self):
        assert normalize_text("  Fixed   Deposit, Rates?! ") == "fixed deposit rates"

    def test_idempotent(self):
        samples = ["What are the LIMITS & fees?", "₹100,000 in his account.", "", "a\tb\nc"]
        for sample in samples:
            once = normalize_text(sample)
            assert normalize_text(once) == once

    def test_keeps_unicode_letters(self):
        assert normalize_text("Überweisung Gebühr") == "überweisung gebühr"


class TestHumanJoin:
    """Test human_join."""

    def test_natural_language(self):
        assert human_join([]) == ""
        assert human_join(["a"]) == "a"
        assert human_join(["a", "b"]) == "a and b"
        assert human_join(["a", "b", "c"]) == "a, b and c"

    def test_explicit_joiner(self):
        assert human_join(["NEFT", "RTGS"], "/") == "NEFT/RTGS"


class TestRenderTemplate:
    """Test render_template and template_fields."""

    def test_format_spec(self):
        assert render_template("₹{amount:,}", {"amount": 100000}) == "₹100,000"

    def test_spec_falls_back_for_strings(self):
        assert render_template("₹{amount:,}", {"amount": "1 and 2"}) == "₹1 and 2"

    def test_missing_field_raises_key_error(self):
        with pytest.raises(KeyError) as exc_info:
            render_template("{present} {absent}", {"present": 1})
        assert exc_info.value.args[0] == "absent"

    def test_positional_field_is_rejected(self):
        with pytest.raises(KeyError):
            render_template("{}", {})

    def test_template_fields(self):
        assert template_fields("{a} and {b:,} then {a}") == ["a", "b", "a"]

    def test_template_fields_rejects_bad_format(self):
        with pytest.raises(ValueError):
            template_fields("unbalanced {brace")


class TestParseScalar:
    @pytest.mark.parametrize("text,expected", [
        ("42", 42),
        ("-7", -7),
        ("1.5", 1.5),
        ("0.25", 0.25),
        ("0123", "0123"),
        ("1.50", "1.50"),
        ("1e3", "1e3"),
        ("1_000", "1_000"),
        (" 5", " 5"),
        ("nan", "nan"),
        ("inf", "inf"),
        ("saving", "saving"),
        ("", ""),
    ])
    def test_conversion(self, text, expected):
        value = parse_scalar(text)
        assert value == expected
        assert type(value) is type(expected)
