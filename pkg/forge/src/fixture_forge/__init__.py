"""fixture_forge: builds the scanner-evaluation corpus with the real
framework serializer — attack-shaped models defanged by construction,
benign controls, and the expected-verdict manifest."""

__version__ = "0.1.0"


class ForgeError(Exception):
    """Base error for corpus generation failures."""


class DefangError(ForgeError):
    """A configuration or generated artifact escapes the defang envelope."""
