"""Numerical study of the singular SU(3) Toda system and the singular
Liouville equation in R^n via their normal (integral) forms."""

__version__ = "0.1.0"
