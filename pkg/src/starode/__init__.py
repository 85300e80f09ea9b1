"""Star-product solution of linear non-autonomous ODEs via Legendre coefficient matrices."""

__version__ = "0.1.0"
