"""serlab: a desk-scale lab for unsupervised cross-lingual speech emotion transfer."""

__version__ = "0.1.0"
