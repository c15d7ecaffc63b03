"""motok: a 4D motion tokenizer with motion-conditioned attention utilities."""

__version__ = "0.1.0"
