"""Sequential recommendation: frequent-substring contexts and long-term preference in one item embedding."""

__version__ = "0.1.0"
