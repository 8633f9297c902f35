"""Words-as-classifiers reference resolution with composable backends."""

__version__ = "0.1.0"
