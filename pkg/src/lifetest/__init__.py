"""Machine-learning acceleration of electrochemical life tests."""

__version__ = "0.1.0"
