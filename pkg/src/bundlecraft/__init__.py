"""Bundle completion: rank catalog items by fitness to finish a partial bundle."""

__version__ = "0.1.0"
