"""Environmental averaging alignment models: model algebra, simulators and verifiers."""

__version__ = "0.1.0"
