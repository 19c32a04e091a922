"""Fault-signature toolkit for BLDC drive phase currents."""

__version__ = "0.1.0"
