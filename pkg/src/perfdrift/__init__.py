"""Performative drift generators, a generative domain-adversarial network, and the experiment runner."""

__version__ = "0.1.0"
