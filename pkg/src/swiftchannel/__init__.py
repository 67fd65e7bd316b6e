"""Lightweight MIMO channel super-resolution: reference network, integer
quantizer and a software model of a streaming accelerator."""

__version__ = "0.1.0"
