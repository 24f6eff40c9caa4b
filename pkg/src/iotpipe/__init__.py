"""Desk-scale IoT telemetry pipeline.

Simulated constrained sensor node speaking CoAP over 6LoWPAN and
IEEE 802.15.4, a CoAP-to-HTTP cross proxy, a minimal SensorThings-style
REST backend, and a byte accounting benchmark for the protocol stacks.
"""

__version__ = "0.1.0"
