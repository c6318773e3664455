"""Spatio-temporal waveform design for multi-user massive-MIMO downlinks with
1-bit oversampling receivers."""

__version__ = "0.1.0"
