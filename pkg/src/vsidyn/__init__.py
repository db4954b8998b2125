"""Spin and photoluminescence dynamics of silicon-vacancy centres in SiC."""

__version__ = "0.1.0"
