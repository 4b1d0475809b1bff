"""Group testing lab: instance generation, recovery, detection and threshold numerics."""

__version__ = "0.1.0"
