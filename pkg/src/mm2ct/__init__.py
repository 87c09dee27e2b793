"""Multi-modal MR-to-CT translation with selective state-space fusion."""
__version__ = "0.1.0"
