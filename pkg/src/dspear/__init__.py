"""dspear: continuous audio inference pipelines with a DSP/CPU energy simulator."""

__version__ = "0.1.0"
