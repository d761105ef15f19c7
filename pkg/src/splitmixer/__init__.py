"""SplitMixer: separable 1D spatial mixing + segmented channel mixing,
with a from-scratch tape autodiff runtime, analytic cost model, trainer,
and verification oracles."""

__version__ = "0.1.0"
