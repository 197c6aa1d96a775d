"""chantherm: thermal quantum channels from linear constraint data.

Computes maximum-entropy (thermal) channels subject to linear expectation
constraints on the Choi operator, evaluates channel entropies and divergences,
learns channels online from single-observable measurements, and runs n-copy
sharp-statistics experiments for i.i.d. channels.
"""

__version__ = "0.1.0"

_CHANNEL_NAMES = ("QuantumChannel",)
_THERMAL_NAMES = ("ConstraintSet", "ThermalSolution", "thermal_channel")
_ENTROPY_NAMES = ("von_neumann", "relative_entropy", "channel_entropy",
                  "channel_relative_entropy", "diamond_distance")

__all__ = list(_CHANNEL_NAMES + _THERMAL_NAMES + _ENTROPY_NAMES) + ["__version__"]


def __getattr__(name):
    if name in _CHANNEL_NAMES:
        from . import channels
        return getattr(channels, name)
    if name in _THERMAL_NAMES:
        from . import thermal
        return getattr(thermal, name)
    if name in _ENTROPY_NAMES:
        from . import entropy
        return getattr(entropy, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
