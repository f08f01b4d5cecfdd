"""fieldreg: differential-geometry regularizers for neural fields.

Volume-rendered radiance fields with autodiff depth/normal regularizers,
signed-distance fields with Eikonal and curvature losses, synthetic
few-view datasets, and oracle-based verification.
"""

__version__ = "0.1.0"
