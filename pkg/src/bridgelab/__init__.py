"""bridgelab: Brownian bridges on model Riemannian manifolds, numerically.

Exact heat kernels and their gradients on Euclidean space, the circle, the
2-sphere and hyperbolic 3-space; pinned-path samplers (exact marginals and a
guided SDE); grid certificates for Gaussian kernel/gradient/volume bounds;
Monte Carlo checks of the bridge's Markov and martingale structure; and
horizontal lifts of sampled paths to the orthonormal frame bundle.
"""

__version__ = "0.1.0"

from . import bounds, bridge, geometry, heatkernel, lift, rng, semimart  # noqa: F401
from .geometry import model_from_name  # noqa: F401
