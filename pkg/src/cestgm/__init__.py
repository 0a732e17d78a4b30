"""Conditionally exponential stationary graphical models.

Stationary multivariate time series defined by exponential-family node
conditionals. The package validates model definitions and derives their
conditional-independence graphs. It also analyzes the interaction operator
spectrally, evaluates stationary densities and runs padded Gibbs simulation.
"""

__version__ = "0.1.0"

from .errors import CEStGMError  # noqa: E402
from .families import NodeFamily  # noqa: E402
from .model import ModelSpec, ValidatedModel, ci_graph, export_dot, validate  # noqa: E402
from .quadrature import GridConfig, build_space  # noqa: E402
from .kernel import build_kernel  # noqa: E402
from .spectral import SpectralResult, build_operator, power_iterate  # noqa: E402
from .sampler import GibbsConfig, gibbs_run  # noqa: E402

__all__ = [
    "CEStGMError",
    "GibbsConfig",
    "GridConfig",
    "ModelSpec",
    "NodeFamily",
    "SpectralResult",
    "ValidatedModel",
    "__version__",
    "build_kernel",
    "build_operator",
    "build_space",
    "ci_graph",
    "export_dot",
    "gibbs_run",
    "power_iterate",
    "validate",
]
