"""Multi-view depth sampling into occupancy grids, TPV embeddings, and a
channel-to-height prediction head, with exact hand-written adjoints.

The core is pure numpy; :mod:`tpvocc.service` wraps it in a FastAPI app
and :mod:`tpvocc.cli` is a thin HTTP client over that app.
"""

from .errors import ConfigError, DataError, NumericError, TpvoccError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "TpvoccError",
    "__version__",
]
