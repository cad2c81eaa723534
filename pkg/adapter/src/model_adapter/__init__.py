"""Reference adapter: serve in-process models over the comparison pipeline's wire protocol."""

from .bindings import (
    AdapterBinding,
    channel_mean_embedder,
    make_linear_binding,
    reference_bindings,
)
from .server import AdapterServer, handle_request, serve

__version__ = "0.1.0"
