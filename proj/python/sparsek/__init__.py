"""Differentiable top-k selection with a streaming solver and sparse attention.

The heavy lifting lives in the native ``_sparsek`` extension; this package
re-exports its surface.
"""

try:
    from ._sparsek import (
        ArgumentError,
        ConfigError,
        NumericError,
        ShapeError,
        Stream,
        __version__,
        attention,
        dense_attention,
        sparsek,
        sparsek_jvp,
    )
except ImportError:  # in-tree build: the extension sits on sys.path, not in the package
    from _sparsek import (
        ArgumentError,
        ConfigError,
        NumericError,
        ShapeError,
        Stream,
        __version__,
        attention,
        dense_attention,
        sparsek,
        sparsek_jvp,
    )

__all__ = [
    "ArgumentError",
    "ConfigError",
    "NumericError",
    "ShapeError",
    "Stream",
    "__version__",
    "attention",
    "dense_attention",
    "sparsek",
    "sparsek_jvp",
]
