"""Exact brute-force cosine top-k search.

The scan kernel exists twice: a compiled Cython extension (built at install
time when a toolchain is available) and a pure-numpy fallback with identical
semantics. The compiled kernel is picked at import when present; both
accumulate every dot product in float64 and emit float32 scores, so results
agree across backends.
"""

try:
    from . import _scan as _kernel
    HAVE_COMPILED = True
except ImportError:           # extension not built; numpy path
    from . import _scan_py as _kernel
    HAVE_COMPILED = False

from .flat import (  # noqa: E402
    FlatIndex,
    MatchResult,
    build_index,
    read_matches,
    search,
    write_matches,
)

BACKEND = "compiled" if HAVE_COMPILED else "numpy"

__all__ = ["FlatIndex", "MatchResult", "build_index", "search",
           "read_matches", "write_matches", "HAVE_COMPILED", "BACKEND"]
