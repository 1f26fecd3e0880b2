"""Split-kernel backend selection.

Prefers the compiled extension, falls back to the numpy implementation when
the extension is absent or fails to import, and honors the
SURGEKIT_PURE_PYTHON environment variable (any non-empty value) to force the
fallback.  Both backends produce bit-identical results; the toggle exists for
debugging and for the parity test, not because behavior differs.

Forest code must call `kernels.scan_feature(...)` through this module (not a
`from`-import) so a test can reload the module under the env override.
"""

import os


def _select():
    if os.environ.get("SURGEKIT_PURE_PYTHON"):
        from ._split_py import scan_feature
        return scan_feature, "python"
    try:
        from ._splitkern import scan_feature
        return scan_feature, "cython"
    except ImportError:
        from ._split_py import scan_feature
        return scan_feature, "python"


scan_feature, BACKEND = _select()
