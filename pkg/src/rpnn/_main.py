"""Console entry point.

Applies the RPNN_THREADS cap to the BLAS thread-count environment variables
before numpy is imported, then dispatches to the CLI.
"""

import os
import sys


def _apply_thread_cap() -> None:
    threads = os.environ.get("RPNN_THREADS")
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def main(argv=None) -> int:
    _apply_thread_cap()
    from .cli import main as cli_main

    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
