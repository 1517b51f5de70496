"""Per-stage wall-clock timings, reported through the ``planefuse.timing`` logger."""

import logging
import time
from contextlib import contextmanager

timing_log = logging.getLogger("planefuse.timing")


@contextmanager
def stage(name):
    start = time.perf_counter()
    try:
        yield
    finally:
        timing_log.info("stage=%s seconds=%.6f", name, time.perf_counter() - start)
