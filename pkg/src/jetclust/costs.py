"""Cost accounting for splitting-likelihood evaluations.

The number of splitting-density evaluations is the cost axis all
algorithms are compared on, so every call site shares one counter.
"""

import threading


class CostCounter:
    """Thread-safe monotone tally, resettable only between runs."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def increment(self, n: int = 1) -> None:
        with self._lock:
            self._count += n

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


# Single shared tally of splitting_log_likelihood calls, wherever they
# happen (planner scoring, beam seeding, policy feature extraction, ...).
PS_EVALUATIONS = CostCounter()
