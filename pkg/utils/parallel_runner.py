import multiprocessing
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, Dict, Hashable, List, Optional, Sequence

from utils.config_manager import get_config
from utils import logger

log = logger.customLogger()


class TrialRunner:
    """Runs independent experiment trials on a thread pool and returns them in key order"""

    def __init__(self, max_workers: Optional[int] = None):
        configured = get_config().get_run_config()['parallel_workers']
        self.max_workers = max_workers or configured or min(multiprocessing.cpu_count(), 4)

    def run(self, fn: Callable[[Hashable], Any], keys: Sequence[Hashable], label: str = "trial") -> List[Any]:
        """Call fn(key) for every key; results come back in the order of ``keys``"""
        keys = list(keys)
        results: Dict[int, Any] = {}
        failures = []

        if self.max_workers <= 1 or len(keys) <= 1:
            return [fn(key) for key in keys]

        log.info(f"Starting {len(keys)} {label}s with {self.max_workers} workers")
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_index = {executor.submit(fn, key): idx for idx, key in enumerate(keys)}

            for future in as_completed(future_to_index):
                idx = future_to_index[future]
                try:
                    results[idx] = future.result()
                except Exception as e:
                    log.error(f"{label} {keys[idx]!r} failed with exception: {e}")
                    failures.append((idx, e))

        if failures:
            # re-raise the first failure in key order so the outcome does not depend on scheduling
            failures.sort(key=lambda item: item[0])
            raise failures[0][1]

        log.info(f"Completed {len(keys)} {label}s")
        return [results[idx] for idx in range(len(keys))]

