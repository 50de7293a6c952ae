"""
Worker pool for parameter sweeps.

Each job owns its trajectory; results come back to the submitting thread in
submission order, and only that thread writes output files.
"""
import logging
import queue
import threading

from django.conf import settings

logger = logging.getLogger(__name__)


class SweepPool:
    """
    FIFO job queue served by a fixed set of daemon worker threads.

    Jobs are numerical runs whose heavy lifting happens inside numpy/scipy, so
    threads overlap well despite the GIL.
    """

    def __init__(self, max_workers=1):
        """
        Args:
            max_workers: Number of runs allowed in parallel
        """
        if max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {max_workers}")
        self.job_queue = queue.Queue()
        self.max_workers = max_workers
        self.workers = []
        self._start_workers()

    def _start_workers(self):
        for i in range(self.max_workers):
            worker = threading.Thread(target=self._worker, name=f"NLASweepWorker-{i}", daemon=True)
            worker.start()
            self.workers.append(worker)

    def _worker(self):
        """Process jobs until the program exits."""
        while True:
            job_func, index, result_queue = self.job_queue.get()
            try:
                result_queue.put((index, 'success', job_func()))
            except Exception as e:
                result_queue.put((index, 'error', e))
            finally:
                self.job_queue.task_done()

    def submit(self, job_func):
        """Run one job on the pool and wait for its result; exceptions are re-raised."""
        return self.map(lambda item: item(), [job_func])[0]

    def map(self, func, items):
        """
        Apply func to every item on the pool.

        Returns:
            list of results in the order of items

        Raises:
            The first exception (in item order) raised by any job, after all jobs finished
        """
        items = list(items)
        result_queue = queue.Queue()
        for index, item in enumerate(items):
            self.job_queue.put((lambda item=item: func(item), index, result_queue))

        results = [None] * len(items)
        errors = {}
        for _ in items:
            index, status, value = result_queue.get()
            if status == 'error':
                errors[index] = value
            else:
                results[index] = value
        if errors:
            first = min(errors)
            logger.error("%d of %d sweep jobs failed; first failure in job %d: %s",
                         len(errors), len(items), first, errors[first])
            raise errors[first]
        return results


_sweep_pool = None
_pool_lock = threading.Lock()


def get_sweep_pool():
    """
    Get or create the process-wide pool sized by NLA_THREADS.

    Returns:
        SweepPool: Singleton pool
    """
    global _sweep_pool

    if _sweep_pool is None:
        with _pool_lock:
            if _sweep_pool is None:
                _sweep_pool = SweepPool(max(1, int(getattr(settings, 'NLA_THREADS', 1))))
    return _sweep_pool
