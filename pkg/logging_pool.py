import traceback
from multiprocessing.pool import Pool
import multiprocessing


# Shortcut to multiprocessing's logger
def error(msg, *args):
    return multiprocessing.get_logger().error(msg, *args)


class LogExceptions:
    def __init__(self, callable):
        self.__callable = callable

    def __call__(self, *args, **kwargs):
        try:
            result = self.__callable(*args, **kwargs)

        except Exception:
            # Log the worker traceback, then re-raise so the parent sees the
            # original exception type (ConfigError, NumericalError, ...)
            error(traceback.format_exc())
            raise

        return result


class LoggingPool(Pool):
    def map(self, func, iterable, chunksize=None):
        return Pool.map(self, LogExceptions(func), iterable, chunksize)


def ordered_map(func, items, processes=1):
    """Apply ``func`` to every item and return results in submission order.

    With one process the work runs inline, which keeps tracebacks simple and
    avoids pickling. Results are identical for any process count.
    """
    items = list(items)
    if processes <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with LoggingPool(min(processes, len(items))) as pool:
        return pool.map(func, items, chunksize=1)


class Mapper:
    """Picklable handle the CLI passes to modules instead of a pool."""

    def __init__(self, processes=1):
        self.processes = max(1, int(processes))

    def __call__(self, func, items):
        return ordered_map(func, items, self.processes)

    def __repr__(self):
        return "Mapper(processes={})".format(self.processes)


SERIAL = Mapper(1)
