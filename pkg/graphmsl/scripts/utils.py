import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from logging import Logger
from pathlib import Path
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def configure_logging(session: str, log_dir: str = "logs") -> Logger:
    """
    Configure file logging for one command-line session.

    A unique log file named after the session and the current timestamp is
    created inside ``log_dir``. Warnings and errors are mirrored to stderr so
    data problems are visible without opening the log.

    Args:
        session (str): Short session name, used as the log file prefix
        log_dir (str): Directory that receives the log files

    Returns:
        Logger: The configured ``graphmsl`` logger
    """
    # Generate unique log filename with timestamp for this session
    log_filename = f"{session}_{datetime.now().strftime('%Y-%m-%d_%H-%M-%S')}.log"
    os.makedirs(log_dir, exist_ok=True)

    logger = logging.getLogger("graphmsl")
    logger.setLevel(logging.INFO)
    # Re-running in the same process (tests) must not stack handlers
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    file_handler = logging.FileHandler(os.path.join(log_dir, log_filename))
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    logger.addHandler(file_handler)

    stderr_handler = logging.StreamHandler()
    stderr_handler.setLevel(logging.WARNING)
    stderr_handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    logger.addHandler(stderr_handler)

    return logger


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """
    Write a file atomically: write a temporary sibling, then rename it.

    Readers never observe a half-written file.

    Args:
        path: Destination path
        data: Content; ``str`` is encoded as UTF-8 with LF line endings
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")

    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """
    Apply ``fn`` to every item, optionally on a thread pool, keeping input order.

    Results never depend on ``threads``: each item is processed independently
    and collected back in its original position.

    Args:
        fn: Pure function applied to each item
        items: Inputs
        threads (int): Worker count; 1 runs serially in the calling thread

    Returns:
        list: ``[fn(item) for item in items]``
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
