"""
Resilience Patterns for the evaluation pipeline
Retry for flaky input reads, timeouts, and per-subject failure isolation
"""

import multiprocessing
import pickle
import time
from dataclasses import dataclass
from typing import Callable, Any, Generic, Optional, TypeVar
from functools import wraps
import logging

logger = logging.getLogger(__name__)

T = TypeVar("T")


# ============================================================
# RETRY LOGIC
# ============================================================

class RetryExhausted(Exception):
    """Raised when all retry attempts are exhausted"""
    pass


def retry(
    max_attempts: int = 3,
    delay: float = 1.0,
    backoff: float = 2.0,
    exceptions: tuple = (Exception,),
    giveup: tuple = (),
    on_retry: Optional[Callable] = None
):
    """
    Retry decorator with exponential backoff

    Args:
        max_attempts: Maximum number of retry attempts
        delay: Initial delay between retries (seconds)
        backoff: Multiplier for delay after each retry
        exceptions: Tuple of exceptions to catch and retry
        giveup: Subclasses of `exceptions` re-raised immediately (e.g. FileNotFoundError)
        on_retry: Optional callback called on each retry

    Example:
        @retry(max_attempts=3, delay=0.2, exceptions=(OSError,), giveup=(FileNotFoundError,))
        def read_table(path):
            ...
    """
    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            attempt = 0
            current_delay = delay

            while attempt < max_attempts:
                try:
                    return func(*args, **kwargs)
                except giveup:
                    raise
                except exceptions as e:
                    attempt += 1

                    if attempt >= max_attempts:
                        logger.error(
                            f"Retry exhausted for {func.__name__} after {max_attempts} attempts",
                            extra={"extra_data": {"function": func.__name__, "attempts": attempt}}
                        )
                        raise RetryExhausted(
                            f"Failed after {max_attempts} attempts: {str(e)}"
                        ) from e

                    logger.warning(
                        f"Retry {attempt}/{max_attempts} for {func.__name__}",
                        extra={"extra_data": {
                            "function": func.__name__,
                            "attempt": attempt,
                            "delay": current_delay,
                            "error": str(e)
                        }}
                    )

                    if on_retry:
                        on_retry(attempt, e)

                    time.sleep(current_delay)
                    current_delay *= backoff

        return wrapper
    return decorator


# ============================================================
# FAILURE ISOLATION
# ============================================================

@dataclass(frozen=True)
class Outcome(Generic[T]):
    """Result of an isolated call: exactly one of value / error is set"""
    label: str
    value: Optional[T] = None
    error: Optional[str] = None
    error_type: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_isolated(label: str, func: Callable[..., T], *args, **kwargs) -> Outcome[T]:
    """
    Run func and capture any exception as an error Outcome

    One failing synthesizer must not abort the others, so every
    exception (toolkit or otherwise) is logged and recorded.
    """
    try:
        return Outcome(label=label, value=func(*args, **kwargs))
    except Exception as e:
        logger.error(
            f"Subject '{label}' failed: {e}",
            extra={"extra_data": {
                "event_type": "subject_failure",
                "subject": label,
                "error_type": type(e).__name__,
            }},
            exc_info=True,
        )
        return Outcome(label=label, error=str(e), error_type=type(e).__name__)


# ============================================================
# TIMEOUT DECORATOR
# ============================================================

def _portable(error: BaseException) -> BaseException:
    """The error itself when it survives pickling, else a RuntimeError carrying its text"""
    try:
        pickle.loads(pickle.dumps(error))
        return error
    except Exception:
        return RuntimeError(f"{type(error).__name__}: {error}")


def _call_in_child(conn, func: Callable, args: tuple, kwargs: dict) -> None:
    try:
        payload = ("ok", func(*args, **kwargs))
    except BaseException as e:
        payload = ("error", _portable(e))
    try:
        conn.send(payload)
    except Exception as e:
        conn.send(("error", RuntimeError(f"result not transferable: {e}")))
    finally:
        conn.close()


def _process_context():
    methods = multiprocessing.get_all_start_methods()
    return multiprocessing.get_context("fork" if "fork" in methods else "spawn")


def timeout(seconds: float):
    """Run the wrapped call in a child process and raise TimeoutError after `seconds`.

    On timeout the child is terminated, so nothing of the call outlives the
    error. Exceptions raised by the call are re-raised in the caller. Where
    only the spawn start method exists, the callable and its arguments must
    be picklable.
    """
    def decorator(func: Callable):
        @wraps(func)
        def _sync_wrapper(*args, **kwargs):
            ctx = _process_context()
            recv_end, send_end = ctx.Pipe(duplex=False)
            proc = ctx.Process(target=_call_in_child, args=(send_end, func, args, kwargs), daemon=True)
            proc.start()
            send_end.close()
            try:
                if not recv_end.poll(seconds):
                    logger.warning(
                        f"'{func.__name__}' timed out after {seconds}s, terminating worker",
                        extra={"extra_data": {"event_type": "timeout", "function": func.__name__,
                                              "seconds": seconds, "pid": proc.pid}},
                    )
                    raise TimeoutError(f"Function '{func.__name__}' timed out after {seconds} seconds")
                try:
                    status, payload = recv_end.recv()
                except EOFError:
                    proc.join()
                    raise RuntimeError(f"worker for '{func.__name__}' exited with code {proc.exitcode}")
            finally:
                if proc.is_alive():
                    proc.terminate()
                proc.join()
                recv_end.close()
            if status == "error":
                raise payload
            return payload

        return _sync_wrapper

    return decorator
