from dataclasses import dataclass, field
from typing import Callable, List, Sequence, TypeVar
import logging

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

logger = logging.getLogger(__name__)

T = TypeVar("T")


class InvalidParameterError(ValueError):
    """Raised when a tuning parameter (b, delta, alpha, grid size, ...) is out of range."""


class ChainError(ValueError):
    """Raised for transition matrices or paths the finite-chain oracle cannot use."""


class TableMismatch(ValueError):
    """Raised when a critical-value table does not belong to the requested window/b/alpha."""


class NonpositiveVarianceEstimate(ArithmeticError):
    """
    The lag-window estimate is not positive, so sqrt(Gamma^2) and the interval are undefined.
    """

    def __init__(self, value: float, context: str = ""):
        self.value = value
        suffix = f" ({context})" if context else ""
        super().__init__(f"Nonpositive long-run variance estimate {value:.6g}{suffix}")


class DegenerateKernel(ArithmeticError):
    """The first-order projection of the kernel vanishes; the linear CLT does not apply."""


class RejectionLimitExceeded(RuntimeError):
    """Too many nonpositive K draws were rejected by a fixed-b simulator."""


class SolverError(RuntimeError):
    """An exact identity the oracle relies on failed numerically."""


class ScalarSeries:
    """
    A finite real-valued sample path h(X_1), ..., h(X_n).

    Values are stored as a read-only float64 array so the estimators can share it freely.
    """

    def __init__(self, values: Sequence[float]):
        arr = np.array(values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("Series values must all be finite.")
        arr.setflags(write=False)
        self.values = arr

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    def require_length(self, minimum: int = 2) -> None:
        if self.n < minimum:
            raise InvalidParameterError(f"Series of length {self.n} is too short; need at least {minimum}.")

    def mean(self) -> float:
        return float(np.mean(self.values))

    def shifted(self, c: float) -> "ScalarSeries":
        return ScalarSeries(self.values + c)

    def scaled(self, lam: float) -> "ScalarSeries":
        return ScalarSeries(self.values * lam)

    @classmethod
    def from_csv(cls, path: str) -> "ScalarSeries":
        """
        Reads a one-column CSV with header `value`, or a bare whitespace-separated stream of numbers.
        """
        with open(path, "r") as fh:
            first = fh.readline().strip()
        if first.lower().startswith("value"):
            frame = pd.read_csv(path)
            return cls(frame["value"].to_numpy(dtype=float))
        frame = pd.read_csv(path, sep=r"\s+", header=None, engine="python")
        return cls(frame.to_numpy(dtype=float).reshape(-1))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"value": self.values})

    def __len__(self) -> int:
        return self.n

    def __str__(self):
        return f"ScalarSeries(n={self.n}, mean={self.mean():.6g})"


def as_series(s) -> ScalarSeries:
    return s if isinstance(s, ScalarSeries) else ScalarSeries(s)


@dataclass
class RngStream:
    """
    Independent random stream for one replicate.

    A Philox counter-based generator keyed by (master_seed, stream_id): the same pair always
    replays the same numbers, whichever thread or batch happens to run the replicate.
    """

    master_seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0:
            raise InvalidParameterError("Seeds and stream ids must be nonnegative integers.")
        seq = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=(int(self.stream_id),))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def normal(self, size=None, scale: float = 1.0):
        return self.generator.normal(0.0, scale, size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def child(self, offset: int) -> "RngStream":
        """A stream for a sub-task of this replicate (e.g. a pilot run)."""
        return RngStream(self.master_seed, self.stream_id * 1_000_003 + offset + 1)


def batched_map(batch_fn: Callable[[List[int]], List[T]], n_reps: int, n_jobs: int = 1, batch_size: int = 64) -> List[T]:
    """
    Splits replicate indices 0..n_reps-1 into fixed batches, runs batch_fn on each and returns
    the concatenated results in replicate order.

    Batches are fixed by index, so the output is identical for every n_jobs.
    """
    if n_reps < 0:
        raise InvalidParameterError("Number of replicates must be nonnegative.")
    if batch_size < 1:
        raise InvalidParameterError("Batch size must be positive.")
    batches = [list(range(start, min(start + batch_size, n_reps))) for start in range(0, n_reps, batch_size)]
    if n_jobs == 1 or len(batches) <= 1:
        chunks = [batch_fn(ids) for ids in batches]
    else:
        chunks = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(batch_fn)(ids) for ids in batches)
    out: List[T] = []
    for chunk in chunks:
        out.extend(chunk)
    return out


def replicate_map(fn: Callable[[int], T], n_reps: int, n_jobs: int = 1, batch_size: int = 64) -> List[T]:
    """Evaluates fn(i) for i = 0..n_reps-1, in replicate order."""
    return batched_map(lambda ids: [fn(i) for i in ids], n_reps, n_jobs, batch_size)
