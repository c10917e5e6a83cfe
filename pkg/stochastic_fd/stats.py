import math
import typing as T

import numpy as np
from loguru import logger
from pydantic import BaseModel

MIN_FIT_PAIRS = 3


class OrderFit(BaseModel):
    """Least-squares slope of log(error) against log(h)."""

    slope: float | None = None
    r_squared: float | None = None
    pairs: list[tuple[float, float]] = []
    dropped: list[tuple[float, float]] = []
    exact: bool = False

    @property
    def fitted(self) -> bool:
        return self.slope is not None


class MomentEstimate(BaseModel):
    value: float
    half_width: float
    samples: int
    degenerate: bool = False


def fit_order(
    pairs: T.Iterable[tuple[float, float]], exact_tol: float | None = None
) -> OrderFit:
    """
    Fit ``error ~ C h^slope``.

    Args:
        pairs (Iterable[tuple[float, float]]): (h, error) pairs.
        exact_tol (float, optional): If every error is below it, report an exact result instead of a fit.

    Returns:
        OrderFit: No slope when fewer than three pairs have positive errors.
    """
    pairs = [(float(h), float(e)) for h, e in pairs]
    if exact_tol is not None and pairs and all(abs(e) < exact_tol for _, e in pairs):
        return OrderFit(pairs=pairs, exact=True)

    kept = [(h, e) for h, e in pairs if h > 0 and e > 0 and math.isfinite(e)]
    dropped = [i for i in pairs if i not in kept]
    for h, e in dropped:
        logger.info(f"Dropping pair h={h:g}, error={e:g} from order fit (not positive)")
    if len(kept) < MIN_FIT_PAIRS:
        logger.info(f"Only {len(kept)} usable pairs, no order fit")
        return OrderFit(pairs=kept, dropped=dropped)

    x = np.log([h for h, _ in kept])
    y = np.log([e for _, e in kept])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return OrderFit(slope=float(slope), r_squared=r_squared, pairs=kept, dropped=dropped)


def moment_estimate(
    errors: T.Sequence[float],
    p: float,
    n_resamples: int = 2000,
    seed: int = 0,
    confidence: float = 0.95,
) -> MomentEstimate:
    """Monte Carlo estimate of E[error^p] with a percentile bootstrap half-width."""
    if p <= 0:
        raise ValueError(f"Moment order must be positive, got {p}")
    values = np.asarray(errors, dtype=float) ** p
    if values.size == 0:
        raise ValueError("At least one error sample is required")
    if values.size == 1:
        return MomentEstimate(value=float(values[0]), half_width=0.0, samples=1, degenerate=True)
    if np.all(values == values[0]):
        return MomentEstimate(value=float(values[0]), half_width=0.0, samples=int(values.size))

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    tail = (1 - confidence) / 2
    lo, hi = np.quantile(means, [tail, 1 - tail])
    return MomentEstimate(
        value=float(values.mean()), half_width=float(hi - lo) / 2, samples=int(values.size)
    )


__all__ = ["OrderFit", "MomentEstimate", "fit_order", "moment_estimate", "MIN_FIT_PAIRS"]
