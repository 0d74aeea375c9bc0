"""Small statistics helpers for replication summaries."""

from __future__ import annotations

import numpy as np
from scipy import stats as _st


def mean_ci(values, conf: float = 0.95) -> tuple[float, float, float]:
    """Mean and normal-approximation confidence interval."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan"), float("nan")
    m = float(v.mean())
    if v.size < 2:
        return m, m, m
    half = float(_st.norm.ppf(0.5 + conf / 2) * v.std(ddof=1) / np.sqrt(v.size))
    return m, m - half, m + half


def paired_bootstrap(a, b, *, n_boot: int = 4000, seed: int = 0) -> np.ndarray:
    """Bootstrap distribution of mean(a - b) over paired replications."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    d = a - b
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d.size, size=(n_boot, d.size))
    return d[idx].mean(axis=1)


def ordering_holds(a, b, conf: float = 0.95, **kw) -> dict:
    """Check ``mean(a) <= mean(b)`` on paired replications.

    ``holds`` is False only when the bootstrap shows ``a > b`` at level
    ``conf`` (the one-sided lower bound of ``mean(a - b)`` is above zero).
    ``strict`` additionally reports whether ``a < b`` is itself significant.
    """
    boot = paired_bootstrap(a, b, **kw)
    lo = float(np.quantile(boot, 1 - conf))
    hi = float(np.quantile(boot, conf))
    diff = float(np.mean(np.asarray(a, float) - np.asarray(b, float)))
    return {"diff": diff, "lower": lo, "upper": hi, "holds": lo <= 0.0, "strict": hi < 0.0}
