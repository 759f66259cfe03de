"""Pure numpy fallback for the compiled ragged-sum kernel."""

import numpy as np


def ragged_sums(base, step, count, order=2):
    base = np.asarray(base, dtype=np.float64)
    step = np.asarray(step, dtype=np.float64)
    count = np.asarray(count, dtype=np.int64)
    n = base.shape[0]
    total = int(count.sum())
    row = np.repeat(np.arange(n), count)
    # position within each row's progression
    starts = np.cumsum(count) - count
    u = np.arange(total) - np.repeat(starts, count)
    t = base[row] + u * step[row]
    if order == 0:
        return np.bincount(row, weights=np.log(t), minlength=n)[:, None]
    inv = 1.0 / t
    uinv = u * inv
    cols = (np.log(t), inv, uinv, inv * inv, uinv * inv, uinv * uinv)
    return np.column_stack([np.bincount(row, weights=c, minlength=n) for c in cols])
