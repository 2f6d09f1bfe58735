"""Special functions and stable reductions used by the inference engine.

``digamma`` and ``trigamma`` accept scalars or numpy arrays and use the
classic recurrence-into-asymptotic-series scheme: arguments below a fixed
threshold are shifted upward with the recurrences

    psi(x)  = psi(x + 1) - 1/x
    psi1(x) = psi1(x + 1) + 1/x**2

and the shifted argument is evaluated with the Stirling-type expansion in
Bernoulli numbers.  Absolute error is well below 1e-12 (digamma) and
relative error below 1e-10 (trigamma) for x >= 1e-3.
"""

import numpy as np

# Arguments are shifted up to here before applying the asymptotic series.
# With Bernoulli terms through x**-12 the truncation error at x = 10 is
# below 1e-15; the threshold is an internal constant, accuracy is the
# contract.
_SERIES_START = 10.0


def _positive_array(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and (np.any(np.isnan(arr)) or np.any(arr <= 0.0)):
        raise ValueError(f"{name} requires strictly positive arguments")
    return arr


def digamma(x):
    """psi(x) = d/dx log Gamma(x) for x > 0.

    Accepts a scalar or ndarray; returns a float for scalar input.
    Raises ValueError for x <= 0 or NaN.
    """
    arr = _positive_array(x, "digamma").copy()
    out = np.zeros_like(arr)
    mask = arr < _SERIES_START
    while mask.any():
        out[mask] -= 1.0 / arr[mask]
        arr[mask] += 1.0
        mask = arr < _SERIES_START
    w = 1.0 / (arr * arr)
    # psi(x) ~ ln x - 1/(2x) - sum_n B_{2n} / (2n x^{2n}), terms through B12
    tail = w * (
        1.0 / 12.0
        - w * (
            1.0 / 120.0
            - w * (
                1.0 / 252.0
                - w * (1.0 / 240.0 - w * (1.0 / 132.0 - w * (691.0 / 32760.0)))
            )
        )
    )
    out += np.log(arr) - 0.5 / arr - tail
    if np.ndim(x) == 0:
        return float(out)
    return out


def trigamma(x):
    """psi1(x) = d^2/dx^2 log Gamma(x) for x > 0.

    Accepts a scalar or ndarray; returns a float for scalar input.
    Raises ValueError for x <= 0 or NaN.
    """
    arr = _positive_array(x, "trigamma").copy()
    out = np.zeros_like(arr)
    mask = arr < _SERIES_START
    while mask.any():
        out[mask] += 1.0 / (arr[mask] * arr[mask])
        arr[mask] += 1.0
        mask = arr < _SERIES_START
    u = 1.0 / arr
    w = u * u
    # psi1(x) ~ 1/x + 1/(2x^2) + sum_n B_{2n} / x^{2n+1}, terms through B12
    tail = (
        1.0 / 6.0
        - w * (
            1.0 / 30.0
            - w * (
                1.0 / 42.0
                - w * (1.0 / 30.0 - w * (5.0 / 66.0 - w * (691.0 / 2730.0)))
            )
        )
    )
    out += u + 0.5 * w + w * u * tail
    if np.ndim(x) == 0:
        return float(out)
    return out


def log_sum_exp(values, axis=None):
    """log(sum(exp(values))) by max-shift; exact for a single element.

    ``values`` must be nonempty; entries may be finite or -inf.  With
    ``axis`` given, reduces along that axis and returns an array.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("log_sum_exp requires a nonempty collection")
    if axis is None:
        m = np.max(arr)
        if not np.isfinite(m):
            return float(m)  # all -inf -> -inf
        return float(m + np.log(np.sum(np.exp(arr - m))))
    m = np.max(arr, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(arr - safe), axis=axis)) + np.squeeze(safe, axis=axis)
    m = np.squeeze(m, axis=axis)
    return np.where(np.isfinite(m), out, m)
