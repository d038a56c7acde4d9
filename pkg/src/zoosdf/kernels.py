"""Hot numeric kernels: GARCH/ARMA recursions used inside QMLE objective loops.

Two interchangeable backends compute identical recursions:

* ``numba`` -- ``@njit``-compiled scalar loops (default when numba imports),
* ``numpy`` -- vectorized ``scipy.signal.lfilter`` equivalents.

Selection is driven by the ``ZOO_SDF_BACKEND`` environment variable
(``auto`` | ``numba`` | ``numpy``; default ``auto``).  ``benchmarks/kernel_bench.py``
compares the two.  Everything here is deterministic and allocation-light; the
sequential feedback in these recursions is what keeps them out of plain numpy.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter

_ENV_VAR = "ZOO_SDF_BACKEND"


def _requested_backend() -> str:
    value = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if value not in ("auto", "numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be auto|numba|numpy, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# numpy backend (scipy.signal.lfilter realizes the same linear recursions)
# ---------------------------------------------------------------------------

def garch11_filter_np(eps: np.ndarray, omega: float, alpha: float, beta: float) -> np.ndarray:
    """Conditional variance path of a GARCH(1,1), seeded at the unconditional variance."""
    eps = np.asarray(eps, dtype=np.float64)
    t_len = eps.shape[0]
    sigma2 = np.empty(t_len)
    sigma2[0] = omega / (1.0 - alpha - beta)
    if t_len > 1:
        drive = omega + alpha * eps[:-1] ** 2
        sigma2[1:] = lfilter([1.0], [1.0, -beta], drive, zi=[beta * sigma2[0]])[0]
    return sigma2


def arma_css_residuals_np(y_dev: np.ndarray, phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Conditional-sum-of-squares ARMA residuals with zero pre-sample values."""
    y_dev = np.asarray(y_dev, dtype=np.float64)
    num = np.concatenate(([1.0], -np.asarray(phi, dtype=np.float64)))
    den = np.concatenate(([1.0], np.asarray(theta, dtype=np.float64)))
    return lfilter(num, den, y_dev)


def garch11_simulate_np(z: np.ndarray, omega: float, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Generate (eps, sigma2) from iid standard normal innovations z."""
    z = np.asarray(z, dtype=np.float64)
    t_len = z.shape[0]
    eps = np.empty(t_len)
    sigma2 = np.empty(t_len)
    s_prev = omega / (1.0 - alpha - beta)
    e_prev = 0.0
    first = True
    for t in range(t_len):
        s = s_prev if first else omega + alpha * e_prev * e_prev + beta * s_prev
        first = False
        sigma2[t] = s
        eps[t] = np.sqrt(s) * z[t]
        e_prev = eps[t]
        s_prev = s
    return eps, sigma2


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

_HAVE_NUMBA = False
garch11_filter_nb = None
arma_css_residuals_nb = None
garch11_simulate_nb = None

if _requested_backend() in ("auto", "numba"):
    try:
        from numba import njit

        @njit(cache=True)
        def _garch11_filter_jit(eps, omega, alpha, beta):  # pragma: no cover - jitted
            t_len = eps.shape[0]
            sigma2 = np.empty(t_len)
            sigma2[0] = omega / (1.0 - alpha - beta)
            for t in range(1, t_len):
                sigma2[t] = omega + alpha * eps[t - 1] * eps[t - 1] + beta * sigma2[t - 1]
            return sigma2

        @njit(cache=True)
        def _arma_css_residuals_jit(y_dev, phi, theta):  # pragma: no cover - jitted
            t_len = y_dev.shape[0]
            p = phi.shape[0]
            q = theta.shape[0]
            e = np.zeros(t_len)
            for t in range(t_len):
                acc = y_dev[t]
                for i in range(1, p + 1):
                    if t - i >= 0:
                        acc -= phi[i - 1] * y_dev[t - i]
                for j in range(1, q + 1):
                    if t - j >= 0:
                        acc -= theta[j - 1] * e[t - j]
                e[t] = acc
            return e

        @njit(cache=True)
        def _garch11_simulate_jit(z, omega, alpha, beta):  # pragma: no cover - jitted
            t_len = z.shape[0]
            eps = np.empty(t_len)
            sigma2 = np.empty(t_len)
            s_prev = omega / (1.0 - alpha - beta)
            e_prev = 0.0
            for t in range(t_len):
                if t == 0:
                    s = s_prev
                else:
                    s = omega + alpha * e_prev * e_prev + beta * s_prev
                sigma2[t] = s
                eps[t] = np.sqrt(s) * z[t]
                e_prev = eps[t]
                s_prev = s
            return eps, sigma2

        def garch11_filter_nb(eps, omega, alpha, beta):
            return _garch11_filter_jit(np.ascontiguousarray(eps, dtype=np.float64),
                                       float(omega), float(alpha), float(beta))

        def arma_css_residuals_nb(y_dev, phi, theta):
            return _arma_css_residuals_jit(np.ascontiguousarray(y_dev, dtype=np.float64),
                                           np.ascontiguousarray(phi, dtype=np.float64),
                                           np.ascontiguousarray(theta, dtype=np.float64))

        def garch11_simulate_nb(z, omega, alpha, beta):
            return _garch11_simulate_jit(np.ascontiguousarray(z, dtype=np.float64),
                                         float(omega), float(alpha), float(beta))

        _HAVE_NUMBA = True
    except ImportError:
        if _requested_backend() == "numba":
            raise


if _requested_backend() == "numpy" or not _HAVE_NUMBA:
    _ACTIVE = "numpy"
    garch11_filter = garch11_filter_np
    arma_css_residuals = arma_css_residuals_np
    garch11_simulate = garch11_simulate_np
else:
    _ACTIVE = "numba"
    garch11_filter = garch11_filter_nb
    arma_css_residuals = arma_css_residuals_nb
    garch11_simulate = garch11_simulate_nb


def backend_name() -> str:
    """Name of the backend actually in use ('numba' or 'numpy')."""
    return _ACTIVE
