"""Box-constrained minimisation used for every hyperparameter search."""
from dataclasses import dataclass

import numpy as np
from scipy import optimize


@dataclass
class BoxResult:
    x: np.ndarray
    fun: float
    converged: bool
    message: str
    nfev: int


def minimize_box(fun, x0, lo, hi, method="nelder-mead", jac=False, maxiter=None,
                 polish_rounds=3) -> BoxResult:
    """Minimise ``fun`` inside ``[lo, hi]`` and never return worse than ``x0``.

    ``nelder-mead`` is scipy's bounded simplex (points are clipped to the box),
    restarted from its own optimum up to ``polish_rounds`` times because a
    collapsed simplex often stalls short of the minimum. ``l-bfgs-b`` expects
    ``fun`` to return ``(value, gradient)`` when ``jac`` is true.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f0 = fun(x0)
    f0 = f0[0] if jac else f0
    best_x, best_f = x0.copy(), float(f0)
    nfev = 1
    bounds = list(zip(lo, hi))
    method = method.lower()
    converged, message = True, ""

    if method == "nelder-mead":
        if jac:
            raise ValueError("nelder-mead does not use gradients")
        maxfev = maxiter or 400 * x0.size
        x = x0
        for _ in range(polish_rounds + 1):
            res = optimize.minimize(
                fun, x, method="Nelder-Mead", bounds=bounds,
                options={"xatol": 1e-9, "fatol": 1e-11, "maxfev": maxfev, "adaptive": x0.size > 4},
            )
            nfev += res.nfev
            converged, message = bool(res.success), str(res.message)
            improved = res.fun < best_f - 1e-11 * max(1.0, abs(best_f))
            if res.fun < best_f:
                best_x, best_f = np.clip(res.x, lo, hi), float(res.fun)
            if not improved:
                break
            x = best_x
    elif method == "l-bfgs-b":
        res = optimize.minimize(
            fun, x0, method="L-BFGS-B", jac=jac, bounds=bounds,
            options={"maxiter": maxiter or 500, "ftol": 1e-13, "gtol": 1e-9, "maxcor": 20},
        )
        nfev += res.nfev
        converged = bool(res.success) or "ABNORMAL" in str(res.message)
        message = str(res.message)
        if res.fun < best_f:
            best_x, best_f = np.clip(res.x, lo, hi), float(res.fun)
    else:
        raise ValueError(f"unknown method {method!r}")
    return BoxResult(best_x, best_f, converged, message, nfev)
