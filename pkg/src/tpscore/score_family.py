"""Strictly proper binary scores: the beta family and its logarithmic endpoint.

Scores are reward-oriented (larger is better). For the beta family with
threshold-mixture density ``c**(alpha-1) * (1-c)**(beta-1)``::

    S(p, 1) = -integral_p^1 c**(alpha-1) * (1-c)**beta dc
    S(p, 0) = -integral_0^p c**alpha * (1-c)**(beta-1) dc

which is Brier (halved) at ``alpha = beta = 1``. The log score is its own kind.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from math import comb

import numpy as np

from tpscore import kernels
from tpscore.errors import InvalidInputError

DEFAULT_EPSILON = 1e-6

# Largest integer parameter routed through the polynomial expansion; beyond
# this the alternating binomial sums start to lose absolute accuracy.
POLY_MAX_PARAM = 8


@dataclass(frozen=True)
class ClipPolicy:
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not (0.0 < self.epsilon < 0.5):
            raise InvalidInputError(f"clip epsilon must lie in (0, 0.5), got {self.epsilon!r}")

    @property
    def bounds(self):
        return self.epsilon, 1.0 - self.epsilon


@dataclass(frozen=True)
class ScoreFamily:
    """Selects the binary scoring rule.

    Use :meth:`log`, :meth:`brier` or :meth:`beta_family` rather than the
    constructor; :meth:`parse` accepts ``"log"``, ``"brier"``, ``"beta(2,4)"``
    and ``"beta:2,4"``.
    """

    kind: str
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.kind == "log":
            if self.alpha is not None or self.beta is not None:
                raise InvalidInputError("log family takes no (alpha, beta) parameters")
        elif self.kind == "beta":
            for name in ("alpha", "beta"):
                value = getattr(self, name)
                if value is None or not math.isfinite(value) or value <= 0:
                    raise InvalidInputError(f"beta family requires {name} > 0, got {value!r}")
            object.__setattr__(self, "alpha", float(self.alpha))
            object.__setattr__(self, "beta", float(self.beta))
        else:
            raise InvalidInputError(f"unknown score family kind {self.kind!r}")

    @classmethod
    def log(cls):
        return cls("log")

    @classmethod
    def brier(cls):
        return cls("beta", 1.0, 1.0)

    @classmethod
    def beta_family(cls, alpha, beta):
        return cls("beta", alpha, beta)

    @classmethod
    def parse(cls, text):
        s = text.strip().lower().replace(" ", "")
        if s == "log":
            return cls.log()
        if s == "brier":
            return cls.brier()
        m = re.fullmatch(r"beta[(:]([0-9.eE+-]+),([0-9.eE+-]+)\)?", s)
        if not m:
            raise InvalidInputError(f"cannot parse score family {text!r}")
        return cls.beta_family(float(m.group(1)), float(m.group(2)))

    @property
    def name(self):
        if self.kind == "log":
            return "log"
        if self.alpha == 1.0 and self.beta == 1.0:
            return "brier"
        return f"beta({self.alpha:g},{self.beta:g})"

    @property
    def is_integer(self):
        return (
            self.kind == "beta"
            and self.alpha.is_integer()
            and self.beta.is_integer()
            and max(self.alpha, self.beta) <= POLY_MAX_PARAM
        )

    def __str__(self):
        return self.name


def clip_probability(p, policy=ClipPolicy()):
    """Clip ``p`` into ``[eps, 1 - eps]``. Works elementwise on arrays."""
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("cannot clip a non-finite probability")
    lo, hi = policy.bounds
    out = np.minimum(np.maximum(arr, lo), hi)
    return float(out) if out.ndim == 0 else out


def beta_function(a, b):
    return math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))


def regularized_incomplete_beta(a, b, x):
    """I_x(a, b), the Beta(a, b) CDF at ``x``.

    Evaluated by continued fraction with the usual symmetry switch at
    ``x > (a + 1) / (a + b + 2)``; absolute error is below 1e-12.
    """
    if not (math.isfinite(a) and math.isfinite(b)) or a <= 0 or b <= 0:
        raise InvalidInputError(f"incomplete beta needs a, b > 0 (got a={a!r}, b={b!r})")
    if not math.isfinite(x) or x < 0.0 or x > 1.0:
        raise InvalidInputError(f"incomplete beta needs 0 <= x <= 1 (got x={x!r})")
    return kernels.betainc(float(a), float(b), float(x))


def _poly_integral(lead, tail, z):
    """integral_0^z (1-u)**lead * u**tail du for non-negative integers."""
    out = np.zeros_like(z)
    for j in range(lead + 1):
        k = tail + 1 + j
        out = out + (-1) ** j * comb(lead, j) * np.power(z, k) / k
    return out


def _beta_pair_polynomial(alpha, beta, p):
    a, b = int(alpha), int(beta)
    # S(p,1): substitute u = 1 - c so the integral runs over [0, 1-p].
    s1 = -_poly_integral(a - 1, b, 1.0 - p)
    s0 = -_poly_integral(b - 1, a, p)
    return s1, s0


def _beta_pair_special(alpha, beta, p):
    s1 = -beta_function(alpha, beta + 1.0) * kernels.betainc_array(beta + 1.0, alpha, 1.0 - p)
    s0 = -beta_function(alpha + 1.0, beta) * kernels.betainc_array(alpha + 1.0, beta, p)
    return s1, s0


def _checked(fam, p):
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("probabilities must be finite")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    if fam.kind == "log" and (np.any(arr == 0.0) or np.any(arr == 1.0)):
        raise InvalidInputError("log score needs clipped probabilities; got 0 or 1")
    return arr


def score_pair(fam, p, *, method="auto"):
    """Return ``(S(p, 1), S(p, 0))``. ``method`` is ``auto``, ``polynomial`` or ``special``."""
    arr = _checked(fam, p)
    shape = arr.shape
    arr = arr.reshape(-1)
    if fam.kind == "log":
        s1, s0 = np.log(arr), np.log1p(-arr)
    elif method == "polynomial" or (method == "auto" and fam.is_integer):
        if not fam.is_integer:
            raise InvalidInputError(f"polynomial route needs small integer parameters, got {fam}")
        s1, s0 = _beta_pair_polynomial(fam.alpha, fam.beta, arr)
    elif method in ("auto", "special"):
        s1, s0 = _beta_pair_special(fam.alpha, fam.beta, arr)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    s1, s0 = s1.reshape(shape), s0.reshape(shape)
    if not shape:
        return float(s1), float(s0)
    return s1, s0


def binary_score(fam, p, y, *, method="auto"):
    """Reward-oriented score S(p, y); elementwise over arrays of ``p`` and ``y``."""
    y_arr = np.asarray(y)
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise InvalidInputError("outcomes must be binary (0 or 1)")
    s1, s0 = score_pair(fam, p, method=method)
    out = np.where(y_arr == 1, s1, s0)
    return float(out) if out.ndim == 0 else out


def score_contrast(fam, p):
    """D(p) = S(p, 1) - S(p, 0), strictly increasing in ``p``."""
    s1, s0 = score_pair(fam, p)
    out = np.subtract(s1, s0)
    return float(out) if np.ndim(out) == 0 else out


def wrong_boundary_floors(alpha, beta):
    """(S(0, 1), S(1, 0)) = (-B(alpha, beta + 1), -B(alpha + 1, beta))."""
    if not (alpha > 0 and beta > 0):
        raise InvalidInputError("floors need alpha, beta > 0")
    return -beta_function(alpha, beta + 1.0), -beta_function(alpha + 1.0, beta)
