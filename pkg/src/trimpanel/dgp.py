"""Data-generating processes and their population quantities.

Three designs are provided:

``TlsCounterexample``
    ``K = 1``, no fixed effect, ``theta0 = 0``, ``x1 = 2``, ``x2 = 1`` and iid
    standard normal errors.  The legacy TLS Hessian target is 1/4 here while
    the true Hessian of the expected loss is 1/2.
``TladCounterexample``
    Same regressors; ``(e1, e2)`` has density ``2 h(e1 - e2) r(e1 + e2)`` with
    ``h`` the dyadic-shell density below and ``r`` triangular on ``[1, 3]``.
    The expected TLAD loss has no Hessian at ``theta0``.
``SmoothExchangeable``
    Bivariate normal errors with correlation ``rho``; regressors are either
    Gaussian (``design="gaussian"``) or constant (``design="fixed"``, with
    ``x1 = 2 * x_scale`` and ``x2 = x_scale`` in every coordinate).  The fixed
    effect is ``alpha_scale`` times the average regressor level.

Population oracles use closed forms where they exist and adaptive
Gauss-Kronrod quadrature (QUADPACK via :func:`scipy.integrate.quad`)
otherwise.  They support the two counterexamples and the fixed smooth
design; a Gaussian design raises :class:`UnsupportedSpecError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .core import PanelDataset

__all__ = [
    "DgpSpec",
    "HessianDoesNotExistError",
    "SmoothExchangeable",
    "TladCounterexample",
    "TlsCounterexample",
    "UnsupportedSpecError",
    "analytic_G",
    "gamma_of_theta",
    "h_cdf",
    "h_density",
    "population_bread_tlad",
    "population_bread_tls",
    "population_meat_tls",
    "r_cdf",
    "r_density",
    "sample_h",
    "sample_r",
    "simulate",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)
PHI0 = 1.0 / SQRT_2PI
TAIL = 10.0  # standard deviations kept in Gaussian integrals
MAX_SHELL = 60


class UnsupportedSpecError(ValueError):
    """The requested population quantity is not available for this design."""


class HessianDoesNotExistError(UnsupportedSpecError):
    pass


@dataclass(frozen=True)
class TlsCounterexample:
    name = "tls-ce"


@dataclass(frozen=True)
class TladCounterexample:
    r_choice: str = "triangular"
    name = "tlad-ce"

    def __post_init__(self):
        if self.r_choice != "triangular":
            raise ValueError(f"unknown r_choice {self.r_choice!r}; only 'triangular' is built in")


@dataclass(frozen=True)
class SmoothExchangeable:
    k: int = 1
    theta0: tuple[float, ...] = (0.0,)
    rho: float = 0.0
    x_scale: float = 1.0
    alpha_scale: float = 0.0
    design: str = "fixed"
    name = "smooth"

    def __post_init__(self):
        theta0 = tuple(float(v) for v in np.atleast_1d(self.theta0))
        object.__setattr__(self, "theta0", theta0)
        if self.k < 1 or len(theta0) != self.k:
            raise ValueError(f"dimension mismatch: k={self.k}, theta0 has length {len(theta0)}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if self.design not in ("fixed", "gaussian"):
            raise ValueError("design must be 'fixed' or 'gaussian'")


Variant = Union[TlsCounterexample, TladCounterexample, SmoothExchangeable]


@dataclass(frozen=True)
class DgpSpec:
    variant: Variant = field(default_factory=TlsCounterexample)
    n: int = 1000

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def k(self) -> int:
        return self.variant.k if isinstance(self.variant, SmoothExchangeable) else 1

    @property
    def theta0(self) -> np.ndarray:
        if isinstance(self.variant, SmoothExchangeable):
            return np.array(self.variant.theta0)
        return np.zeros(1)

    def to_dict(self) -> dict:
        out = {"variant": self.variant.name, "n": self.n}
        if isinstance(self.variant, SmoothExchangeable):
            v = self.variant
            out.update(k=v.k, theta0=list(v.theta0), rho=v.rho, x_scale=v.x_scale,
                       alpha_scale=v.alpha_scale, design=v.design)
        elif isinstance(self.variant, TladCounterexample):
            out["r_choice"] = self.variant.r_choice
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        d = dict(d)
        name = d.pop("variant")
        n = int(d.pop("n", 1000))
        if name == "tls-ce":
            variant: Variant = TlsCounterexample()
        elif name == "tlad-ce":
            variant = TladCounterexample(**d)
        elif name == "smooth":
            if "theta0" in d:
                d["theta0"] = tuple(np.atleast_1d(d["theta0"]).tolist())
                d.setdefault("k", len(d["theta0"]))
            elif "k" in d:
                d["theta0"] = (0.0,) * int(d["k"])
            variant = SmoothExchangeable(**d)
        else:
            raise ValueError(f"unknown dgp {name!r}; expected tls-ce, tlad-ce or smooth")
        return cls(variant, n)


# ---------------------------------------------------------------------------
# Dyadic density h and triangular density r
# ---------------------------------------------------------------------------


def _shell(s: np.ndarray) -> np.ndarray:
    """Index k with ``2^-(k+1) < s <= 2^-k`` for ``0 < s <= 1``."""
    mant, e = np.frexp(s)
    return np.where(mant == 0.5, 1 - e, -e)


def h_density(t):
    """3/4 on the even dyadic shells of ``[-1, 1]``, 0 elsewhere."""
    t = np.asarray(t, dtype=np.float64)
    s = np.abs(t)
    inside = (s > 0) & (s <= 1)
    k = _shell(np.where(inside, s, 1.0))
    out = np.where(inside & (k % 2 == 0), 0.75, 0.0)
    return float(out) if out.ndim == 0 else out


def _h_half_mass(s: np.ndarray) -> np.ndarray:
    """``int_0^s h`` for ``0 <= s <= 1``, exact in binary arithmetic."""
    pos = s > 0
    ss = np.where(pos, s, 1.0)
    k = _shell(ss)
    # all even shells strictly inside shell k carry 2^-(m+1), m the next even index
    m = np.where(k % 2 == 0, k + 2, k + 1)
    inner = np.ldexp(1.0, -(m + 1).astype(np.int64))
    partial = np.where(k % 2 == 0, 0.75 * (ss - np.ldexp(1.0, -(k + 1).astype(np.int64))), 0.0)
    return np.where(pos, inner + partial, 0.0)


def h_cdf(t):
    t = np.asarray(t, dtype=np.float64)
    s = np.minimum(np.abs(t), 1.0)
    half = _h_half_mass(s)
    out = np.where(t >= 0, 0.5 + half, 0.5 - half)
    return float(out) if out.ndim == 0 else out


def sample_h(rng: np.random.Generator, size=None):
    """Draw from ``h``: random sign, even shell ``2j`` with ``P(j) = (3/4) 4^-j``, uniform inside."""
    j = np.minimum(rng.geometric(0.75, size=size) - 1, MAX_SHELL // 2)
    k = 2 * np.asarray(j, dtype=np.int64)
    u = rng.random(size=size)
    sign = np.where(rng.random(size=size) < 0.5, -1.0, 1.0)
    mag = np.ldexp(2.0 - u, -(k + 1))  # in (2^-(k+1), 2^-k]
    out = sign * mag
    return float(out) if np.ndim(out) == 0 else out


def r_density(t):
    """Triangular density on ``[1, 3]`` with mode 2."""
    t = np.asarray(t, dtype=np.float64)
    out = np.clip(1.0 - np.abs(t - 2.0), 0.0, None)
    return float(out) if out.ndim == 0 else out


def r_cdf(t):
    t = np.asarray(t, dtype=np.float64)
    lo = 0.5 * (t - 1.0) ** 2
    hi = 1.0 - 0.5 * (3.0 - t) ** 2
    out = np.where(t <= 1, 0.0, np.where(t >= 3, 1.0, np.where(t <= 2, lo, hi)))
    return float(out) if out.ndim == 0 else out


def sample_r(rng: np.random.Generator, size=None):
    u = rng.random(size=size)
    out = np.where(u < 0.5, 1.0 + np.sqrt(2.0 * u), 3.0 - np.sqrt(2.0 * (1.0 - u)))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _censor(v):
    return np.maximum(v, 0.0)


def _smooth_design(v: SmoothExchangeable, n: int, rng: np.random.Generator):
    k = v.k
    if v.design == "gaussian":
        x1 = v.x_scale * rng.standard_normal((n, k))
        x2 = v.x_scale * rng.standard_normal((n, k))
    else:
        x1 = np.full((n, k), 2.0 * v.x_scale)
        x2 = np.full((n, k), 1.0 * v.x_scale)
    alpha = v.alpha_scale * np.mean(0.5 * (x1 + x2), axis=1)
    return x1, x2, alpha


def simulate(spec: DgpSpec, rng: np.random.Generator) -> PanelDataset:
    n, v = spec.n, spec.variant
    if isinstance(v, TlsCounterexample):
        e = rng.standard_normal((n, 2))
        x1, x2 = np.full((n, 1), 2.0), np.full((n, 1), 1.0)
        return PanelDataset(_censor(e[:, 0]), _censor(e[:, 1]), x1, x2)
    if isinstance(v, TladCounterexample):
        d = sample_h(rng, n)
        s = sample_r(rng, n)
        e1, e2 = 0.5 * (s + d), 0.5 * (s - d)
        x1, x2 = np.full((n, 1), 2.0), np.full((n, 1), 1.0)
        return PanelDataset(_censor(e1), _censor(e2), x1, x2)
    if isinstance(v, SmoothExchangeable):
        x1, x2, alpha = _smooth_design(v, n, rng)
        z = rng.standard_normal((n, 2))
        e1 = z[:, 0]
        e2 = v.rho * z[:, 0] + math.sqrt(1.0 - v.rho ** 2) * z[:, 1]
        th = np.array(v.theta0)
        y1 = alpha + x1 @ th + e1
        y2 = alpha + x2 @ th + e2
        return PanelDataset(_censor(y1), _censor(y2), x1, x2)
    raise UnsupportedSpecError(f"unknown DGP variant {v!r}")


# ---------------------------------------------------------------------------
# Closed forms for the TLS counterexample
# ---------------------------------------------------------------------------


def _phi(u):
    return math.exp(-0.5 * u * u) / SQRT_2PI


def _int_Phi(a: float) -> float:
    """``int_0^a Phi(u) du``."""
    return a * float(ndtr(a)) + _phi(a) - PHI0


def analytic_G(theta: float) -> float:
    """Expected TLS score at ``theta`` in the TLS counterexample."""
    theta = float(theta)
    if theta < 0:
        return theta + _int_Phi(-theta)
    if theta > 0:
        return theta - _int_Phi(theta)
    return 0.0


def gamma_of_theta(theta: float) -> float:
    """``P(-Y2 < theta < Y1)`` in the TLS counterexample; jumps by 1/4 at 0."""
    theta = float(theta)
    if theta == 0:
        return 0.25
    return 1.0 - float(ndtr(abs(theta)))


# ---------------------------------------------------------------------------
# Population oracles
# ---------------------------------------------------------------------------


def _fixed_smooth(v: SmoothExchangeable):
    """Location of the latent outcomes and the constant regressor difference."""
    if v.design != "fixed" and v.x_scale != 0:
        raise UnsupportedSpecError(
            "population oracles need a fixed regressor design (design='fixed' or x_scale=0)"
        )
    x1 = np.full(v.k, 2.0 * v.x_scale)
    x2 = np.full(v.k, 1.0 * v.x_scale)
    alpha = v.alpha_scale * float(np.mean(0.5 * (x1 + x2)))
    th = np.array(v.theta0)
    return alpha + float(x1 @ th), alpha + float(x2 @ th), x1 - x2


def population_bread_tls(spec: DgpSpec) -> np.ndarray:
    """``E[(1 - F_e(-alpha - min(x1'theta0, x2'theta0))) dx dx^T]``."""
    v = spec.variant
    if isinstance(v, TlsCounterexample):
        return np.array([[0.5]])
    if isinstance(v, TladCounterexample):
        # errors are strictly positive, so F_e(0) = 0; dx = 1
        return np.array([[1.0]])
    if isinstance(v, SmoothExchangeable):
        mu1, mu2, dx = _fixed_smooth(v)
        if not np.any(dx):
            return np.zeros((v.k, v.k))
        # mu_tau = alpha + x_tau' theta0 and F_e = Phi (unit variance)
        c = 1.0 - float(ndtr(-min(mu1, mu2)))
        return c * np.outer(dx, dx)
    raise UnsupportedSpecError(f"unsupported spec {v!r}")


def _tls_score_sq(t, y1, y2):
    if t <= -y2:
        s = -y1
    elif t >= y1:
        s = y2
    else:
        s = y2 - y1 + t
    return s * s


def _meat_tls_quad(mu1: float, mu2: float, rho: float, t: float) -> float:
    """``E[score(t, Y)^2]`` with ``Y_tau = max(0, mu_tau + e_tau)`` and correlated normal errors."""
    c = math.sqrt(1.0 - rho * rho)

    def inner(z1):
        y1 = max(0.0, mu1 + z1)
        # breakpoints in z2 where y2 hits 0, -t or y1 - t
        pts = []
        for target in (-mu2, -t - mu2, y1 - t - mu2):
            z2 = (target - rho * z1) / c
            if -TAIL < z2 < TAIL:
                pts.append(z2)

        def f(z2):
            y2 = max(0.0, mu2 + rho * z1 + c * z2)
            return _tls_score_sq(t, y1, y2) * _phi(z2)

        val, _ = integrate.quad(f, -TAIL, TAIL, points=sorted(pts) or None,
                                epsabs=1e-11, epsrel=1e-11, limit=200)
        return val * _phi(z1)

    pts = [p for p in (-mu1, t - mu1) if -TAIL < p < TAIL]
    val, _ = integrate.quad(inner, -TAIL, TAIL, points=sorted(pts) or None,
                            epsabs=1e-10, epsrel=1e-10, limit=200)
    return val


def population_meat_tls(spec: DgpSpec) -> np.ndarray:
    """``E[score(dx'theta0, Y)^2 dx dx^T]`` for the TLS score."""
    v = spec.variant
    if isinstance(v, TlsCounterexample):
        return np.array([[1.0 - 1.0 / math.pi]])
    if isinstance(v, TladCounterexample):
        # at theta0 = 0 both outcomes are positive so the score is -(e1 - e2);
        # E[D^2] over the even shells is (7/16) / (1 - 2^-6) = 4/9
        return np.array([[4.0 / 9.0]])
    if isinstance(v, SmoothExchangeable):
        mu1, mu2, dx = _fixed_smooth(v)
        if not np.any(dx):
            return np.zeros((v.k, v.k))
        t = float(dx @ np.array(v.theta0))
        return _meat_tls_quad(mu1, mu2, v.rho, t) * np.outer(dx, dx)
    raise UnsupportedSpecError(f"unsupported spec {v!r}")


def meat_tls_quadrature(mu1: float, mu2: float, rho: float, t: float) -> float:
    """Quadrature version of the scalar TLS meat, exposed for cross-checks."""
    return _meat_tls_quad(mu1, mu2, rho, t)


def _binorm_pdf(a: float, b: float, rho: float) -> float:
    c2 = 1.0 - rho * rho
    q = (a * a - 2.0 * rho * a * b + b * b) / c2
    return math.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(c2))


def population_bread_tlad(spec: DgpSpec) -> np.ndarray:
    """Hessian of the expected shifted TLAD loss at ``theta0``.

    Sum of three one-dimensional integrals of the latent-outcome density:
    along the diagonal through ``(max(0, t), -min(0, t))``, and along the
    censoring edge selected by the sign of ``t = dx' theta0``.
    """
    v = spec.variant
    if isinstance(v, TladCounterexample):
        raise HessianDoesNotExistError("Hessian does not exist for this DGP")
    if not isinstance(v, SmoothExchangeable):
        raise UnsupportedSpecError(f"unsupported spec {v!r}")
    mu1, mu2, dx = _fixed_smooth(v)
    if not np.any(dx):
        return np.zeros((v.k, v.k))
    t = float(dx @ np.array(v.theta0))
    rho = v.rho

    def f(a, b):  # latent density at (a, b)
        return _binorm_pdf(a - mu1, b - mu2, rho)

    hi = TAIL + abs(mu1) + abs(mu2) + abs(t)
    diag, _ = integrate.quad(lambda z: f(z + max(0.0, t), z - min(0.0, t)), 0.0, hi,
                             epsabs=1e-12, epsrel=1e-12, limit=200)
    if t >= 0:
        edge, _ = integrate.quad(lambda z: f(t, z), -hi, 0.0,
                                 epsabs=1e-12, epsrel=1e-12, limit=200)
    else:
        edge, _ = integrate.quad(lambda z: f(z, -t), -hi, 0.0,
                                 epsabs=1e-12, epsrel=1e-12, limit=200)
    return (2.0 * diag + edge) * np.outer(dx, dx)
