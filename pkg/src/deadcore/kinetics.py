"""Reaction kinetics, their regularizations, and dead-core growth functions.

Every kinetic is stored by its branch on ``s >= 0`` and extended to the real
line as an odd function, so ``value(0) == 0`` and ``derivative`` is even.
An infinite derivative (root kinetics at zero) is returned as ``math.inf``;
nothing in this module clamps it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, optimize

from .errors import NonIntegrableGrowth

INFINITE_DERIVATIVE = math.inf

# absolute tolerance for antiderivatives without a closed form
QUAD_EPSABS = 1e-12


class Smoothness(str, enum.Enum):
    TWICE_SMOOTH = "TwiceSmooth"
    LIPSCHITZ = "Lipschitz"
    SINGULAR_AT_ZERO = "SingularAtZero"


def _scalar_or_array(fn):
    def wrapped(s):
        arr = np.asarray(s, dtype=float)
        out = fn(arr)
        if arr.ndim == 0:
            return float(out)
        return out

    wrapped.__name__ = getattr(fn, "__name__", "kinetic_fn")
    return wrapped


@dataclass(frozen=True)
class Kinetic:
    """A nondecreasing reaction term ``beta`` with ``beta(0) = 0``.

    ``kinks`` lists the points where ``beta'`` jumps, as
    ``(point, left_slope, right_slope)``; :func:`mollify` smooths exactly those.
    ``sup_gap`` is the certified sup distance to the kinetic this one was
    derived from (``None`` for primitive kinetics).
    """

    name: str
    value: Callable
    derivative: Callable
    antiderivative: Callable
    smoothness: Smoothness
    lipschitz_bound: float | None = None
    params: Mapping[str, float] = field(default_factory=dict)
    kinks: tuple = ()
    sup_gap: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    @property
    def beta_one(self) -> float:
        return float(self.value(1.0))

    def capped_derivative(self, s, cap: float) -> np.ndarray:
        """``min(beta'(s), cap)``; the only sanctioned way to make it finite."""
        return np.minimum(np.asarray(self.derivative(s), dtype=float), cap)

    def describe(self) -> dict:
        return {"type": self.name, **dict(self.params)}


def _is_plain_root(kin: Kinetic) -> bool:
    return kin.name == "root" and set(kin.params) == {"lambda", "q"}


def make_root_kinetic(lam: float, q: float) -> Kinetic:
    """``beta(s) = lam |s|^(q-1) s`` with ``0 < q < 1``."""
    if not (0.0 < q < 1.0):
        raise ValueError("q must lie in (0,1)")
    if not lam > 0.0:
        raise ValueError("lambda must be positive")

    @_scalar_or_array
    def value(s):
        return lam * np.sign(s) * np.abs(s) ** q

    @_scalar_or_array
    def derivative(s):
        a = np.abs(s)
        with np.errstate(divide="ignore"):
            return np.where(a > 0.0, lam * q * a ** (q - 1.0), INFINITE_DERIVATIVE)

    @_scalar_or_array
    def antiderivative(t):
        return lam * np.abs(t) ** (q + 1.0) / (q + 1.0)

    return Kinetic("root", value, derivative, antiderivative,
                   Smoothness.SINGULAR_AT_ZERO, None, {"lambda": lam, "q": q})


def make_lipschitz_ramp(slope: float, knee: float) -> Kinetic:
    """Piecewise linear ``beta(s) = slope * max(0, s - knee)`` (odd extension)."""
    if not slope > 0.0:
        raise ValueError("slope must be positive")
    if not (0.0 < knee < 1.0):
        raise ValueError("knee must lie in (0,1)")

    @_scalar_or_array
    def value(s):
        return slope * np.sign(s) * np.maximum(0.0, np.abs(s) - knee)

    @_scalar_or_array
    def derivative(s):
        return np.where(np.abs(s) >= knee, slope, 0.0)

    @_scalar_or_array
    def antiderivative(t):
        return 0.5 * slope * np.maximum(0.0, np.abs(t) - knee) ** 2

    kinks = ((-knee, slope, 0.0), (knee, 0.0, slope))
    return Kinetic("ramp", value, derivative, antiderivative, Smoothness.LIPSCHITZ,
                   float(slope), {"slope": slope, "knee": knee}, kinks)


def make_linear_kinetic(rate: float = 1.0) -> Kinetic:
    if not rate > 0.0:
        raise ValueError("rate must be positive")

    @_scalar_or_array
    def value(s):
        return rate * s

    @_scalar_or_array
    def derivative(s):
        return np.full_like(s, rate, dtype=float)

    @_scalar_or_array
    def antiderivative(t):
        return 0.5 * rate * t * t

    return Kinetic("linear", value, derivative, antiderivative, Smoothness.TWICE_SMOOTH,
                   float(rate), {"rate": rate})


def mollify(kin: Kinetic, n: int) -> Kinetic:
    """C^1 approximant with Lipschitz derivative, blending each kink quadratically.

    Each kink ``k`` with one-sided slopes ``a, b`` is replaced on
    ``[k - 1/n, k + 1/n]`` by the quadratic matching value and slope at both
    window ends. The largest deviation sits at the kink itself and equals
    ``|b - a| / (4 n)``, which is stored as ``sup_gap``.
    """
    if kin.lipschitz_bound is None or not math.isfinite(kin.lipschitz_bound):
        raise ValueError("mollify needs a kinetic with a finite Lipschitz bound")
    n = int(n)
    if n <= 0:
        raise ValueError("n must be a positive integer")
    half = 1.0 / n
    kinks = tuple(sorted(kin.kinks))
    for k, _, _ in kinks:
        if abs(k) <= half:
            raise ValueError(f"n={n}: blending window around kink {k} reaches s = 0")
    for (k1, _, _), (k2, _, _) in zip(kinks, kinks[1:]):
        if k2 - k1 <= 2.0 * half:
            raise ValueError(f"n={n}: blending windows around kinks {k1} and {k2} overlap")

    def correction(s):
        out = np.zeros_like(s)
        for k, a, b in kinks:
            t = s - k
            inside = np.abs(t) <= half
            c = (b - a) * ((t + half) ** 2 / (4.0 * half) - np.maximum(0.0, t))
            out += np.where(inside, c, 0.0)
        return out

    def blended_slope(s, base):
        # set the slope inside each window directly so the base kinetic's
        # one-sided convention at the kink itself does not leak through
        out = np.array(base, dtype=float)
        for k, a, b in kinks:
            t = s - k
            inside = np.abs(t) <= half
            out = np.where(inside, a + (b - a) * (t + half) / (2.0 * half), out)
        return out

    def correction_integral(x):
        # integral of the correction from -inf to x
        out = np.zeros_like(x)
        for k, a, b in kinks:
            t = x - k
            mid = (b - a) * ((t + half) ** 3 / (12.0 * half) - 0.5 * np.maximum(0.0, t) ** 2)
            full = (b - a) * half * half / 6.0
            out += np.where(t < -half, 0.0, np.where(t > half, full, mid))
        return out

    c0 = correction_integral(np.zeros(1))[0]

    @_scalar_or_array
    def value(s):
        return np.asarray(kin.value(s), dtype=float) + correction(s)

    @_scalar_or_array
    def derivative(s):
        return blended_slope(s, kin.derivative(s))

    @_scalar_or_array
    def antiderivative(t):
        return np.asarray(kin.antiderivative(t), dtype=float) + correction_integral(t) - c0

    gap = max((abs(b - a) * half / 4.0 for _, a, b in kinks), default=0.0)
    params = {**dict(kin.params), "mollify_n": n}
    return Kinetic(kin.name, value, derivative, antiderivative, Smoothness.TWICE_SMOOTH,
                   kin.lipschitz_bound, params, (), gap)


def truncate(kin: Kinetic, m: float) -> Kinetic:
    """Kinetic with ``beta_m' = min(m, beta')`` and ``beta_m(0) = 0``.

    Closed form for root kinetics; otherwise the primitive of the capped
    derivative is integrated adaptively.
    """
    if not m > 0.0:
        raise ValueError("m must be positive")
    m = float(m)
    params = {**dict(kin.params), "truncate_m": m}

    if _is_plain_root(kin):
        lam, q = kin.params["lambda"], kin.params["q"]
        s_star = (lam * q / m) ** (1.0 / (1.0 - q))
        b_star = m * s_star
        big_b_star = 0.5 * m * s_star * s_star

        @_scalar_or_array
        def value(s):
            a = np.abs(s)
            inner = m * a
            outer = b_star + lam * (a ** q - s_star ** q)
            return np.sign(s) * np.where(a <= s_star, inner, outer)

        @_scalar_or_array
        def derivative(s):
            a = np.abs(s)
            with np.errstate(divide="ignore"):
                d = np.where(a > 0.0, lam * q * a ** (q - 1.0), INFINITE_DERIVATIVE)
            return np.minimum(m, d)

        @_scalar_or_array
        def antiderivative(t):
            a = np.abs(t)
            inner = 0.5 * m * a * a
            outer = (big_b_star + (b_star - lam * s_star ** q) * (a - s_star)
                     + lam * (a ** (q + 1.0) - s_star ** (q + 1.0)) / (q + 1.0))
            return np.where(a <= s_star, inner, outer)

        gap = m * s_star * (1.0 - q) / q
        return Kinetic(kin.name, value, derivative, antiderivative, Smoothness.TWICE_SMOOTH,
                       m, params, (), gap)

    if kin.lipschitz_bound is not None and m >= kin.lipschitz_bound:
        return Kinetic(kin.name, kin.value, kin.derivative, kin.antiderivative, kin.smoothness,
                       kin.lipschitz_bound, params, kin.kinks, 0.0)

    breaks = sorted({abs(k) for k, _, _ in kin.kinks})

    def capped(sig):
        return min(m, float(kin.derivative(sig)))

    def _integral(a, b, fn):
        pts = [p for p in breaks if a < p < b]
        val, _ = integrate.quad(fn, a, b, points=pts or None, epsabs=QUAD_EPSABS,
                                epsrel=1e-12, limit=200)
        return val

    @_scalar_or_array
    def value(s):
        flat = np.abs(np.atleast_1d(s)).ravel()
        out = np.array([_integral(0.0, a, capped) if a > 0 else 0.0 for a in flat])
        return (np.sign(s) * out.reshape(np.shape(s)))

    @_scalar_or_array
    def derivative(s):
        return np.minimum(m, np.asarray(kin.derivative(s), dtype=float))

    @_scalar_or_array
    def antiderivative(t):
        flat = np.abs(np.atleast_1d(t)).ravel()
        out = np.array([_integral(0.0, a, lambda x: float(value(x))) if a > 0 else 0.0
                        for a in flat])
        return out.reshape(np.shape(t))

    grid = np.linspace(0.0, 1.0, 1001)
    gap = float(np.max(np.abs(np.asarray(kin.value(grid)) - value(grid))))
    return Kinetic(kin.name, value, derivative, antiderivative, Smoothness.LIPSCHITZ,
                   m, params, (), gap)


def kinetic_from_config(entry: Mapping) -> Kinetic:
    """Build a kinetic from its config form, e.g. ``{"type": "root", "lambda": 1, "q": 0.5}``."""
    kind = entry.get("type")
    if kind == "root":
        kin = make_root_kinetic(float(entry.get("lambda", 1.0)), float(entry["q"]))
    elif kind == "ramp":
        kin = make_lipschitz_ramp(float(entry["slope"]), float(entry["knee"]))
    elif kind == "linear":
        kin = make_linear_kinetic(float(entry.get("rate", 1.0)))
    else:
        raise ValueError(f"unknown kinetic type {kind!r}")
    if entry.get("mollify_n") is not None:
        kin = mollify(kin, int(entry["mollify_n"]))
    if entry.get("truncate_m") is not None:
        kin = truncate(kin, float(entry["truncate_m"]))
    return kin


@dataclass(frozen=True)
class GrowthFunctions:
    """``G(t) = sqrt(2 (B(t) + alpha t))`` and ``Psi(s) = int_0^s dt / G(t)``."""

    alpha: float
    G: Callable
    Psi: Callable
    PsiInverse: Callable
    closed_form: bool


def _decade_increments(inv_g, decades: int = 14) -> list[float]:
    incs = []
    for k in range(decades):
        lo, hi = 10.0 ** -(k + 1), 10.0 ** -k
        val, _ = integrate.quad(inv_g, lo, hi, epsabs=0.0, epsrel=1e-10, limit=200)
        incs.append(val)
    return incs


def check_integrable_at_zero(inv_g) -> float:
    """Estimate ``int_0^1 inv_g``, raising if the integral diverges at 0+.

    The integral over successive decades ``[10^-(k+1), 10^-k]`` shrinks
    geometrically for an integrable power-type singularity and stays
    constant for a logarithmic one.
    """
    incs = _decade_increments(inv_g)
    tail_ratio = incs[-1] / incs[-2] if incs[-2] > 0 else 0.0
    if not np.all(np.isfinite(incs)) or tail_ratio >= 0.999:
        raise NonIntegrableGrowth(
            f"int dt/G diverges at 0+ (decade increments stop shrinking, ratio {tail_ratio:.4f})")
    tail = incs[-1] * tail_ratio / (1.0 - tail_ratio)
    return float(sum(incs) + tail)


def growth_functions(kin: Kinetic, alpha: float = 0.0) -> GrowthFunctions:
    """Growth function ``G``, its reciprocal primitive ``Psi`` and ``Psi^-1``.

    Root kinetics with ``alpha = 0`` use closed forms; everything else uses
    adaptive quadrature for ``Psi`` and a bracketing root finder for the
    inverse.

    Raises
    ------
    NonIntegrableGrowth
        If ``1/G`` is not integrable at ``0+`` (no dead core can form).
    """
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    alpha = float(alpha)

    @_scalar_or_array
    def G(t):
        t = np.maximum(t, 0.0)
        return np.sqrt(2.0 * (np.asarray(kin.antiderivative(t), dtype=float) + alpha * t))

    if _is_plain_root(kin) and alpha == 0.0:
        lam, q = kin.params["lambda"], kin.params["q"]
        scale = math.sqrt((q + 1.0) / (2.0 * lam)) * 2.0 / (1.0 - q)
        expo = 0.5 * (1.0 - q)

        @_scalar_or_array
        def Psi(s):
            return scale * np.maximum(s, 0.0) ** expo

        @_scalar_or_array
        def PsiInverse(t):
            return (np.maximum(t, 0.0) / scale) ** (1.0 / expo)

        return GrowthFunctions(alpha, G, Psi, PsiInverse, True)

    def inv_g(t):
        return 1.0 / float(G(t))

    if float(G(1e-14)) == 0.0:
        # G vanishes on an interval next to 0, so 1/G is infinite there
        raise NonIntegrableGrowth("G vanishes near 0+; int dt/G diverges")
    check_integrable_at_zero(inv_g)

    def psi_scalar(s):
        if s <= 0.0:
            return 0.0
        val, _ = integrate.quad(inv_g, 0.0, s, epsabs=0.0, epsrel=1e-12, limit=400)
        return val

    def inverse_scalar(t):
        if t <= 0.0:
            return 0.0
        hi = 1.0
        while psi_scalar(hi) < t:
            hi *= 2.0
        return optimize.brentq(lambda s: psi_scalar(s) - t, 0.0, hi,
                               xtol=1e-300, rtol=4.0 * np.finfo(float).eps, maxiter=500)

    @_scalar_or_array
    def Psi(s):
        flat = np.atleast_1d(s).ravel()
        return np.array([psi_scalar(x) for x in flat]).reshape(np.shape(s))

    @_scalar_or_array
    def PsiInverse(t):
        flat = np.atleast_1d(t).ravel()
        return np.array([inverse_scalar(x) for x in flat]).reshape(np.shape(t))

    return GrowthFunctions(alpha, G, Psi, PsiInverse, False)
