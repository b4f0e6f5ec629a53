"""Manufactured states and the sources that produce them.

With ``f = -Lap w* + beta(w*)`` the exact solution is ``w*``. The crossing
profiles pass through a chosen level on the sphere ``|x| = c``: transversally
for exponent 1, and with vanishing first and second derivatives for exponent
3, so a kinetic with a kink at that level is exercised on a set where the
state lingers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinetics import Kinetic


@dataclass(frozen=True)
class PowerCrossing:
    """``w*(x) = level + (bc - level) s^k`` with ``s = (|x|^2 - c^2)/(L^2 - c^2)``, odd ``k``.

    Equals ``bc`` on ``|x| = L`` and ``level`` on ``|x| = c``.
    """

    L: float
    c: float
    level: float
    bc: float = 1.0
    exponent: int = 3

    def __post_init__(self):
        if not 0.0 < self.c < self.L:
            raise ValueError("need 0 < c < L")
        if self.exponent < 1 or self.exponent % 2 == 0:
            raise ValueError("exponent must be a positive odd integer")

    @property
    def D(self) -> float:
        return self.L ** 2 - self.c ** 2

    def _r2(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.sum(x * x, axis=1), x.shape[1]

    def __call__(self, x):
        r2, _ = self._r2(x)
        s = (r2 - self.c ** 2) / self.D
        return self.level + (self.bc - self.level) * s ** self.exponent

    def laplacian(self, x):
        r2, dim = self._r2(x)
        s = (r2 - self.c ** 2) / self.D
        k = self.exponent
        # Lap s^k = k s^(k-1) Lap s + k (k-1) s^(k-2) |grad s|^2
        lap = k * s ** (k - 1) * 2.0 * dim / self.D
        if k > 1:
            lap = lap + k * (k - 1) * s ** (k - 2) * 4.0 * r2 / self.D ** 2
        return (self.bc - self.level) * lap


def manufactured_source(kin: Kinetic, profile):
    """Source ``f = -Lap w* + beta(w*)`` as a callable on ``(N, d)`` points."""

    def f(x):
        return -profile.laplacian(x) + np.asarray(kin.value(profile(x)), dtype=float)

    return f


def cubic_crossing(L: float, c: float, level: float, bc: float = 1.0) -> PowerCrossing:
    return PowerCrossing(L, c, level, bc, 3)


def linear_crossing(L: float, c: float, level: float, bc: float = 1.0) -> PowerCrossing:
    return PowerCrossing(L, c, level, bc, 1)
