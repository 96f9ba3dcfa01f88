#!/usr/bin/env python3
"""
PhaseStep Potentials - Nonlinearities of the phase segregation model

f = f1 + f2 splits the double-well potential into a convex barrier f1, singular
at 0 and 1, and a smooth possibly nonconvex part f2; g couples the chemical
potential into the free energy. The logistic (entropy) double well is built in,
custom smooth parts and couplings are wrapped from user callables.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import xlogy

logger = logging.getLogger(__name__)

ADMISSIBILITY_MARGIN = 0.5
SAMPLE_POINTS = 1001
G_CHOICES = ('identity', 'custom')


class AdmissibilityError(ValueError):
    """Time step too large for the rho sub-step to stay strictly convex"""
    tag = 'tau-not-admissible'

    def __init__(self, message: str, tau: float, max_tau: float):
        super().__init__(message)
        self.tau = tau
        self.max_tau = max_tau


class ConvexBarrier(ABC):
    """Convex C2 part f1 on (0,1) with f1' -> -inf at 0 and +inf at 1"""

    @abstractmethod
    def value(self, r): ...

    @abstractmethod
    def d1(self, r): ...

    @abstractmethod
    def d2(self, r): ...


class SmoothPart(ABC):
    """C2 part f2 on [0,1]; d2_sup bounds |f2''| on [0,1]"""

    d2_sup: float = 0.0

    @abstractmethod
    def value(self, r): ...

    @abstractmethod
    def d1(self, r): ...

    @abstractmethod
    def d2(self, r): ...


class CouplingG(ABC):
    """C2 coupling g on [0,1], nonnegative"""

    @abstractmethod
    def value(self, r): ...

    @abstractmethod
    def d1(self, r): ...

    @abstractmethod
    def d2(self, r): ...


class LogisticBarrier(ConvexBarrier):
    """alpha1 * (r ln r + (1-r) ln(1-r)) shifted by alpha1 ln 2 so that min f1 = 0"""

    def __init__(self, alpha1: float):
        if not alpha1 > 0:
            raise ValueError(f"alpha1 must be positive for the barrier property, got {alpha1}")
        self.alpha1 = float(alpha1)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return self.alpha1 * (xlogy(r, r) + xlogy(1.0 - r, 1.0 - r) + math.log(2.0))

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        return self.alpha1 * (np.log(r) - np.log(1.0 - r))

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        return self.alpha1 / (r * (1.0 - r))


class QuadraticSmoothPart(SmoothPart):
    """alpha2 r (1-r) + alpha3 r"""

    def __init__(self, alpha2: float = 0.0, alpha3: float = 0.0):
        self.alpha2 = float(alpha2)
        self.alpha3 = float(alpha3)
        self.d2_sup = 2.0 * abs(self.alpha2)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return self.alpha2 * r * (1.0 - r) + self.alpha3 * r

    def d1(self, r):
        r = np.asarray(r, dtype=float)
        return self.alpha2 * (1.0 - 2.0 * r) + self.alpha3

    def d2(self, r):
        r = np.asarray(r, dtype=float)
        return np.full_like(r, -2.0 * self.alpha2)


class CustomSmoothPart(SmoothPart):
    """f2 from user callables; d2_sup is supplied and sanity-checked by sampling"""

    def __init__(self, value: Callable, d1: Callable, d2: Callable, d2_sup: float):
        self._value, self._d1, self._d2 = value, d1, d2
        sampled = float(np.max(np.abs(d2(np.linspace(0.0, 1.0, SAMPLE_POINTS)))))
        if d2_sup < sampled:
            raise ValueError(f"d2_sup={d2_sup} is below the sampled max |f2''| = {sampled:.6g}")
        self.d2_sup = float(d2_sup)

    def value(self, r):
        return self._value(np.asarray(r, dtype=float))

    def d1(self, r):
        return self._d1(np.asarray(r, dtype=float))

    def d2(self, r):
        return self._d2(np.asarray(r, dtype=float))


class IdentityCoupling(CouplingG):
    """g(r) = r"""

    def value(self, r):
        return np.asarray(r, dtype=float).copy()

    def d1(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def d2(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


class CustomCoupling(CouplingG):
    """g from user callables, checked nonnegative on a sample of [0,1]"""

    def __init__(self, value: Callable, d1: Callable, d2: Callable):
        self._value, self._d1, self._d2 = value, d1, d2
        sampled = float(np.min(value(np.linspace(0.0, 1.0, SAMPLE_POINTS))))
        if sampled < 0:
            raise ValueError(f"coupling g must be nonnegative on [0,1], sampled min = {sampled:.6g}")

    def value(self, r):
        return self._value(np.asarray(r, dtype=float))

    def d1(self, r):
        return self._d1(np.asarray(r, dtype=float))

    def d2(self, r):
        return self._d2(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class LogisticParams:
    alpha1: float = 1.0
    alpha2: float = 0.5
    alpha3: float = 0.0

    def __post_init__(self):
        for name in ('alpha1', 'alpha2', 'alpha3'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

    @property
    def is_convex(self) -> bool:
        """f convex on the whole of [0,1] (alpha3 does not affect convexity)"""
        return 2.0 * self.alpha1 >= self.alpha2

    @property
    def has_two_wells(self) -> bool:
        return not self.is_convex


@dataclass(frozen=True)
class PotentialSet:
    f1: ConvexBarrier
    f2: SmoothPart
    g: CouplingG

    def f(self, r):
        return self.f1.value(r) + self.f2.value(r)

    def df(self, r):
        return self.f1.d1(r) + self.f2.d1(r)

    def d2f(self, r):
        return self.f1.d2(r) + self.f2.d2(r)


def make_logistic_potentials(p: LogisticParams, g_choice: str = 'identity',
                             g: Optional[CouplingG] = None) -> PotentialSet:
    """Logistic double well with the identity coupling or a supplied custom one"""
    if not p.alpha1 > 0:
        raise ValueError(f"alpha1 must be positive for the barrier property, got {p.alpha1}")
    if g_choice == 'identity':
        coupling = IdentityCoupling()
    elif g_choice == 'custom':
        if g is None:
            raise ValueError("g_choice='custom' needs a CouplingG instance")
        coupling = g
    else:
        raise ValueError(f"unknown g choice {g_choice!r}; expected one of {G_CHOICES}")
    if p.has_two_wells:
        logger.debug(f"Potential has two wells (2*alpha1={2 * p.alpha1:g} < alpha2={p.alpha2:g})")
    return PotentialSet(
        f1=LogisticBarrier(p.alpha1),
        f2=QuadraticSmoothPart(p.alpha2, p.alpha3),
        g=coupling,
    )


def max_admissible_tau(ps: PotentialSet) -> float:
    if ps.f2.d2_sup == 0:
        return math.inf
    return ADMISSIBILITY_MARGIN / ps.f2.d2_sup


def j2_convexity_margin(tau: float, ps: PotentialSet) -> float:
    """Lower bound of the second derivative of r -> r^2/2 + tau f2(r) on [0,1]"""
    return 1.0 - tau * ps.f2.d2_sup


def check_admissible_tau(tau: float, ps: PotentialSet) -> None:
    """Accept tau iff tau * sup|f2''| <= 1/2; raise AdmissibilityError otherwise"""
    if not tau > 0 or not math.isfinite(tau):
        raise ValueError(f"time step must be positive and finite, got {tau}")
    max_tau = max_admissible_tau(ps)
    if tau * ps.f2.d2_sup > ADMISSIBILITY_MARGIN:
        raise AdmissibilityError(
            f"tau * sup|f2''| = {tau * ps.f2.d2_sup:.6g} exceeds {ADMISSIBILITY_MARGIN}; "
            f"max admissible tau = {max_tau:.6g}",
            tau=tau, max_tau=max_tau,
        )
