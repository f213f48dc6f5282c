"""Specifications of the integro-differential generator and its pieces.

The operator acting on test functions is

    L^b[u] = -lambda0 * Lap(u) - tr(Sigma Sigma^T D^2 u) - I(x, [u]) + b . Du

where I is the compensated jump integral against a symmetric Levy measure
whose density is pinched between lam/|z|^{d+sigma} and Lam/|z|^{d+sigma}.
These dataclasses only describe the pieces; discretizations live in
``operators`` and the solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .weights import bracket

__all__ = [
    "stable_normalization",
    "LevyMeasureSpec",
    "LocalDiffusionSpec",
    "DriftSpec",
    "GeneratorSpec",
]


def stable_normalization(d: int, sigma: float) -> float:
    """Constant C(d, sigma) with (-Lap)^{sigma/2} u = C * PV-integral of
    (u(x) - u(x+z)) / |z|^{d+sigma} dz, i.e. the density making the Fourier
    symbol exactly |xi|^sigma."""
    if not 0.0 < sigma < 2.0:
        raise ValueError(f"sigma must lie in (0, 2), got {sigma}")
    return (
        sigma
        * 2.0 ** (sigma - 1.0)
        * math.gamma((d + sigma) / 2.0)
        / (math.pi ** (d / 2.0) * math.gamma(1.0 - sigma / 2.0))
    )


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Symmetric jump measure with density ``density(|z|)`` in d=1.

    ``lower`` and ``upper`` are the declared multipliers lam, Lam with
    lam/|z|^{1+sigma} <= density(z) <= Lam/|z|^{1+sigma}; for the tempered
    kind the lower bound is only claimed on |z| <= 1, which is where the
    small-jump ellipticity argument uses it.
    """

    kind: str
    sigma: float = 0.0
    scale: float = 1.0
    lower: float = 0.0
    upper: float = 0.0
    density: Callable[[np.ndarray], np.ndarray] = field(default=None, repr=False)

    @staticmethod
    def none() -> "LevyMeasureSpec":
        return LevyMeasureSpec(kind="none")

    @staticmethod
    def fractional(sigma: float, scale: float = 1.0) -> "LevyMeasureSpec":
        """density = scale * C(1, sigma) / |z|^{1+sigma}; symbol scale*|xi|^sigma."""
        if not 0.0 < sigma < 2.0:
            raise ValueError(f"fractional measure needs sigma in (0, 2), got {sigma}")
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        c = scale * stable_normalization(1, sigma)
        return LevyMeasureSpec(
            kind="fractional",
            sigma=sigma,
            scale=scale,
            lower=c,
            upper=c,
            density=lambda z: c / np.abs(z) ** (1.0 + sigma),
        )

    @staticmethod
    def tempered(sigma: float, scale: float | None = None) -> "LevyMeasureSpec":
        """density = C * exp(-|z|) / |z|^{1+sigma} with C defaulting to the
        stable normalization, so it matches the fractional kind near z = 0."""
        if not 0.0 < sigma < 2.0:
            raise ValueError(f"tempered measure needs sigma in (0, 2), got {sigma}")
        c = stable_normalization(1, sigma) if scale is None else float(scale)
        if c <= 0:
            raise ValueError(f"scale must be positive, got {c}")
        return LevyMeasureSpec(
            kind="tempered",
            sigma=sigma,
            scale=c,
            lower=c * math.exp(-1.0),
            upper=c,
            density=lambda z: c * np.exp(-np.abs(z)) / np.abs(z) ** (1.0 + sigma),
        )

    @property
    def is_active(self) -> bool:
        return self.kind != "none"

    @property
    def has_exact_symbol(self) -> bool:
        return self.kind == "fractional"

    def check_bounds(self, z_samples: np.ndarray) -> bool:
        """Verify the declared pinching on sample points (lower bound only
        where it is claimed, i.e. |z| <= 1 for tempered kernels)."""
        if not self.is_active:
            return True
        z = np.abs(np.asarray(z_samples, dtype=float))
        z = z[z > 0]
        rho = self.density(z) * z ** (1.0 + self.sigma)
        ok_upper = bool(np.all(rho <= self.upper * (1.0 + 1e-12)))
        small = z <= 1.0
        ok_lower = bool(np.all(rho[small] >= self.lower * (1.0 - 1e-12)))
        return ok_upper and ok_lower


@dataclass(frozen=True)
class LocalDiffusionSpec:
    """Constant lambda0 plus a bounded variable coefficient Sigma(x) (d=1)."""

    lambda0: float
    kind: str = "constant"
    sigma0: float = 0.0
    sigma1: float = 0.0
    sigma_fn: Callable[[np.ndarray], np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.lambda0 < 0 or not np.isfinite(self.lambda0):
            raise ValueError(f"lambda0 must be >= 0, got {self.lambda0}")

    @staticmethod
    def constant(lambda0: float) -> "LocalDiffusionSpec":
        return LocalDiffusionSpec(lambda0=lambda0)

    @staticmethod
    def tanh_variable(lambda0: float, a: float) -> "LocalDiffusionSpec":
        """Sigma(x) = a*tanh(x): sup bound sigma0 = a, Lipschitz bound sigma1 = a."""
        if a < 0:
            raise ValueError(f"amplitude must be >= 0, got {a}")
        return LocalDiffusionSpec(
            lambda0=lambda0,
            kind="tanh",
            sigma0=a,
            sigma1=a,
            sigma_fn=lambda x: a * np.tanh(x),
        )

    @property
    def has_variable_part(self) -> bool:
        return self.sigma_fn is not None and self.sigma0 > 0

    def sigma_squared(self, x: np.ndarray) -> np.ndarray:
        if not self.has_variable_part:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.sigma_fn(x) ** 2


@dataclass(frozen=True)
class DriftSpec:
    """Velocity field b(t, x) with declared confinement and one-sided bounds.

    Confinement:  b(t, x) . x >= alpha * |x|^gamma   for |x| >= R.
    One-sided:    (b(x) - b(y)) . (x - y) >= -c0 * |x - y| * (|x-y| ^ 1 wedge 1)
                  for the builtin drifts (monotone core plus a Lipschitz
                  perturbation), which implies the sigma <= 1 modulus for any
                  delta <= sigma.
    """

    kind: str
    alpha: float
    gamma: float
    R: float = 1.0
    c0: float = 0.0
    time_dependent: bool = False
    fn: Callable[[float, np.ndarray], np.ndarray] = field(default=None, repr=False)

    @staticmethod
    def none() -> "DriftSpec":
        """b = 0: no transport, no confinement claimed."""
        return DriftSpec(kind="none", alpha=0.0, gamma=2.0, R=0.0, c0=0.0,
                         fn=lambda t, x: np.zeros_like(np.asarray(x, dtype=float)))

    @staticmethod
    def ou(alpha: float = 1.0) -> "DriftSpec":
        """b(x) = alpha * x: confinement holds globally with gamma = 2."""
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        return DriftSpec(kind="ou", alpha=alpha, gamma=2.0, R=0.0, c0=0.0,
                         fn=lambda t, x: alpha * np.asarray(x, dtype=float))

    @staticmethod
    def power(alpha: float, gamma: float, R: float = 1.0) -> "DriftSpec":
        """b(x) = alpha * x * <x>^{gamma-2}.

        b.x = alpha |x|^gamma (|x|/<x>)^{2-gamma}, so the declared confinement
        constant is alpha * (R^2/(1+R^2))^{(2-gamma)/2}, exact for |x| >= R.
        """
        if alpha <= 0 or R <= 0:
            raise ValueError("alpha and R must be positive")
        if not 0.0 < gamma <= 2.0:
            raise ValueError(f"gamma must lie in (0, 2], got {gamma}")
        alpha_decl = alpha * (R**2 / (1.0 + R**2)) ** ((2.0 - gamma) / 2.0)
        return DriftSpec(
            kind="power", alpha=alpha_decl, gamma=gamma, R=R, c0=0.0,
            fn=lambda t, x: alpha * np.asarray(x, dtype=float) * bracket(x) ** (gamma - 2.0),
        )

    @staticmethod
    def perturbed_power(alpha: float, gamma: float, amplitude: float, R: float = 1.0) -> "DriftSpec":
        """Power drift plus the bounded oscillation A*sin(x + t).

        The perturbation is Lipschitz with constant A and bounded by A, so
        c0 = 2A and the confinement constants absorb an A|x| loss, which
        needs gamma >= 1.
        """
        if gamma < 1.0:
            raise ValueError("perturbed-power drift needs gamma >= 1 to stay confining")
        if amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {amplitude}")
        base = DriftSpec.power(alpha, gamma, R)
        a_base, r_base = base.alpha, base.R
        if amplitude == 0:
            alpha_decl, r_decl = a_base, r_base
        elif gamma == 1.0:
            if amplitude >= a_base:
                raise ValueError("perturbation amplitude swallows the gamma=1 confinement")
            alpha_decl, r_decl = a_base - amplitude, r_base
        else:
            alpha_decl = a_base / 2.0
            r_decl = max(r_base, (2.0 * amplitude / a_base) ** (1.0 / (gamma - 1.0)))
        pfn = base.fn
        return DriftSpec(
            kind="perturbed-power", alpha=alpha_decl, gamma=gamma, R=r_decl,
            c0=2.0 * amplitude, time_dependent=True,
            fn=lambda t, x: pfn(t, x) + amplitude * np.sin(np.asarray(x, dtype=float) + t),
        )

    def __call__(self, t: float, x) -> np.ndarray:
        return self.fn(t, np.asarray(x, dtype=float))

    def check_confinement(self, radii: np.ndarray, t_samples=(0.0, 0.7, 1.9), slack: float = 1e-9) -> bool:
        """b(t, x).x >= alpha|x|^gamma on sampled |x| >= R (both signs, d=1)."""
        r = np.asarray(radii, dtype=float)
        r = r[r >= max(self.R, 1e-12)]
        if r.size == 0:
            return True
        x = np.concatenate([r, -r])
        for t in t_samples:
            if np.any(self.fn(t, x) * x < self.alpha * np.abs(x) ** self.gamma - slack):
                return False
        return True

    def check_one_sided(self, xs: np.ndarray, ys: np.ndarray, t: float = 0.0, slack: float = 1e-9) -> bool:
        """(b(x)-b(y)).(x-y) >= -c0 |x-y| (|x-y| wedge 1) on sample pairs."""
        x = np.asarray(xs, dtype=float)
        y = np.asarray(ys, dtype=float)
        lhs = (self.fn(t, x) - self.fn(t, y)) * (x - y)
        r = np.abs(x - y)
        return bool(np.all(lhs >= -self.c0 * r * np.minimum(r, 1.0) - slack))


@dataclass(frozen=True)
class GeneratorSpec:
    """Full operator description: local diffusion + jump measure + drift."""

    diffusion: LocalDiffusionSpec
    levy: LevyMeasureSpec
    drift: DriftSpec

    def __post_init__(self):
        if self.diffusion.lambda0 + (self.levy.lower if self.levy.is_active else 0.0) <= 0.0:
            raise ValueError("degenerate operator: lambda0 + lam must be positive")

    @property
    def is_time_dependent(self) -> bool:
        return self.drift.time_dependent

    def describe(self) -> dict:
        d = {
            "lambda0": self.diffusion.lambda0,
            "sigma_kind": self.diffusion.kind,
            "levy_kind": self.levy.kind,
            "drift_kind": self.drift.kind,
            "drift_alpha": self.drift.alpha,
            "drift_gamma": self.drift.gamma,
        }
        if self.levy.is_active:
            d["levy_sigma"] = self.levy.sigma
            d["levy_scale"] = self.levy.scale
        if self.diffusion.has_variable_part:
            d["sigma0"] = self.diffusion.sigma0
        return d
