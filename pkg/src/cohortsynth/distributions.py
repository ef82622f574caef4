"""Parametric families used to describe per-cluster attribute marginals.

A :class:`FittedDistribution` models ``X = Y - shift`` where ``Y`` follows
the named family; the shift lets positive-support families describe count
data that contains zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import special

FAMILIES = ("bernoulli", "normal", "lognormal", "exponential", "gamma", "pareto", "uniform")
CONTINUOUS_FAMILIES = FAMILIES[1:]

PPF_TOL = 1e-10


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FittedDistribution:
    family: str
    params: Mapping[str, float]
    shift: float = 0.0
    # Nonnegative count attribute: emitted values are rounded half-up and clamped at 0.
    integer: bool = False
    rss: float | None = None
    qq_r2: float | None = None
    low_confidence: bool = False
    skipped: tuple[str, ...] = ()
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        _check_params(self.family, self.params)

    # -- support -----------------------------------------------------------
    @property
    def atomic(self) -> bool:
        """True for distributions without a density (bernoulli, point mass)."""
        return self.family == "bernoulli" or (
            self.family == "uniform" and self.params["high"] == self.params["low"]
        )

    @property
    def support(self) -> dict:
        p, s = self.params, self.shift
        lower, upper = {
            "bernoulli": (0.0, 1.0),
            "normal": (None, None),
            "lognormal": (-s, None),
            "exponential": (0.0, None),
            "gamma": (0.0, None),
            "pareto": (p.get("xm", 0.0) - s, None),
            "uniform": (p.get("low"), p.get("high")),
        }[self.family]
        return {"lower": lower, "upper": upper, "shift": s, "integer": self.integer}

    # -- base-variable functions (Y) ---------------------------------------
    def _pdf_y(self, y: np.ndarray) -> np.ndarray:
        p = self.params
        f = self.family
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if f == "normal":
                z = (y - p["mu"]) / p["sigma"]
                return np.exp(-0.5 * z * z) / (p["sigma"] * math.sqrt(2 * math.pi))
            if f == "lognormal":
                pos = y > 0
                ly = np.log(np.where(pos, y, 1.0))
                z = (ly - p["mu"]) / p["sigma"]
                dens = np.exp(-0.5 * z * z) / (np.where(pos, y, 1.0) * p["sigma"] * math.sqrt(2 * math.pi))
                return np.where(pos, dens, 0.0)
            if f == "exponential":
                lam = p["rate"]
                return np.where(y >= 0, lam * np.exp(-lam * np.maximum(y, 0)), 0.0)
            if f == "gamma":
                k, theta = p["shape"], p["scale"]
                pos = y > 0
                ys = np.where(pos, y, 1.0)
                logd = (k - 1) * np.log(ys) - ys / theta - special.gammaln(k) - k * math.log(theta)
                return np.where(pos, np.exp(logd), 0.0)
            if f == "pareto":
                a, xm = p["alpha"], p["xm"]
                ok = y >= xm
                return np.where(ok, a * xm**a / np.where(ok, y, xm) ** (a + 1), 0.0)
            if f == "uniform":
                lo, hi = p["low"], p["high"]
                if hi == lo:
                    return np.where(y == lo, np.inf, 0.0)
                return np.where((y >= lo) & (y <= hi), 1.0 / (hi - lo), 0.0)
            if f == "bernoulli":
                return np.where(y == 1, p["p"], np.where(y == 0, 1 - p["p"], 0.0))
        raise AssertionError(f)

    def _cdf_y(self, y: np.ndarray) -> np.ndarray:
        p = self.params
        f = self.family
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if f == "normal":
                return special.ndtr((y - p["mu"]) / p["sigma"])
            if f == "lognormal":
                pos = y > 0
                ly = np.log(np.where(pos, y, 1.0))
                return np.where(pos, special.ndtr((ly - p["mu"]) / p["sigma"]), 0.0)
            if f == "exponential":
                return np.where(y > 0, -np.expm1(-p["rate"] * np.maximum(y, 0)), 0.0)
            if f == "gamma":
                return np.where(y > 0, special.gammainc(p["shape"], np.maximum(y, 0) / p["scale"]), 0.0)
            if f == "pareto":
                a, xm = p["alpha"], p["xm"]
                return np.where(y > xm, 1.0 - (xm / np.maximum(y, xm)) ** a, 0.0)
            if f == "uniform":
                lo, hi = p["low"], p["high"]
                if hi == lo:
                    return np.where(y >= lo, 1.0, 0.0)
                return np.clip((y - lo) / (hi - lo), 0.0, 1.0)
            if f == "bernoulli":
                return np.where(y >= 1, 1.0, np.where(y >= 0, 1 - p["p"], 0.0))
        raise AssertionError(f)

    def _ppf_y(self, u: np.ndarray) -> np.ndarray:
        p = self.params
        f = self.family
        if f == "normal":
            return p["mu"] + p["sigma"] * standard_normal_ppf(u)
        if f == "lognormal":
            return np.exp(p["mu"] + p["sigma"] * standard_normal_ppf(u))
        if f == "exponential":
            return -np.log1p(-u) / p["rate"]
        if f == "gamma":
            return gamma_ppf(u, p["shape"], p["scale"])
        if f == "pareto":
            return p["xm"] * (1.0 - u) ** (-1.0 / p["alpha"])
        if f == "uniform":
            return p["low"] + u * (p["high"] - p["low"])
        if f == "bernoulli":
            return np.where(u > 1 - p["p"], 1.0, 0.0)
        raise AssertionError(f)

    # -- public, in the shifted variable X ---------------------------------
    def pdf(self, x) -> np.ndarray:
        return self._pdf_y(np.asarray(x, dtype=float) + self.shift)

    def cdf(self, x) -> np.ndarray:
        return self._cdf_y(np.asarray(x, dtype=float) + self.shift)

    def ppf(self, u) -> np.ndarray:
        return self._ppf_y(np.asarray(u, dtype=float)) - self.shift

    def discretized_cdf(self, x) -> np.ndarray:
        """CDF of the value emitted after half-up rounding and clamping at zero."""
        x = np.asarray(x, dtype=float)
        if not self.integer:
            return self.cdf(x)
        return np.where(x < 0, 0.0, self.cdf(np.floor(x) + 0.5))

    def discretize(self, values: np.ndarray) -> np.ndarray:
        """Half-up rounding, clamped at zero, for integer attributes."""
        values = np.asarray(values, dtype=float)
        if not self.integer:
            return values
        return np.maximum(np.floor(values + 0.5), 0.0)

    def with_scores(self, **kw) -> "FittedDistribution":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": {k: float(v) for k, v in self.params.items()},
            "support": self.support,
            "rss": None if self.rss is None else float(self.rss),
            "qq_r2": None if self.qq_r2 is None else float(self.qq_r2),
            "low_confidence": bool(self.low_confidence),
            "skipped": list(self.skipped),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FittedDistribution":
        support = d.get("support", {})
        return cls(
            family=d["family"],
            params={k: float(v) for k, v in d["params"].items()},
            shift=float(support.get("shift", 0.0)),
            integer=bool(support.get("integer", False)),
            rss=d.get("rss"),
            qq_r2=d.get("qq_r2"),
            low_confidence=bool(d.get("low_confidence", False)),
            skipped=tuple(d.get("skipped", ())),
            notes=tuple(d.get("notes", ())),
        )


_PARAM_NAMES = {
    "bernoulli": ("p",),
    "normal": ("mu", "sigma"),
    "lognormal": ("mu", "sigma"),
    "exponential": ("rate",),
    "gamma": ("shape", "scale"),
    "pareto": ("alpha", "xm"),
    "uniform": ("low", "high"),
}


def _check_params(family: str, params: Mapping[str, float]) -> None:
    if set(params) != set(_PARAM_NAMES[family]):
        raise ValueError(f"{family} expects parameters {_PARAM_NAMES[family]}, got {tuple(params)}")
    if not all(math.isfinite(v) for v in params.values()):
        raise ValueError(f"{family} parameters must be finite: {dict(params)}")
    bad = {
        "bernoulli": lambda p: not 0 <= p["p"] <= 1,
        "normal": lambda p: p["sigma"] <= 0,
        "lognormal": lambda p: p["sigma"] <= 0,
        "exponential": lambda p: p["rate"] <= 0,
        "gamma": lambda p: p["shape"] <= 0 or p["scale"] <= 0,
        "pareto": lambda p: p["alpha"] <= 0 or p["xm"] <= 0,
        "uniform": lambda p: p["high"] < p["low"],
    }[family](params)
    if bad:
        raise ValueError(f"invalid {family} parameters: {dict(params)}")


def _bisect(cdf, u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(400):
        if np.all(hi - lo <= PPF_TOL * np.maximum(1.0, np.abs(hi))):
            break
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _check_u(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)) or np.any(np.isnan(u)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return u


def standard_normal_ppf(u) -> np.ndarray:
    u = _check_u(u)
    return _bisect(special.ndtr, u, np.full(u.shape, -40.0), np.full(u.shape, 40.0))


def gamma_ppf(u, shape: float, scale: float) -> np.ndarray:
    u = _check_u(u)

    def cdf(x):
        return special.gammainc(shape, x)

    hi = np.full(u.shape, max(1.0, 2.0 * shape))
    while True:
        short = cdf(hi) < u
        if not np.any(short):
            break
        hi = np.where(short, hi * 2.0, hi)
    return scale * _bisect(cdf, u, np.zeros(u.shape), hi)


def _positive_shift(x: np.ndarray, family: str) -> float:
    lo = float(np.min(x))
    if lo > 0:
        return 0.0
    if lo == 0:
        return 1.0
    raise FitError(f"{family}: negative values outside the support")


def fit_family(samples, family: str, shift: float | None = None) -> FittedDistribution:
    """Fit one family: closed-form MLE everywhere except gamma (method of moments)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise FitError(f"{family}: no samples")
    if not np.all(np.isfinite(x)):
        raise FitError(f"{family}: non-finite samples")
    if family not in FAMILIES:
        raise FitError(f"unknown family {family!r}")
    mean = float(np.mean(x))
    var = float(np.var(x))

    if family == "bernoulli":
        if not np.all((x == 0) | (x == 1)):
            raise FitError("bernoulli: samples must be 0/1")
        return FittedDistribution("bernoulli", {"p": mean})
    if family == "uniform":
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi == lo:
            raise FitError("uniform: samples have no spread")
        return FittedDistribution("uniform", {"low": lo, "high": hi})
    if var <= 0:
        raise FitError(f"{family}: samples have zero variance")
    if family == "normal":
        return FittedDistribution("normal", {"mu": mean, "sigma": math.sqrt(var)})
    if family == "exponential":
        if np.min(x) < 0 or mean <= 0:
            raise FitError("exponential: negative values outside the support")
        return FittedDistribution("exponential", {"rate": 1.0 / mean})
    if family == "gamma":
        if np.min(x) < 0 or mean <= 0:
            raise FitError("gamma: negative values outside the support")
        return FittedDistribution("gamma", {"shape": mean * mean / var, "scale": var / mean})

    s = _positive_shift(x, family) if shift is None else float(shift)
    y = x + s
    if np.min(y) <= 0:
        raise FitError(f"{family}: shifted samples must be positive")
    if family == "lognormal":
        ly = np.log(y)
        sigma = float(np.std(ly))
        if sigma <= 0:
            raise FitError("lognormal: log-samples have zero variance")
        return FittedDistribution("lognormal", {"mu": float(np.mean(ly)), "sigma": sigma}, shift=s)
    if family == "pareto":
        xm = float(np.min(y))
        total = float(np.sum(np.log(y / xm)))
        if total <= 0:
            raise FitError("pareto: samples have no spread above the minimum")
        return FittedDistribution("pareto", {"alpha": y.size / total, "xm": xm}, shift=s)
    raise AssertionError(family)


def point_mass(value: float) -> FittedDistribution:
    return FittedDistribution("uniform", {"low": float(value), "high": float(value)})
