"""Observation families and link functions.

Each family computes the exact negative log-likelihood per observation
plus its first and second derivatives in the linear predictor, which is
what the Laplace approximation needs.  The second derivative is the
observed (not expected) information; for the Gaussian log link it can be
negative, which downstream Newton damping must tolerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .errors import FamilyError

__all__ = ["Family", "make_family", "SUPPORTED"]

SUPPORTED = {
    ("gaussian", "identity"),
    ("gaussian", "log"),
    ("poisson", "log"),
    ("bernoulli", "logit"),
    ("gamma", "log"),
}

_DEFAULT_LINKS = {
    "gaussian": "identity",
    "poisson": "log",
    "bernoulli": "logit",
    "gamma": "log",
}

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Family:
    """A distribution/link pair with exact likelihood derivatives.

    ``dispersion`` names the auxiliary parameter when there is one: the
    Gaussian standard deviation or the Gamma shape.
    """

    distribution: str
    link: str

    @property
    def has_dispersion(self) -> bool:
        return self.distribution in ("gaussian", "gamma")

    @property
    def dispersion_name(self) -> str | None:
        if self.distribution == "gaussian":
            return "sd"
        if self.distribution == "gamma":
            return "shape"
        return None

    def mean(self, eta: np.ndarray) -> np.ndarray:
        """Inverse link."""
        if self.link == "identity":
            return np.asarray(eta, dtype=float)
        if self.link == "log":
            return np.exp(eta)
        return expit(eta)

    def dmean(self, eta: np.ndarray) -> np.ndarray:
        """Derivative of the inverse link."""
        if self.link == "identity":
            return np.ones_like(np.asarray(eta, dtype=float))
        if self.link == "log":
            return np.exp(eta)
        p = expit(eta)
        return p * (1.0 - p)

    def init_eta(self, y: np.ndarray) -> np.ndarray:
        """A crude linear-predictor guess used for starting values."""
        y = np.asarray(y, dtype=float)
        if self.link == "identity":
            return y
        if self.link == "log":
            return np.log(np.clip(y, 0.01, None) + 0.1)
        return np.log(np.clip(y, 0.05, 0.95) / (1.0 - np.clip(y, 0.05, 0.95)))

    def nll(self, y, eta, dispersion: float = 1.0) -> np.ndarray:
        """Per-observation negative log-likelihood."""
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        dist = self.distribution
        if dist == "gaussian":
            mu = self.mean(eta)
            v = dispersion * dispersion
            return 0.5 * (_LOG_2PI + np.log(v)) + 0.5 * (y - mu) ** 2 / v
        if dist == "poisson":
            return np.exp(eta) - y * eta + gammaln(y + 1.0)
        if dist == "bernoulli":
            return np.logaddexp(0.0, eta) - y * eta
        # gamma, log link, shape k: mean mu = exp(eta), rate k / mu
        k = dispersion
        return (
            k * (eta + y * np.exp(-eta))
            - k * np.log(k)
            + gammaln(k)
            - (k - 1.0) * np.log(y)
        )

    def d1(self, y, eta, dispersion: float = 1.0) -> np.ndarray:
        """d nll / d eta."""
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        dist = self.distribution
        if dist == "gaussian":
            if self.link == "identity":
                return (eta - y) / (dispersion * dispersion)
            mu = np.exp(eta)
            return (mu - y) * mu / (dispersion * dispersion)
        if dist == "poisson":
            return np.exp(eta) - y
        if dist == "bernoulli":
            return expit(eta) - y
        return dispersion * (1.0 - y * np.exp(-eta))

    def d2(self, y, eta, dispersion: float = 1.0) -> np.ndarray:
        """d^2 nll / d eta^2 (observed information weight)."""
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        dist = self.distribution
        if dist == "gaussian":
            if self.link == "identity":
                return np.full_like(eta, 1.0 / (dispersion * dispersion))
            mu = np.exp(eta)
            return (2.0 * mu - y) * mu / (dispersion * dispersion)
        if dist == "poisson":
            return np.exp(eta)
        if dist == "bernoulli":
            p = expit(eta)
            return p * (1.0 - p)
        return dispersion * y * np.exp(-eta)

    def deviance_residuals(self, y, mu, dispersion: float = 1.0) -> np.ndarray:
        """Signed square-root unit deviances."""
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        dist = self.distribution
        sign = np.sign(y - mu)
        if dist == "gaussian":
            dev = (y - mu) ** 2
        elif dist == "poisson":
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(y > 0, y * np.log(y / mu), 0.0)
            dev = 2.0 * (term - (y - mu))
        elif dist == "bernoulli":
            eps = 1e-12
            dev = -2.0 * (
                y * np.log(np.clip(mu, eps, 1.0))
                + (1.0 - y) * np.log(np.clip(1.0 - mu, eps, 1.0))
            )
        else:
            dev = 2.0 * (-np.log(y / mu) + (y - mu) / mu)
        return sign * np.sqrt(np.clip(dev, 0.0, None))

    def sample(self, rng: np.random.Generator, eta, dispersion: float = 1.0):
        """Draw responses for a linear predictor."""
        mu = self.mean(np.asarray(eta, dtype=float))
        dist = self.distribution
        if dist == "gaussian":
            return rng.normal(mu, dispersion)
        if dist == "poisson":
            return rng.poisson(mu).astype(float)
        if dist == "bernoulli":
            return rng.binomial(1, mu).astype(float)
        k = dispersion
        return rng.gamma(k, mu / k)

    def validate_response(self, y: np.ndarray, context: str = "response") -> None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise FamilyError(f"{context}: non-finite values")
        dist = self.distribution
        if dist == "poisson":
            if np.any(y < 0) or np.any(np.abs(y - np.round(y)) > 1e-8):
                raise FamilyError(f"{context}: poisson needs nonnegative counts")
        elif dist == "bernoulli":
            if not np.all(np.isin(y, (0.0, 1.0))):
                raise FamilyError(f"{context}: bernoulli needs 0/1 values")
        elif dist == "gamma":
            if np.any(y <= 0):
                raise FamilyError(f"{context}: gamma needs positive values")


def make_family(distribution: str, link: str | None = None) -> Family:
    """Construct a supported family, defaulting the customary link."""
    distribution = distribution.lower()
    if link is None:
        link = _DEFAULT_LINKS.get(distribution)
        if link is None:
            raise FamilyError(f"unknown distribution {distribution!r}")
    link = link.lower()
    if (distribution, link) not in SUPPORTED:
        supported = ", ".join(f"{d}/{l}" for d, l in sorted(SUPPORTED))
        raise FamilyError(
            f"unsupported family {distribution}/{link} (supported: {supported})"
        )
    return Family(distribution, link)
