"""Momentum class prototypes and memory-based drift correction."""

import numpy as np

from .ndgrad import EPS_NORM


class DegenerateMeanError(ValueError):
    """A corrected class mean collapsed to (nearly) the zero vector."""


def normalize(v, eps=EPS_NORM):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= eps:
        raise DegenerateMeanError(f"cannot normalize a vector of norm {n:g}")
    return v / n


class PrototypeTable:
    """Per-class running means on the unit sphere.

    A class's prototype starts at the normalized mean of the first minibatch
    it appears in; afterwards ``p <- normalize(gamma p + (1 - gamma) batch_mean)``.
    """

    def __init__(self, gamma=0.99):
        if not 0 <= gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        self.gamma = float(gamma)
        self.protos = {}

    def __contains__(self, c):
        return c in self.protos

    def __getitem__(self, c):
        return self.protos[c]

    @property
    def classes(self):
        return sorted(self.protos)

    def update(self, labels, features):
        labels = np.asarray(labels)
        features = np.asarray(features, dtype=np.float64)
        for c in np.unique(labels):
            c = int(c)
            batch_mean = features[labels == c].mean(axis=0)
            if c in self.protos:
                self.protos[c] = normalize(self.gamma * self.protos[c]
                                           + (1.0 - self.gamma) * batch_mean)
            else:
                self.protos[c] = normalize(batch_mean)

    def snapshot(self):
        table = PrototypeTable(self.gamma)
        table.protos = {c: p.copy() for c, p in self.protos.items()}
        return table


def corrected_mean(proto, stored_mean, current_mean):
    """``normalize(proto - stored_mean + current_mean)``.

    ``stored_mean`` is the normalized mean of the features recorded when the
    memory samples were inserted, ``current_mean`` the normalized mean of their
    features under the current extractor. Raises :class:`DegenerateMeanError`
    when the sum cancels out.
    """
    return normalize(np.asarray(proto) - np.asarray(stored_mean) + np.asarray(current_mean))


def estimator_variance(sigma_t, sigma_tp, rho, n):
    """Variances of the drift-corrected and the plain memory-mean estimators.

    Returns ``(corrected, naive)`` with
    ``corrected = (s_t^2 + s_t'^2 - 2 rho s_t s_t') / n`` and ``naive = s_t'^2 / n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma_t < 0 or sigma_tp < 0:
        raise ValueError("standard deviations must be non-negative")
    if abs(rho) > 1:
        raise ValueError("correlation must lie in [-1, 1]")
    corrected = (sigma_t ** 2 + sigma_tp ** 2 - 2.0 * rho * sigma_t * sigma_tp) / n
    return corrected, sigma_tp ** 2 / n


def reduces_variance(sigma_t, sigma_tp, rho):
    """True iff correction beats the plain mean, i.e. ``s_t < 2 rho s_t'``."""
    return sigma_t < 2.0 * rho * sigma_tp


def simulate_estimator_variance(sigma_t, sigma_tp, rho, n, trials, rng):
    """Monte Carlo variances of both estimators for one feature dimension.

    Each trial draws ``n`` stored samples whose features at storage time and
    now are jointly Gaussian with the given spreads and correlation. The
    prototype is taken as exact, so the corrected estimate is
    ``mu_t - mean(z_t) + mean(z_t')``.
    """
    a = rng.standard_normal((trials, n))
    b = rng.standard_normal((trials, n))
    z_then = sigma_t * a
    z_now = sigma_tp * (rho * a + np.sqrt(1.0 - rho ** 2) * b)
    pair = np.stack([z_then, z_now], axis=-1)
    means = pair.mean(axis=1)
    corrected = -means[:, 0] + means[:, 1]
    return corrected.var(ddof=1), means[:, 1].var(ddof=1)


def cross_time_mi(rho):
    """Mutual information in nats, ``-sum_i 0.5 log(1 - rho_i^2)``, under Gaussian independence.

    Any ``|rho_i| >= 1`` gives ``inf``.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    if np.any(np.abs(rho) >= 1):
        return np.inf
    return float(-0.5 * np.sum(np.log1p(-rho ** 2)))
