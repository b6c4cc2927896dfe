"""P-value models: the one-sided Gaussian alternative family and samplers.

Samplers follow a fixed seed schema so that replications can be generated in
any order (or in parallel) and still be reproducible:

* an experiment seed is an int or a tuple of non-negative ints;
* replication ``r`` lives in block ``r // BLOCK_SIZE`` at row ``r % BLOCK_SIZE``;
* block ``b`` draws its Gaussian noise from
  ``Philox(SeedSequence(seed, spawn_key=(b, 0)))`` and, in the unconditional
  model, its Bernoulli uniforms from ``spawn_key=(b, 1)``.

Draws within a block are row-major, so the first ``n`` rows of a block do not
depend on how many rows are requested after them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np
from scipy import special

BLOCK_SIZE = 8192

Seed = Union[int, Sequence[int]]


# --------------------------------------------------------------------------
# Standard normal tail helpers
# --------------------------------------------------------------------------


def norm_sf(z):
    """Upper tail P(Z >= z) of the standard normal."""
    return special.ndtr(-np.asarray(z, dtype=float))


def norm_isf(x):
    """Inverse of :func:`norm_sf`; ``norm_isf(0) = inf``, ``norm_isf(1) = -inf``."""
    return -special.ndtri(np.asarray(x, dtype=float))


def norm_log_sf(z):
    """log P(Z >= z), accurate deep in the upper tail."""
    return special.log_ndtr(-np.asarray(z, dtype=float))


def _scalar_or_array(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def _check_mu(mu):
    mu = np.asarray(mu, dtype=float)
    if np.any(~(mu > 0)):
        raise ValueError("alternative mean must be > 0")
    return mu


# --------------------------------------------------------------------------
# Gaussian alternative family
# --------------------------------------------------------------------------


def gaussian_cdf_F(x, mu):
    """Alternative c.d.f. of a one-sided Gaussian p-value, ``sf(isf(x) - mu)``."""
    x = np.asarray(x, dtype=float)
    mu = _check_mu(mu)
    if np.any((x < 0) | (x > 1)) or np.any(np.isnan(x)):
        raise ValueError("x must lie in [0, 1]")
    return _scalar_or_array(norm_sf(norm_isf(x) - mu))


def gaussian_density_f(x, mu):
    """Alternative density ``exp(mu * (isf(x) - mu / 2))`` on (0, 1)."""
    x = np.asarray(x, dtype=float)
    mu = _check_mu(mu)
    if np.any(~((x > 0) & (x < 1))):
        raise ValueError("x must lie in the open interval (0, 1)")
    return _scalar_or_array(np.exp(mu * (norm_isf(x) - mu / 2.0)))


def gaussian_inverse_density(y, mu):
    """Inverse of :func:`gaussian_density_f`: ``sf(log(y) / mu + mu / 2)``."""
    y = np.asarray(y, dtype=float)
    mu = _check_mu(mu)
    if np.any(~(y > 0)):
        raise ValueError("density level y must be > 0")
    return _scalar_or_array(norm_sf(np.log(y) / mu + mu / 2.0))


def alt_cdf(x, mu):
    """Vectorised ``P(p <= x)`` for means ``mu >= 0`` (``mu = 0`` gives the uniform).

    No domain checks; ``x`` is clipped to [0, 1].
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    mu = np.asarray(mu, dtype=float)
    out = norm_sf(norm_isf(x) - mu)
    return np.where(mu == 0, x, out)


# --------------------------------------------------------------------------
# Model configurations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisConfig:
    """Conditional model: fixed truth vector ``h`` and alternative means ``mu``."""

    h: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.int8).ravel()
        mu = np.asarray(self.mu, dtype=float).ravel()
        if h.shape != mu.shape:
            raise ValueError("h and mu must have the same length")
        if h.size < 2:
            raise ValueError("need m >= 2 hypotheses")
        if np.any((h != 0) & (h != 1)):
            raise ValueError("h must be binary")
        if np.any(mu[h == 1] <= 0) or np.any(mu[h == 0] != 0):
            raise ValueError("mu must be > 0 exactly on false nulls and 0 on true nulls")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def from_means(cls, mu) -> "HypothesisConfig":
        mu = np.asarray(mu, dtype=float)
        return cls(h=(mu > 0).astype(np.int8), mu=mu)

    @property
    def m(self) -> int:
        return self.h.size

    @property
    def m1(self) -> int:
        return int(self.h.sum())

    @property
    def m0(self) -> int:
        return self.m - self.m1

    @property
    def pi0(self) -> float:
        return self.m0 / self.m

    @property
    def pi1(self) -> float:
        return self.m1 / self.m

    def describe(self) -> str:
        return f"conditional(m={self.m},m1={self.m1})"


@dataclass(frozen=True)
class UnconditionalConfig:
    """Random-effects model: ``H_i ~ Bernoulli(1 - pi0)`` i.i.d., alternative means ``mu``."""

    pi0: float
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        if not 0 < self.pi0 < 1:
            raise ValueError("pi0 must lie in (0, 1)")
        if mu.size < 2:
            raise ValueError("need m >= 2 hypotheses")
        if np.any(~(mu > 0)):
            raise ValueError("all alternative means must be > 0 in the unconditional model")
        object.__setattr__(self, "pi0", float(self.pi0))
        object.__setattr__(self, "mu", mu)

    @property
    def m(self) -> int:
        return self.mu.size

    @property
    def pi1(self) -> float:
        return 1.0 - self.pi0

    def describe(self) -> str:
        return f"unconditional(m={self.m},pi0={self.pi0:g})"


Model = Union[HypothesisConfig, UnconditionalConfig]


@dataclass(frozen=True)
class ModelSample:
    h: np.ndarray
    p: np.ndarray
    seed: tuple = field(default=())
    replication: int = 0


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------


def _entropy(seed: Seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def block_generators(seed: Seed, block: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Noise and Bernoulli generators for one replication block."""
    ent = _entropy(seed)
    noise = np.random.Generator(np.random.Philox(np.random.SeedSequence(ent, spawn_key=(block, 0))))
    coin = np.random.Generator(np.random.Philox(np.random.SeedSequence(ent, spawn_key=(block, 1))))
    return noise, coin


def _draw_block(model: Model, seed: Seed, block: int, rows: int) -> tuple[np.ndarray, np.ndarray]:
    noise, coin = block_generators(seed, block)
    z = noise.standard_normal((rows, model.m))
    if isinstance(model, HypothesisConfig):
        h = np.broadcast_to(model.h, (rows, model.m))
        shift = model.mu
    else:
        h = (coin.random((rows, model.m)) < model.pi1).astype(np.int8)
        shift = h * model.mu
    return h, norm_sf(z + shift)


def iter_samples(
    model: Model, replications: int, seed: Seed, start: int = 0
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield ``(first_replication, h, p)`` chunks covering ``[start, start + replications)``.

    Each chunk lies within one block; ``h`` and ``p`` have shape ``(rows, m)``.
    """
    r, stop = start, start + replications
    while r < stop:
        block, offset = divmod(r, BLOCK_SIZE)
        rows = min(BLOCK_SIZE - offset, stop - r)
        h, p = _draw_block(model, seed, block, offset + rows)
        yield r, np.array(h[offset:], dtype=np.int8), p[offset:]
        r += rows


def _sample(model: Model, seed: Seed, replication: int) -> ModelSample:
    block, offset = divmod(replication, BLOCK_SIZE)
    h, p = _draw_block(model, seed, block, offset + 1)
    return ModelSample(
        h=np.array(h[offset], dtype=np.int8),
        p=p[offset].copy(),
        seed=tuple(_entropy(seed)),
        replication=replication,
    )


def sample_conditional(cfg: HypothesisConfig, seed: Seed, replication: int = 0) -> ModelSample:
    """One draw of the conditional model; ``p_i = sf(Z_i + mu_i)``."""
    if not isinstance(cfg, HypothesisConfig):
        raise TypeError("expected a HypothesisConfig")
    return _sample(cfg, seed, replication)


def sample_unconditional(cfg: UnconditionalConfig, seed: Seed, replication: int = 0) -> ModelSample:
    """One draw of the random-effects model."""
    if not isinstance(cfg, UnconditionalConfig):
        raise TypeError("expected an UnconditionalConfig")
    return _sample(cfg, seed, replication)
