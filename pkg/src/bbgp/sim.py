"""Exact sampler for the hierarchical model.

Units are split into fixed-size blocks; each block draws from its own
Philox stream keyed by ``(seed, replicate, block)``, so the draws for a
given unit do not depend on how many replicates or blocks are generated
around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DesignSet, ParamVector, RepeatedCountData, evaluate_links

BLOCK = 4096


@dataclass(frozen=True)
class SimSpec:
    params: ParamVector
    designs: DesignSet
    seed: int = 0
    replicates: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")


def block_rng(seed, replicate, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def sample_beta(rng, a, b):
    """Beta draws as ``G_a / (G_a + G_b)``; valid for shapes below one."""
    ga = rng.standard_gamma(a)
    gb = rng.standard_gamma(b)
    tot = ga + gb
    with np.errstate(invalid="ignore"):
        out = ga / tot
    # both gammas underflow only when a and b are tiny; fall back per element
    bad = ~(tot > 0)
    if np.any(bad):
        out[bad] = rng.beta(a[bad], b[bad])
    return out


def _sample_units(rng, mu, theta, lam, alpha, delta):
    """Draw ``(x, n, tau, pi)`` for a block; ``mu, theta, lam`` are ``(m, p)``."""
    tau = rng.standard_gamma(alpha / delta) * delta
    n = rng.poisson(lam * tau[:, None])
    pi = sample_beta(rng, mu / theta, (1.0 - mu) / theta)
    x = rng.binomial(n, pi)
    return x, n, tau, pi


def sample_arrays(spec: SimSpec, replicate=0, return_latent=False):
    """``(x, n)`` arrays of shape ``(M, p)``; with ``return_latent`` also the
    unit effects ``tau`` (M,) and success probabilities ``pi`` (M, p)."""
    nat = evaluate_links(spec.params, spec.designs)
    M, p = spec.designs.M, spec.designs.p
    mu = nat.mu.reshape(M, p)
    theta = nat.theta.reshape(M, p)
    lam = nat.lam.reshape(M, p)
    x = np.empty((M, p), dtype=np.int64)
    n = np.empty((M, p), dtype=np.int64)
    tau = np.empty(M)
    pi = np.empty((M, p))
    for k, start in enumerate(range(0, M, BLOCK)):
        sl = slice(start, min(start + BLOCK, M))
        rng = block_rng(spec.seed, replicate, k)
        x[sl], n[sl], tau[sl], pi[sl] = _sample_units(
            rng, mu[sl], theta[sl], lam[sl], nat.alpha[sl], nat.delta[sl])
    if return_latent:
        return x, n, tau, pi
    return x, n


def sample_dataset(spec: SimSpec, replicate=0, unit_ids=None, condition_ids=None) -> RepeatedCountData:
    x, n = sample_arrays(spec, replicate)
    return RepeatedCountData(x, n, unit_ids, condition_ids)


def sample_replicates(spec: SimSpec, unit_ids=None, condition_ids=None):
    for r in range(spec.replicates):
        yield sample_dataset(spec, r, unit_ids, condition_ids)
