"""Monte-Carlo lab: one softmax-attention update recovers Gaussian cluster centers.

Samples an isotropic Gaussian mixture with near-orthogonal unit centers, builds
perturbed (or randomly assigned) center estimates, and applies the attention
update mu'_k = (1/Z_k) sum_p exp(lambda <mu_hat_k, x_p>) x_p. The report
records the per-cluster initialization gap Delta_k, cosines to the true
centers before and after updating, and the stabilized partition sums, so the
qualitative claims (alignment approaches 1, improving with dimension and gap)
can be checked empirically across seeds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, NumericError

_GRAM_SLACK = 1e-12     # fp rounding allowance on the pairwise constraint


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture with K unit-norm centers and per-cluster sample count n."""

    k: int = 8
    d: int = 64
    n: int = 2000
    sigma: float = 0.5
    gamma_max: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError(f"need at least 2 clusters, got {self.k}")
        if self.d < 1 or self.n < 1:
            raise ConfigError(f"d and n must be positive, got d={self.d}, n={self.n}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if self.gamma_max < 0:
            raise ConfigError(f"gamma_max must be non-negative, got {self.gamma_max}")


@dataclass
class RecoveryReport:
    """Outcome of one recovery run."""

    spec: MixtureSpec
    init: str
    lambda_rule: str
    lambda_used: float
    updates: int
    feasible: bool
    delta: float
    delta_k: list
    cosine_before: list
    cosine_after: list
    z: list
    max_logit: list
    min_cosine_after: float
    mean_cosine_after: float

    def to_dict(self) -> dict:
        return {
            "spec": {
                "k": self.spec.k, "d": self.spec.d, "n": self.spec.n,
                "sigma": self.spec.sigma, "gamma_max": self.spec.gamma_max,
                "seed": self.spec.seed,
            },
            "init": self.init,
            "lambda_rule": self.lambda_rule,
            "lambda_used": self.lambda_used,
            "updates": self.updates,
            "feasible": self.feasible,
            "delta": self.delta,
            "delta_k": list(self.delta_k),
            "cosine_before": list(self.cosine_before),
            "cosine_after": list(self.cosine_after),
            "z": list(self.z),
            "max_logit": list(self.max_logit),
            "min_cosine_after": self.min_cosine_after,
            "mean_cosine_after": self.mean_cosine_after,
        }


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _check_gram(centers: np.ndarray, gamma_max: float) -> bool:
    gram = centers @ centers.T
    off = gram - np.diag(np.diag(gram))
    return float(np.abs(off).max()) <= gamma_max + _GRAM_SLACK


def sample_mixture(spec: MixtureSpec):
    """Draw (centers [K,d], points [K*n,d]); points are cluster-major."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k, d = spec.k, spec.d

    if k > d:
        if spec.gamma_max < 0.1:
            raise ConfigError(
                f"infeasible spec: {k} nearly orthogonal centers do not fit in {d} dimensions"
            )
        centers = None
        for _ in range(64):
            cand = _unit_rows(rng.normal(size=(k, d)))
            if _check_gram(cand, spec.gamma_max):
                centers = cand
                break
        if centers is None:
            raise ConfigError(
                f"infeasible spec: could not place {k} centers in {d} dims "
                f"with gamma_max={spec.gamma_max}"
            )
    else:
        base = np.linalg.qr(rng.normal(size=(d, k)))[0].T
        scale = spec.gamma_max / 4.0
        centers = base
        while scale > 0:
            cand = _unit_rows(base + scale * _unit_rows(rng.normal(size=(k, d))))
            if _check_gram(cand, spec.gamma_max):
                centers = cand
                break
            scale *= 0.5
            if scale < 1e-8:
                break

    noise = rng.normal(0.0, spec.sigma / math.sqrt(d), size=(k, spec.n, d))
    points = (centers[:, np.newaxis, :] + noise).reshape(k * spec.n, d)
    return centers, points


def _stabilized_exponents(points, mu_hat, lam):
    logits = lam * (np.asarray(mu_hat) @ np.asarray(points).T)
    max_logit = logits.max(axis=1, keepdims=True)
    expw = np.exp(logits - max_logit)
    z = expw.sum(axis=1)
    return expw, z, max_logit[:, 0]


def attention_weights(points, mu_hat, lam) -> np.ndarray:
    """Normalized attention weights [K, K*n]; rows sum to one."""
    expw, z, _ = _stabilized_exponents(points, mu_hat, lam)
    return expw / z[:, np.newaxis]


def attention_update(points, mu_hat, lam):
    """One softmax-attention update; returns (mu_prime [K,d], Z [K] stabilized)."""
    points = np.asarray(points, dtype=np.float64)
    mu_hat = np.asarray(mu_hat, dtype=np.float64)
    if lam < 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")
    if not np.isfinite(points).all():
        raise NumericError("attention_update: non-finite points")
    if not np.isfinite(mu_hat).all():
        raise NumericError("attention_update: non-finite center estimates")
    expw, z, _ = _stabilized_exponents(points, mu_hat, lam)
    mu_prime = (expw / z[:, np.newaxis]) @ points
    if not np.isfinite(mu_prime).all():
        raise NumericError("attention_update: overflow despite stabilization")
    return mu_prime, z


def initialization_gap(centers, mu_hat) -> np.ndarray:
    """Delta_k = min over j != k of <mu_hat_k, mu_k - mu_j>."""
    k = centers.shape[0]
    inner = mu_hat @ centers.T                     # [K, K]: <mu_hat_k, mu_j>
    own = np.diag(inner)
    diffs = own[:, np.newaxis] - inner             # <mu_hat_k, mu_k - mu_j>
    diffs[np.arange(k), np.arange(k)] = np.inf
    return diffs.min(axis=1)


def greedy_assignment(mu_hat, centers) -> np.ndarray:
    """Order random estimates so index k serves cluster k (largest inner products first)."""
    k = centers.shape[0]
    inner = mu_hat @ centers.T
    order = np.full(k, -1)
    used_rows = np.zeros(k, dtype=bool)
    used_cols = np.zeros(k, dtype=bool)
    work = inner.copy()
    for _ in range(k):
        flat = np.argmax(np.where(used_rows[:, None] | used_cols[None, :], -np.inf, work))
        row, col = divmod(int(flat), k)
        order[col] = row
        used_rows[row] = True
        used_cols[col] = True
    return mu_hat[order]


def run_experiment(
    spec: MixtureSpec,
    init: str = "true_perturbed",
    lambda_rule: Union[str, float] = "theorem",
    updates: int = 1,
    init_noise: float = 0.5,
) -> RecoveryReport:
    """Sample, initialize center estimates, update, and report recovery quality."""
    if init not in ("true_perturbed", "random"):
        raise ConfigError(f"init must be true_perturbed or random, got {init!r}")
    if updates < 1:
        raise ConfigError(f"updates must be >= 1, got {updates}")
    centers, points = sample_mixture(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))

    if init == "true_perturbed":
        direction = _unit_rows(rng.normal(size=centers.shape))
        mu_hat = _unit_rows(centers + init_noise * direction)
    else:
        mu_hat = greedy_assignment(_unit_rows(rng.normal(size=centers.shape)), centers)

    delta_k = initialization_gap(centers, mu_hat)
    delta = float(delta_k.min())
    cos_before = np.sum(mu_hat * centers, axis=1)

    if isinstance(lambda_rule, str) and lambda_rule == "theorem":
        rule_name = "theorem"
        if delta <= 0:
            return RecoveryReport(
                spec=spec, init=init, lambda_rule=rule_name, lambda_used=0.0,
                updates=0, feasible=False, delta=delta, delta_k=delta_k.tolist(),
                cosine_before=cos_before.tolist(), cosine_after=cos_before.tolist(),
                z=[], max_logit=[],
                min_cosine_after=float(cos_before.min()),
                mean_cosine_after=float(cos_before.mean()),
            )
        lam = (math.log(spec.d) + math.log(spec.k)) / delta
    else:
        rule_name = "fixed"
        lam = float(lambda_rule)
        if lam < 0:
            raise ConfigError(f"fixed lambda must be non-negative, got {lam}")

    current = mu_hat
    mu_prime, z, last_queries = None, None, mu_hat
    for _ in range(updates):
        last_queries = current
        mu_prime, z = attention_update(points, current, lam)
        current = _unit_rows(mu_prime)
    _, _, max_logit = _stabilized_exponents(points, last_queries, lam)

    norms = np.linalg.norm(mu_prime, axis=1)
    cos_after = np.sum(mu_prime * centers, axis=1) / norms
    return RecoveryReport(
        spec=spec, init=init, lambda_rule=rule_name, lambda_used=lam,
        updates=updates, feasible=True, delta=delta, delta_k=delta_k.tolist(),
        cosine_before=cos_before.tolist(), cosine_after=cos_after.tolist(),
        z=z.tolist(), max_logit=max_logit.tolist(),
        min_cosine_after=float(cos_after.min()),
        mean_cosine_after=float(cos_after.mean()),
    )
