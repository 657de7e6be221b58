"""Soft cluster assignments and the annealed clustering objective.

Assignments follow a Student's-t kernel around learnable prototypes:

    p(k|i) proportional to (1 + ||z_i - mu_k||^2 / alpha) ** -((alpha+1)/2)

Training matches p against a sharpened, frequency-balanced target q by
minimising the row-averaged KL divergence, optionally plus a consistency
penalty between two assignment matrices.  Assignment matrices are plain
(N, K) float arrays whose rows sum to one.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClusterError, NumericalError, ParameterError


@dataclass
class Prototypes:
    """K cluster centers in embedding space plus the kernel's alpha."""

    centers: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise ParameterError(f"centers must be (K, c), got {self.centers.shape}")
        if not np.isfinite(self.centers).all():
            raise ParameterError("centers must be finite")
        if self.alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")

    @property
    def n_clusters(self) -> int:
        return self.centers.shape[0]

    def copy(self) -> "Prototypes":
        return Prototypes(self.centers.copy(), self.alpha)


def _check_embeddings(embeddings, protos: Prototypes) -> np.ndarray:
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != protos.centers.shape[1]:
        raise ParameterError(
            f"embeddings shape {z.shape} does not match prototype dim "
            f"{protos.centers.shape[1]}"
        )
    return z


def _sq_distances(z: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = z[:, None, :] - centers[None, :, :]
    return np.einsum("nkc,nkc->nk", diff, diff)


def soft_assign(embeddings, protos: Prototypes) -> np.ndarray:
    """Row-stochastic (N, K) matrix of Student's-t assignment probabilities.

    Weights are strictly positive, so rows are normalised directly.
    """
    z = _check_embeddings(embeddings, protos)
    sq = _sq_distances(z, protos.centers)
    weights = (1.0 + sq / protos.alpha) ** (-(protos.alpha + 1.0) / 2.0)
    return weights / weights.sum(axis=1, keepdims=True)


def target_distribution(p: np.ndarray) -> np.ndarray:
    """Sharpened, frequency-balanced targets: q proportional to p^2 / f.

    ``f_k`` is the total mass assigned to cluster k; a cluster with zero
    mass makes the targets undefined and raises.
    """
    p = np.asarray(p, dtype=np.float64)
    freq = p.sum(axis=0)
    dead = np.nonzero(freq == 0.0)[0]
    if dead.size:
        raise DegenerateClusterError(int(dead[0]))
    unnorm = p * p / freq
    return unnorm / unnorm.sum(axis=1, keepdims=True)


def kl_loss(q: np.ndarray, p: np.ndarray) -> float:
    """Row-averaged KL divergence of targets q from assignments p.

    Terms with q = 0 contribute nothing; p = 0 where q > 0 is an
    infinite divergence and raises.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ParameterError(f"shape mismatch: q {q.shape} vs p {p.shape}")
    support = q > 0
    if np.any(support & (p <= 0)):
        raise NumericalError(
            "infinite divergence: assignment probability is zero where the target is positive"
        )
    qs = q[support]
    return float((qs * (np.log(qs) - np.log(p[support]))).sum() / q.shape[0])


def _chain_to_inputs(z, protos, dlogw, sq):
    # dlogw is the gradient w.r.t. log of the unnormalised weights;
    # log w = -(alpha+1)/2 * log(1 + sq/alpha), so
    # d sq = dlogw * -(alpha+1) / (2 (alpha + sq)).
    dsq = dlogw * (-(protos.alpha + 1.0) / (2.0 * (protos.alpha + sq)))
    diff = z[:, None, :] - protos.centers[None, :, :]
    grad_z = 2.0 * np.einsum("nk,nkc->nc", dsq, diff)
    grad_centers = -2.0 * np.einsum("nk,nkc->kc", dsq, diff)
    return grad_z, grad_centers


def kl_loss_gradients(embeddings, protos: Prototypes, q: np.ndarray):
    """Analytic gradients of :func:`kl_loss` through :func:`soft_assign`.

    Targets q are treated as constants.  Returns gradients w.r.t. the
    embeddings (N, c) and the prototype centers (K, c).
    """
    z = _check_embeddings(embeddings, protos)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (z.shape[0], protos.n_clusters):
        raise ParameterError(
            f"q shape {q.shape} does not match ({z.shape[0]}, {protos.n_clusters})"
        )
    sq = _sq_distances(z, protos.centers)
    weights = (1.0 + sq / protos.alpha) ** (-(protos.alpha + 1.0) / 2.0)
    p = weights / weights.sum(axis=1, keepdims=True)
    dlogw = -(q - p) / z.shape[0]
    return _chain_to_inputs(z, protos, dlogw, sq)


def soft_assign_grads(embeddings, protos: Prototypes, grad_p: np.ndarray):
    """Vector-Jacobian product of :func:`soft_assign`.

    Given dLoss/dp, returns (dLoss/dembeddings, dLoss/dcenters).  Used to
    chain arbitrary losses on the assignment matrix, e.g. consistency.
    """
    z = _check_embeddings(embeddings, protos)
    grad_p = np.asarray(grad_p, dtype=np.float64)
    if grad_p.shape != (z.shape[0], protos.n_clusters):
        raise ParameterError(
            f"grad_p shape {grad_p.shape} does not match "
            f"({z.shape[0]}, {protos.n_clusters})"
        )
    sq = _sq_distances(z, protos.centers)
    weights = (1.0 + sq / protos.alpha) ** (-(protos.alpha + 1.0) / 2.0)
    p = weights / weights.sum(axis=1, keepdims=True)
    # Normalisation has softmax-style Jacobian in log-weight space.
    dlogw = p * (grad_p - (grad_p * p).sum(axis=1, keepdims=True))
    return _chain_to_inputs(z, protos, dlogw, sq)


def consistency_loss(p: np.ndarray, p_prime: np.ndarray):
    """Mean squared difference over all N*K entries, plus dLoss/dp.

    ``p_prime`` is treated as a constant (no gradient flows into it).
    """
    p = np.asarray(p, dtype=np.float64)
    p_prime = np.asarray(p_prime, dtype=np.float64)
    if p.shape != p_prime.shape:
        raise ParameterError(f"shape mismatch: {p.shape} vs {p_prime.shape}")
    diff = p - p_prime
    scale = p.shape[0] * p.shape[1]
    return float((diff * diff).sum() / scale), 2.0 * diff / scale
