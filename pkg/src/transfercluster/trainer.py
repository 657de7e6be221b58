"""Training orchestration: initialization, warm-up, and the annealing loop.

Initialization extracts trunk features of the unlabelled data, fits a
PCA bottleneck, installs it, and seeds prototypes with k-means.  The
loop then alternates gradient steps on the KL objective (plus a
variant-specific term) with refreshes of the target distribution:

* ``baseline``: KL objective only.
* ``pi``: adds a ramped consistency penalty between the assignments of
  each batch and of a perturbed copy of it.
* ``te``: adds a ramped consistency penalty between batch assignments
  and the bias-corrected prediction ensemble.
* ``tep``: builds the targets from the prediction ensemble instead of
  from the current assignments (no consistency penalty).

Targets stay frozen through warm-up, are refreshed once after it, and
then once per main epoch.  Everything is deterministic given the config
seed.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .assignment import (
    Prototypes,
    consistency_loss,
    kl_loss,
    kl_loss_gradients,
    soft_assign,
    soft_assign_grads,
    target_distribution,
)
from .dataset import FeatureMatrix
from .encoder import EncoderParams, backward, fit_pca, forward, install_bottleneck
from .errors import DegenerateClusterError, NumericalError, ParameterError
from .kmeans import kmeans
from .regularizers import (
    EnsembleState,
    RampSchedule,
    ema_corrected,
    ema_update,
    perturb,
    ramp_weight,
)
from .seeding import derive_seed, rng_for

VARIANTS = ("baseline", "pi", "te", "tep")


@dataclass
class TrainConfig:
    k: int
    variant: str = "baseline"
    warmup_epochs: int = 10
    main_epochs: int = 90
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    ema_momentum: float = 0.6
    ramp: RampSchedule | None = None
    perturb_sigma: float = 0.1
    seed: int = 0
    bottleneck_dim: int | None = None   # defaults to k
    alpha: float = 1.0
    optimizer: str = "sgd"
    freeze_trunk: bool = False
    kmeans_restarts: int = 10

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.k < 2:
            raise ParameterError(f"k must be at least 2, got {self.k}")
        if self.warmup_epochs < 0 or self.main_epochs < 0:
            raise ParameterError("epoch counts must be non-negative")
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"optimizer must be 'sgd' or 'adam', got '{self.optimizer}'")

    @property
    def c(self) -> int:
        return self.bottleneck_dim if self.bottleneck_dim is not None else self.k

    def ramp_schedule(self) -> RampSchedule:
        if self.ramp is not None:
            return self.ramp
        return RampSchedule(max(1, self.warmup_epochs + self.main_epochs // 2))


@dataclass
class EpochRecord:
    epoch: int
    phase: str                 # "warmup" or "main"
    kl_loss: float             # full-set KL against this epoch's targets, end of epoch
    consistency_loss: float    # mean of this epoch's per-batch consistency terms
    omega: float
    mass_hist: np.ndarray      # rows per cluster by assignment argmax, end of epoch
    q_hash: str                # digest of the targets used during this epoch


@dataclass
class TrainTrace:
    records: list[EpochRecord]
    assignments: np.ndarray
    prototypes: Prototypes
    encoder: EncoderParams
    warnings: list[str] = field(default_factory=list)
    ensemble: EnsembleState | None = None


def _values(batch) -> np.ndarray:
    return batch.values if isinstance(batch, FeatureMatrix) else np.asarray(batch, dtype=np.float64)


def _hash_matrix(m: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(m).tobytes()).hexdigest()[:16]


def initialize(encoder: EncoderParams, unlabeled, config: TrainConfig):
    """Install the PCA bottleneck and seed prototypes with k-means.

    Returns ``(encoder_with_bottleneck, prototypes, targets)``.
    """
    x = _values(unlabeled)
    if x.shape[0] < 1:
        raise ParameterError("unlabelled data is empty")
    trunk_features = forward(encoder, x)
    pca = fit_pca(trunk_features, config.c)
    ready = install_bottleneck(encoder, pca)
    embeddings = forward(ready, x)
    km = kmeans(embeddings, config.k, seed=config.seed, n_init=config.kmeans_restarts)
    protos = Prototypes(km.centers.copy(), config.alpha)
    q = target_distribution(soft_assign(embeddings, protos))
    return ready, protos, q


def predict(encoder: EncoderParams, protos: Prototypes, batch):
    """Cluster index per row (argmax assignment, lowest index on ties)."""
    probs = soft_assign(forward(encoder, _values(batch)), protos)
    return probs.argmax(axis=1), probs


class _SgdMomentum:
    def __init__(self, params, momentum, lr):
        self.params = params
        self.momentum = momentum
        self.lr = lr
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def _refresh_targets(source_p, protos, embeddings, epoch, warnings):
    """Targets from ``source_p``, reseeding any prototype with zero mass.

    Reseeding moves the dead prototype onto the embedding farthest from
    its nearest prototype and recomputes assignments; in that case the
    targets are rebuilt from the fresh assignments.
    """
    p = source_p
    for _ in range(protos.n_clusters + 1):
        freq = p.sum(axis=0)
        dead = np.nonzero(freq == 0.0)[0]
        if dead.size == 0:
            return target_distribution(p), p
        k = int(dead[0])
        diff = embeddings[:, None, :] - protos.centers[None, :, :]
        nearest = np.einsum("nkc,nkc->nk", diff, diff).min(axis=1)
        protos.centers[k] = embeddings[int(np.argmax(nearest))]
        warnings.append(f"epoch {epoch}: reseeded empty prototype {k}")
        p = soft_assign(embeddings, protos)
    raise DegenerateClusterError(k, "prototype reseeding did not restore cluster mass")


def train(encoder: EncoderParams, protos: Prototypes, unlabeled,
          config: TrainConfig) -> TrainTrace:
    """Run warm-up plus the annealing main loop; inputs are not modified.

    The trace holds one record per epoch, the final assignments, and the
    trained encoder and prototypes.
    """
    x = _values(unlabeled)
    n = x.shape[0]
    enc = encoder.copy()
    protos = protos.copy()
    ramp = config.ramp_schedule()
    warnings: list[str] = []

    embeddings = forward(enc, x)
    p_full = soft_assign(embeddings, protos)
    q, p_full = _refresh_targets(p_full, protos, embeddings, -1, warnings)

    state = None
    if config.variant in ("te", "tep"):
        state = ema_update(EnsembleState.zeros(n, protos.n_clusters, config.ema_momentum), p_full)

    params = [protos.centers]
    if enc.bottleneck is not None:
        params += [enc.bottleneck[0], enc.bottleneck[1]]
    if not config.freeze_trunk:
        for layer in enc.layers:
            params += [layer.weights, layer.bias]
    if config.optimizer == "adam":
        opt = _Adam(params, config.learning_rate)
    else:
        opt = _SgdMomentum(params, config.momentum, config.learning_rate)

    perturb_seed = derive_seed(config.seed, "perturb-stream")
    batch_size = min(config.batch_size, n)
    total_epochs = config.warmup_epochs + config.main_epochs
    records = []
    global_step = 0
    for epoch in range(total_epochs):
        phase = "warmup" if epoch < config.warmup_epochs else "main"
        omega = ramp_weight(ramp, epoch)
        order = rng_for(config.seed, "shuffle", epoch).permutation(n)
        cons_total = 0.0
        n_batches = 0
        q_hash = _hash_matrix(q)
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            xb = x[rows]
            zb = forward(enc, xb)
            p = soft_assign(zb, protos)
            grad_z, grad_centers = kl_loss_gradients(zb, protos, q[rows])
            if config.variant == "pi":
                xb_prime = perturb(xb, config.perturb_sigma, perturb_seed, global_step)
                p_prime = soft_assign(forward(enc, xb_prime), protos)
                closs, grad_p = consistency_loss(p, p_prime)
                gz, gc = soft_assign_grads(zb, protos, omega * grad_p)
                grad_z = grad_z + gz
                grad_centers = grad_centers + gc
                cons_total += closs
            elif config.variant == "te":
                p_prime = ema_corrected(state)[rows]
                closs, grad_p = consistency_loss(p, p_prime)
                gz, gc = soft_assign_grads(zb, protos, omega * grad_p)
                grad_z = grad_z + gz
                grad_centers = grad_centers + gc
                cons_total += closs
            enc_grads, _ = backward(enc, xb, grad_z)
            flat = [grad_centers]
            if enc.bottleneck is not None:
                flat += [enc_grads.bottleneck[0], enc_grads.bottleneck[1]]
            if not config.freeze_trunk:
                for gw, gb in enc_grads.layers:
                    flat += [gw, gb]
            opt.step(flat)
            global_step += 1
            n_batches += 1

        embeddings = forward(enc, x)
        p_full = soft_assign(embeddings, protos)
        if not np.isfinite(p_full).all():
            raise NumericalError(f"training diverged at epoch {epoch}")
        if state is not None:
            state = ema_update(state, p_full)
        records.append(EpochRecord(
            epoch=epoch,
            phase=phase,
            kl_loss=kl_loss(q, p_full),
            consistency_loss=cons_total / n_batches if n_batches else 0.0,
            omega=omega,
            mass_hist=np.bincount(p_full.argmax(axis=1), minlength=protos.n_clusters),
            q_hash=q_hash,
        ))

        end_of_warmup = epoch == config.warmup_epochs - 1
        if end_of_warmup or phase == "main":
            source = ema_corrected(state) if config.variant == "tep" else p_full
            q, _ = _refresh_targets(source, protos, embeddings, epoch, warnings)

    assignments, _ = predict(enc, protos, x)
    return TrainTrace(records, assignments, protos, enc, warnings, state)
