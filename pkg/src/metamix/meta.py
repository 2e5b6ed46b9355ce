"""Per-sample interpolation coefficients learned by a one-step meta gradient.

The step: mix the batch under the current policy, simulate one plain
gradient-descent update of a cloned model on that mixed loss, evaluate a
clean validation batch at the simulated weights, and backpropagate the
validation loss all the way to the policy logits. The real model then trains
on the batch re-mixed under the updated coefficients.

The hypergradient comes in two flavors: "exact" differentiates through the
recorded inner gradient (double backward), "fd" uses the identity
grad_z = -eta * d/dz <grad_theta L_meta, grad_theta' L_val> evaluated by
central differences along the validation gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from . import engine as eng
from . import mixing, nets
from .data import AUGMENT_MODES, Splits, augment_batch
from .engine import NonFiniteError, Tensor
from .mixing import InterpolationPolicy
from .nets import Architecture, ModelState, OptimizerConfig
from .reporting import EpochRecord, lambda_histogram

MODES = ("metamixup", "mixup-beta", "mixup-fixed", "baseline")
HYPERGRAD_MODES = ("exact", "fd")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    meta_batch_size: int | None = None   # validation batch per step; None -> batch_size
    policy_step_size: float = 5.0        # gradient step on the logits
    policy_updates: int = 1              # hypergradient steps per batch
    hypergrad_mode: str = "exact"
    fd_epsilon: float = 1e-4
    mode: str = "metamixup"
    beta_alpha: float = 1.0              # mixup-beta shared draw
    fixed_lambda: float = 0.5            # mixup-fixed coefficient
    unsup_weight: float = 1.0            # weight on the pseudo-label loss term
    augment: str = "none"
    seed: int = 0
    arch: Architecture | None = None     # None -> small tanh MLP sized from data
    optimizer: OptimizerConfig = dc_field(default_factory=OptimizerConfig)
    # pseudo-label thresholding (used by the semi-supervised trainer)
    sigma0: float = 0.95
    sigma_decrement: float = 0.05
    sigma_period: int = 30
    sigma_floor: float = 0.5
    apl: bool = True                     # False freezes the threshold at sigma0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.meta_batch_size is not None and self.meta_batch_size < 1:
            raise ValueError(f"meta_batch_size must be >= 1, got {self.meta_batch_size}")
        # 0 is legal and reduces the step to vanilla random-lambda mixing
        if self.policy_step_size < 0:
            raise ValueError(f"policy_step_size must be >= 0, got {self.policy_step_size}")
        if self.policy_updates < 1:
            raise ValueError(f"policy_updates must be >= 1, got {self.policy_updates}")
        if self.hypergrad_mode not in HYPERGRAD_MODES:
            raise ValueError(f"hypergrad_mode '{self.hypergrad_mode}' not in {HYPERGRAD_MODES}")
        if self.fd_epsilon <= 0:
            raise ValueError(f"fd_epsilon must be positive, got {self.fd_epsilon}")
        if self.mode not in MODES:
            raise ValueError(f"mode '{self.mode}' not in {MODES}")
        if self.beta_alpha <= 0:
            raise ValueError(f"beta_alpha must be positive, got {self.beta_alpha}")
        if not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed_lambda must be in [0, 1], got {self.fixed_lambda}")
        if self.unsup_weight < 0:
            raise ValueError(f"unsup_weight must be >= 0, got {self.unsup_weight}")
        if self.augment not in AUGMENT_MODES:
            raise ValueError(f"augment '{self.augment}' not in {AUGMENT_MODES}")
        if not 0.0 < self.sigma_floor <= self.sigma0 <= 1.0:
            raise ValueError("need 0 < sigma_floor <= sigma0 <= 1")
        if self.sigma_decrement < 0 or self.sigma_period < 1:
            raise ValueError("sigma_decrement >= 0 and sigma_period >= 1 required")


@dataclass
class StepStats:
    train_loss: float
    meta_loss: float
    val_loss: float
    lambda_mean: float
    lambda_std: float
    lambda_min: float
    lambda_max: float
    hypergrad_norm: float
    lambda_values: np.ndarray
    accepted: int = 0

    def __post_init__(self):
        for name in ("train_loss", "meta_loss", "val_loss", "lambda_mean",
                     "lambda_std", "lambda_min", "lambda_max", "hypergrad_norm"):
            if not np.isfinite(getattr(self, name)):
                raise NonFiniteError(f"StepStats.{name} is not finite")


@dataclass
class MetaGradResult:
    grad: np.ndarray   # d L_val / d logits
    meta_loss: float
    val_loss: float


@dataclass
class TrainingReport:
    records: list[EpochRecord]
    final_test_error: float
    model: ModelState


# a group is (inputs, one-hot labels, permutation, loss weight); the policy
# logits are sliced across groups in order
Group = tuple[np.ndarray, np.ndarray, np.ndarray, float]


def _group_loss(model: ModelState, groups: Sequence[Group],
                lam_source, params) -> Tensor:
    """Sum over groups of (weight * mean mixed cross-entropy)."""
    lam = lam_source.lambdas() if isinstance(lam_source, InterpolationPolicy) else lam_source
    total = None
    offset = 0
    for x, y, perm, weight in groups:
        n = len(x)
        lam_g = eng.gather_rows(lam, np.arange(offset, offset + n))
        offset += n
        mixed = mixing.mix_batch(x, y, perm, lam_g)
        loss = nets.cross_entropy(nets.forward(model, mixed.inputs, params=params),
                                  mixed.labels)
        if weight != 1.0:
            loss = eng.scale(loss, weight)
        total = loss if total is None else eng.add(total, loss)
    if lam.shape != (offset,):
        raise eng.ShapeError(f"policy length {lam.shape[0]} vs group total {offset}")
    return total


def hypergradient(model: ModelState, groups: Sequence[Group],
                  policy: InterpolationPolicy, val_batch, eta: float,
                  mode: str = "exact", fd_epsilon: float = 1e-4) -> MetaGradResult:
    """d L_val(theta - eta * grad L_meta(lambda)) / d logits on a throwaway clone.

    The passed model is never touched: the inner update runs on cloned
    parameter leaves with no momentum (plain gradient descent).
    """
    vx, vy = val_batch
    clone = nets.clone_for_meta(model)
    names = list(clone.params)
    params = [clone.params[n] for n in names]

    if mode == "exact":
        meta_loss = _group_loss(clone, groups, policy, clone.params)
        grads = eng.backward(meta_loss, params, create_graph=True)
        simulated = {n: eng.sub(p, eng.scale(g, eta))
                     for n, p, g in zip(names, params, grads)}
        val_loss = nets.cross_entropy(nets.forward(clone, vx, params=simulated), vy)
        (gz,) = eng.backward(val_loss, [policy.logits])
        return MetaGradResult(gz.data, meta_loss.item(), val_loss.item())

    if mode == "fd":
        meta_loss = _group_loss(clone, groups, policy, clone.params)
        grads = eng.backward(meta_loss, params)
        simulated = [Tensor(p.data - eta * g.data, requires_grad=True)
                     for p, g in zip(params, grads)]
        val_loss = nets.cross_entropy(
            nets.forward(clone, vx, params=dict(zip(names, simulated))), vy)
        v = eng.backward(val_loss, simulated)
        v_scale = max(float(np.abs(g.data).max()) for g in v)
        if v_scale == 0.0:
            return MetaGradResult(np.zeros(len(policy)), meta_loss.item(),
                                  val_loss.item())

        def rebuilt(shifted):
            return _group_loss(clone, groups, policy, dict(zip(names, shifted)))

        (hv,) = eng.finite_diff_hvp(rebuilt, params, [g.data for g in v],
                                    epsilon=fd_epsilon / v_scale,
                                    wrt=[policy.logits])
        return MetaGradResult(-eta * hv.data, meta_loss.item(), val_loss.item())

    raise ValueError(f"hypergradient mode '{mode}' not in {HYPERGRAD_MODES}")


def meta_lambda_gradient(model: ModelState, batch, permutation: np.ndarray,
                         policy: InterpolationPolicy, val_batch, eta: float,
                         mode: str = "exact", fd_epsilon: float = 1e-4) -> MetaGradResult:
    """Single-batch wrapper over :func:`hypergradient`."""
    x, y = batch
    return hypergradient(model, [(x, y, permutation, 1.0)], policy, val_batch,
                         eta, mode, fd_epsilon)


def update_policy(policy: InterpolationPolicy, grad,
                  step_size: float) -> InterpolationPolicy:
    """One gradient-descent step on the logits; returns a fresh leaf policy."""
    if step_size < 0:
        raise ValueError(f"update_policy: step_size must be >= 0, got {step_size}")
    g = np.asarray(grad.data if isinstance(grad, Tensor) else grad, dtype=np.float64)
    if g.shape != policy.logits.shape:
        raise eng.ShapeError(f"update_policy: grad shape {g.shape} vs "
                             f"logits {policy.logits.shape}")
    return InterpolationPolicy(Tensor(policy.logits.data - step_size * g,
                                      requires_grad=True))


def _main_update(model: ModelState, groups: Sequence[Group], lam_vector,
                 config: TrainConfig, lr: float) -> float:
    loss = _group_loss(model, groups, lam_vector, model.params)
    grads = nets.param_gradients(loss, model)
    nets.sgd_step(model, grads, config.optimizer, lr)
    return loss.item()


def metamixup_train_step(model: ModelState, batch, val_batch,
                         config: TrainConfig, rng: np.random.Generator,
                         lr: float | None = None) -> StepStats:
    """Learn per-sample coefficients for this batch, then take the real step.

    Randomness drawn, in order: pairing permutation, initial policy. The
    validation batch is supplied by the caller. Each policy update simulates
    its inner step on a fresh clone.
    """
    x, y = batch
    step_lr = config.optimizer.learning_rate if lr is None else lr
    perm = mixing.sample_pairing(len(x), rng)
    policy = mixing.init_policy(len(x), rng)
    groups = [(x, y, perm, 1.0)]
    last = None
    for _ in range(config.policy_updates):
        last = hypergradient(model, groups, policy, val_batch, step_lr,
                             config.hypergrad_mode, config.fd_epsilon)
        policy = update_policy(policy, last.grad, config.policy_step_size)
    lam = policy.lambda_values()
    train_loss = _main_update(model, groups, policy.lambdas(), config, step_lr)
    return StepStats(
        train_loss=train_loss, meta_loss=last.meta_loss, val_loss=last.val_loss,
        lambda_mean=float(lam.mean()), lambda_std=float(lam.std()),
        lambda_min=float(lam.min()), lambda_max=float(lam.max()),
        hypergrad_norm=float(np.linalg.norm(last.grad)), lambda_values=lam)


def vanilla_train_step(model: ModelState, batch, config: TrainConfig,
                       rng: np.random.Generator, lr: float | None = None,
                       val_batch=None) -> StepStats:
    """The non-meta modes: shared Beta draw, fixed coefficient, or no mixing.

    Randomness drawn, in order: pairing permutation, then the Beta coefficient
    (mixup-beta only). The baseline consumes no randomness and is treated as
    lambda = 1 (mixing with anything is the identity)."""
    x, y = batch
    step_lr = config.optimizer.learning_rate if lr is None else lr
    n = len(x)
    if config.mode == "baseline":
        lam = np.ones(n)
        perm = np.arange(n)
    else:
        perm = mixing.sample_pairing(n, rng)
        if config.mode == "mixup-beta":
            lam = np.full(n, mixing.beta_sample(config.beta_alpha, rng))
        elif config.mode == "mixup-fixed":
            lam = np.full(n, config.fixed_lambda)
        else:
            raise ValueError(f"vanilla_train_step cannot run mode '{config.mode}'")
    train_loss = _main_update(model, [(x, y, perm, 1.0)], Tensor(lam), config, step_lr)
    val_loss = 0.0
    if val_batch is not None:
        with eng.no_grad():
            val_loss = nets.cross_entropy(
                nets.forward(model, val_batch[0]), val_batch[1]).item()
    return StepStats(
        train_loss=train_loss, meta_loss=0.0, val_loss=val_loss,
        lambda_mean=float(lam.mean()), lambda_std=float(lam.std()),
        lambda_min=float(lam.min()), lambda_max=float(lam.max()),
        hypergrad_norm=0.0, lambda_values=lam)


def shape_for(arch: Architecture, x: np.ndarray) -> np.ndarray:
    """Give [n, h, w] image batches the trailing channel axis conv nets expect."""
    if len(arch.input_shape) == 3 and x.ndim == 3:
        return x[..., None]
    return x


def default_arch(dataset) -> Architecture:
    in_dim = int(np.prod(dataset.inputs.shape[1:]))
    return nets.mlp(in_dim, [32], dataset.n_classes)


def sample_val_batch(meta_val, val_onehot: np.ndarray, m: int,
                     arch: Architecture, rng: np.random.Generator):
    idx = rng.choice(len(meta_val), size=min(m, len(meta_val)), replace=False)
    return shape_for(arch, meta_val.inputs[idx]), val_onehot[idx]


def train_supervised(splits: Splits, config: TrainConfig) -> TrainingReport:
    """Full supervised run; per step the RNG draws, in order: validation
    indices, augmentation, pairing, policy/Beta. Metrics are per epoch."""
    rng = np.random.default_rng(config.seed)
    arch = config.arch if config.arch is not None else default_arch(splits.train)
    model = nets.build_model(arch, rng)
    train, meta_val, test = splits.train, splits.meta_val, splits.test
    classes = train.n_classes
    y_onehot = nets.one_hot(train.labels, classes)
    val_onehot = nets.one_hot(meta_val.labels, classes)
    m = config.meta_batch_size or config.batch_size
    test_x = shape_for(arch, test.inputs) if len(test) else None

    records: list[EpochRecord] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = config.optimizer.lr_at(epoch)
        order = rng.permutation(len(train))
        stats: list[StepStats] = []
        for s in range(len(train) // config.batch_size):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            val_batch = sample_val_batch(meta_val, val_onehot, m, arch, rng)
            bx = augment_batch(shape_for(arch, train.inputs[idx]), config.augment, rng)
            batch = (bx, y_onehot[idx])
            if config.mode == "metamixup":
                stats.append(metamixup_train_step(model, batch, val_batch,
                                                  config, rng, lr))
            else:
                stats.append(vanilla_train_step(model, batch, config, rng, lr,
                                                val_batch))
        records.append(epoch_record(epoch, stats, model, test_x,
                                    test.labels if len(test) else None, t0))
    final_err = records[-1].test_error if records else -1.0
    return TrainingReport(records=records, final_test_error=final_err, model=model)


def epoch_record(epoch: int, stats: Sequence[StepStats], model: ModelState,
                 test_x, test_labels, t0: float, threshold: float = -1.0,
                 accepted: int = 0, pseudo_accuracy: float = -1.0) -> EpochRecord:
    lam_all = (np.concatenate([s.lambda_values for s in stats])
               if stats else np.empty(0))
    test_error = (nets.error_rate(model, test_x, test_labels)
                  if test_x is not None else -1.0)
    return EpochRecord(
        epoch=epoch,
        train_loss=float(np.mean([s.train_loss for s in stats])) if stats else 0.0,
        meta_loss=float(np.mean([s.meta_loss for s in stats])) if stats else 0.0,
        val_loss=float(np.mean([s.val_loss for s in stats])) if stats else 0.0,
        test_error=test_error,
        lambda_mean=float(lam_all.mean()) if lam_all.size else 0.0,
        lambda_std=float(lam_all.std()) if lam_all.size else 0.0,
        lambda_hist=lambda_histogram(lam_all),
        threshold=threshold,
        accepted_count=accepted,
        pseudo_accuracy=pseudo_accuracy,
        wall_seconds=time.perf_counter() - t0)
