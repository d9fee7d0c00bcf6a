"""Gradient-based training of the symbolic ansatz.

Gradients come from torch's reverse-mode autodiff through the expanded
dictionary; the optimizer is torch's Adam with one parameter group per scale
so the per-scale learning-rate rule can be applied every step.
"""

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field

import torch
from django.conf import settings

from .exceptions import ConfigurationError, DivergenceError
from .fitloss import FitScheme, admissible_starts, loss_total
from .symnet import AnsatzModel, with_interval

logger = logging.getLogger(__name__)

HISTORY_HEADER = ("iter", "loss", "eps_pred", "grad_norm", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings.

    ``minibatch`` of None means full batch. A non-empty ``interval_sweep``
    trains one instance per listed interval index and keeps the best.
    """

    lr_base: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 1000
    minibatch: int = None
    per_scale_lr: bool = True
    seed: int = 0
    interval_sweep: tuple = ()
    log_every: int = 500

    def __post_init__(self):
        if self.lr_base <= 0 or self.adam_eps <= 0:
            raise ConfigurationError("lr_base and adam_eps must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.minibatch is not None and self.minibatch < 1:
            raise ConfigurationError("minibatch must be positive")
        object.__setattr__(self, "interval_sweep", tuple(int(i) for i in self.interval_sweep))


@dataclass
class HistoryRecord:
    iter: int
    loss: float
    eps_pred: float
    grad_norm: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def final_loss(self):
        return self.records[-1].loss if self.records else None

    def write_csv(self, path, timings=None):
        """Writes ``iter,loss,eps_pred,grad_norm,seconds`` rows.

        Wall-clock seconds are written only when ``timings`` (default:
        ``settings.KINETIC_HISTORY_TIMINGS``) is on; otherwise the column
        holds 0 so reruns produce identical files.
        """

        if timings is None:
            timings = settings.KINETIC_HISTORY_TIMINGS
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(HISTORY_HEADER)
            for r in self.records:
                seconds = repr(r.seconds) if timings else "0"
                writer.writerow([r.iter, repr(r.loss), repr(r.eps_pred), repr(r.grad_norm), seconds])


def _named_gradients(model):
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }


def _loss_and_gradient(ds, model, loss_cfg, scheme, batch):
    model.zero_grad(set_to_none=True)
    loss = loss_total(ds, model, loss_cfg, scheme, batch)
    if not torch.isfinite(loss):
        raise DivergenceError(f"Loss became non-finite ({float(loss.detach())})", path="loss")
    loss.backward()
    grads = _named_gradients(model)
    for name, grad in grads.items():
        if not torch.isfinite(grad).all():
            raise DivergenceError(f"Non-finite gradient in {name}", path=name)
    return loss.detach(), grads


def gradient(ds, model, loss_cfg, scheme, batch):
    """Exact gradient of the batch loss for every trainable tensor.

    Args:
        ds (Dataset): Training data.
        model (AnsatzModel): Current parameters.
        loss_cfg (LossConfig): Loss settings.
        scheme (FitScheme): Fitting scheme.
        batch: Non-empty collection of start indices.

    Returns:
        dict[str, torch.Tensor]: Parameter name -> gradient of the same shape.

    Raises:
        DivergenceError: If the loss or a gradient is non-finite; ``path``
            names the offending parameter.
    """

    return _loss_and_gradient(ds, model, loss_cfg, scheme, batch)[1]


def make_optimizer(model, cfg):
    """Adam with one parameter group per scale (scale None: w_eps, physics)."""

    groups = [
        {"params": params, "scale": scale}
        for scale, params in model.scale_parameters().items()
        if params
    ]
    return torch.optim.Adam(
        groups,
        lr=cfg.lr_base,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def adam_step(model, optimizer, cfg):
    """Applies one Adam update to gradients already stored on the model.

    With ``per_scale_lr`` the step for scale-m parameters is lr_base·ε_pred^m,
    using the current ε_pred.
    """

    eps = float(model.eps_pred().detach())
    for group in optimizer.param_groups:
        scale = group["scale"]
        group["lr"] = cfg.lr_base * (eps**scale if cfg.per_scale_lr and scale else 1.0)
    optimizer.step()


def _grad_norm(grads):
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def _train_single(ds, ansatz_cfg, loss_cfg, train_cfg, scheme):
    scheme = FitScheme(scheme)
    model = AnsatzModel(ansatz_cfg, seed=train_cfg.seed).bind_physics(ds.spec, ds.grid)
    optimizer = make_optimizer(model, train_cfg)
    history = TrainHistory()

    starts = admissible_starts(ds, scheme)
    batch_size = train_cfg.minibatch or len(starts)
    if batch_size > len(starts):
        raise ConfigurationError(f"minibatch {batch_size} exceeds the {len(starts)} available residuals")
    generator = torch.Generator().manual_seed(train_cfg.seed)

    began = time.perf_counter()
    iteration = 0
    for _ in range(train_cfg.epochs):
        order = starts[torch.randperm(len(starts), generator=generator)]
        for batch in order.split(batch_size):
            last_finite = copy.deepcopy(model.state_dict())
            try:
                loss, grads = _loss_and_gradient(ds, model, loss_cfg, scheme, batch)
            except DivergenceError as exc:
                exc.last_finite_state = last_finite
                raise
            eps = float(model.eps_pred().detach())
            value = float(loss.detach())
            history.append(HistoryRecord(iteration, value, eps, _grad_norm(grads), time.perf_counter() - began))
            if train_cfg.log_every and iteration % train_cfg.log_every == 0:
                logger.info("iter %d loss %.6e eps_pred %.6f", iteration, value, eps)
            adam_step(model, optimizer, train_cfg)
            iteration += 1
    return model, history


def train(ds, ansatz_cfg, loss_cfg, train_cfg, scheme):
    """Trains the ansatz on a dataset.

    In interval mode one instance is trained per index of
    ``train_cfg.interval_sweep`` and the one with the lowest final full-batch
    loss is returned.

    Returns:
        tuple[AnsatzModel, TrainHistory]: Trained model and its history.

    Raises:
        DivergenceError: If training blows up; carries the last finite state.
    """

    if not train_cfg.interval_sweep:
        return _train_single(ds, ansatz_cfg, loss_cfg, train_cfg, scheme)

    best = None
    for interval in train_cfg.interval_sweep:
        model, history = _train_single(ds, with_interval(ansatz_cfg, interval), loss_cfg, train_cfg, scheme)
        with torch.no_grad():
            final = float(loss_total(ds, model, loss_cfg, scheme))
        logger.info("interval %d: final loss %.6e, eps_pred %.6g", interval, final, float(model.eps_pred().detach()))
        if best is None or final < best[0]:
            best = (final, model, history)
    return best[1], best[2]
