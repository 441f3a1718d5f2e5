"""Latent mean-teacher training loop.

One training step, in order:

1. teacher forward on the labeled and unlabeled inputs (no gradients);
2. student forward on the same inputs;
3. PAM picks student or teacher latents for each labeled sample;
4. basis selection over those latents builds the GP model;
5. GPR variant loss between each unlabeled teacher latent and the GP
   posterior mean at the matching student latent, averaged;
6. labeled losses against the bilinear ground-truth pyramid;
7. unlabeled consistency loss against the teacher outputs;
8. total loss backpropagated through the student only;
9. Adam update of the student.

The teacher is refreshed by EMA once per epoch.
"""
import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import gp, losses, network, pam
from .data import gt_pyramid
from .errors import NonFiniteLoss, ShapeError
from .metrics import psnr

log = logging.getLogger(__name__)

STAGES = (
    "teacher_forward",
    "student_forward",
    "pam",
    "basis_selection",
    "gpr_loss",
    "labeled_loss",
    "unlabeled_loss",
    "total_backward",
    "adam_step",
)


@dataclass(frozen=True)
class TrainConfig:
    loss_config: losses.LossConfig = field(default_factory=losses.LossConfig)
    gp_config: gp.GpConfig = field(default_factory=gp.GpConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ema_momentum: float = 0.99
    latent_dim: int = 64
    batch_labeled: int = 16
    batch_unlabeled: int = 16
    seed: int = 0
    checkpoint_interval: int = 0
    identity_perceptual: bool = False

    def __post_init__(self):
        if not 0.0 < self.ema_momentum < 1.0:
            raise ValueError("ema_momentum must lie in (0, 1)")
        if self.batch_labeled < self.gp_config.basis_size:
            raise ValueError("batch_labeled must be >= basis_size")


@dataclass
class TrainerState:
    student: dict
    teacher: dict
    adam: network.AdamState
    epoch: int = 0
    ema_momentum: float = 0.99
    seed: int = 0

    @classmethod
    def initial(cls, config):
        student = network.init_weights(config.seed, config.latent_dim)
        return cls(student, network.copy_weights(student), network.AdamState.zeros(student),
                   0, config.ema_momentum, config.seed)


@dataclass
class BatchPlan:
    labeled: list  # (x_l, y_l) pairs
    unlabeled: list  # x_u images
    labeled_ids: tuple = ()

    def validate(self):
        if not self.labeled or not self.unlabeled:
            raise ValueError("each batch needs labeled and unlabeled samples")
        shape = np.shape(self.labeled[0][0])
        for x, y in self.labeled:
            if np.shape(x) != shape or np.shape(y) != shape:
                raise ShapeError("batch images must share one shape")
        for x in self.unlabeled:
            if np.shape(x) != shape:
                raise ShapeError("batch images must share one shape")
        # identity, not content: heavy degradation can make distinct samples equal
        lab = {id(x) for x, _ in self.labeled}
        if any(id(x) in lab for x in self.unlabeled):
            raise ValueError("labeled and unlabeled sets must be disjoint")


def ema_update(state):
    """teacher <- eta * teacher + (1 - eta) * student, elementwise."""
    network.check_aligned(state.teacher, state.student)
    eta = state.ema_momentum
    teacher = {name: eta * t + (1.0 - eta) * state.student[name] for name, t in state.teacher.items()}
    return replace(state, teacher=teacher)


def _split(out, n):
    first = network.NetworkOutput([s[:n] for s in out.scales], out.latent[:n])
    second = network.NetworkOutput([s[n:] for s in out.scales], out.latent[n:])
    return first, second


def _extractor(config):
    return losses.FeatureExtractor(identity=config.identity_perceptual)


def loss_and_grads(state, batch, config, epoch=None, trace=None, extractor=None):
    """Stages 1-8 of a step: (LossBreakdown, student gradients, decisions).

    ``epoch`` selects the ramp weights (defaults to ``state.epoch + 1``).
    Stage names are appended to ``trace`` if given.
    """
    batch.validate()
    mark = trace.append if trace is not None else (lambda _: None)
    epoch = state.epoch + 1 if epoch is None else epoch
    extractor = extractor or _extractor(config)
    n_lab = len(batch.labeled)
    x_lab = np.stack([x for x, _ in batch.labeled])
    y_lab = np.stack([y for _, y in batch.labeled])
    x_all = np.concatenate([x_lab, np.stack(batch.unlabeled)])

    teacher_out = network.forward(state.teacher, x_all)
    tea_l, tea_u = _split(teacher_out, n_lab)
    mark("teacher_forward")

    student_out, record = network.trace(state.student, x_all)
    stu_l, stu_u = _split(student_out, n_lab)
    mark("student_forward")

    f_l, decisions = pam.build_sequence(
        (y_lab[i], stu_l.scales[0][i], tea_l.scales[0][i], stu_l.latent[i], tea_l.latent[i])
        for i in range(n_lab)
    )
    mark("pam")

    model = gp.select_basis(f_l, config.gp_config)
    mark("basis_selection")

    n_unl = len(batch.unlabeled)
    gpr_value = 0.0
    d_latent_u = np.zeros_like(stu_u.latent)
    d_latent_l = np.zeros_like(stu_l.latent)
    for m in range(n_unl):
        value, d_z, d_basis = gp.gpr_loss_and_grads(
            model, stu_u.latent[m], tea_u.latent[m], full=config.gp_config.use_full_loss
        )
        gpr_value += value / n_unl
        d_latent_u[m] = d_z / n_unl
        for row, idx in enumerate(model.indices):
            if not decisions[idx].chose_teacher:
                d_latent_l[idx] += d_basis[row] / n_unl
    mark("gpr_loss")

    gt = gt_pyramid(y_lab)
    l1, g_l1 = losses.multiscale_l1_and_grad(gt, stu_l.scales, config.loss_config.zeta)
    ssim_l, g_ssim = losses.negative_ssim_loss_and_grad(gt, stu_l.scales, config.loss_config.zeta)
    perc, g_perc = losses.perceptual_loss_and_grad(gt, stu_l.scales, config.loss_config.zeta, extractor)
    mark("labeled_loss")

    unl, g_unl = losses.unlabeled_loss_and_grad(stu_u.scales, tea_u.scales, config.loss_config.zeta)
    mark("unlabeled_loss")

    breakdown = losses.total_loss(l1, ssim_l, perc, unl, gpr_value, epoch, config.loss_config)
    lam1, lam2 = config.loss_config.lambda1, config.loss_config.lambda2
    w1, w2 = breakdown.omega1, breakdown.omega2
    scale_grads = [
        np.concatenate([a + lam1 * b + lam2 * c, w1 * u])
        for a, b, c, u in zip(g_l1, g_ssim, g_perc, g_unl)
    ]
    latent_grad = w2 * np.concatenate([d_latent_l, d_latent_u])
    grads = network.backprop_output(record, network.NetworkOutput(scale_grads, latent_grad))
    grads = {k: (g if g is not None else np.zeros_like(state.student[k])) for k, g in grads.items()}
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFiniteLoss("non-finite gradient")
    mark("total_backward")
    return breakdown, grads, decisions


def train_step(state, batch, config, epoch=None, trace=None, extractor=None):
    """Run one optimisation step; returns (new_state, LossBreakdown, decisions).

    ``state`` is not modified.
    """
    breakdown, grads, decisions = loss_and_grads(state, batch, config, epoch, trace, extractor)
    mark = trace.append if trace is not None else (lambda _: None)
    student, adam = network.adam_step(
        state.student, grads, state.adam, config.lr, config.beta1, config.beta2, config.eps
    )
    mark("adam_step")
    return replace(state, student=student, adam=adam), breakdown, decisions


def plan_batches(dataset, config, epoch):
    """Shuffle with a per-epoch seed and cut into labeled/unlabeled batches.

    Labeled samples beyond the last full batch are dropped for the epoch;
    unlabeled samples are drawn cyclically so every step gets a full batch.
    """
    rng = np.random.default_rng([config.seed, epoch])
    lab_order = rng.permutation(len(dataset.labeled))
    unl_order = rng.permutation(len(dataset.unlabeled))
    steps = len(dataset.labeled) // config.batch_labeled
    plans = []
    for s in range(steps):
        ids = lab_order[s * config.batch_labeled:(s + 1) * config.batch_labeled]
        u_ids = [unl_order[(s * config.batch_unlabeled + k) % len(unl_order)]
                 for k in range(config.batch_unlabeled)]
        plans.append(BatchPlan(
            [dataset.labeled[i] for i in ids],
            [dataset.unlabeled[i] for i in u_ids],
            tuple(int(i) for i in ids),
        ))
    return plans


def checkpoint_entries(state):
    entries = {f"student/{k}": v for k, v in state.student.items()}
    entries.update({f"teacher/{k}": v for k, v in state.teacher.items()})
    return entries


def split_checkpoint(entries, prefix="student/"):
    return {k[len(prefix):]: v for k, v in entries.items() if k.startswith(prefix)}


def write_checkpoint(state, out_dir):
    name = f"ckpt_epoch{state.epoch:04d}.lmtgp"
    network.save_checkpoint(os.path.join(out_dir, name), checkpoint_entries(state))
    pointer = os.path.join(out_dir, "latest")
    with open(pointer + ".tmp", "w") as fh:
        fh.write(name + "\n")
    os.replace(pointer + ".tmp", pointer)
    return name


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)  # (epoch, LossBreakdown)
    decisions: list = field(default_factory=list)  # (epoch, PamDecision with dataset index)


def _mean_breakdown(items):
    if len(items) == 1:
        return items[0]
    keys = vars(items[0]).keys()
    return losses.LossBreakdown(**{k: float(np.mean([getattr(b, k) for b in items])) for k in keys})


def train(dataset, config, epochs, state=None, out_dir=None, on_epoch=None):
    """Train for ``epochs`` epochs; returns (final state, TrainReport).

    With ``out_dir`` set, per-epoch CSV rows are written to ``report.csv``
    and ``pam.csv`` and checkpoints every ``config.checkpoint_interval``
    epochs (plus the final one).
    """
    if not dataset.labeled or not dataset.unlabeled:
        raise ValueError("dataset needs labeled and unlabeled samples")
    if len(dataset.labeled) < config.batch_labeled:
        raise ValueError(
            f"{len(dataset.labeled)} labeled samples < batch_labeled={config.batch_labeled}"
        )
    state = state or TrainerState.initial(config)
    extractor = _extractor(config)
    report = TrainReport()
    writers = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        loss_fh = open(os.path.join(out_dir, "report.csv"), "w", newline="")
        pam_fh = open(os.path.join(out_dir, "pam.csv"), "w", newline="")
        writers = (csv.writer(loss_fh), csv.writer(pam_fh))
        writers[0].writerow(losses.LossBreakdown.CSV_HEADER)
        writers[1].writerow(pam.DECISION_HEADER)
    try:
        for _ in range(epochs):
            epoch = state.epoch + 1
            breakdowns, epoch_decisions = [], []
            for plan in plan_batches(dataset, config, epoch):
                state, bd, decisions = train_step(state, plan, config, epoch, extractor=extractor)
                breakdowns.append(bd)
                epoch_decisions.extend(
                    replace(d, sample_index=plan.labeled_ids[d.sample_index]) for d in decisions
                )
            state = replace(ema_update(state), epoch=epoch)
            summary = _mean_breakdown(breakdowns)
            report.losses.append((epoch, summary))
            report.decisions.extend((epoch, d) for d in epoch_decisions)
            log.info("epoch %d total %.6f", epoch, summary.total)
            if writers:
                writers[0].writerow(summary.csv_row(epoch))
                for d in epoch_decisions:
                    writers[1].writerow(pam.decision_row(epoch, d))
                loss_fh.flush()
                pam_fh.flush()
                interval = config.checkpoint_interval
                if interval and epoch % interval == 0:
                    write_checkpoint(state, out_dir)
            if on_epoch is not None:
                on_epoch(epoch, summary)
        if out_dir is not None:
            write_checkpoint(state, out_dir)
    finally:
        if writers:
            loss_fh.close()
            pam_fh.close()
    return state, report


def labeled_psnr(weights, dataset):
    """Mean PSNR of the finest student output over the labeled set."""
    x = np.stack([x for x, _ in dataset.labeled])
    out = network.forward(weights, x)
    return float(np.mean([psnr(y, out.scales[0][i]) for i, (_, y) in enumerate(dataset.labeled)]))


def input_psnr(dataset):
    return float(np.mean([psnr(y, x) for x, y in dataset.labeled]))
