"""Multiscale reconstruction, SSIM, perceptual and consistency losses, the
ramp-up schedule for the unlabeled weights, and total-loss assembly.

Every ``*_and_grad`` function returns ``(value, grads)`` where ``grads`` is a
list with the gradient w.r.t. each predicted scale.  Norms are per-element
means so the weights behave the same for any patch size.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .errors import NonFiniteLoss, ShapeError
from .metrics import SSIM_WINDOW, ssim_and_grad

NUM_SCALES = 4
DEFAULT_ZETA = (1.0, 0.8, 0.6, 0.4)
RAMP_RATE = 5.0


@dataclass(frozen=True)
class LossConfig:
    zeta: tuple = DEFAULT_ZETA
    lambda1: float = 0.4
    lambda2: float = 0.6
    omega1_final: float = 0.2
    omega2_final: float = 0.01
    total_epochs: int = 600

    def __post_init__(self):
        if len(self.zeta) != NUM_SCALES:
            raise ValueError(f"need {NUM_SCALES} scale weights")
        weights = (*self.zeta, self.lambda1, self.lambda2, self.omega1_final, self.omega2_final)
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be non-negative")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


@dataclass
class LossBreakdown:
    l1: float = 0.0
    ssim_loss: float = 0.0
    perceptual: float = 0.0
    labeled_total: float = 0.0
    unlabeled: float = 0.0
    gpr: float = 0.0
    omega1: float = 0.0
    omega2: float = 0.0
    total: float = 0.0

    CSV_HEADER = ("epoch", "l1", "ssim", "perceptual", "unlabeled", "gpr", "omega1", "omega2", "total")

    def csv_row(self, epoch):
        vals = (self.l1, self.ssim_loss, self.perceptual, self.unlabeled, self.gpr,
                self.omega1, self.omega2, self.total)
        return (epoch, *(f"{v:.10g}" for v in vals))


def _check_pyramids(a, b):
    if len(a) != NUM_SCALES or len(b) != NUM_SCALES:
        raise ShapeError(f"expected {NUM_SCALES} scales, got {len(a)} and {len(b)}")
    out = []
    for x, y in zip(a, b):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ShapeError(f"scale shapes differ: {x.shape} vs {y.shape}")
        out.append((x, y))
    return out


def multiscale_l1_and_grad(target, pred, zeta=DEFAULT_ZETA):
    total = 0.0
    grads = []
    for z, (t, p) in zip(zeta, _check_pyramids(target, pred)):
        diff = p - t
        total += z * float(np.mean(np.abs(diff)))
        grads.append(z * np.sign(diff) / diff.size)
    return total, grads


def multiscale_l1(target, pred, zeta=DEFAULT_ZETA):
    return multiscale_l1_and_grad(target, pred, zeta)[0]


def negative_ssim_loss_and_grad(target, pred, zeta=DEFAULT_ZETA):
    """``K - sum_j zeta_j * SSIM(target_j, pred_j)`` with K the scale count.

    Scales smaller than the SSIM window use a window equal to their
    smallest side.
    """
    total = float(NUM_SCALES)
    grads = []
    for z, (t, p) in zip(zeta, _check_pyramids(target, pred)):
        window = min(SSIM_WINDOW, t.shape[-3], t.shape[-2])
        value, g = ssim_and_grad(t, p, window)
        total -= z * value
        grads.append(-z * g)
    return total, grads


def negative_ssim_loss(target, pred, zeta=DEFAULT_ZETA):
    return negative_ssim_loss_and_grad(target, pred, zeta)[0]


class FeatureExtractor:
    """Frozen random-filter conv stack standing in for a pretrained network.

    Three 3x3 conv + leaky ReLU layers (3 -> 8 -> 16 -> 16 channels) with
    2x2 average pooling between layers whenever both spatial sides are even.
    The feature vector is all layer activations together.  ``identity=True``
    returns the pixels unchanged.
    """

    WIDTHS = (8, 16, 16)

    def __init__(self, seed=1234, identity=False):
        self.identity = identity
        self.weights = {}
        if identity:
            return
        rng = np.random.default_rng(seed)
        cin = 3
        for i, cout in enumerate(self.WIDTHS):
            limit = np.sqrt(6.0 / (9 * cin + 9 * cout))
            self.weights[f"f{i}.w"] = rng.uniform(-limit, limit, size=(3, 3, cin, cout))
            self.weights[f"f{i}.b"] = np.zeros(cout)
            cin = cout

    def _program(self, h, w):
        program, outputs = [], []
        src = "x"
        for i in range(len(self.WIDTHS)):
            if i > 0 and h % 2 == 0 and w % 2 == 0:
                program.append((f"p{i}", "pool", [src]))
                src = f"p{i}"
                h, w = h // 2, w // 2
            program.append((f"c{i}", "conv", [src, f"f{i}.w", f"f{i}.b"]))
            program.append((f"a{i}", "leaky", [f"c{i}"]))
            src = f"a{i}"
            outputs.append(src)
        return program, outputs

    def features(self, x):
        """List of feature arrays for an (N, H, W, 3) batch, plus the tape."""
        if self.identity:
            return [x], None
        program, outputs = self._program(x.shape[1], x.shape[2])
        values = dict(self.weights)
        values["x"] = x
        tape = autodiff.run(program, values)
        return [values[name] for name in outputs], (tape, outputs)

    def input_grad(self, record, feature_grads, x):
        if self.identity:
            return feature_grads[0]
        tape, outputs = record
        seeds = dict(zip(outputs, feature_grads))
        return autodiff.backprop(tape, seeds, wanted=["x"])["x"]


def _as_nhwc(x):
    return x if x.ndim == 4 else x.reshape((-1,) + x.shape[-3:])


def perceptual_loss_and_grad(target, pred, zeta=DEFAULT_ZETA, extractor=None):
    """Weighted mean squared feature distance, summed over scales."""
    extractor = extractor or FeatureExtractor()
    total = 0.0
    grads = []
    for z, (t, p) in zip(zeta, _check_pyramids(target, pred)):
        ft, _ = extractor.features(_as_nhwc(t))
        fp, record = extractor.features(_as_nhwc(p))
        count = sum(f.size for f in ft)
        sq = sum(float(np.sum((b - a) ** 2)) for a, b in zip(ft, fp))
        total += z * sq / count
        fgrads = [z * 2.0 * (b - a) / count for a, b in zip(ft, fp)]
        grads.append(extractor.input_grad(record, fgrads, _as_nhwc(p)).reshape(p.shape))
    return total, grads


def perceptual_loss(target, pred, zeta=DEFAULT_ZETA, extractor=None):
    return perceptual_loss_and_grad(target, pred, zeta, extractor)[0]


def unlabeled_loss_and_grad(student, pseudo, zeta=DEFAULT_ZETA):
    """Consistency L1 between student and teacher outputs.

    Gradients are returned for the student branch only; the teacher
    outputs are constants.
    """
    return multiscale_l1_and_grad(pseudo, student, zeta)


def unlabeled_loss(student, pseudo, zeta=DEFAULT_ZETA):
    return unlabeled_loss_and_grad(student, pseudo, zeta)[0]


def omega_schedule(epoch, config):
    """Ramp ``final * exp(-5 (1 - t/T)^2)``, reaching the final weights at t = T."""
    t = min(max(epoch, 0), config.total_epochs)
    ramp = math.exp(-RAMP_RATE * (1.0 - t / config.total_epochs) ** 2)
    return config.omega1_final * ramp, config.omega2_final * ramp


def total_loss(l1, ssim_loss, perceptual, unlabeled, gpr, epoch, config):
    components = (l1, ssim_loss, perceptual, unlabeled, gpr)
    if not all(math.isfinite(c) for c in components):
        raise NonFiniteLoss(f"non-finite loss component in {components}")
    omega1, omega2 = omega_schedule(epoch, config)
    labeled_total = l1 + config.lambda1 * ssim_loss + config.lambda2 * perceptual
    total = labeled_total + omega1 * unlabeled + omega2 * gpr
    if not math.isfinite(total):
        raise NonFiniteLoss("total loss is not finite")
    return LossBreakdown(l1, ssim_loss, perceptual, labeled_total, unlabeled, gpr,
                         omega1, omega2, total)
