"""Pseudo-label adaptation: choose the student or teacher latent per labeled
sample by comparing the PSNR of their finest-scale outputs against the
ground truth."""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .metrics import psnr


@dataclass(frozen=True)
class PamDecision:
    sample_index: int
    chose_teacher: bool
    psnr_student: float
    psnr_teacher: float


def adapt(gt, y_stu, y_pseudo, z_stu, z_pseudo, sample_index=0):
    """Return the teacher latent only if the teacher's output scores strictly
    higher PSNR than the student's; ties keep the student latent."""
    gt = np.asarray(gt)
    if np.shape(y_stu) != gt.shape or np.shape(y_pseudo) != gt.shape:
        raise ShapeError("PAM images must share one shape")
    p_stu = psnr(gt, y_stu)
    p_tea = psnr(gt, y_pseudo)
    chose_teacher = p_stu < p_tea
    chosen = np.asarray(z_pseudo if chose_teacher else z_stu, dtype=float)
    return chosen, PamDecision(sample_index, bool(chose_teacher), p_stu, p_tea)


def build_sequence(samples):
    """Stack the adapted latents of ``samples`` into an (N, d) matrix.

    ``samples`` is a sequence of (gt, y_stu, y_pseudo, z_stu, z_pseudo).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("PAM needs at least one labeled sample")
    rows, decisions = [], []
    for i, (gt, y_stu, y_pseudo, z_stu, z_pseudo) in enumerate(samples):
        z, decision = adapt(gt, y_stu, y_pseudo, z_stu, z_pseudo, sample_index=i)
        rows.append(z)
        decisions.append(decision)
    return np.vstack(rows), decisions


DECISION_HEADER = ("epoch", "sample_index", "chose_teacher", "psnr_student", "psnr_teacher")


def decision_row(epoch, decision):
    return (
        epoch,
        decision.sample_index,
        int(decision.chose_teacher),
        f"{decision.psnr_student:.6f}",
        f"{decision.psnr_teacher:.6f}",
    )
