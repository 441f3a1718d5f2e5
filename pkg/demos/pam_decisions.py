"""Pseudo-label adaptation: which latent each labeled sample contributes.

Run: python3 demos/pam_decisions.py
"""
import numpy as np

from lmtgp import pam

rng = np.random.default_rng(1)
gt = rng.random((16, 16, 3))
samples = []
for noise_stu, noise_tea in ((0.05, 0.10), (0.10, 0.05), (0.07, 0.07)):
    y_stu = gt + noise_stu
    y_tea = gt + noise_tea
    samples.append((gt, y_stu, y_tea, np.full(4, 1.0), np.full(4, 2.0)))

rows, decisions = pam.build_sequence(samples)
for d, row in zip(decisions, rows):
    source = "teacher" if d.chose_teacher else "student"
    print(f"sample {d.sample_index}: PSNR student {d.psnr_student:.2f} dB, "
          f"teacher {d.psnr_teacher:.2f} dB -> {source} latent {row[0]:.0f}")
# the third sample is a tie and keeps the student latent
