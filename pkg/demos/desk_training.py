"""Short semi-supervised training run on synthetic pairs, then the PSNR it reached.

Run: python3 demos/desk_training.py [epochs]
About 0.2 s per epoch on one core with the settings below.
"""
import sys
from dataclasses import replace

from lmtgp import config, data, mean_teacher as mt

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 40
cfg = replace(config.parse_config("configs/desk.cfg", env={}), epochs=epochs)
dataset = data.synthetic_dataset(cfg.synthetic_labeled, cfg.synthetic_unlabeled, cfg.patch_size,
                                 cfg.synthetic_image_size, cfg.seed)


def progress(epoch, summary):
    if epoch == 1 or epoch % 10 == 0:
        print(f"epoch {epoch:4d}  total {summary.total:.4f}  gpr {summary.gpr:.5f}")


state, report = mt.train(dataset, cfg.train_config(), epochs, on_epoch=progress)
teacher_share = sum(d.chose_teacher for _, d in report.decisions) / max(len(report.decisions), 1)
print(f"input PSNR {mt.input_psnr(dataset):.2f} dB")
print(f"student PSNR {mt.labeled_psnr(state.student, dataset):.2f} dB, "
      f"teacher {mt.labeled_psnr(state.teacher, dataset):.2f} dB")
print(f"PAM picked the teacher latent for {teacher_share:.1%} of labeled samples")
