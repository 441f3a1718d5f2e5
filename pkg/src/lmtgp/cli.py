"""Command-line entry point: ``train``, ``enhance``, ``eval`` and ``gpr-demo``.

Exit codes: 0 success, 1 usage, 2 configuration/validation, 3 runtime.
"""
import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import data, gp, mean_teacher, network
from .config import format_config, parse_config
from .errors import LmtgpError, ParseError, UnsupportedFormat, ValidationError
from .metrics import evaluate

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("lmtgp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _echo(cfg, out=None):
    text = format_config(cfg)
    print("# effective configuration")
    print(text, end="")
    if out is not None:
        with open(out, "w") as fh:
            fh.write(text)


def build_dataset(cfg):
    if cfg.manifest:
        return data.manifest_dataset(cfg.manifest, cfg.patch_size, cfg.patches_per_image, cfg.seed)
    return data.synthetic_dataset(cfg.synthetic_labeled, cfg.synthetic_unlabeled,
                                  cfg.patch_size, cfg.synthetic_image_size, cfg.seed)


def cmd_train(args):
    cfg = parse_config(args.config)
    os.makedirs(cfg.out_dir, exist_ok=True)
    _echo(cfg, os.path.join(cfg.out_dir, "config.cfg"))
    dataset = build_dataset(cfg)
    config = cfg.train_config()

    def progress(epoch, summary):
        print(f"epoch {epoch} total {summary.total:.6f} l1 {summary.l1:.6f} "
              f"gpr {summary.gpr:.6f}", flush=True)

    state, _ = mean_teacher.train(dataset, config, cfg.epochs, out_dir=cfg.out_dir,
                                  on_epoch=progress)
    print(f"labeled PSNR: input {mean_teacher.input_psnr(dataset):.3f} dB, "
          f"student {mean_teacher.labeled_psnr(state.student, dataset):.3f} dB")
    return EXIT_OK


def _student_weights(path):
    if os.path.basename(path) == "latest" or os.path.isdir(path):
        folder = path if os.path.isdir(path) else os.path.dirname(path)
        with open(os.path.join(folder, "latest")) as fh:
            path = os.path.join(folder, fh.read().strip())
    entries = network.load_checkpoint(path)
    weights = mean_teacher.split_checkpoint(entries, "student/")
    return weights or entries


def enhance_image(weights, img):
    padded, dims = data.pad_to_multiple(img, 32)
    out = network.forward(weights, padded)
    return data.crop_back(out.scales[0], dims, 32)


def cmd_enhance(args):
    weights = _student_weights(args.checkpoint)
    print(f"# enhance checkpoint={args.checkpoint} in={args.in_dir} out={args.out_dir}")
    os.makedirs(args.out_dir, exist_ok=True)
    names = sorted(os.listdir(args.in_dir))
    files = [n for n in names if os.path.isfile(os.path.join(args.in_dir, n))]
    if not files:
        log.warning("no input images in %s", args.in_dir)
        return EXIT_OK
    done = 0
    for name in files:
        src = os.path.join(args.in_dir, name)
        try:
            img = data.load_image(src)
        except (UnsupportedFormat, LmtgpError) as exc:
            log.warning("skipping %s: %s", src, exc)
            continue
        data.save_image(enhance_image(weights, img), os.path.join(args.out_dir, name))
        done += 1
    print(f"enhanced {done} of {len(files)} files")
    return EXIT_OK if done else EXIT_RUNTIME


def read_pairs(path):
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "pair":
                parts = parts[1:]
            if len(parts) != 2:
                raise ParseError("expected '<enhanced> <ground-truth>'", lineno)
            pairs.append(tuple(os.path.join(base, p) for p in parts))
    return pairs


def cmd_eval(args):
    print(f"# eval manifest={args.manifest} out={args.out}")
    pairs = read_pairs(args.manifest)
    for paths in pairs:
        for p in paths:
            if not os.path.isfile(p):
                raise FileNotFoundError(f"missing file: {p}")
    rows = []
    for enhanced, gt in pairs:
        report = evaluate(data.load_image(gt), data.load_image(enhanced))
        rows.append((os.path.basename(enhanced), report.psnr, report.ssim))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("filename", "psnr", "ssim"))
        for name, p, s in rows:
            writer.writerow((name, f"{p:.6f}", f"{s:.6f}"))
        if rows:
            writer.writerow(("mean", f"{np.mean([r[1] for r in rows]):.6f}",
                             f"{np.mean([r[2] for r in rows]):.6f}"))
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def dense_posterior(basis, noise, z):
    """Reference posterior using an explicit matrix inverse."""
    k = gp.kernel_matrix(z[None], basis)[0]
    inv = np.linalg.inv(gp.kernel_matrix(basis, basis) + noise * np.eye(len(basis)))
    return k @ inv @ basis, 1.0 - k @ inv @ k + noise


def gpr_demo(cfg, out=None):
    """Run the GP pipeline on seeded random latents; return the max oracle residual."""
    out = out or sys.stdout
    rng = np.random.default_rng(cfg.seed)
    d = cfg.latent_dim
    scale = 1.0 / np.sqrt(d)
    candidates = rng.normal(0.0, scale, size=(cfg.gpr_demo_candidates, d))
    queries = rng.normal(0.0, scale, size=(cfg.gpr_demo_queries, d))
    pseudo = queries + rng.normal(0.0, 0.1 * scale, size=queries.shape)
    model = gp.select_basis(candidates, cfg.gp_config())
    print(f"basis indices: {' '.join(str(i) for i in model.indices)}", file=out)
    worst = 0.0
    for m, (z, zp) in enumerate(zip(queries, pseudo)):
        post = gp.posterior(model, z)
        ref_mean, ref_var = dense_posterior(model.basis, model.noise_variance, z)
        res_mean = float(np.max(np.abs(post.mean - ref_mean)))
        res_var = abs(post.variance - ref_var)
        worst = max(worst, res_mean, res_var)
        head = " ".join(f"{v:+.5f}" for v in post.mean[:4])
        print(f"query {m}: variance {post.variance:.8f} mean[:4] {head} "
              f"full_loss {gp.gpr_loss_full(post, zp):.6f} "
              f"variant_loss {gp.gpr_loss_variant(post, zp):.6f} "
              f"oracle_residual mean {res_mean:.3e} variance {res_var:.3e}", file=out)
    print(f"max oracle residual: {worst:.3e}", file=out)
    return worst


def cmd_gpr_demo(args):
    cfg = parse_config(args.config)
    _echo(cfg)
    worst = gpr_demo(cfg)
    return EXIT_OK if worst < 1e-8 else EXIT_RUNTIME


def build_parser():
    parser = _Parser(prog="lmtgp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train student/teacher networks")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a directory of images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM for enhanced/ground-truth pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gpr-demo", help="GP posterior and loss report on random latents")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gpr_demo)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (LmtgpError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
