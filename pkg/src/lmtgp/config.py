"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Unknown or repeated keys are
parse errors; out-of-range values raise :class:`ValidationError` naming the
key.  Omitted keys keep the defaults below.
"""
import os
from dataclasses import dataclass, fields, replace

from . import gp, losses, mean_teacher
from .errors import ParseError, ValidationError

SEED_ENV = "LMTGP_SEED"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data
    manifest: str = ""
    synthetic_labeled: int = 16
    synthetic_unlabeled: int = 16
    synthetic_image_size: int = 288
    patch_size: int = 256
    patches_per_image: int = 1
    # network / GP
    latent_dim: int = 64
    basis_size: int = 16
    noise_variance: float = 0.01
    use_full_gpr_loss: bool = False
    identity_perceptual: bool = False
    # losses
    zeta1: float = 1.0
    zeta2: float = 0.8
    zeta3: float = 0.6
    zeta4: float = 0.4
    lambda1: float = 0.4
    lambda2: float = 0.6
    omega1_final: float = 0.2
    omega2_final: float = 0.01
    # optimisation
    epochs: int = 600
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eta: float = 0.99
    batch_labeled: int = 16
    batch_unlabeled: int = 16
    # output
    out_dir: str = "runs/lmtgp"
    checkpoint_interval: int = 50
    # gpr-demo
    gpr_demo_candidates: int = 32
    gpr_demo_queries: int = 4

    @property
    def zeta(self):
        return (self.zeta1, self.zeta2, self.zeta3, self.zeta4)

    def train_config(self):
        return mean_teacher.TrainConfig(
            loss_config=losses.LossConfig(
                zeta=self.zeta,
                lambda1=self.lambda1,
                lambda2=self.lambda2,
                omega1_final=self.omega1_final,
                omega2_final=self.omega2_final,
                total_epochs=max(self.epochs, 1),
            ),
            gp_config=self.gp_config(),
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            ema_momentum=self.eta,
            latent_dim=self.latent_dim,
            batch_labeled=self.batch_labeled,
            batch_unlabeled=self.batch_unlabeled,
            seed=self.seed,
            checkpoint_interval=self.checkpoint_interval,
            identity_perceptual=self.identity_perceptual,
        )

    def gp_config(self):
        return gp.GpConfig(self.basis_size, self.noise_variance, self.use_full_gpr_loss)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, text, lineno):
    kind = FIELD_TYPES[key]
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ParseError(f"{key}: expected a boolean, got {text!r}", lineno)
    if kind in (int, "int"):
        try:
            return int(text)
        except ValueError:
            raise ParseError(f"{key}: expected an integer, got {text!r}", lineno) from None
    if kind in (float, "float"):
        try:
            return float(text)
        except ValueError:
            raise ParseError(f"{key}: expected a number, got {text!r}", lineno) from None
    return text


def _require(cond, key, message):
    if not cond:
        raise ValidationError(key, message)


def validate(cfg):
    """Re-check the range constraints of every owning module."""
    for key in ("synthetic_labeled", "synthetic_unlabeled", "patches_per_image", "latent_dim",
                "basis_size", "batch_labeled", "batch_unlabeled", "gpr_demo_candidates",
                "gpr_demo_queries"):
        _require(getattr(cfg, key) >= 1, key, "must be >= 1")
    _require(cfg.patch_size >= 8 and cfg.patch_size % 8 == 0, "patch_size",
             "must be a positive multiple of 8")
    _require(cfg.synthetic_image_size >= cfg.patch_size, "synthetic_image_size",
             "must be >= patch_size")
    _require(cfg.noise_variance > 0, "noise_variance", "must be > 0")
    for key in ("zeta1", "zeta2", "zeta3", "zeta4", "lambda1", "lambda2",
                "omega1_final", "omega2_final"):
        _require(getattr(cfg, key) >= 0, key, "must be >= 0")
    _require(cfg.epochs >= 0, "epochs", "must be >= 0")
    _require(cfg.lr >= 0, "lr", "must be >= 0")
    _require(0 <= cfg.beta1 < 1, "beta1", "must lie in [0, 1)")
    _require(0 <= cfg.beta2 < 1, "beta2", "must lie in [0, 1)")
    _require(cfg.eps > 0, "eps", "must be > 0")
    _require(0 < cfg.eta < 1, "eta", "must lie in (0, 1)")
    _require(cfg.batch_labeled >= cfg.basis_size, "batch_labeled",
             f"must be >= basis_size ({cfg.basis_size})")
    _require(cfg.checkpoint_interval >= 0, "checkpoint_interval", "must be >= 0")
    if cfg.manifest:
        _require(os.path.isfile(cfg.manifest), "manifest", f"file not found: {cfg.manifest}")
    return cfg


def parse_config_text(text, env=None):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", lineno)
        values[key] = _convert(key, value, lineno)
    cfg = RunConfig(**values)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg = replace(cfg, seed=int(env[SEED_ENV]))
        except ValueError:
            raise ValidationError(SEED_ENV, f"expected an integer, got {env[SEED_ENV]!r}") from None
    return validate(cfg)


def parse_config(path, env=None):
    with open(path) as fh:
        return parse_config_text(fh.read(), env)


def format_config(cfg):
    """Render ``cfg`` in the same syntax :func:`parse_config_text` reads."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
