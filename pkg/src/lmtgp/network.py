"""Toy encoder-decoder with a latent bottleneck and four output scales.

Encoder: three 3x3 conv stages (16/32/64 channels, leaky ReLU) separated by
2x2 average pooling, a final pool, then a 1x1 bottleneck conv to ``d``
channels.  The latent is the global average of the bottleneck.  The decoder
upsamples (nearest), concatenates the matching encoder stage, and emits one
sigmoid RGB head per scale (1, 1/2, 1/4, 1/8).

Weights are a plain ``dict`` of name -> ndarray in program order.
"""
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .errors import CorruptFile, ShapeError

NUM_SCALES = 4
ENCODER_WIDTHS = (16, 32, 64)
DECODER_WIDTHS = (32, 16, 16)
DEFAULT_LATENT_DIM = 64
CHECKPOINT_MAGIC = b"LMTGP001"


@dataclass
class NetworkOutput:
    scales: list  # finest first
    latent: np.ndarray


def weight_shapes(latent_dim=DEFAULT_LATENT_DIM):
    e1, e2, e3 = ENCODER_WIDTHS
    d3, d2, d1 = DECODER_WIDTHS
    d = latent_dim
    convs = [
        ("enc1", 3, 3, e1),
        ("enc2", 3, e1, e2),
        ("enc3", 3, e2, e3),
        ("bott", 1, e3, d),
        ("head4", 3, d, 3),
        ("dec3", 3, d + e3, d3),
        ("head3", 3, d3, 3),
        ("dec2", 3, d3 + e2, d2),
        ("head2", 3, d2, 3),
        ("dec1", 3, d2 + e1, d1),
        ("head1", 3, d1, 3),
    ]
    shapes = {}
    for name, k, cin, cout in convs:
        shapes[name + ".w"] = (k, k, cin, cout)
        shapes[name + ".b"] = (cout,)
    return shapes


def _conv(out, layer, src):
    return (out, "conv", [src, layer + ".w", layer + ".b"])


PROGRAM = [
    _conv("enc1_pre", "enc1", "x"),
    ("e1", "leaky", ["enc1_pre"]),
    ("p1", "pool", ["e1"]),
    _conv("enc2_pre", "enc2", "p1"),
    ("e2", "leaky", ["enc2_pre"]),
    ("p2", "pool", ["e2"]),
    _conv("enc3_pre", "enc3", "p2"),
    ("e3", "leaky", ["enc3_pre"]),
    ("p3", "pool", ["e3"]),
    _conv("bott_pre", "bott", "p3"),
    ("b", "leaky", ["bott_pre"]),
    ("latent", "gap", ["b"]),
    _conv("head4_pre", "head4", "b"),
    ("y4", "sigmoid", ["head4_pre"]),
    ("u3", "upsample", ["b"]),
    ("c3", "concat", ["u3", "e3"]),
    _conv("dec3_pre", "dec3", "c3"),
    ("d3", "leaky", ["dec3_pre"]),
    _conv("head3_pre", "head3", "d3"),
    ("y3", "sigmoid", ["head3_pre"]),
    ("u2", "upsample", ["d3"]),
    ("c2", "concat", ["u2", "e2"]),
    _conv("dec2_pre", "dec2", "c2"),
    ("d2", "leaky", ["dec2_pre"]),
    _conv("head2_pre", "head2", "d2"),
    ("y2", "sigmoid", ["head2_pre"]),
    ("u1", "upsample", ["d2"]),
    ("c1", "concat", ["u1", "e1"]),
    _conv("dec1_pre", "dec1", "c1"),
    ("d1", "leaky", ["dec1_pre"]),
    _conv("head1_pre", "head1", "d1"),
    ("y1", "sigmoid", ["head1_pre"]),
]
SCALE_NAMES = ("y1", "y2", "y3", "y4")


def init_weights(seed=0, latent_dim=DEFAULT_LATENT_DIM):
    """Glorot-uniform conv kernels, zero biases."""
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_shapes(latent_dim).items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape)
        else:
            k, _, cin, cout = shape
            limit = np.sqrt(6.0 / (k * k * cin + k * k * cout))
            weights[name] = rng.uniform(-limit, limit, size=shape)
    return weights


def zeros_like(weights):
    return {name: np.zeros_like(v) for name, v in weights.items()}


def copy_weights(weights):
    return {name: v.copy() for name, v in weights.items()}


def check_aligned(a, b):
    if list(a) != list(b) or any(a[k].shape != b[k].shape for k in a):
        raise ShapeError("weight sets are not structurally identical")


def _as_batch(image):
    x = np.asarray(image, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ShapeError(f"expected HxWx3 or NxHxWx3 input, got {x.shape}")
    h, w = x.shape[1:3]
    if h % 8 or w % 8 or h == 0 or w == 0:
        raise ShapeError(f"input height and width must be multiples of 8, got {h}x{w}")
    return x, single


def trace(weights, image):
    """Forward pass that also returns the tape needed by :func:`backprop_output`."""
    x, single = _as_batch(image)
    values = dict(weights)
    values["x"] = x
    tape = autodiff.run(PROGRAM, values)
    scales = [values[name] for name in SCALE_NAMES]
    latent = values["latent"]
    if single:
        scales = [s[0] for s in scales]
        latent = latent[0]
    return NetworkOutput(scales, latent), (tape, single, tuple(weights))


def forward(weights, image):
    return trace(weights, image)[0]


def backprop_output(record, upstream):
    """Parameter gradients given dL/d(output) as a NetworkOutput-like object.

    ``upstream.scales`` entries and ``upstream.latent`` may be None.
    """
    tape, single, names = record
    seeds = {}
    scale_grads = list(upstream.scales) + [None] * (NUM_SCALES - len(upstream.scales))
    for name, g in zip(SCALE_NAMES, scale_grads):
        if g is not None:
            seeds[name] = np.asarray(g, dtype=float)[None] if single else np.asarray(g, dtype=float)
    if upstream.latent is not None:
        g = np.asarray(upstream.latent, dtype=float)
        seeds["latent"] = g[None] if single else g
    grads = autodiff.backprop(tape, seeds, wanted=names) if seeds else {}
    return {name: grads.get(name) for name in names}


def backward(weights, image, upstream):
    """Exact gradients of the scalar loss whose output-gradients are ``upstream``."""
    out, record = trace(weights, image)
    if len(upstream.scales) != NUM_SCALES:
        raise ShapeError(f"expected {NUM_SCALES} scale gradients, got {len(upstream.scales)}")
    for s, g in zip(out.scales, upstream.scales):
        if g is not None and np.shape(g) != s.shape:
            raise ShapeError(f"upstream gradient shape {np.shape(g)} != output {s.shape}")
    if upstream.latent is not None and np.shape(upstream.latent) != out.latent.shape:
        raise ShapeError("upstream latent gradient shape mismatch")
    grads = backprop_output(record, upstream)
    return {name: (g if g is not None else np.zeros_like(weights[name])) for name, g in grads.items()}


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, weights):
        return cls(zeros_like(weights), zeros_like(weights), 0)

    def copy(self):
        return AdamState(copy_weights(self.m), copy_weights(self.v), self.step)


def adam_step(weights, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.  Returns new (weights, state); inputs untouched."""
    check_aligned(weights, grads)
    check_aligned(weights, state.m)
    step = state.step + 1
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        new_w[name] = w - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_w, AdamState(new_m, new_v, step)


# -- checkpoint I/O ----------------------------------------------------------

def encode_checkpoint(entries):
    """Serialize an ordered name -> array mapping (values stored as float32)."""
    payload = bytearray()
    for name, arr in entries.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        payload += struct.pack("<I", len(raw)) + raw
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    payload = bytes(payload)
    return CHECKPOINT_MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def decode_checkpoint(blob):
    if len(blob) < len(CHECKPOINT_MAGIC) + 4 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CorruptFile("not an LMTGP001 checkpoint")
    payload = blob[len(CHECKPOINT_MAGIC):-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise CorruptFile("checkpoint CRC mismatch")
    entries = {}
    pos = 0
    try:
        while pos < len(payload):
            (nlen,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            name = payload[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(payload):
                raise CorruptFile(f"entry {name!r} truncated")
            values = np.frombuffer(payload, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            entries[name] = values.astype(float).reshape(dims)
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptFile(f"malformed checkpoint: {exc}") from None
    return entries


def save_checkpoint(path, entries):
    """Write atomically so an interrupted run never leaves a torn file."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(entries))
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
