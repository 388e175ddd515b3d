import numpy as np

from rationale.encoder import EncoderConfig, encoder_param_shapes
from rationale.head import HeadConfig, SoftAttentionParams
from rationale.tensor import Tensor


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-6)


def assert_grad_close(got, fd, tol=1e-4, floor=1e-6):
    got = np.zeros_like(fd) if got is None else got
    mask = np.maximum(np.abs(got), np.abs(fd)) > floor
    err = rel_err(got, fd)
    assert np.all(err[mask] < tol), f"max rel err {err[mask].max():.3e}"


def random_params(enc_cfg: EncoderConfig, head_cfg: HeadConfig, vocab_size: int, seed=0, scale=0.3):
    """Small random parameter set for gradient checks (not Glorot; any values do)."""
    rng = np.random.default_rng(seed)
    shapes = dict(encoder_param_shapes(enc_cfg, vocab_size))
    shapes.update(SoftAttentionParams.shapes(enc_cfg.h, head_cfg))
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith("_gain"):
            params[name] = Tensor(np.ones(shape))
        elif len(shape) < 2:
            params[name] = Tensor(0.1 * rng.standard_normal(shape))
        else:
            params[name] = Tensor(scale * rng.standard_normal(shape))
    return params
