"""Segmentation-training loss numerics on small dense tensors.

Probability maps are (C, H, W) with per-pixel channel sums of 1; activation
maps are pre-softmax (C, H', W'). Everything is plain numpy with analytic
gradients that a finite-difference check can verify, so an external trainer
can trust the arithmetic without this package running any network.

Loss applicability in the intended training scheme: the consistency term is
computed for real images only (their masks are unknown), the classification
term for both real and synthesized images, and the Dice term for synthesized
images (plus real ones once pseudo-masks exist).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DICE_EPS",
    "one_hot",
    "validate_probability_map",
    "dice_loss",
    "dice_loss_grad",
    "consistency_reg",
    "consistency_reg_grad",
    "classification_logits",
    "multilabel_soft_margin",
    "multilabel_soft_margin_grad",
    "total_loss",
    "loss_gradients",
    "gradient_check",
    "run_gradient_checks",
]

DICE_EPS = 1e-6


def validate_probability_map(prob: np.ndarray, tol: float = 1e-6) -> None:
    if prob.ndim != 3:
        raise ValueError(f"probability map must be (C,H,W), got {prob.shape}")
    if np.any(prob < 0):
        raise ValueError("probability map has negative entries")
    sums = prob.sum(axis=0)
    if np.abs(sums - 1.0).max() > tol:
        raise ValueError(f"channel sums deviate from 1 by {np.abs(sums - 1.0).max():.3g}")


def one_hot(mask: np.ndarray, num_classes: int) -> np.ndarray:
    """(H, W) class indices -> (C, H, W) float one-hot planes."""
    if mask.min() < 0 or mask.max() >= num_classes:
        raise ValueError(f"mask values outside [0, {num_classes})")
    planes = np.zeros((num_classes,) + mask.shape, dtype=np.float64)
    for c in range(num_classes):
        planes[c] = mask == c
    return planes


def dice_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Soft Dice averaged over all classes.

    Per class: 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps). The eps
    smoothing keeps empty classes defined; the per-class mean runs over every
    class, present or not.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 3:
        raise ValueError(f"pred/target shape mismatch: {pred.shape} vs {target.shape}")
    inter = (pred * target).sum(axis=(1, 2))
    totals = pred.sum(axis=(1, 2)) + target.sum(axis=(1, 2))
    per_class = 1.0 - (2.0 * inter + DICE_EPS) / (totals + DICE_EPS)
    return float(per_class.mean())


def dice_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d(dice_loss)/d(pred), same shape as pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 3:
        raise ValueError(f"pred/target shape mismatch: {pred.shape} vs {target.shape}")
    C = pred.shape[0]
    inter = (pred * target).sum(axis=(1, 2))
    totals = pred.sum(axis=(1, 2)) + target.sum(axis=(1, 2))
    num = 2.0 * inter + DICE_EPS
    den = totals + DICE_EPS
    # d/dp of -(num/den): quotient rule; sum over classes then /C for the mean
    grad = -(2.0 * target * den[:, None, None] - num[:, None, None]) / (den ** 2)[:, None, None]
    return grad / C


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def block_average(prob: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Downsample (C, H, W) by averaging non-overlapping blocks."""
    c, h, w = prob.shape
    if h % out_h or w % out_w:
        raise ValueError(f"dims {h}x{w} not multiples of target {out_h}x{out_w}")
    bh, bw = h // out_h, w // out_w
    return prob.reshape(c, out_h, bh, out_w, bw).mean(axis=(2, 4))


def consistency_reg(fc: np.ndarray, prob: np.ndarray, reduction: str = "mean") -> float:
    """L1 agreement between softmaxed activations and the block-averaged
    probability map; `reduction` picks mean (default) or sum of |diff|."""
    fc = np.asarray(fc, dtype=np.float64)
    prob = np.asarray(prob, dtype=np.float64)
    if fc.ndim != 3 or prob.ndim != 3 or fc.shape[0] != prob.shape[0]:
        raise ValueError(f"channel mismatch: fc {fc.shape} vs prob {prob.shape}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = softmax_channels(fc) - block_average(prob, fc.shape[1], fc.shape[2])
    return float(np.abs(diff).mean() if reduction == "mean" else np.abs(diff).sum())


def consistency_reg_grad(fc: np.ndarray, prob: np.ndarray, reduction: str = "mean") -> np.ndarray:
    """d(consistency_reg)/d(fc) through the channel softmax."""
    fc = np.asarray(fc, dtype=np.float64)
    prob = np.asarray(prob, dtype=np.float64)
    sig = softmax_channels(fc)
    diff = sig - block_average(prob, fc.shape[1], fc.shape[2])
    sign = np.sign(diff)
    scale = 1.0 / diff.size if reduction == "mean" else 1.0
    # softmax Jacobian applied to the sign field, per pixel
    inner = (sign * sig).sum(axis=0, keepdims=True)
    return scale * sig * (sign - inner)


def classification_logits(fc: np.ndarray) -> np.ndarray:
    """Spatial average pooling of the activation map: (C, H', W') -> (C,)."""
    fc = np.asarray(fc, dtype=np.float64)
    if fc.ndim != 3:
        raise ValueError(f"activation map must be (C,H,W), got {fc.shape}")
    return fc.mean(axis=(1, 2))


def multilabel_soft_margin(z: np.ndarray, y: np.ndarray) -> float:
    """Multi-label soft margin loss, computed in log-sum-exp form.

    -(1/C) * sum_i [ y_i*log(sigmoid(z_i)) + (1-y_i)*log(sigmoid(-z_i)) ].
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape or z.ndim != 1:
        raise ValueError(f"z/y shape mismatch: {z.shape} vs {y.shape}")
    # -log(sigmoid(z)) == logaddexp(0, -z), stable for large |z|
    terms = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    return float(terms.mean())


def multilabel_soft_margin_grad(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sig = 1.0 / (1.0 + np.exp(-z))
    return (sig - y) / z.size


def total_loss(
    l_seg: float,
    l_reg: float,
    l_cls: float,
    w_cls: float = 1.0,
    w_seg: float = 1.0,
    w_reg: float = 1.0,
) -> float:
    """Weighted sum of the three sub-losses (all weights default to 1)."""
    return w_seg * l_seg + w_reg * l_reg + w_cls * l_cls


_GRAD_TABLE = {
    "dice": (dice_loss, dice_loss_grad),
    "consistency": (consistency_reg, consistency_reg_grad),
    "soft_margin": (multilabel_soft_margin, multilabel_soft_margin_grad),
}


def loss_gradients(name: str, *inputs) -> np.ndarray:
    """Analytic gradient of the named loss w.r.t. its continuous input."""
    try:
        _, grad_fn = _GRAD_TABLE[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(_GRAD_TABLE)}") from None
    return grad_fn(*inputs)


def _finite_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = fn(x)
        xf[i] = orig - h
        down = fn(x)
        xf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def gradient_check(name: str, rng: np.random.Generator, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central finite
    differences on one random input for the named loss."""
    if name == "dice":
        c, hh, ww = 3, 4, 4
        pred = rng.uniform(0.1, 0.9, size=(c, hh, ww))
        pred /= pred.sum(axis=0, keepdims=True)
        target = one_hot(rng.integers(0, c, size=(hh, ww)).astype(np.uint8), c)
        analytic = dice_loss_grad(pred, target)
        numeric = _finite_difference(lambda p: dice_loss(p, target), pred, h)
    elif name == "consistency":
        c, hh, ww = 3, 2, 2
        fc = rng.normal(size=(c, hh, ww))
        prob = rng.uniform(0.1, 0.9, size=(c, 2 * hh, 2 * ww))
        prob /= prob.sum(axis=0, keepdims=True)
        analytic = consistency_reg_grad(fc, prob)
        numeric = _finite_difference(lambda f: consistency_reg(f, prob), fc, h)
    elif name == "soft_margin":
        c = 5
        z = rng.normal(scale=2.0, size=c)
        y = rng.integers(0, 2, size=c).astype(np.float64)
        analytic = multilabel_soft_margin_grad(z, y)
        numeric = _finite_difference(lambda zz: multilabel_soft_margin(zz, y), z, h)
    else:
        raise ValueError(f"unknown loss {name!r}")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float((np.abs(analytic - numeric) / denom).max())


def run_gradient_checks(
    n_trials: int = 100,
    seed: int = 0,
    tol: float = 1e-4,
) -> dict[str, dict]:
    """Gradient-check every loss over n random inputs; returns a name ->
    {max_rel_err, passed} table."""
    report = {}
    for k, name in enumerate(_GRAD_TABLE):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        worst = max(gradient_check(name, rng) for _ in range(n_trials))
        report[name] = {"max_rel_err": worst, "passed": bool(worst <= tol)}
    return report
