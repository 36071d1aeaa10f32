"""Finite-difference verification of analytic gradients.

The probe loss is ``L = sum(r * f(x))`` for a fixed random ``r``, so the
analytic gradients are obtained with a single ``backward(r)`` call. Every
parameter element and every input element is perturbed by ``+-h`` and the
central difference ``(L(+h) - L(-h)) / 2h`` is compared with the analytic
value.

Piecewise-linear activations make the loss non-differentiable where a
pre-activation crosses zero. When a probe flips the sign pattern of any
LeakyReLU in the network, the step is shrunk tenfold (down to ``h_min``);
coordinates that still cross a kink are skipped and counted in the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Layer, LeakyReLU
from .tensor import Parameter

ABS_FLOOR = 1e-6


@dataclass
class GradReport:
    name: str
    max_rel_error: float
    tol: float
    checked: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" skipped={self.skipped}" if self.skipped else ""
        return (f"{status} {self.name}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tol:.0e}, n={self.checked}{extra})")


@dataclass
class GradCheckResult:
    target: str
    reports: list[GradReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    @property
    def max_rel_error(self) -> float:
        return max(r.max_rel_error for r in self.reports)


def _leaky_layers(layer: Layer) -> list[LeakyReLU]:
    found = []
    stack = [layer]
    while stack:
        node = stack.pop()
        if isinstance(node, LeakyReLU):
            found.append(node)
        for child in getattr(node, "layers", ()):  # Sequential and composite layers
            stack.append(child)
        for child in getattr(node, "children", lambda: ())():
            stack.append(child)
    return found


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> float:
    """Max over elements of ``|a - n| / max(|a|, |n|, floor)``."""
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(layer: Layer, x: np.ndarray, *, h: float = 1e-4, tol: float = 1e-5,
               h_min: float = 1e-6, seed: int = 0, check_input: bool = True,
               name: str | None = None) -> GradCheckResult:
    """Compare analytic and central-difference gradients for ``layer`` at ``x``.

    ``layer`` and ``x`` should already be in 64-bit precision.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)
    leaky = _leaky_layers(layer)

    def loss_at(inp) -> tuple[float, list[np.ndarray]]:
        val = float(np.sum(r * layer.forward(inp)))
        if not np.isfinite(val):
            raise FloatingPointError("non-finite loss during gradient probing")
        return val, [m.last_mask.copy() for m in leaky]

    def crossed(masks, ref):
        return any(not np.array_equal(a, b) for a, b in zip(masks, ref))

    params: list[Parameter] = layer.parameters()
    for p in params:
        p.zero_grad()
    _, ref_masks = loss_at(x)
    dx = layer.backward(r)
    analytic = {p.name: p.grad.copy() for p in params}

    def numeric_grad(array: np.ndarray, rebuild) -> tuple[np.ndarray, np.ndarray]:
        grad = np.zeros_like(array)
        valid = np.ones(array.shape, dtype=bool)
        flat = array.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            step = h
            while True:
                flat[i] = orig + step
                lp, mp = loss_at(rebuild())
                flat[i] = orig - step
                lm, mm = loss_at(rebuild())
                flat[i] = orig
                if not (crossed(mp, ref_masks) or crossed(mm, ref_masks)):
                    grad.reshape(-1)[i] = (lp - lm) / (2 * step)
                    break
                step /= 10
                if step < h_min * (1 - 1e-9):
                    valid.reshape(-1)[i] = False
                    break
        return grad, valid

    result = GradCheckResult(target=name or type(layer).__name__)
    for p in params:
        num, valid = numeric_grad(p.value, lambda: x)
        err = relative_error(analytic[p.name][valid], num[valid])
        result.reports.append(GradReport(p.name, err, tol, int(valid.sum()), int((~valid).sum())))
    if check_input:
        xc = x.copy()
        num, valid = numeric_grad(xc, lambda: xc)
        err = relative_error(dx[valid], num[valid])
        result.reports.append(GradReport("input", err, tol, int(valid.sum()), int((~valid).sum())))
    return result


def _as_float64(layer: Layer) -> Layer:
    for p in layer.parameters():
        p.astype(np.float64)
    for bn in _batchnorms(layer):
        if bn.running_mean is not None:
            bn.running_mean = bn.running_mean.astype(np.float64)
            bn.running_var = bn.running_var.astype(np.float64)
    return layer


def _batchnorms(layer: Layer):
    from .layers import BatchNorm1d

    stack = [layer]
    while stack:
        node = stack.pop()
        if isinstance(node, BatchNorm1d):
            yield node
        stack.extend(getattr(node, "layers", ()))
        stack.extend(getattr(node, "children", lambda: ())())


def _randomize_bands(sinc, rng) -> None:
    # interior cutoffs: the clamps at 0 and Nyquist are kinks
    n = sinc.num_filters
    sinc.low.value[:] = rng.uniform(0.02, 0.3, n)
    sinc.band.value[:] = rng.uniform(0.02, 0.15, n)


def standard_suite(seed: int = 0) -> list[GradCheckResult]:
    """Gradient checks over every primitive plus a miniature end-to-end model."""
    from .layers import BatchNorm1d, Conv1d, Tanh
    from ..model.config import ModelConfig
    from ..model.network import build_model
    from ..model.sinc import SincConv

    rng = np.random.default_rng(seed)
    results = []

    conv = _as_float64(Conv1d("conv", 3, 4, 5, rng=rng))
    conv.bias.value[:] = rng.standard_normal(4)
    results.append(grad_check(conv, rng.standard_normal((2, 3, 16)), tol=1e-5, seed=seed, name="conv1d"))

    # long kernels take the frequency-domain path
    conv_long = _as_float64(Conv1d("conv", 2, 3, 21, rng=rng))
    conv_long.bias.value[:] = rng.standard_normal(3)
    results.append(grad_check(conv_long, rng.standard_normal((2, 2, 30)), tol=1e-5, seed=seed,
                              name="conv1d[K=21,fft]"))

    bn = _as_float64(BatchNorm1d("bn", 2))
    bn.gamma.value[:] = rng.uniform(0.5, 2.0, 2)
    bn.beta.value[:] = rng.standard_normal(2)
    bn.train(True)
    results.append(grad_check(bn, rng.standard_normal((4, 2, 8)), tol=1e-4, seed=seed, name="batchnorm1d"))

    results.append(grad_check(LeakyReLU(), rng.standard_normal((2, 3, 16)), tol=1e-4, seed=seed,
                              name="leaky_relu"))
    results.append(grad_check(Tanh(), rng.standard_normal((2, 3, 16)), tol=1e-4, seed=seed, name="tanh"))

    sinc = _as_float64(SincConv("sinc", num_filters=4, kernel_size=15, sample_rate=16000))
    _randomize_bands(sinc, rng)
    results.append(grad_check(sinc, rng.uniform(-1, 1, (2, 2, 24)), tol=1e-4, seed=seed, name="sinc_conv"))

    config = ModelConfig(variant="FCN", mode="MIMO", channels=2, filters=4, filter_length=5)
    model = _as_float64(build_model(config, seed=seed))
    model.input_grad = True
    model.train(True)
    results.append(grad_check(model, rng.uniform(-1, 1, (2, 2, 32)), tol=1e-4, seed=seed,
                              name="model[FCN,MIMO,fn=4,fl=5,N=2,T=32]"))

    sconfig = ModelConfig(variant="SFCN", mode="MIMO", channels=2, filters=4, filter_length=5,
                          sinc_filters=3, sinc_length=7)
    smodel = _as_float64(build_model(sconfig, seed=seed))
    _randomize_bands(smodel.encoder.layers[0].layers[0], rng)
    smodel.input_grad = True
    smodel.train(True)
    results.append(grad_check(smodel, rng.uniform(-1, 1, (2, 2, 32)), tol=1e-4, seed=seed,
                              name="model[SFCN,MIMO,fn=4,fl=5,N=2,T=32]"))
    return results


__all__ = ["GradReport", "GradCheckResult", "grad_check", "relative_error", "standard_suite"]
