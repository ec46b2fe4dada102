"""Independent reference computations used by the tests.

Nothing here calls into the autodiff backward pass: gradients are central
finite differences of forward evaluations, convolutions are explicit loops.
"""
import numpy as np


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """d f / d x by (f(x+h) - f(x-h)) / 2h, one element at a time (x modified in place and restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def brute_conv1d_valid(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sliding dot product: x (B, n, cin), w (f, cin, cout) -> (B, n - f + 1, cout)."""
    B, n, cin = x.shape
    f, _, cout = w.shape
    out = np.zeros((B, n - f + 1, cout))
    for bi in range(B):
        for t in range(n - f + 1):
            for o in range(cout):
                acc = b[o]
                for k in range(f):
                    for c in range(cin):
                        acc += x[bi, t + k, c] * w[k, c, o]
                out[bi, t, o] = acc
    return out


def sorted_median(values) -> float:
    v = sorted(values)
    n = len(v)
    if n % 2:
        return v[n // 2]
    return (v[n // 2 - 1] + v[n // 2]) / 2


def sorted_mad(values) -> float:
    m = sorted_median(values)
    return sorted_median([abs(x - m) for x in values])


class KinkRecorder:
    """Records the sign pattern of every LeakyReLU input during a forward pass.

    A central difference is a valid derivative oracle only when the whole
    stencil [p - h, p + h] lies on one smooth piece of the network, i.e. when
    the sign pattern at p - h and p + h agree.
    """

    def __init__(self, monkeypatch_target):
        self.module = monkeypatch_target
        self.original = monkeypatch_target.leaky_relu
        self.masks = []

    def __enter__(self):
        original = self.original

        def recording(x, slope=0.2):
            self.masks.append(x.data >= 0)
            return original(x, slope)

        self.module.leaky_relu = recording
        return self

    def __exit__(self, *exc):
        self.module.leaky_relu = self.original

    def pattern(self, f):
        self.masks = []
        value = f()
        return value, [m.copy() for m in self.masks]


def kink_aware_difference(f, x: np.ndarray, recorder: KinkRecorder, h: float = 1e-4):
    """Central differences plus a boolean mask of elements whose stencil straddles a kink."""
    grad = np.zeros_like(x, dtype=np.float64)
    straddles = np.zeros(x.shape, dtype=bool)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    s = straddles.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp, mp = recorder.pattern(f)
        flat[i] = old - h
        fm, mm = recorder.pattern(f)
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
        s[i] = any(not np.array_equal(a, b) for a, b in zip(mp, mm))
    return grad, straddles
