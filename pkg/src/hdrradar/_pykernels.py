"""Pure numpy kernels; the reference implementation for the compiled ones."""
import numpy as np

BACKEND = "numpy"


def lcb_forward(x, w, eps):
    x = np.asarray(x, dtype=np.complex128)
    xr = x.real
    xi = x.imag
    r = np.sqrt(xr * xr + xi * xi)
    m = (r > w).astype(np.float64)
    p = m * r + (1.0 - m) * w
    lg = w + np.log1p(p - w)    # log(1 - w + p) without cancellation near p = w
    t = lg * m + r * (1.0 - m)
    s = t / (r + eps)
    return s * x


def lcb_backward(x, g, w, eps):
    """Split-real vector-Jacobian product of ``lcb_forward``.

    ``g`` packs the upstream gradient as dL/dRe + 1j*dL/dIm; the result uses
    the same packing.
    """
    x = np.asarray(x, dtype=np.complex128)
    g = np.asarray(g, dtype=np.complex128)
    xr = x.real
    xi = x.imag
    r = np.sqrt(xr * xr + xi * xi)
    big = r > w
    d = r + eps
    lg = w + np.log1p(np.where(big, r, w) - w)
    t = np.where(big, lg, r)
    s = t / d
    dt = np.where(big, 1.0 / ((1.0 - w) + np.where(big, r, w)), 1.0)
    ds = dt / d - t / (d * d)
    dot = xr * g.real + xi * g.imag
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(r > 0, ds * dot / r, 0.0)
    return s * g + coef * x


def box_sums(power, half_rows, half_cols, guard_rows, guard_cols):
    """Training-ring sums and cell counts around every cell.

    Rows (Doppler) wrap toroidally; columns (range) are clamped, so edge
    cells see fewer training cells.
    """
    power = np.asarray(power, dtype=np.float64)
    m, n = power.shape
    hd, hr, gd, gr = half_rows, half_cols, guard_rows, guard_cols
    padded = np.concatenate([power[m - hd:], power, power[:hd]], axis=0) if hd else power
    padded = np.pad(padded, ((0, 0), (hr, hr)))
    valid = np.zeros((m + 2 * hd, n + 2 * hr))
    valid[:, hr:hr + n] = 1.0

    def integral(a):
        s = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
        s[1:, 1:] = a.cumsum(0).cumsum(1)
        return s

    sp = integral(padded)
    sv = integral(valid)

    def box(s, h_r, h_c):
        r0 = hd - h_r
        c0 = hr - h_c
        r1 = r0 + m
        c1 = c0 + n
        k_r = 2 * h_r + 1
        k_c = 2 * h_c + 1
        return (s[r0 + k_r:r1 + k_r, c0 + k_c:c1 + k_c] - s[r0:r1, c0 + k_c:c1 + k_c]
                - s[r0 + k_r:r1 + k_r, c0:c1] + s[r0:r1, c0:c1])

    total = box(sp, hd, hr) - box(sp, gd, gr)
    count = np.rint(box(sv, hd, hr) - box(sv, gd, gr))
    return total, count
