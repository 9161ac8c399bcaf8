"""Pure numpy versions of the compiled corruption kernels.

Selected automatically when the extension module is not built. Every
arithmetic step follows the compiled loop order so outputs are identical.
"""
import numpy as np


def plasma_fill(out, noise, decay):
    size = out.shape[0]
    out[:] = 0.0
    step = size
    wibble = 100.0
    k = 0
    while step >= 2:
        half = step // 2
        n = size // step
        amp = wibble * wibble

        corners = out[0:size:step, 0:size:step]
        acc = corners + np.roll(corners, -1, axis=0)
        acc = acc + np.roll(acc, -1, axis=1)
        out[half:size:step, half:size:step] = acc / 4 + amp * noise[k:k + n * n].reshape(n, n)
        k += n * n

        centres = out[half:size:step, half:size:step]
        acc = (centres + np.roll(centres, 1, axis=0)) + (corners + np.roll(corners, -1, axis=1))
        out[0:size:step, half:size:step] = acc / 4 + amp * noise[k:k + n * n].reshape(n, n)
        k += n * n

        acc = (centres + np.roll(centres, 1, axis=1)) + (corners + np.roll(corners, -1, axis=0))
        out[half:size:step, 0:size:step] = acc / 4 + amp * noise[k:k + n * n].reshape(n, n)
        k += n * n

        step = half
        wibble = wibble / decay
    out -= out.min()
    out /= out.max()


def brightness_hsv(rgb, shift):
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    v = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = v - mn
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.where(v == 0.0, 0.0, delta / v)
        h_r = ((g - b) / delta) / 6.0
        h_g = (2.0 + (b - r) / delta) / 6.0
        h_b = (4.0 + (r - g) / delta) / 6.0
    h = np.where(r == v, h_r, np.where(g == v, h_g, h_b))
    h = np.where(delta == 0.0, 0.0, h)
    h = np.where(h < 0.0, h + 1.0, h)

    v = np.clip(v + shift, 0.0, 1.0)
    sector = np.floor(h * 6.0)
    f = h * 6.0 - sector
    sector = sector.astype(np.int64) % 6
    p = v * (1.0 - sat)
    q = v * (1.0 - sat * f)
    t = v * (1.0 - sat * (1.0 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    rgb[:, 0] = np.choose(sector, choices_r)
    rgb[:, 1] = np.choose(sector, choices_g)
    rgb[:, 2] = np.choose(sector, choices_b)
