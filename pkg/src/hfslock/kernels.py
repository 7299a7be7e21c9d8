"""Hot numeric kernels.

Every kernel exists twice: a scalar-loop version compiled with numba and a
vectorized numpy version. The public names at the bottom of this module pick
one according to :data:`hfslock._jit.USE_NUMBA`; both variants stay importable
under ``*_numba`` / ``*_numpy`` for benchmarking and cross-checking.

Faddeeva function ``w(z) = exp(-z^2) erfc(-iz)`` for ``Im z >= 0``:

* ``|x| + y >= CF_THRESHOLD``: Laplace continued fraction (Humlicek region I
  carried to a depth picked from ``CF_DEPTHS``; each depth keeps the real
  part within 1e-10 relative of ``scipy.special.wofz`` with two levels spare).
* otherwise: Weideman's rational series with ``WEIDEMAN_N`` terms, or, for
  ``y < NEAR_AXIS_Y``, a second-order expansion about the real axis built
  from ``exp(-x^2)`` and the series' imaginary part there.
"""
import math

import numpy as np

from ._jit import USE_NUMBA, njit

WEIDEMAN_N = 32
CF_THRESHOLD = 8.0
# (lower bound of |x| + y, depth), scanned in order
CF_DEPTHS = ((100.0, 4), (30.0, 5), (20.0, 6), (12.0, 7), (10.0, 8), (0.0, 10))
INV_SQRT_PI = 0.5641895835477563
# below this Im z the Weideman series' absolute error (~1e-14) can exceed a
# tiny Gaussian tail, so w is expanded about the real axis instead
NEAR_AXIS_Y = 1e-4


def _weideman_coefficients(n):
    m = 2 * n
    k = np.arange(-m + 1, m)
    L = math.sqrt(n / math.sqrt(2.0))
    t = L * np.tan(k * np.pi / m / 2.0)
    f = np.zeros(len(t) + 1)
    f[1:] = np.exp(-t ** 2) * (L ** 2 + t ** 2)
    a = np.real(np.fft.fft(np.fft.fftshift(f))) / (2 * m)
    return L, np.ascontiguousarray(np.flipud(a[1:n + 1]))


WEIDEMAN_L, WEIDEMAN_A = _weideman_coefficients(WEIDEMAN_N)


# ---------------------------------------------------------------- Faddeeva

@njit(cache=True)
def _cf_depth(s):
    for bound, depth in CF_DEPTHS:
        if s >= bound:
            return depth
    return CF_DEPTHS[-1][1]


@njit(cache=True)
def _weideman_parts(x, y):
    lp = WEIDEMAN_L + y
    d2 = lp * lp + x * x
    zr = (WEIDEMAN_L * WEIDEMAN_L - y * y - x * x) / d2
    zi = 2.0 * WEIDEMAN_L * x / d2
    pr = 0.0
    pi = 0.0
    for k in range(WEIDEMAN_N):
        t = pr * zr - pi * zi + WEIDEMAN_A[k]
        pi = pr * zi + pi * zr
        pr = t
    # 1/den with den = lp - i x
    ir = lp / d2
    ii = x / d2
    qr = ir * ir - ii * ii
    qi = 2.0 * ir * ii
    return (2.0 * (pr * qr - pi * qi) + INV_SQRT_PI * ir,
            2.0 * (pr * qi + pi * qr) + INV_SQRT_PI * ii)


@njit(cache=True)
def _faddeeva_parts(x, y):
    """``(Re w, Im w)`` in real arithmetic; numba's complex division is slow."""
    s = abs(x) + y
    if s >= CF_THRESHOLD:
        tr = x
        ti = y
        for k in range(_cf_depth(s), 0, -1):
            c = 0.5 * k / (tr * tr + ti * ti)
            tr = x - c * tr
            ti = y + c * ti
        d = INV_SQRT_PI / (tr * tr + ti * ti)
        re = ti * d
        im = tr * d
        if y < NEAR_AXIS_Y:
            # exp(-z^2) is beyond every order of the asymptotic fraction
            g = math.exp(y * y - x * x)
            re += g * math.cos(2.0 * x * y)
            im -= g * math.sin(2.0 * x * y)
        return re, im
    if y < NEAR_AXIS_Y:
        # second-order Taylor step off the real axis, where Re w = exp(-x^2) exactly
        g = math.exp(-x * x)
        wi = _weideman_parts(x, 0.0)[1]
        y2 = y * y
        re = g * (1.0 - y2 * (2.0 * x * x - 1.0)) + y * (2.0 * x * wi - 2.0 * INV_SQRT_PI)
        im = wi - 2.0 * x * y * g - y2 * (2.0 * x * x * wi - 2.0 * x * INV_SQRT_PI)
        return re, im
    return _weideman_parts(x, y)


@njit(cache=True)
def _faddeeva_scalar(x, y):
    re, im = _faddeeva_parts(x, y)
    return complex(re, im)


@njit(cache=True)
def faddeeva_numba(x, y):
    out = np.empty(x.shape[0], dtype=np.complex128)
    for n in range(x.shape[0]):
        out[n] = _faddeeva_scalar(x[n], y[n])
    return out


def _weideman_numpy(x, y):
    iz = -y + 1j * x
    den = WEIDEMAN_L - iz
    zz = (WEIDEMAN_L + iz) / den
    p = np.zeros(zz.shape, dtype=np.complex128)
    for a in WEIDEMAN_A:
        p = p * zz + a
    return 2.0 * p / (den * den) + INV_SQRT_PI / den


def faddeeva_numpy(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    out = np.empty(x.shape, dtype=np.complex128)
    s = np.abs(x) + y
    upper = np.inf
    for bound, depth in CF_DEPTHS:
        sel = (s >= max(bound, CF_THRESHOLD)) & (s < upper)
        upper = max(bound, CF_THRESHOLD)
        if sel.any():
            z = x[sel] + 1j * y[sel]
            t = z.copy()
            for k in range(depth, 0, -1):
                t = z - (0.5 * k) / t
            out[sel] = 1j * INV_SQRT_PI / t
        if bound <= CF_THRESHOLD:
            break
    far_axis = (s >= CF_THRESHOLD) & (y < NEAR_AXIS_Y)
    if far_axis.any():
        z = x[far_axis] + 1j * y[far_axis]
        out[far_axis] += np.exp(-z * z)
    near = s < CF_THRESHOLD
    taylor = near & (y < NEAR_AXIS_Y)
    plain = near & ~taylor
    if plain.any():
        out[plain] = _weideman_numpy(x[plain], y[plain])
    if taylor.any():
        xt, yt = x[taylor], y[taylor]
        g = np.exp(-xt * xt)
        wi = _weideman_numpy(xt, np.zeros_like(xt)).imag
        y2 = yt * yt
        re = g * (1.0 - y2 * (2.0 * xt * xt - 1.0)) + yt * (2.0 * xt * wi - 2.0 * INV_SQRT_PI)
        im = wi - 2.0 * xt * yt * g - y2 * (2.0 * xt * xt * wi - 2.0 * xt * INV_SQRT_PI)
        out[taylor] = re + 1j * im
    return out


# ---------------------------------------------------------- profile sums
#
# Shapes are parametrized by the Gaussian standard deviation ``sigma`` and
# the Lorentzian half width ``gamma`` (both MHz). Each profile has unit peak.
# Below ``sigma = LORENTZ_LIMIT * gamma`` the Gaussian changes the profile by
# order (sigma/gamma)^2 < 1e-13, so the pure Lorentzian is used; this also
# keeps ``gamma / sigma`` finite for subnormal sigma.
LORENTZ_LIMIT = 3e-7

@njit(cache=True)
def _unit_voigt_scalar(x, sigma, gamma, peak_norm):
    if gamma == 0.0:
        u = x / sigma
        return math.exp(-0.5 * u * u)
    if sigma <= LORENTZ_LIMIT * gamma:
        return gamma * gamma / (x * x + gamma * gamma)
    s = sigma * 1.4142135623730951
    return _faddeeva_parts(abs(x) / s, gamma / s)[0] / peak_norm


@njit(cache=True)
def _peak_norm(sigma, gamma):
    if gamma == 0.0 or sigma <= LORENTZ_LIMIT * gamma:
        return 1.0
    return _faddeeva_parts(0.0, gamma / (sigma * 1.4142135623730951))[0]


@njit(cache=True)
def _profile_sum_scalar(x, centers, weights, sigma, gamma, peak_norm):
    acc = 0.0
    for k in range(centers.shape[0]):
        acc += weights[k] * _unit_voigt_scalar(x - centers[k], sigma, gamma, peak_norm)
    return acc


@njit(cache=True)
def profile_sum_numba(x, centers, weights, sigma, gamma):
    """``sum_k weights[k] * V(x - centers[k])`` with unit-peak Voigt ``V``."""
    norm = _peak_norm(sigma, gamma)
    out = np.empty(x.shape[0])
    for n in range(x.shape[0]):
        out[n] = _profile_sum_scalar(x[n], centers, weights, sigma, gamma, norm)
    return out


@njit(cache=True)
def profile_matrix_numba(x, centers, sigma, gamma):
    """Unit-peak profiles ``V(x[n] - centers[k])`` as an ``(n, k)`` matrix."""
    norm = _peak_norm(sigma, gamma)
    out = np.empty((x.shape[0], centers.shape[0]))
    for n in range(x.shape[0]):
        for k in range(centers.shape[0]):
            out[n, k] = _unit_voigt_scalar(x[n] - centers[k], sigma, gamma, norm)
    return out


def unit_voigt_numpy(x, sigma, gamma):
    x = np.asarray(x, dtype=float)
    if gamma == 0.0:
        return np.exp(-0.5 * (x / sigma) ** 2)
    if sigma <= LORENTZ_LIMIT * gamma:
        return gamma * gamma / (x * x + gamma * gamma)
    s = sigma * math.sqrt(2.0)
    yy = np.full(x.shape, gamma / s)
    norm = faddeeva_numpy(np.zeros(1), np.array([gamma / s]))[0].real
    return faddeeva_numpy(np.abs(x) / s, yy).real / norm


def profile_matrix_numpy(x, centers, sigma, gamma):
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float)
    return unit_voigt_numpy(x[:, None] - centers[None, :], sigma, gamma)


def profile_sum_numpy(x, centers, weights, sigma, gamma):
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if centers.size == 0:
        return np.zeros(x.shape)
    prof = unit_voigt_numpy(x[:, None] - centers[None, :], sigma, gamma)
    return prof @ weights


# ------------------------------------------------------------- lock loop

@njit(cache=True)
def lock_loop_numba(nu_free, detector_noise, dither, centers, weights, sigma, gamma,
                    amplitude, base_offset, base_slope, cog,
                    kp, ki, kd, dt_window, out_limit, slope_cal, engaged):
    """Dither / lock-in / PID loop, one controller update per lock-in window.

    ``dither`` holds the frequency modulation over one window (integer
    number of periods). Returns per-window mean laser frequency (dither
    excluded), demodulated error and controller output, all of length
    ``len(nu_free) // len(dither)``.
    """
    nwin = dither.shape[0]
    nwindows = nu_free.shape[0] // nwin
    freq = np.empty(nwindows)
    err = np.empty(nwindows)
    ctrl = np.empty(nwindows)
    norm = _peak_norm(sigma, gamma)
    dmax = 0.0
    for n in range(nwin):
        dmax = max(dmax, abs(dither[n]))
    u = 0.0
    integ = 0.0
    prev = 0.0
    ilim = out_limit / ki if ki > 0.0 else 0.0
    for w in range(nwindows):
        acc = 0.0
        fsum = 0.0
        base = w * nwin
        for n in range(nwin):
            nu = nu_free[base + n] + u
            fsum += nu
            nd = nu + dither[n]
            lif = (base_offset + base_slope * (nd - cog)
                   + amplitude * _profile_sum_scalar(nd - cog, centers, weights, sigma, gamma, norm)
                   + detector_noise[base + n])
            acc += lif * dither[n]
        e = 2.0 * acc / (nwin * dmax)
        freq[w] = fsum / nwin
        err[w] = e
        if engaged:
            m = e / slope_cal
            if w == 0:
                prev = m
            integ += 0.5 * (m + prev) * dt_window
            if ki > 0.0:
                integ = min(max(integ, -ilim), ilim)
            u = -(kp * m + ki * integ + kd * (m - prev) / dt_window)
            u = min(max(u, -out_limit), out_limit)
            prev = m
        ctrl[w] = u
    return freq, err, ctrl


def lock_loop_numpy(nu_free, detector_noise, dither, centers, weights, sigma, gamma,
                    amplitude, base_offset, base_slope, cog,
                    kp, ki, kd, dt_window, out_limit, slope_cal, engaged):
    nwin = dither.shape[0]
    nwindows = nu_free.shape[0] // nwin
    freq = np.empty(nwindows)
    err = np.empty(nwindows)
    ctrl = np.empty(nwindows)
    dmax = np.abs(dither).max()
    u = 0.0
    integ = 0.0
    prev = 0.0
    ilim = out_limit / ki if ki > 0.0 else 0.0
    for w in range(nwindows):
        sl = slice(w * nwin, (w + 1) * nwin)
        nu = nu_free[sl] + u
        nd = nu + dither
        lif = (base_offset + base_slope * (nd - cog)
               + amplitude * profile_sum_numpy(nd - cog, centers, weights, sigma, gamma)
               + detector_noise[sl])
        e = 2.0 * np.dot(lif, dither) / (nwin * dmax)
        freq[w] = nu.mean()
        err[w] = e
        if engaged:
            m = e / slope_cal
            if w == 0:
                prev = m
            integ += 0.5 * (m + prev) * dt_window
            if ki > 0.0:
                integ = min(max(integ, -ilim), ilim)
            u = -(kp * m + ki * integ + kd * (m - prev) / dt_window)
            u = min(max(u, -out_limit), out_limit)
            prev = m
        ctrl[w] = u
    return freq, err, ctrl


if USE_NUMBA:
    faddeeva = faddeeva_numba
    profile_sum = profile_sum_numba
    profile_matrix = profile_matrix_numba
    lock_loop = lock_loop_numba
else:
    faddeeva = faddeeva_numpy
    profile_sum = profile_sum_numpy
    profile_matrix = profile_matrix_numpy
    lock_loop = lock_loop_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
