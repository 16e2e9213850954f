"""Grid quadrature for layer potentials on a periodic graph.

Every kernel k(X - X') built from Gamma is split as

    Gamma = Gamma_loc + Gamma_sm,   Gamma_loc = -erfc(rho / sigma) / (4 pi rho),

with rho the distance to the minimum-image source.  ``Gamma_sm`` is smooth
and periodic, so the plain trapezoid rule over all grid pairs (diagonal
included) is spectrally accurate once ``sigma`` spans a couple of cells.
``Gamma_loc`` is negligible beyond ``5.9 sigma`` and is integrated per target
in polar coordinates (Gauss-Legendre in r, trapezoid in the angle).  The
symmetric angular rule also realises principal values of the gradient
kernels.  Densities are interpolated to the polar nodes from a
Fourier-upsampled grid by tensor Lagrange stencils; the stencil weights
depend only on the node offset, so they are shared by all targets.

The smooth part needs Gamma minus the minimum-image free-space kernel at
every grid offset and arbitrary height difference; it is tabulated once per
(grid, height range) as a Chebyshev series in dz^2 from the Ewald evaluator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .green_kernel import FOUR_PI, GreenKernel, ewald_smooth_part
from .torus_grid import fourier_upsample

_SQRT_PI = math.sqrt(math.pi)
_ERFC_CUT = 5.9


@dataclass(frozen=True)
class QuadratureConfig:
    split_width: float = 2.5      # sigma / h
    radial_nodes: int = 20
    angular_nodes: int = 40
    interp_order: int = 8
    upsampling: int = 2           # interpolation grid refinement factor

    def __post_init__(self):
        if self.angular_nodes % 2:
            raise ValueError("angular_nodes must be even (principal values pair opposite rays)")
        if self.interp_order % 2 or self.interp_order < 2:
            raise ValueError("interp_order must be an even integer >= 2")

    def sigma(self, n):
        return min(self.split_width / n, 0.49 / _ERFC_CUT)



# ---------------------------------------------------------------------------
# smooth periodic remainder, tabulated per offset


@nb.njit(cache=True)
def _clenshaw4(c, p, q, t):
    # c has layout (n, n, degree + 1, 4)
    D = c.shape[2]
    cc = c[p, q]
    b0 = b1 = b2 = b3 = 0.0
    e0 = e1 = e2 = e3 = 0.0
    t2 = 2.0 * t
    for k in range(D - 1, 0, -1):
        n0 = t2 * b0 - e0 + cc[k, 0]
        n1 = t2 * b1 - e1 + cc[k, 1]
        n2 = t2 * b2 - e2 + cc[k, 2]
        n3 = t2 * b3 - e3 + cc[k, 3]
        e0, e1, e2, e3 = b0, b1, b2, b3
        b0, b1, b2, b3 = n0, n1, n2, n3
    return (t * b0 - e0 + cc[0, 0], t * b1 - e1 + cc[0, 1],
            t * b2 - e2 + cc[0, 2], t * b3 - e3 + cc[0, 3])


@nb.njit(cache=True)
def _smooth_pair(coef, zz, sigma, n, p, q, dz):
    """Smooth-part kernels (-Gamma_sm, grad Gamma_sm) at grid offset (p, q), height dz."""
    h = 1.0 / n
    d1 = p * h
    if p >= n // 2:
        d1 -= 1.0
    d2 = q * h
    if q >= n // 2:
        d2 -= 1.0
    u = dz * dz
    hv0, hv1, hv2, hv3 = _clenshaw4(coef, p, q, 2.0 * u / zz - 1.0)
    rho2 = d1 * d1 + d2 * d2 + u
    c0 = 2.0 / (sigma * _SQRT_PI)
    if rho2 == 0.0:
        g = c0 / FOUR_PI
        gr = 0.0
    elif rho2 > (_ERFC_CUT * sigma) ** 2:
        # erf(rho / sigma) = 1 to machine precision
        rho = math.sqrt(rho2)
        g = 1.0 / (FOUR_PI * rho)
        gr = -g / rho2
    else:
        rho = math.sqrt(rho2)
        ef = math.erf(rho / sigma)
        g = ef / (FOUR_PI * rho)
        gr = (c0 * math.exp(-rho2 / (sigma * sigma)) / rho - ef / rho2) / (FOUR_PI * rho)
    return -(hv0 - g), hv1 - gr * d1, hv2 - gr * d2, (hv3 - gr) * dz


class OffsetTable:
    """Chebyshev tables of Gamma - Gamma_R3(min image) per grid offset.

    Quantities (value, d1, d2, dz / z) are even in z and stored as series in
    t = 2 z^2 / zmax^2 - 1, valid for |z| <= zmax.
    """

    def __init__(self, n, zmax, kernel: GreenKernel):
        self.n = n
        self.zmax = float(max(zmax, 1e-3))
        zz = self.zmax * self.zmax
        # nearest complex singularity in u = z^2 sits at u = -1/4
        tsing = 1.0 + 2.0 * 0.25 / zz
        rho = tsing + math.sqrt(tsing * tsing - 1.0)
        deg = int(min(160, max(8, math.ceil(36.0 / math.log(rho)))))
        self.degree = deg
        j = np.arange(deg + 1)
        t = np.cos(np.pi * (j + 0.5) / (deg + 1))
        z = np.sqrt(zz * (t + 1.0) / 2.0)
        h = 1.0 / n
        off = np.arange(n) * h
        off = off - np.floor(off + 0.5)
        d1, d2, zc = np.meshgrid(off, off, z, indexing="ij")
        out = np.empty((d1.size, 4))
        ewald_smooth_part(d1.ravel(), d2.ravel(), zc.ravel(), kernel.xi,
                          kernel.cfg.image_radius, kernel.modes, out)
        vals = out.reshape(n, n, deg + 1, 4)
        samples = np.empty((4, n, n, deg + 1))
        samples[0] = vals[..., 0]
        samples[1] = vals[..., 1]
        samples[2] = vals[..., 2]
        samples[3] = vals[..., 3] / z
        # discrete Chebyshev transform at first-kind nodes
        T = np.cos(np.outer(np.arange(deg + 1), np.pi * (j + 0.5) / (deg + 1)))
        coef = samples @ T.T * (2.0 / (deg + 1))
        coef[..., 0] *= 0.5
        self.coef = np.ascontiguousarray(np.moveaxis(coef, 0, -1))

    def evaluate(self, p, q, dz):
        t = 2.0 * dz * dz / self.zmax**2 - 1.0
        v = _clenshaw4(self.coef, p, q, t)
        return v[0], np.array([v[1], v[2], v[3] * dz])

    def row(self, sigma):
        """Smooth kernels on a flat sheet as (4, n, n) arrays indexed by offset."""
        out = np.empty((4, self.n, self.n))
        _flat_rows(self.coef, self.zmax**2, sigma, out)
        return out


@nb.njit(cache=True)
def _flat_rows(coef, zz, sigma, out):
    n = out.shape[1]
    for p in range(n):
        for q in range(n):
            k0, k1, k2, k3 = _smooth_pair(coef, zz, sigma, n, p, q, 0.0)
            out[0, p, q] = k0
            out[1, p, q] = k1
            out[2, p, q] = k2
            out[3, p, q] = k3


@nb.njit(parallel=True, cache=True)
def _assemble_dense(f, coef, zz, sigma, want_grad, tiles, B, a0, a1, a2, a3):
    # Gamma is even, so the value kernel is symmetric and the gradient
    # kernels antisymmetric.  Each tile pair (bi <= bj) is evaluated once and
    # mirrored through a local buffer to keep the writes contiguous.
    n = f.shape[0]
    w = 1.0 / (n * n * 1.0)
    for t in nb.prange(tiles.shape[0]):
        bi = tiles[t, 0]
        bj = tiles[t, 1]
        buf = np.zeros((4, B, B))
        for ii in range(B):
            i = bi * B + ii
            i1 = i // n
            i2 = i - i1 * n
            fi = f[i1, i2]
            j0 = ii if bi == bj else 0
            for jj in range(j0, B):
                j = bj * B + jj
                j1 = j // n
                j2 = j - j1 * n
                p = i1 - j1
                if p < 0:
                    p += n
                q = i2 - j2
                if q < 0:
                    q += n
                k0, k1, k2, k3 = _smooth_pair(coef, zz, sigma, n, p, q, fi - f[j1, j2])
                buf[0, ii, jj] = k0 * w
                buf[1, ii, jj] = k1 * w
                buf[2, ii, jj] = k2 * w
                buf[3, ii, jj] = k3 * w
                a0[i, j] = k0 * w
                if want_grad:
                    a1[i, j] = k1 * w
                    a2[i, j] = k2 * w
                    a3[i, j] = k3 * w
        for jj in range(B):
            j = bj * B + jj
            i_end = jj if bi == bj else B
            for ii in range(i_end):
                i = bi * B + ii
                a0[j, i] = buf[0, ii, jj]
                if want_grad:
                    a1[j, i] = -buf[1, ii, jj]
                    a2[j, i] = -buf[2, ii, jj]
                    a3[j, i] = -buf[3, ii, jj]


def dense_tiles(N, B):
    nt = N // B
    return np.array([(bi, bj) for bi in range(nt) for bj in range(bi, nt)], dtype=np.int64)


@nb.njit(parallel=True, cache=True)
def _dense_apply(A, X, out):
    # fixed summation order per row: results do not depend on the thread count
    N = A.shape[0]
    nr = X.shape[1]
    Xt = np.ascontiguousarray(X.T)
    for i in nb.prange(N):
        row = A[i]
        for r in range(nr):
            x = Xt[r]
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            s3 = 0.0
            for j in range(0, N - 3, 4):
                s0 += row[j] * x[j]
                s1 += row[j + 1] * x[j + 1]
                s2 += row[j + 2] * x[j + 2]
                s3 += row[j + 3] * x[j + 3]
            for j in range(N - N % 4, N):
                s0 += row[j] * x[j]
            out[i, r] = (s0 + s1) + (s2 + s3)


@nb.njit(parallel=True, cache=True)
def _apply_dense_free(f, coef, zz, sigma, which, phi, out):
    """Matrix-free version of the dense apply (one kernel, several densities)."""
    n = f.shape[0]
    N = n * n
    w = 1.0 / (N * 1.0)
    nr = phi.shape[1]
    for i in nb.prange(N):
        i1 = i // n
        i2 = i - i1 * n
        fi = f[i1, i2]
        acc = np.zeros(nr)
        for j in range(N):
            j1 = j // n
            j2 = j - j1 * n
            p = i1 - j1
            if p < 0:
                p += n
            q = i2 - j2
            if q < 0:
                q += n
            kv = _smooth_pair(coef, zz, sigma, n, p, q, fi - f[j1, j2])
            k = kv[which] * w
            for r in range(nr):
                acc[r] += k * phi[j, r]
        for r in range(nr):
            out[i, r] = acc[r]


# ---------------------------------------------------------------------------
# local polar part


def _lagrange_weights(frac, p):
    """1D Lagrange weights at nodes -p/2+1 .. p/2 for the point ``frac`` in [0, 1)."""
    nodes = np.arange(-p // 2 + 1, p // 2 + 1, dtype=float)
    w = np.ones(p)
    for a in range(p):
        for b in range(p):
            if a != b:
                w[a] *= (frac - nodes[b]) / (nodes[a] - nodes[b])
    return w


class PolarStencil:
    """Polar nodes around a target and their interpolation stencils on the fine grid."""

    def __init__(self, n, qcfg: QuadratureConfig):
        self.n = n
        self.sigma = qcfg.sigma(n)
        self.radius = _ERFC_CUT * self.sigma
        self.U = qcfg.upsampling
        nf = n * self.U
        self.nf = nf
        hf = 1.0 / nf
        p = qcfg.interp_order
        xr, wr = np.polynomial.legendre.leggauss(qcfg.radial_nodes)
        r = 0.5 * self.radius * (xr + 1.0)
        wr = 0.5 * self.radius * wr
        nt = qcfg.angular_nodes
        t = 2.0 * np.pi * (np.arange(nt) + 0.5) / nt
        R, T = np.meshgrid(r, t, indexing="ij")
        W = np.outer(wr * r, np.full(nt, 2.0 * np.pi / nt))
        self.d1 = R.ravel() * np.cos(T.ravel())
        self.d2 = R.ravel() * np.sin(T.ravel())
        self.r = R.ravel()
        self.weight = W.ravel()
        # source point in fine-index units relative to the target: s = -d / hf
        s1 = -self.d1 / hf
        s2 = -self.d2 / hf
        b1 = np.floor(s1)
        b2 = np.floor(s2)
        self.base = np.stack([b1 - p // 2 + 1, b2 - p // 2 + 1], axis=1).astype(np.int64)
        self.w1 = np.array([_lagrange_weights(fr, p) for fr in s1 - b1])
        self.w2 = np.array([_lagrange_weights(fr, p) for fr in s2 - b2])
        self.half = int(math.ceil(self.radius / hf)) + p // 2 + 1
        self.order = p


@nb.njit(parallel=True, cache=True)
def _assemble_local(fc, fsrc, base, w1, w2, d1, d2, rr, wq, sigma, half, nk, patches):
    # fsrc[i, m] is f at the source point x_i - d_m
    n = fc.shape[0]
    N = patches.shape[1]
    P = d1.shape[0]
    p = w1.shape[1]
    s2 = sigma * sigma
    c0 = 2.0 / (sigma * _SQRT_PI)
    for i in nb.prange(N):
        i1 = i // n
        i2 = i - i1 * n
        fi = fc[i1, i2]
        for k in range(nk):
            patches[k, i] = 0.0
        for m in range(P):
            fs = fsrc[i, m]
            dz = fi - fs
            r = rr[m]
            rho2 = r * r + dz * dz
            rho = math.sqrt(rho2)
            ec = math.erfc(rho / sigma)
            kv = ec / (FOUR_PI * rho)
            kg = (ec / rho2 + c0 * math.exp(-rho2 / s2) / rho) / (FOUR_PI * rho)
            kern0 = wq[m] * kv
            kern1 = wq[m] * kg * d1[m]
            kern2 = wq[m] * kg * d2[m]
            kern3 = wq[m] * kg * dz
            oa = base[m, 0] + half
            ob = base[m, 1] + half
            for a in range(p):
                wa = w1[m, a]
                r0 = patches[0, i, oa + a]
                if nk == 1:
                    for b in range(p):
                        r0[ob + b] += kern0 * wa * w2[m, b]
                else:
                    r1 = patches[1, i, oa + a]
                    r2 = patches[2, i, oa + a]
                    r3 = patches[3, i, oa + a]
                    for b in range(p):
                        wab = wa * w2[m, b]
                        r0[ob + b] += kern0 * wab
                        r1[ob + b] += kern1 * wab
                        r2[ob + b] += kern2 * wab
                        r3[ob + b] += kern3 * wab


@nb.njit(parallel=True, cache=True)
def _apply_local(patch, U, padded, out):
    # ``padded`` is the fine density wrapped by ``half`` cells on each side
    N = patch.shape[0]
    L = patch.shape[1]
    nr = padded.shape[0]
    n = int(math.sqrt(N) + 0.5)
    for i in nb.prange(N):
        i1 = i // n
        i2 = i - i1 * n
        c1 = U * i1
        c2 = U * i2
        for r in range(nr):
            acc = 0.0
            for a in range(L):
                row = padded[r, c1 + a]
                pr = patch[i, a]
                for b in range(L):
                    acc += pr[b] * row[c2 + b]
            out[i, r] = acc


def shifted_samples(v, d1, d2, chunk=128):
    """Band-limited values v(x_i - d_m) as an array of shape (n*n, len(d1))."""
    n = v.shape[0]
    k = np.fft.fftfreq(n, d=1.0 / n)
    vh = np.fft.fft2(v)
    out = np.empty((d1.size, n * n))
    for s in range(0, d1.size, chunk):
        e1 = np.exp(-2j * np.pi * np.outer(d1[s:s + chunk], k))
        e2 = np.exp(-2j * np.pi * np.outer(d2[s:s + chunk], k))
        ph = e1[:, :, None] * e2[:, None, :]
        out[s:s + chunk] = np.real(np.fft.ifft2(vh[None] * ph)).reshape(-1, n * n)
    return np.ascontiguousarray(out.T)


class GridKernels:
    """Discrete single-layer and gradient kernels for one height field.

    ``apply(k, phi)`` returns sum_j K_k(x_i, x_j) phi_j h^2 (plus the local
    polar correction), where K_0 = -Gamma and K_{1,2,3} = d_{1,2,3} Gamma
    evaluated at (x_i - x_j, f_i - f_j).  For k >= 1 the sum is a principal
    value.  ``phi`` may carry a trailing axis of several densities.

    ``mode`` is "dense" (stored matrices), "free" (recomputed per apply) or
    "auto".  A constant height makes every kernel translation invariant and
    the same quadrature is then applied by FFT convolution.
    """

    def __init__(self, f, kernel: GreenKernel, qcfg: QuadratureConfig | None = None,
                 table: OffsetTable | None = None, mode="auto", value_only=False):
        f = np.ascontiguousarray(f, dtype=float)
        n = f.shape[0]
        self.n = n
        self.qcfg = qcfg or QuadratureConfig()
        self.stencil = st = PolarStencil(n, self.qcfg)
        zmax = 1.05 * (f.max() - f.min()) + 1e-3
        if table is None or table.n != n or table.zmax < zmax:
            table = OffsetTable(n, zmax, kernel)
        self.table = table
        self.f = f
        self.value_only = value_only
        self.flat = bool(np.ptp(f) == 0.0)
        if mode not in ("auto", "dense", "free", "convolution"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "convolution" and not self.flat:
            raise ValueError("convolution mode needs a constant height")
        if mode == "auto":
            mode = "convolution" if self.flat else ("dense" if n <= 64 else "free")
        self.mode = mode
        conv = mode == "convolution"
        nk = 1 if value_only else 4
        L = 2 * st.half + 1
        ntarget = 1 if conv else n * n
        if self.flat:
            fsrc = np.full((ntarget, st.d1.size), f[0, 0])
        else:
            fsrc = shifted_samples(f, st.d1, st.d2)
        self.patches = np.empty((nk, ntarget, L, L))
        _assemble_local(f, fsrc, st.base, st.w1, st.w2, st.d1, st.d2, st.r,
                        st.weight, st.sigma, st.half, nk, self.patches)
        self.dense = None
        if conv:
            rows = table.row(st.sigma)[:nk] / (n * n)
            self._smooth_hat = np.fft.fft2(rows)
            nf = st.nf
            fine = np.zeros((nk, nf, nf))
            idx = (np.arange(L) - st.half) % nf
            i1, i2 = np.meshgrid(idx, idx, indexing="ij")
            for k in range(nk):
                # at coarse n the patch can be wider than the fine grid; wrapped entries add up
                np.add.at(fine[k], (i1, i2), self.patches[k, 0])
            self._local_hat = np.conj(np.fft.fft2(fine))
        elif self.mode == "dense":
            N = n * n
            a0 = np.empty((N, N))
            if value_only:
                a1 = a2 = a3 = np.empty((1, 1))
            else:
                a1 = np.empty((N, N))
                a2 = np.empty((N, N))
                a3 = np.empty((N, N))
            B = min(N, 64)
            _assemble_dense(f, table.coef, table.zmax**2, st.sigma, not value_only,
                            dense_tiles(N, B), B, a0, a1, a2, a3)
            self.dense = [a0] if value_only else [a0, a1, a2, a3]

    def _apply_flat(self, k, cols):
        n = self.n
        st = self.stencil
        out = np.empty_like(cols)
        for r in range(cols.shape[1]):
            phi = cols[:, r].reshape(n, n)
            sm = np.real(np.fft.ifft2(self._smooth_hat[k] * np.fft.fft2(phi)))
            fine = fourier_upsample(phi, st.U)
            loc = np.real(np.fft.ifft2(self._local_hat[k] * np.fft.fft2(fine)))
            out[:, r] = (sm + loc[::st.U, ::st.U]).ravel()
        return out

    def apply(self, k, phi):
        if self.value_only and k != 0:
            raise ValueError("kernels built with value_only=True")
        phi = np.asarray(phi, dtype=float)
        n = self.n
        single = phi.ndim == 2
        cols = np.ascontiguousarray(phi.reshape(n * n, -1))
        nr = cols.shape[1]
        st = self.stencil
        if self.mode == "convolution":
            out = self._apply_flat(k, cols)
        else:
            out = np.empty((n * n, nr))
            if self.dense is not None:
                _dense_apply(self.dense[k], cols, out)
            else:
                _apply_dense_free(self.f, self.table.coef, self.table.zmax**2, st.sigma, k,
                                  cols, out)
            fine = np.empty((nr, st.nf + 2 * st.half, st.nf + 2 * st.half))
            for r in range(nr):
                fine[r] = np.pad(fourier_upsample(cols[:, r].reshape(n, n), st.U),
                                 st.half, mode="wrap")
            loc = np.empty((n * n, nr))
            _apply_local(self.patches[k], st.U, fine, loc)
            out = out + loc
        if single:
            return out.reshape(n, n)
        return out.reshape(phi.shape)
