"""Numba-parallel per-pixel kernels: grid slicing, MLP application, guidance nets.

These are the throughput-critical inner loops. They are dtype-generic
(float32 for inference, float64 for checking) and parallelize over image
rows; every row writes a disjoint output slice, so results are
deterministic at any thread count.
"""

import math

import numba
import numpy as np
from numba import njit, prange


def set_threads(n):
    if n is not None and n > 0:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


@njit(cache=True, parallel=True)
def slice_packed_kernel(cells, guidance, pg, slot_map, align_centers, out):
    """Trilinear slicing of one or more parameter groups in a single pass.

    cells is (gh, gw, depth, Pt) with group k owning the contiguous packed
    range [pg*k, pg*(k+1)), steered by guidance channel k; packed index p
    lands in output slot slot_map[p]. Spatial coordinates are shared
    across groups; neighbors clamp at grid edges. A monolithic grid is the
    single-group case with an identity slot_map."""
    gh, gw, depth, npar = cells.shape
    h, w, nk = guidance.shape
    # column coordinates are row-independent; compute them once
    i0s = np.empty(w, dtype=np.int64)
    i1s = np.empty(w, dtype=np.int64)
    dus = np.empty(w, dtype=cells.dtype)
    for x in range(w):
        if align_centers:
            u = (x + 0.5) * gw / w - 0.5
        else:
            u = x * gw / w
        if u < 0.0:
            u = 0.0
        if u > gw - 1.0:
            u = gw - 1.0
        i0 = int(math.floor(u))
        if i0 > gw - 1:
            i0 = gw - 1
        i0s[x] = i0
        i1s[x] = min(i0 + 1, gw - 1)
        dus[x] = u - i0
    for y in prange(h):
        if align_centers:
            v = (y + 0.5) * gh / h - 0.5
        else:
            v = y * gh / h
        if v < 0.0:
            v = 0.0
        if v > gh - 1.0:
            v = gh - 1.0
        j0 = int(math.floor(v))
        if j0 > gh - 1:
            j0 = gh - 1
        dv = v - j0
        j1 = min(j0 + 1, gh - 1)
        row0 = cells[j0]
        row1 = cells[j1]
        for x in range(w):
            i0 = i0s[x]
            i1 = i1s[x]
            du = dus[x]
            w00 = (1.0 - du) * (1.0 - dv)
            w10 = du * (1.0 - dv)
            w01 = (1.0 - du) * dv
            w11 = du * dv
            c00 = row0[i0]
            c10 = row0[i1]
            c01 = row1[i0]
            c11 = row1[i1]
            ob = out[y, x]
            for k in range(nk):
                g = guidance[y, x, k]
                if g < 0.0:
                    g = 0.0
                if g > 1.0:
                    g = 1.0
                r = g * (depth - 1)
                k0 = int(math.floor(r))
                if k0 > depth - 1:
                    k0 = depth - 1
                dr = r - k0
                k1 = min(k0 + 1, depth - 1)
                base = pg * k
                for p in range(base, base + pg):
                    lo = (w00 * c00[k0, p] + w10 * c10[k0, p]
                          + w01 * c01[k0, p] + w11 * c11[k0, p])
                    hi = (w00 * c00[k1, p] + w10 * c10[k1, p]
                          + w01 * c01[k1, p] + w11 * c11[k1, p])
                    ob[slot_map[p]] = lo + dr * (hi - lo)


@njit(cache=True, parallel=True, fastmath=True)
def slice_groups_kernel(cells, guidance, pg, align_centers, out):
    """slice_packed_kernel without the slot permutation: output stays in
    packed (subgrid-major) order, so stores are contiguous and the inner
    loop vectorizes. Paired with the *_packed MLP kernels."""
    gh, gw, depth, npar = cells.shape
    h, w, nk = guidance.shape
    i0s = np.empty(w, dtype=np.int64)
    i1s = np.empty(w, dtype=np.int64)
    dus = np.empty(w, dtype=cells.dtype)
    for x in range(w):
        if align_centers:
            u = (x + 0.5) * gw / w - 0.5
        else:
            u = x * gw / w
        if u < 0.0:
            u = 0.0
        if u > gw - 1.0:
            u = gw - 1.0
        i0 = int(math.floor(u))
        if i0 > gw - 1:
            i0 = gw - 1
        i0s[x] = i0
        i1s[x] = min(i0 + 1, gw - 1)
        dus[x] = u - i0
    for y in prange(h):
        if align_centers:
            v = (y + 0.5) * gh / h - 0.5
        else:
            v = y * gh / h
        if v < 0.0:
            v = 0.0
        if v > gh - 1.0:
            v = gh - 1.0
        j0 = int(math.floor(v))
        if j0 > gh - 1:
            j0 = gh - 1
        dv = v - j0
        j1 = min(j0 + 1, gh - 1)
        row0 = cells[j0]
        row1 = cells[j1]
        for x in range(w):
            i0 = i0s[x]
            i1 = i1s[x]
            du = dus[x]
            w00 = (1.0 - du) * (1.0 - dv)
            w10 = du * (1.0 - dv)
            w01 = (1.0 - du) * dv
            w11 = du * dv
            c00 = row0[i0]
            c10 = row0[i1]
            c01 = row1[i0]
            c11 = row1[i1]
            ob = out[y, x]
            for k in range(nk):
                g = guidance[y, x, k]
                if g < 0.0:
                    g = 0.0
                if g > 1.0:
                    g = 1.0
                r = g * (depth - 1)
                k0 = int(math.floor(r))
                if k0 > depth - 1:
                    k0 = depth - 1
                dr = r - k0
                k1 = min(k0 + 1, depth - 1)
                base = pg * k
                for p in range(base, base + pg):
                    lo = (w00 * c00[k0, p] + w10 * c10[k0, p]
                          + w01 * c01[k0, p] + w11 * c11[k0, p])
                    hi = (w00 * c00[k1, p] + w10 * c10[k1, p]
                          + w01 * c01[k1, p] + w11 * c11[k1, p])
                    ob[p] = lo + dr * (hi - lo)


@njit(cache=True, parallel=True, fastmath=True)
def mlp_stage1_packed_kernel(params, img, z):
    """z = relu(W1 @ rgb + b1) with packed layout: W1[i][c] = p[8c + i],
    b1[i] = p[24 + i]. Column-major lets the hidden loop vectorize."""
    h, w, _ = img.shape
    nh = z.shape[2]
    for y in prange(h):
        for x in range(w):
            p = params[y, x]
            r = img[y, x, 0]
            g = img[y, x, 1]
            b = img[y, x, 2]
            for i in range(nh):
                acc = p[3 * nh + i] + p[i] * r + p[nh + i] * g + p[2 * nh + i] * b
                z[y, x, i] = acc if acc > 0.0 else 0.0


@njit(cache=True, parallel=True, fastmath=True)
def mlp_stage2_packed_kernel(params, z, out):
    """out = W2 @ z + b2 with packed layout: W2[o][h] = p[3h + o],
    b2[o] = p[24 + o]."""
    h, w, nh = z.shape
    no = out.shape[2]
    for y in prange(h):
        for x in range(w):
            p = params[y, x]
            zz = z[y, x]
            for o in range(no):
                acc = p[no * nh + o]
                for c in range(nh):
                    acc += p[no * c + o] * zz[c]
                out[y, x, o] = acc


@njit(cache=True, parallel=True, fastmath=True)
def affine_packed_kernel(params, img, out):
    """out = alpha @ rgb + beta with packed layout: row r of alpha at
    p[4r:4r+3], beta[r] = p[4r + 3]."""
    h, w, nc = img.shape
    for y in prange(h):
        for x in range(w):
            p = params[y, x]
            px = img[y, x]
            for i in range(nc):
                acc = p[4 * i + 3]
                for c in range(nc):
                    acc += p[4 * i + c] * px[c]
                out[y, x, i] = acc


@njit(cache=True, parallel=True)
def mlp_stage1_kernel(params, img, z):
    """z = relu(W1 @ rgb + b1); params layout [W1 row-major 8x3, b1 8]."""
    h, w, _ = img.shape
    nh = z.shape[2]
    nc = img.shape[2]
    for y in prange(h):
        for x in range(w):
            p = params[y, x]
            px = img[y, x]
            for i in range(nh):
                acc = p[nh * nc + i]
                for c in range(nc):
                    acc += p[nc * i + c] * px[c]
                z[y, x, i] = acc if acc > 0.0 else 0.0


@njit(cache=True, parallel=True)
def mlp_stage2_kernel(params, z, out):
    """out = W2 @ z + b2; params layout [W2 row-major 3x8, b2 3]."""
    h, w, nh = z.shape
    no = out.shape[2]
    for y in prange(h):
        for x in range(w):
            p = params[y, x]
            zz = z[y, x]
            for i in range(no):
                acc = p[no * nh + i]
                for c in range(nh):
                    acc += p[nh * i + c] * zz[c]
                out[y, x, i] = acc


@njit(cache=True, parallel=True)
def affine_kernel(params, img, out):
    """out = alpha @ rgb + beta; params layout [alpha row-major 3x3, beta 3]."""
    h, w, nc = img.shape
    for y in prange(h):
        for x in range(w):
            p = params[y, x]
            px = img[y, x]
            for i in range(nc):
                acc = p[9 + i]
                for c in range(nc):
                    acc += p[nc * i + c] * px[c]
                out[y, x, i] = acc


@njit(cache=True, parallel=True)
def pointwise_net_kernel(inp, w1, b1, w2, b2, out):
    """Per-pixel sigmoid(W2 @ relu(W1 @ x + b1) + b2)."""
    h, w, nc = inp.shape
    nh = b1.shape[0]
    nk = b2.shape[0]
    for y in prange(h):
        hidden = np.empty(nh, dtype=inp.dtype)
        for x in range(w):
            px = inp[y, x]
            for i in range(nh):
                acc = b1[i]
                for c in range(nc):
                    acc += w1[i, c] * px[c]
                hidden[i] = acc if acc > 0.0 else 0.0
            for k in range(nk):
                acc = b2[k]
                for i in range(nh):
                    acc += w2[k, i] * hidden[i]
                if acc >= 0.0:
                    out[y, x, k] = 1.0 / (1.0 + math.exp(-acc))
                else:
                    e = math.exp(acc)
                    out[y, x, k] = e / (1.0 + e)


@njit(cache=True, parallel=True)
def clamp01_kernel(img):
    h, w, c = img.shape
    for y in prange(h):
        for x in range(w):
            for k in range(c):
                v = img[y, x, k]
                if v < 0.0:
                    img[y, x, k] = 0.0
                elif v > 1.0:
                    img[y, x, k] = 1.0
