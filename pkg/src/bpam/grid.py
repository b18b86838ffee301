"""Bilateral grid data structures, coordinate lifting, and differentiable slicing.

A grid stores P transform parameters per cell over (spatial y, spatial x,
intensity). Slicing reads per-pixel parameters by trilinear interpolation
at coordinates given by pixel position and a guidance value in [0, 1];
the intensity coordinate is r = g * (depth - 1) so both endpoints land on
a real depth slice.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class GridGeometry:
    """Spatial/intensity mapping between an image and a grid."""
    grid_h: int
    grid_w: int
    depth: int
    image_h: int
    image_w: int
    align_centers: bool = True
    intensity_range: float = 255.0  # only used by the stride-literal lift mode

    def __post_init__(self):
        if min(self.grid_h, self.grid_w, self.depth) < 1:
            raise ValueError(f"grid dims must be >= 1: {self}")
        if self.image_h < self.grid_h or self.image_w < self.grid_w:
            raise ValueError(f"image smaller than grid: {self}")

    @property
    def stride_x(self):
        return self.image_w / self.grid_w

    @property
    def stride_y(self):
        return self.image_h / self.grid_h


@dataclass
class BilateralGrid:
    """Cell array indexed [y][x][z][p] plus its geometry."""
    geometry: GridGeometry
    cells: np.ndarray

    def __post_init__(self):
        g = self.geometry
        expect = (g.grid_h, g.grid_w, g.depth)
        if self.cells.ndim != 4 or self.cells.shape[:3] != expect:
            raise ValueError(
                f"cells shape {self.cells.shape} inconsistent with geometry {expect}")

    @property
    def params_per_cell(self):
        return self.cells.shape[3]


@dataclass
class SubgridSet:
    """Decomposition view of one grid: per-category subgrids + roles."""
    subgrids: list
    roles: list
    stage: object  # 1, 2, or "affine"
    packed: np.ndarray = None  # (gh, gw, depth, sum P_k) subgrid-major cells

    def __post_init__(self):
        geo = self.subgrids[0].geometry
        for g in self.subgrids[1:]:
            if g.geometry != geo:
                raise ValueError("subgrids must share one geometry")

    @property
    def geometry(self):
        return self.subgrids[0].geometry

    def packed_cells(self):
        """Subgrid-major cell array for the fused slicing kernel.

        decompose() pre-builds this with the subgrids as views into it;
        hand-assembled sets pay a concatenation here each call."""
        if self.packed is not None:
            return self.packed
        return np.concatenate([g.cells for g in self.subgrids], axis=-1)


# Slot layout per stage: which positions of the monolithic parameter vector
# each subgrid owns. Stage 1 is [W1 row-major 8x3, b1]; subgrid c takes
# column c of W1. Stage 2 is [W2 row-major 3x8, b2]; subgrid h takes column
# h of W2. Affine is [alpha row-major 3x3, beta]; subgrid r takes row r plus
# its bias.
_STAGE_SLOTS = {
    1: [np.arange(c, 24, 3) for c in range(3)] + [np.arange(24, 32)],
    2: [np.arange(h, 24, 8) for h in range(8)] + [np.arange(24, 27)],
    "affine": [np.array([3 * r, 3 * r + 1, 3 * r + 2, 9 + r]) for r in range(3)],
}
_STAGE_P = {1: 32, 2: 27, "affine": 12}


def stage_slots(stage):
    if stage not in _STAGE_SLOTS:
        raise ValueError(f"unknown decomposition stage {stage!r}")
    return _STAGE_SLOTS[stage]


def lift(x, y, g, geom):
    """Map a pixel (x, y) with guidance value g to continuous grid coords."""
    if geom.align_centers:
        u = (x + 0.5) * geom.grid_w / geom.image_w - 0.5
        v = (y + 0.5) * geom.grid_h / geom.image_h - 0.5
    else:
        u = x * geom.grid_w / geom.image_w
        v = y * geom.grid_h / geom.image_h
    g = min(max(g, 0.0), 1.0)
    r = g * (geom.depth - 1)
    return u, v, r


def split_frac(c, dim):
    """Split a continuous coordinate into (cell index, fraction), clamping
    to [0, dim-1] so out-of-range coordinates replicate the edge cell."""
    c = min(max(c, 0.0), dim - 1.0)
    i0 = min(int(math.floor(c)), dim - 1)
    return i0, c - i0


def trilinear_weights(du, dv, dr):
    """The 8 corner weights as a (2, 2, 2) array indexed [a, b, c] for the
    (u, v, r) axes. Always sums to 1."""
    wu = np.array([1.0 - du, du])
    wv = np.array([1.0 - dv, dv])
    wr = np.array([1.0 - dr, dr])
    return wu[:, None, None] * wv[None, :, None] * wr[None, None, :]


def slice(grid, guidance):
    """Slice per-pixel parameters out of a grid with a single-channel
    guidance map. Returns an (H, W, P) array in the grid's dtype."""
    geom = grid.geometry
    guidance = np.asarray(guidance)
    if guidance.shape != (geom.image_h, geom.image_w):
        raise ValueError(
            f"guidance shape {guidance.shape} != image dims "
            f"({geom.image_h}, {geom.image_w})")
    npar = grid.params_per_cell
    out = np.empty(guidance.shape + (npar,), dtype=grid.cells.dtype)
    kernels.slice_packed_kernel(
        grid.cells, guidance.astype(grid.cells.dtype, copy=False)[:, :, None],
        npar, np.arange(npar, dtype=np.int64), geom.align_centers, out)
    return out


def _axis_coords(n_pix, n_cells, align_centers, dtype=np.float64):
    """Vectorized split of one spatial axis: (i0, i1, delta) per pixel."""
    pix = np.arange(n_pix, dtype=dtype)
    if align_centers:
        c = (pix + 0.5) * n_cells / n_pix - 0.5
    else:
        c = pix * n_cells / n_pix
    c = np.clip(c, 0.0, n_cells - 1.0)
    i0 = np.minimum(np.floor(c).astype(np.int64), n_cells - 1)
    return i0, np.minimum(i0 + 1, n_cells - 1), c - i0


def _intensity_coords(guidance, depth):
    g = np.clip(guidance, 0.0, 1.0)
    r = g * (depth - 1)
    k0 = np.minimum(np.floor(r).astype(np.int64), depth - 1)
    return k0, np.minimum(k0 + 1, depth - 1), r - k0


def slice_backward(grid, guidance, upstream):
    """Gradients of a slice call w.r.t. grid cells and guidance.

    grad_cells scatter-adds each pixel's weighted upstream into its 8
    corner cells (64-bit accumulation); grad_guidance is the intensity
    directional derivative, zero where the depth neighbor is clamped.
    """
    geom = grid.geometry
    guidance = np.asarray(guidance)
    upstream = np.asarray(upstream)
    P = grid.params_per_cell
    if guidance.shape != (geom.image_h, geom.image_w):
        raise ValueError(f"guidance shape {guidance.shape} mismatch")
    if upstream.shape != guidance.shape + (P,):
        raise ValueError(f"upstream shape {upstream.shape} mismatch")

    gh, gw, depth = geom.grid_h, geom.grid_w, geom.depth
    i0, i1, du = _axis_coords(geom.image_w, gw, geom.align_centers)
    j0, j1, dv = _axis_coords(geom.image_h, gh, geom.align_centers)
    k0, k1, dr = _intensity_coords(guidance.astype(np.float64), depth)

    i0, i1, du = i0[None, :], i1[None, :], du[None, :]
    j0, j1, dv = j0[:, None], j1[:, None], dv[:, None]

    sp_w = {
        (0, 0): (1.0 - du) * (1.0 - dv),
        (1, 0): du * (1.0 - dv),
        (0, 1): (1.0 - du) * dv,
        (1, 1): du * dv,
    }
    up64 = upstream.astype(np.float64)
    cells = grid.cells
    flat_grad = np.zeros((gh * gw * depth, P), dtype=np.float64)
    grad_guid = np.zeros(guidance.shape, dtype=np.float64)

    for (a, b), w_ab in sp_w.items():
        ii = i1 if a else i0
        jj = j1 if b else j0
        cell_base = (jj * gw + ii) * depth
        for cc, kk, w_r in ((0, k0, 1.0 - dr), (1, k1, dr)):
            w = w_ab * w_r
            np.add.at(flat_grad, np.broadcast_to(cell_base + kk, guidance.shape).ravel(),
                      (w[..., None] * up64).reshape(-1, P))
        lo = cells[jj, ii, k0]
        hi = cells[jj, ii, k1]
        grad_guid += w_ab * ((hi.astype(np.float64) - lo) * up64).sum(axis=-1)

    grad_guid *= depth - 1
    dtype = upstream.dtype
    return (flat_grad.reshape(gh, gw, depth, P).astype(dtype),
            grad_guid.astype(dtype))


def unroll_grid(feat, depth, params, geom):
    """Reshape a (Gh, Gw, depth*params) feature map into a grid:
    cells[y, x, z, p] = feat[y, x, depth*p + z]."""
    feat = np.asarray(feat)
    if feat.shape != (geom.grid_h, geom.grid_w, depth * params):
        raise ValueError(
            f"feature shape {feat.shape} != grid ({geom.grid_h}, {geom.grid_w}, "
            f"{depth * params})")
    cells = feat.reshape(geom.grid_h, geom.grid_w, params, depth).transpose(0, 1, 3, 2)
    return BilateralGrid(geom, np.ascontiguousarray(cells))


def unroll_backward(grad_cells, depth, params):
    """Inverse permutation of unroll_grid, applied to a cell gradient."""
    gh, gw = grad_cells.shape[:2]
    return np.ascontiguousarray(
        grad_cells.transpose(0, 1, 3, 2).reshape(gh, gw, params * depth))


def decompose(grid, stage):
    """Partition a monolithic grid's parameter slots into category subgrids."""
    slots = stage_slots(stage)
    if grid.params_per_cell != _STAGE_P[stage]:
        raise ValueError(
            f"stage {stage} needs P={_STAGE_P[stage]}, grid has {grid.params_per_cell}")
    subgrids, roles = [], []
    n_weight = len(slots) if stage == "affine" else len(slots) - 1
    # one permuted copy; subgrids are views into it so the fused slicing
    # kernel and per-subgrid access always agree
    packed = np.ascontiguousarray(grid.cells[..., np.concatenate(slots)])
    off = 0
    for k, sl in enumerate(slots):
        subgrids.append(BilateralGrid(grid.geometry,
                                      packed[..., off:off + len(sl)]))
        roles.append(f"weight:{k}" if k < n_weight else "bias")
        off += len(sl)
    out = SubgridSet(subgrids, roles, stage)
    out.packed = packed
    return out


def recompose(sub):
    """Inverse of decompose; bit-exact slot round-trip."""
    slots = stage_slots(sub.stage)
    geom = sub.geometry
    P = _STAGE_P[sub.stage]
    cells = np.empty(sub.subgrids[0].cells.shape[:3] + (P,),
                     dtype=sub.subgrids[0].cells.dtype)
    for sl, g in zip(slots, sub.subgrids):
        cells[..., sl] = g.cells
    return BilateralGrid(geom, cells)


def recompose_cells(cell_list, stage):
    """Assemble per-subgrid cell arrays (e.g. gradients) into monolithic layout."""
    slots = stage_slots(stage)
    P = _STAGE_P[stage]
    out = np.empty(cell_list[0].shape[:3] + (P,), dtype=cell_list[0].dtype)
    for sl, c in zip(slots, cell_list):
        out[..., sl] = c
    return out


def slice_decomposed(sub, guidance, packed_out=False):
    """Slice each subgrid with its own guidance channel; reassemble the
    full parameter vector in monolithic slot order, or keep subgrid-major
    (packed) order when packed_out is set (used with the packed MLP
    kernels, avoids a per-pixel scatter)."""
    guidance = np.asarray(guidance)
    slots = stage_slots(sub.stage)
    if guidance.ndim != 3 or guidance.shape[2] != len(sub.subgrids):
        raise ValueError(
            f"guidance needs {len(sub.subgrids)} channels, got shape {guidance.shape}")
    geom = sub.geometry
    if guidance.shape[:2] != (geom.image_h, geom.image_w):
        raise ValueError(
            f"guidance shape {guidance.shape[:2]} != image dims "
            f"({geom.image_h}, {geom.image_w})")
    P = _STAGE_P[sub.stage]
    packed = sub.packed_cells()
    pg = len(slots[0])  # every stage decomposes into equal-size groups
    guidance = guidance.astype(packed.dtype, copy=False)
    out = np.empty(guidance.shape[:2] + (P,), dtype=packed.dtype)
    if packed_out:
        kernels.slice_groups_kernel(packed, guidance, pg,
                                    geom.align_centers, out)
    else:
        slot_map = np.concatenate(slots).astype(np.int64)
        kernels.slice_packed_kernel(packed, guidance, pg, slot_map,
                                    geom.align_centers, out)
    return out


def slice_decomposed_backward(sub, guidance, upstream):
    """Backward of slice_decomposed: per-subgrid cell gradients plus the
    multi-channel guidance gradient."""
    slots = stage_slots(sub.stage)
    grad_cells = []
    grad_guid = np.empty(guidance.shape[:2] + (len(sub.subgrids),),
                         dtype=upstream.dtype)
    for k, (sl, g) in enumerate(zip(slots, sub.subgrids)):
        gc, gg = slice_backward(g, guidance[..., k], upstream[..., sl])
        grad_cells.append(gc)
        grad_guid[..., k] = gg
    return grad_cells, grad_guid
