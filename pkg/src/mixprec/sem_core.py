"""Spectral-element kernels for the Poisson operator on a box of affine hexahedra.

Field layout is element-major with shape ``(E, nx1, nx1, nx1)`` indexed
``[e, k, j, i]`` (``i`` fastest); flat fields have length ``E * nx1**3``.
Every arithmetic operation goes through a :class:`~mixprec.context.Context`
under the kernel's name, so the same code serves as the IEEE reference, the
VPREC/MCA analysis path and (with float32 arrays) the native single path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .context import Context

__all__ = [
    "Mesh",
    "gll_setup",
    "setup_box_mesh",
    "mxm",
    "local_grad3",
    "local_grad3_t",
    "ax",
    "gather_scatter",
    "mask",
    "glsc3",
    "add2s1",
    "add2s2",
    "add2",
    "manufactured_rhs",
    "save_field",
    "load_field",
]


def _legendre(n, x):
    """Legendre polynomial P_n and its derivative at ``x`` by the three-term recurrence."""
    p0, p1 = np.ones_like(x), x
    if n == 0:
        return p0, np.zeros_like(x)
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = n * (x * p1 - p0) / (x * x - 1.0)
    # endpoint limit of the derivative
    ends = np.abs(np.abs(x) - 1.0) < 1e-15
    dp = np.where(ends, np.sign(x) ** (n + 1) * n * (n + 1) / 2.0, dp)
    return p1, dp


def gll_setup(nx1: int, tol: float = 1e-14, max_iter: int = 100):
    """Gauss-Lobatto-Legendre nodes, weights and derivative matrix on [-1, 1].

    Interior nodes are the roots of P'_N (N = nx1 - 1), found by Newton's
    method from Chebyshev-Gauss-Lobatto guesses. ``D[i, j]`` is the
    derivative of the j-th Lagrange basis function at node i.
    """
    if not 2 <= nx1 <= 32:
        raise ValueError(f"nx1 must be in [2, 32], got {nx1}")
    n = nx1 - 1
    x = -np.cos(np.pi * np.arange(nx1) / n)
    interior = x[1:-1].copy()
    for _ in range(max_iter):
        # Newton on P'_N using P''_N from the Legendre ODE
        p, dp = _legendre(n, interior)
        d2p = (2 * interior * dp - n * (n + 1) * p) / (1 - interior**2)
        step = dp / d2p
        interior -= step
        if interior.size == 0 or np.max(np.abs(step)) < tol:
            break
    else:
        raise RuntimeError(f"GLL Newton iteration did not converge for nx1={nx1}")
    x[1:-1] = interior
    x[0], x[-1] = -1.0, 1.0
    pn, _ = _legendre(n, x)
    w = 2.0 / (n * (n + 1) * pn**2)

    # barycentric Lagrange differentiation, diagonal from the negative row sum
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / np.prod(diff, axis=1)
    D = (bw[None, :] / bw[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return x, w, D


@dataclass(eq=False)
class Mesh:
    ex: int
    ey: int
    ez: int
    nx1: int
    gll_nodes: np.ndarray
    gll_weights: np.ndarray
    D: np.ndarray
    g: np.ndarray             # (6, E, nx1, nx1, nx1): g11, g12, g13, g22, g23, g33
    gs_map: np.ndarray        # local point -> global dof index
    mask: np.ndarray          # 1.0 interior, 0.0 on the Dirichlet boundary
    c: np.ndarray             # inverse multiplicity
    coords: np.ndarray        # (3, n) physical coordinates of local points

    @property
    def E(self) -> int:
        return self.ex * self.ey * self.ez

    @property
    def n(self) -> int:
        return self.E * self.nx1**3

    @property
    def shape(self):
        return (self.E, self.nx1, self.nx1, self.nx1)

    @property
    def n_global(self) -> int:
        return int(self.gs_map.max()) + 1

    @cached_property
    def interior_dofs(self) -> int:
        return int(np.unique(self.gs_map[self.mask.ravel() > 0]).size)

    @cached_property
    def multiplicity(self) -> np.ndarray:
        return np.bincount(self.gs_map)[self.gs_map].astype(np.float64)

    @cached_property
    def gs_slots(self):
        """Per copy-slot (global ids, local ids) lists driving the gather-scatter sum."""
        order = np.argsort(self.gs_map, kind="stable")
        gids = self.gs_map[order]
        counts = np.bincount(self.gs_map)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        rank = np.arange(order.size) - starts[gids]
        return [(gids[rank == s], order[rank == s]) for s in range(int(counts.max()))]

    def astype(self, dtype) -> "Mesh":
        """Copy with the floating-point arrays stored at ``dtype`` width."""
        cast = lambda a: a.astype(dtype)  # noqa: E731
        return Mesh(self.ex, self.ey, self.ez, self.nx1, cast(self.gll_nodes), cast(self.gll_weights),
                    cast(self.D), cast(self.g), self.gs_map, cast(self.mask), cast(self.c),
                    self.coords)

    def describe(self) -> dict:
        return {"ex": self.ex, "ey": self.ey, "ez": self.ez, "nx1": self.nx1}


def setup_box_mesh(ex: int, ey: int, ez: int, nx1: int) -> Mesh:
    """Unit cube split into ``ex * ey * ez`` affine elements, homogeneous Dirichlet walls."""
    if min(ex, ey, ez) < 1:
        raise ValueError("element counts must be positive")
    z, w, D = gll_setup(nx1)
    E = ex * ey * ez
    m = nx1 - 1
    ng = (ex * m + 1, ey * m + 1, ez * m + 1)

    e = np.arange(E)
    exi, eyi, ezi = e % ex, (e // ex) % ey, e // (ex * ey)
    loc = np.arange(nx1)
    # global grid index per direction, broadcast to (E, k, j, i)
    gx = (exi[:, None, None, None] * m + loc[None, None, None, :])
    gy = (eyi[:, None, None, None] * m + loc[None, None, :, None])
    gz = (ezi[:, None, None, None] * m + loc[None, :, None, None])
    gx, gy, gz = np.broadcast_arrays(gx, gy, gz)
    gs_map = (gx + ng[0] * (gy + ng[1] * gz)).ravel()

    def axis_coords(nel, count):
        gi = np.arange(count)
        el = np.minimum(gi // m, nel - 1)
        return (el + (z[gi - el * m] + 1.0) / 2.0) / nel

    xs, ys, zs = axis_coords(ex, ng[0]), axis_coords(ey, ng[1]), axis_coords(ez, ng[2])
    coords = np.stack([xs[gx].ravel(), ys[gy].ravel(), zs[gz].ravel()])

    boundary = (gx == 0) | (gx == ng[0] - 1) | (gy == 0) | (gy == ng[1] - 1) | (gz == 0) | (gz == ng[2] - 1)
    mask_ = np.where(boundary, 0.0, 1.0).ravel()
    mult = np.bincount(gs_map)[gs_map]
    c = 1.0 / mult

    hx, hy, hz = 1.0 / ex, 1.0 / ey, 1.0 / ez
    jac = hx * hy * hz / 8.0
    wq = (w[:, None, None] * w[None, :, None] * w[None, None, :]) * jac  # [k, j, i]
    g = np.zeros((6, E, nx1, nx1, nx1))
    g[0] = wq * (2.0 / hx) ** 2
    g[3] = wq * (2.0 / hy) ** 2
    g[5] = wq * (2.0 / hz) ** 2
    return Mesh(ex, ey, ez, nx1, z, w, D, g, gs_map, mask_, c.astype(np.float64), coords)


def _charge(ctx, kernel, arrays_read, arrays_written, width):
    ctx.charge_traffic(kernel, arrays_read * width, arrays_written * width)


def mxm(A, B, ctx: Context, kernel: str = "mxm"):
    """Matrix product ``A @ B`` with a sequential inner accumulation.

    Leading axes broadcast (batched products); flops per product are
    ``2*n1*n2*n3 - n1*n3``.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    n1, n2 = A.shape[-2:]
    if B.shape[-2] != n2:
        raise ValueError(f"mxm dimension mismatch: {A.shape} @ {B.shape}")
    n3 = B.shape[-1]
    batch = np.broadcast_shapes(A.shape[:-2], B.shape[:-2])
    ctx.call(kernel)
    nb = int(np.prod(batch)) if batch else 1
    width = np.result_type(A, B).itemsize
    ctx.charge_traffic(kernel, nb * (n1 * n2 + n2 * n3) * width, nb * n1 * n3 * width)
    if n1 == 0 or n3 == 0:
        return np.zeros(batch + (n1, n3), dtype=np.result_type(A, B))
    if n2 == 0:
        return np.zeros(batch + (n1, n3), dtype=np.result_type(A, B))
    C = ctx.op(kernel, A[..., :, 0:1], B[..., 0:1, :], "*")
    for k in range(1, n2):
        C = ctx.op(kernel, C, ctx.op(kernel, A[..., :, k:k + 1], B[..., k:k + 1, :], "*"), "+")
    return np.broadcast_to(C, batch + (n1, n3)).copy()


def local_grad3(u, D, ctx: Context):
    """Reference-space gradient of element blocks ``u[..., k, j, i]``."""
    nx = D.shape[0]
    lead = u.shape[:-3]
    Dt = np.ascontiguousarray(D.T)
    ur = mxm(u.reshape(lead + (nx * nx, nx)), Dt, ctx).reshape(u.shape)
    us = mxm(D, u, ctx)  # one nx x nx product per k-slab
    ut = mxm(D, u.reshape(lead + (nx, nx * nx)), ctx).reshape(u.shape)
    return ur, us, ut


def local_grad3_t(ur, us, ut, D, ctx: Context):
    """Adjoint of :func:`local_grad3`."""
    nx = D.shape[0]
    lead = ur.shape[:-3]
    Dt = np.ascontiguousarray(D.T)
    u = mxm(ur.reshape(lead + (nx * nx, nx)), D, ctx).reshape(ur.shape)
    tmp = mxm(Dt, us, ctx)
    u = add2(u, tmp, ctx)
    tmp = mxm(Dt, ut.reshape(lead + (nx, nx * nx)), ctx).reshape(ur.shape)
    return add2(u, tmp, ctx)


def gather_scatter(f, mesh: Mesh, ctx: Context, kernel: str = "gs_op"):
    """Direct-stiffness summation: every copy of a global dof receives the sum of all copies."""
    flat = np.asarray(f).reshape(-1)
    ctx.call(kernel)
    ctx.charge_traffic(kernel, flat.size * flat.itemsize, flat.size * flat.itemsize)
    slots = mesh.gs_slots
    if len(slots) == 1:
        return flat.copy().reshape(np.shape(f))
    acc = np.zeros(mesh.n_global, dtype=flat.dtype)
    gid0, lid0 = slots[0]
    acc[gid0] = flat[lid0]
    for gids, lids in slots[1:]:
        acc[gids] = ctx.op(kernel, acc[gids], flat[lids], "+")
    return acc[mesh.gs_map].reshape(np.shape(f))


def mask(f, mesh: Mesh):
    """Zero the Dirichlet boundary points (assignment, no arithmetic)."""
    return np.where(mesh.mask.reshape(np.shape(f)) > 0, f, np.zeros((), dtype=np.asarray(f).dtype))


def ax(p, mesh: Mesh, ctx: Context):
    """Matrix-free stiffness action ``w = mask(gs(A_local p))``."""
    p = np.asarray(p)
    if p.size != mesh.n:
        raise ValueError(f"field of size {p.size} does not match mesh with {mesh.n} points")
    u = p.reshape(mesh.shape)
    g = mesh.g
    ctx.call("ax")
    width = p.itemsize
    ctx.charge_traffic("ax", 7 * mesh.n * width, mesh.n * width)
    ur, us, ut = local_grad3(u, mesh.D, ctx)
    op = ctx.op

    def metric(a, b, c_):
        t = op("ax", op("ax", a, ur, "*"), op("ax", b, us, "*"), "+")
        return op("ax", t, op("ax", c_, ut, "*"), "+")

    wr = metric(g[0], g[1], g[2])
    ws = metric(g[1], g[3], g[4])
    wt = metric(g[2], g[4], g[5])
    w = local_grad3_t(wr, ws, wt, mesh.D, ctx)
    w = gather_scatter(w, mesh, ctx)
    return mask(w, mesh).reshape(p.shape)


def _check(*arrays):
    n = np.size(arrays[0])
    for a in arrays[1:]:
        if np.size(a) != n:
            raise ValueError("vector length mismatch")
    return n


def glsc3(a, b, c, ctx: Context):
    """Weighted inner product ``sum(a * b * c)``, accumulated left to right."""
    n = _check(a, b, c)
    ctx.call("glsc3")
    width = np.asarray(a).itemsize
    ctx.charge_traffic("glsc3", 3 * n * width, 0)
    prod = ctx.op("glsc3", ctx.op("glsc3", np.ravel(a), np.ravel(b), "*"), np.ravel(c), "*")
    return ctx.sum("glsc3", prod)


def add2s1(a, b, beta, ctx: Context, keys=None):
    """``a <- beta * a + b`` (in place; also returned)."""
    n = _check(a, b)
    ctx.call("add2s1")
    ctx.charge_traffic("add2s1", 2 * n * a.itemsize, n * a.itemsize)
    a[...] = ctx.op("add2s1", ctx.op("add2s1", beta, a, "*", keys), b, "+", keys)
    return a


def add2s2(a, b, alpha, ctx: Context, keys=None):
    """``a <- a + alpha * b`` (in place; also returned)."""
    n = _check(a, b)
    ctx.call("add2s2")
    ctx.charge_traffic("add2s2", 2 * n * a.itemsize, n * a.itemsize)
    a[...] = ctx.op("add2s2", a, ctx.op("add2s2", alpha, b, "*", keys), "+", keys)
    return a


def add2(a, b, ctx: Context):
    """``a + b`` under the ``add2`` kernel."""
    n = _check(a, b)
    ctx.call("add2")
    ctx.charge_traffic("add2", 2 * n * a.itemsize, n * a.itemsize)
    return ctx.op("add2", a, b, "+")


def manufactured_rhs(mesh: Mesh, ctx: Context):
    """Masked ``sin(pi x) sin(pi y) sin(pi z)`` sampled at the grid points."""
    ctx.call("init_rhs")
    sx, sy, sz = np.sin(np.pi * mesh.coords)
    f = ctx.op("init_rhs", ctx.op("init_rhs", sx, sy, "*"), sz, "*")
    return mask(np.asarray(f, dtype=np.float64), mesh)


def save_field(path, values, mesh: Mesh):
    """Write a field as little-endian binary64 plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    values = np.asarray(values)
    width = "single" if values.dtype == np.float32 else "double"
    values.astype("<f8").tofile(path)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"E": mesh.E, "nx1": mesh.nx1, "width": width}))


def load_field(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    values = np.fromfile(path, dtype="<f8")
    if values.size != meta["E"] * meta["nx1"] ** 3:
        raise ValueError("field length does not match its sidecar")
    if meta["width"] == "single":
        values = values.astype(np.float32)
    return values, meta
