"""Independent reference computations used by the tests."""
import numpy as np

from stmr.spaces import LEFT, RIGHT, Continuity


def dense_basis(space, x, derivative=False):
    """(len(x), dim) basis values built from np.interp / explicit formulas."""
    x = np.asarray(x, dtype=float)
    n = space.n_cells
    nodes = np.linspace(0.0, 1.0, n + 1)
    cell = np.clip(np.floor(x * n).astype(int), 0, n - 1)
    if space.continuity is Continuity.DG:
        out = np.zeros((x.size, 2 * n))
        s = x * n - cell
        rows = np.arange(x.size)
        if derivative:
            out[rows, 2 * cell] = -n
            out[rows, 2 * cell + 1] = n
        else:
            out[rows, 2 * cell] = 1 - s
            out[rows, 2 * cell + 1] = s
        return out
    cols = []
    for j in range(n + 1):
        e = np.zeros(n + 1)
        e[j] = 1.0
        if derivative:
            cols.append((e[cell + 1] - e[cell]) * n)
        else:
            cols.append(np.interp(x, nodes, e))
    full = np.stack(cols, axis=1)
    keep = np.ones(n + 1, bool)
    if LEFT in space.essential_bc:
        keep[0] = False
    if RIGHT in space.essential_bc:
        keep[-1] = False
    return full[:, keep]


def gauss10(n_cells):
    g, w = np.polynomial.legendre.leggauss(10)
    a = np.arange(n_cells)[:, None] / n_cells
    x = (a + (g[None, :] + 1) / (2 * n_cells)).ravel()
    return x, np.tile(w / (2 * n_cells), n_cells)


def dense_pairing(row, col, d_row=False, d_col=False):
    n = max(row.n_cells, col.n_cells)
    x, w = gauss10(n)
    R = dense_basis(row, x, d_row)
    C = dense_basis(col, x, d_col)
    return R.T @ (w[:, None] * C)


def antiderivative(space, x):
    """int_0^x phi_j for every basis function (C0 only), exact."""
    n = space.n_cells
    x = np.asarray(x, dtype=float)
    nodes = np.linspace(0, 1, n + 1)
    full = np.zeros((x.size, n + 1))
    h = 1.0 / n
    for j in range(n + 1):
        lo, hi = nodes[max(j - 1, 0)], nodes[min(j + 1, n)]
        # rising part on [x_{j-1}, x_j], falling part on [x_j, x_{j+1}]
        if j > 0:
            s = np.clip(x, lo, nodes[j]) - lo
            full[:, j] += s**2 / (2 * h)
        if j < n:
            s = np.clip(x, nodes[j], hi) - nodes[j]
            full[:, j] += s - s**2 / (2 * h)
    keep = np.ones(n + 1, bool)
    if LEFT in space.essential_bc:
        keep[0] = False
    if RIGHT in space.essential_bc:
        keep[-1] = False
    return full[:, keep]


def indicator_load_oracle(Y):
    """int int 1{x > t} phi_p(t) psi_q(x), integrating x exactly and t by
    Gauss rules split at every mesh node of both factors."""
    Xs = Y.space
    brk = np.union1d(np.linspace(0, 1, Y.time.n_cells + 1), np.linspace(0, 1, Xs.n_cells + 1))
    g, w = np.polynomial.legendre.leggauss(10)
    out = np.zeros((Y.time.dim, Xs.dim))
    for a, b in zip(brk[:-1], brk[1:]):
        t = a + (g + 1) * (b - a) / 2
        wt = w * (b - a) / 2
        tail = antiderivative(Xs, np.ones(1)) - antiderivative(Xs, t)
        out += dense_basis(Y.time, t).T @ (wt[:, None] * tail)
    return out.ravel()
