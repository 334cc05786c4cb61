"""Space-time operators for the convection-diffusion model problem.

The spatial bilinear form is ``a(w, v) = eps (w', v') + b (w', v) + e (w, v)``
on the unit interval, and every space-time operator is a short sum of
Kronecker products ``A_t (x) B_x`` acting on time-major coefficient vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .spaces import (
    LEFT,
    RIGHT,
    Continuity,
    FESpace1D,
    TensorSpace,
    tabulate,
    trace_vector,
)


def gauss_rule(n: int, a: float = 0.0, b: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def composite_rule(n_cells: int, n_points: int):
    """Composite Gauss rule on a uniform partition of [0, 1]."""
    xr, wr = np.polynomial.legendre.leggauss(n_points)
    h = 1.0 / n_cells
    left = np.arange(n_cells)[:, None] * h
    x = left + 0.5 * h * (xr + 1.0)
    w = np.broadcast_to(0.5 * h * wr, x.shape)
    return x.ravel(), w.ravel()


def common_cells(row: FESpace1D, col: FESpace1D) -> int:
    """Cell count of the finer of two nested uniform partitions."""
    a, b = row.n_cells, col.n_cells
    fine, coarse = max(a, b), min(a, b)
    if fine % coarse:
        raise ValueError(f"partitions with {a} and {b} cells are not nested")
    return fine


def _pairing(row: FESpace1D, col: FESpace1D, d_row: bool, d_col: bool) -> sp.csr_matrix:
    x, w = composite_rule(common_cells(row, col), 2)
    Pr = tabulate(row, x, derivative=d_row)
    Pc = tabulate(col, x, derivative=d_col)
    M = (Pr.T @ sp.diags(w) @ Pc).tocsr()
    M.eliminate_zeros()
    return M


def mass_1d(row: FESpace1D, col: FESpace1D) -> sp.csr_matrix:
    """M[i, j] = int phi_j^col phi_i^row."""
    return _pairing(row, col, False, False)


def stiffness_1d(row: FESpace1D, col: FESpace1D) -> sp.csr_matrix:
    """S[i, j] = int (phi_j^col)' (phi_i^row)'."""
    return _pairing(row, col, True, True)


def convection_1d(row: FESpace1D, col: FESpace1D) -> sp.csr_matrix:
    """N[i, j] = int (phi_j^col)' phi_i^row (the column function is differentiated)."""
    return _pairing(row, col, False, True)


@dataclass
class KroneckerOp:
    """Sum of Kronecker products mapping col_space coefficients to row_space functionals."""

    terms: list
    row_space: TensorSpace
    col_space: TensorSpace

    def __post_init__(self):
        rt, rx = self.row_space.shape
        ct, cx = self.col_space.shape
        terms = []
        for At, Bx in self.terms:
            At, Bx = sp.csr_matrix(At), sp.csr_matrix(Bx)
            if At.shape != (rt, ct) or Bx.shape != (rx, cx):
                raise ValueError(
                    f"Kronecker term of shape {At.shape} x {Bx.shape} does not map "
                    f"{(ct, cx)} -> {(rt, rx)}"
                )
            terms.append((At, Bx))
        self.terms = terms

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_space.dim, self.col_space.dim

    def apply(self, v) -> np.ndarray:
        V = np.asarray(v, dtype=float).reshape(self.col_space.shape)
        out = np.zeros(self.row_space.shape)
        for At, Bx in self.terms:
            out += At @ (Bx @ V.T).T
        return out.ravel()

    __matmul__ = apply

    def apply_transpose(self, v) -> np.ndarray:
        V = np.asarray(v, dtype=float).reshape(self.row_space.shape)
        out = np.zeros(self.col_space.shape)
        for At, Bx in self.terms:
            out += At.T @ (Bx.T @ V.T).T
        return out.ravel()

    @property
    def T(self) -> "KroneckerOp":
        return KroneckerOp([(A.T, B.T) for A, B in self.terms], self.col_space, self.row_space)

    def to_sparse(self) -> sp.csr_matrix:
        out = sp.csr_matrix(self.shape)
        for At, Bx in self.terms:
            out = out + sp.kron(At, Bx, format="csr")
        return out.tocsr()

    def __add__(self, other: "KroneckerOp") -> "KroneckerOp":
        if other.row_space != self.row_space or other.col_space != self.col_space:
            raise ValueError("cannot add operators between different spaces")
        return KroneckerOp(self.terms + other.terms, self.row_space, self.col_space)

    def scaled(self, c: float) -> "KroneckerOp":
        return KroneckerOp([(c * A, B) for A, B in self.terms], self.row_space, self.col_space)


# -- problem data ---------------------------------------------------------


@dataclass(frozen=True)
class ZeroForcing:
    pass


@dataclass(frozen=True)
class SmoothManufactured:
    """Forcing derived from the exact solution u(t, x) = (t^2 + 1) sin(pi x)."""

    @staticmethod
    def exact(t, x):
        return (t**2 + 1.0) * np.sin(np.pi * x)


@dataclass(frozen=True)
class IndicatorDiagonal:
    """g(t, x) = 1 for x > t, 0 otherwise."""


@dataclass(frozen=True, eq=False)
class TrialImage:
    """Forcing g = B w for a trial function w in ``space`` (discrete data)."""

    space: TensorSpace
    coeffs: np.ndarray


@dataclass(frozen=True)
class ZeroInitial:
    pass


@dataclass(frozen=True)
class SinPi:
    """u0(x) = sin(pi x)."""


@dataclass(frozen=True, eq=False)
class DiscreteInitial:
    """u0 given as coefficients of a function in a spatial FE space."""

    space: FESpace1D
    coeffs: np.ndarray


@dataclass(frozen=True)
class ProblemSpec:
    epsilon: float
    b: float = 1.0
    e: float = 0.0
    gamma: frozenset = frozenset({LEFT, RIGHT})
    beta: float | None = None
    forcing: object = field(default_factory=ZeroForcing)
    u0: object = field(default_factory=ZeroInitial)
    weak_outflow: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gamma", frozenset(self.gamma))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.e < 0:
            raise ValueError("reaction coefficient must be nonnegative")
        if self.e == 0 and not self.gamma:
            raise ValueError("e = 0 needs a nonempty Dirichlet boundary for coercivity")
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 / self.epsilon if self.e == 0 else 1.0)
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.weak_outflow and RIGHT not in self.gamma:
            raise ValueError("weak outflow needs a Dirichlet condition at x = 1 to relax")

    @property
    def trial_bc(self) -> frozenset:
        """Boundary set imposed strongly on the trial space."""
        return self.gamma - {RIGHT} if self.weak_outflow else self.gamma


def _check_compatible(X: TensorSpace, Y: TensorSpace):
    if X.time.continuity is not Continuity.C0:
        raise ValueError("trial space must be continuous in time")
    common_cells(Y.time, X.time)
    if Y.space.n_cells % X.space.n_cells:
        raise ValueError("test spatial mesh must equal or refine the trial spatial mesh")


def spatial_operator(p: ProblemSpec, row: FESpace1D, col: FESpace1D) -> sp.csr_matrix:
    """Matrix of a(w, v) = eps (w', v') + b (w', v) + e (w, v)."""
    A = p.epsilon * stiffness_1d(row, col)
    if p.b:
        A = A + p.b * convection_1d(row, col)
    if p.e:
        A = A + p.e * mass_1d(row, col)
    return A.tocsr()


def symmetric_spatial(p: ProblemSpec, row: FESpace1D, col: FESpace1D) -> sp.csr_matrix:
    """Matrix of the symmetric part eps (w', v') + e (w, v) (div b = 0)."""
    A = p.epsilon * stiffness_1d(row, col)
    if p.e:
        A = A + p.e * mass_1d(row, col)
    return A.tocsr()


def assemble_B(p: ProblemSpec, X: TensorSpace, Y: TensorSpace) -> KroneckerOp:
    _check_compatible(X, Y)
    Ct = convection_1d(Y.time, X.time)
    Mt = mass_1d(Y.time, X.time)
    return KroneckerOp(
        [(Ct, mass_1d(Y.space, X.space)), (Mt, spatial_operator(p, Y.space, X.space))], Y, X
    )


def assemble_dt(X: TensorSpace, Y: TensorSpace) -> KroneckerOp:
    """The time derivative part of B."""
    _check_compatible(X, Y)
    return KroneckerOp([(convection_1d(Y.time, X.time), mass_1d(Y.space, X.space))], Y, X)


def assemble_As(p: ProblemSpec, Y: TensorSpace) -> KroneckerOp:
    """Gram matrix of the energy inner product on Y, as a single Kronecker term."""
    if p.e == 0 and not Y.space.essential_bc:
        raise ValueError("energy form is singular: e = 0 and no essential boundary condition")
    return KroneckerOp([(mass_1d(Y.time, Y.time), symmetric_spatial(p, Y.space, Y.space))], Y, Y)


def assemble_Aa(p: ProblemSpec, row: TensorSpace, col: TensorSpace) -> KroneckerOp:
    """Skew part b (w', v) of the spatial operator (constant b, so no div term)."""
    return KroneckerOp([(mass_1d(row.time, col.time), p.b * convection_1d(row.space, col.space))], row, col)


def assemble_C(p: ProblemSpec, X: TensorSpace, Y: TensorSpace) -> KroneckerOp:
    """C = B - A_s = time derivative plus skew part."""
    return assemble_dt(X, Y) + assemble_Aa(p, Y, X)


# -- load functionals -----------------------------------------------------


def smooth_forcing(p: ProblemSpec):
    pi = np.pi

    def g(t, x):
        s, c = np.sin(pi * x), np.cos(pi * x)
        return (
            2.0 * t * s
            + p.epsilon * pi**2 * (t**2 + 1.0) * s
            + p.b * pi * (t**2 + 1.0) * c
            + p.e * (t**2 + 1.0) * s
        )

    return g


def tensor_load(f, Y: TensorSpace, n_points: int = 5) -> np.ndarray:
    """Load vector int int f phi_i by tensor Gauss quadrature on the cells of Y."""
    t, wt = composite_rule(Y.time.n_cells, n_points)
    x, wx = composite_rule(Y.space.n_cells, n_points)
    F = f(t[:, None], x[None, :])
    Pt = tabulate(Y.time, t)
    Px = tabulate(Y.space, x)
    W = wt[:, None] * F * wx[None, :]
    return np.asarray(Pt.T @ (Px.T @ W.T).T).ravel()


def _clip_halfplane(poly):
    """Sutherland-Hodgman clip of a (t, x) polygon against x - t >= 0."""
    out = []
    n = len(poly)
    for k in range(n):
        P, Q = poly[k], poly[(k + 1) % n]
        dp, dq = P[1] - P[0], Q[1] - Q[0]
        if dp >= 0:
            out.append(P)
        if (dp >= 0) != (dq >= 0):
            s = dp / (dp - dq)
            out.append((P[0] + s * (Q[0] - P[0]), P[1] + s * (Q[1] - P[1])))
    return out


def _cut_cell_integrals(t0, t1, x0, x1) -> np.ndarray:
    """2x2 array of int over {x > t} of phi_p(t) psi_q(x) on one rectangle.

    The clipped polygon is fan-triangulated; the edge-midpoint rule is exact for
    the bilinear integrand.
    """
    poly = _clip_halfplane([(t0, x0), (t1, x0), (t1, x1), (t0, x1)])
    ht, hx = t1 - t0, x1 - x0
    out = np.zeros((2, 2))
    for k in range(1, len(poly) - 1):
        A, B, C = (np.array(v) for v in (poly[0], poly[k], poly[k + 1]))
        area = 0.5 * abs((B[0] - A[0]) * (C[1] - A[1]) - (C[0] - A[0]) * (B[1] - A[1]))
        if area == 0.0:
            continue
        for m in (0.5 * (A + B), 0.5 * (B + C), 0.5 * (C + A)):
            ft = np.array([(t1 - m[0]) / ht, (m[0] - t0) / ht])
            fx = np.array([(x1 - m[1]) / hx, (m[1] - x0) / hx])
            out += (area / 3.0) * np.outer(ft, fx)
    return out


def indicator_cell_integrals(nt: int, nx: int) -> np.ndarray:
    """(nt, nx, 2, 2) local integrals of the diagonal indicator on a uniform grid."""
    ht, hx = 1.0 / nt, 1.0 / nx
    t0 = np.arange(nt)[:, None] * ht
    x0 = np.arange(nx)[None, :] * hx
    inside = x0 >= t0 + ht
    outside = x0 + hx <= t0
    local = np.zeros((nt, nx, 2, 2))
    local[inside] = 0.25 * ht * hx
    for a, b in zip(*np.nonzero(~inside & ~outside)):
        local[a, b] = _cut_cell_integrals(a * ht, (a + 1) * ht, b * hx, (b + 1) * hx)
    return local


def indicator_load(Y: TensorSpace) -> np.ndarray:
    local = indicator_cell_integrals(Y.time.n_cells, Y.space.n_cells)
    tdofs = Y.time.cell_dofs()
    xdofs = Y.space.cell_dofs()
    L = np.zeros((Y.time.dim + 1, Y.space.dim + 1))  # spare row/col absorbs constrained dofs
    for p in range(2):
        for q in range(2):
            np.add.at(L, (tdofs[:, p][:, None], xdofs[:, q][None, :]), local[:, :, p, q])
    return L[:-1, :-1].ravel()


def assemble_load(p: ProblemSpec, Y: TensorSpace) -> np.ndarray:
    g = p.forcing
    if isinstance(g, ZeroForcing):
        return np.zeros(Y.dim)
    if isinstance(g, SmoothManufactured):
        return tensor_load(smooth_forcing(p), Y)
    if isinstance(g, IndicatorDiagonal):
        return indicator_load(Y)
    if isinstance(g, TrialImage):
        return assemble_B(p, g.space, Y).apply(g.coeffs)
    raise TypeError(f"unsupported forcing descriptor {g!r}")


def initial_load(p: ProblemSpec, space: FESpace1D) -> tuple[np.ndarray, float]:
    """(m0, ||u0||^2) with m0_i = int u0 phi_i over the spatial trial space."""
    u0 = p.u0
    if isinstance(u0, ZeroInitial):
        return np.zeros(space.dim), 0.0
    if isinstance(u0, SinPi):
        x, w = composite_rule(space.n_cells, 5)
        return tabulate(space, x).T @ (w * np.sin(np.pi * x)), 0.5
    if isinstance(u0, DiscreteInitial):
        c = np.asarray(u0.coeffs, dtype=float)
        return mass_1d(space, u0.space) @ c, float(c @ (mass_1d(u0.space, u0.space) @ c))
    raise TypeError(f"unsupported initial value descriptor {u0!r}")


# -- traces ---------------------------------------------------------------


def time_trace(X: TensorSpace, endpoint: str = LEFT) -> sp.csr_matrix:
    """Matrix mapping X coefficients to the spatial coefficients of w(t_end, .)."""
    e = sp.csr_matrix(trace_vector(X.time, endpoint)[None, :])
    return sp.kron(e, sp.identity(X.space.dim), format="csr")


@dataclass
class TraceOps:
    gamma0: sp.csr_matrix  # X -> spatial coefficients at t = 0
    mass_H: sp.csr_matrix  # L2 mass of the spatial trial space
    penalty: sp.csr_matrix | None  # eps * ||w(., 1)||^2_{L2(I)} on X, or None


def assemble_trace_ops(p: ProblemSpec, X: TensorSpace) -> TraceOps:
    penalty = None
    if p.weak_outflow:
        if RIGHT in X.space.essential_bc:
            raise ValueError("outflow penalty requested while x = 1 is still constrained")
        eR = trace_vector(X.space, RIGHT)
        penalty = p.epsilon * sp.kron(
            mass_1d(X.time, X.time), sp.csr_matrix(np.outer(eR, eR)), format="csr"
        )
    return TraceOps(time_trace(X, LEFT), mass_1d(X.space, X.space), penalty)


def initial_misfit(p: ProblemSpec, X: TensorSpace, traces: TraceOps, w) -> float:
    """||gamma_0 w - u0||^2_{L2}."""
    w0 = traces.gamma0 @ w
    if isinstance(p.u0, DiscreteInitial) and p.u0.space == X.space:
        d = w0 - p.u0.coeffs
        return float(d @ (traces.mass_H @ d))
    m0, u0_sq = initial_load(p, X.space)
    return max(float(w0 @ (traces.mass_H @ w0) - 2.0 * w0 @ m0 + u0_sq), 0.0)


def outflow_trace_sq(X: TensorSpace, w) -> float:
    """||w(., 1)||^2_{L2(I)} for a trial function without a right boundary condition."""
    eR = trace_vector(X.space, RIGHT)
    wr = np.asarray(w).reshape(X.shape) @ eR
    return float(wr @ (mass_1d(X.time, X.time) @ wr))
