"""Linear algebra kernels: SPD factorizations, preconditioned CG, Kronecker-structured
Gram solves, block-tridiagonal Cholesky and extremal generalized eigenvalues.

Sparse matrices are ``scipy.sparse`` CSR matrices throughout.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import KroneckerOp
from .spaces import Continuity

log = logging.getLogger(__name__)

DENSE_LIMIT = 5000


class NotSPDError(np.linalg.LinAlgError):
    pass


class CGNotConverged(RuntimeError):
    def __init__(self, msg, x, history):
        super().__init__(msg)
        self.x = x
        self.history = history


class EigenBreakdown(RuntimeError):
    def __init__(self, msg, rayleigh):
        super().__init__(msg)
        self.rayleigh = rayleigh


# -- SPD factorization ----------------------------------------------------


class Factorization:
    """Symmetric-permuted LU of an SPD matrix; pivots are the LDL^T diagonal."""

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=float)
        n, m = A.shape
        if n != m:
            raise NotSPDError(f"matrix not SPD: shape {A.shape}")
        asym = abs(A - A.T).max() if A.nnz else 0.0
        if asym > 1e-12 * max(abs(A).max(), 1e-300):
            raise NotSPDError(f"matrix not SPD: asymmetry {asym:.3e}")
        self.shape = A.shape
        try:
            self._lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:  # exactly singular
            raise NotSPDError(f"matrix not SPD: {exc}") from exc
        pivots = self._lu.U.diagonal()
        if not np.array_equal(self._lu.perm_r, self._lu.perm_c) or np.any(pivots <= 0):
            raise NotSPDError(f"matrix not SPD: smallest pivot {pivots.min():.3e}")

    def solve(self, b):
        return self._lu.solve(np.asarray(b, dtype=float))

    __call__ = solve


def factor_spd(A) -> Factorization:
    return Factorization(A)


# -- conjugate gradients --------------------------------------------------


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def cg_solve(
    apply: Callable,
    rhs,
    precond: Callable | None = None,
    tol: float = 1e-10,
    max_iter: int | None = None,
    x0=None,
) -> CGResult:
    """Preconditioned conjugate gradients.

    Stops once the preconditioned residual norm sqrt(r^T P r) relative to that of
    the right-hand side drops below ``tol``.
    """
    b = np.asarray(rhs, dtype=float)
    precond = precond or (lambda r: r)
    max_iter = 10 * b.size if max_iter is None else max_iter
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    z = precond(r)
    rz = float(r @ z)
    bnorm = np.sqrt(max(float(b @ precond(b)), 0.0))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, [0.0])
    history = [np.sqrt(max(rz, 0.0)) / bnorm]
    p = z.copy()
    for k in range(1, max_iter + 1):
        if history[-1] <= tol:
            return CGResult(x, k - 1, history[-1], history)
        Ap = apply(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise CGNotConverged(f"CG breakdown: p^T A p = {pAp:.3e}", x, history)
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = precond(r)
        rz_new = float(r @ z)
        history.append(np.sqrt(max(rz_new, 0.0)) / bnorm)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if history[-1] <= tol:
        return CGResult(x, max_iter, history[-1], history)
    raise CGNotConverged(
        f"CG did not reach {tol:g} in {max_iter} iterations (residual {history[-1]:.3e})",
        x,
        history,
    )


# -- Kronecker-structured Gram solves ------------------------------------


def _is_dg_time(op: KroneckerOp) -> bool:
    return op.row_space.time.continuity is Continuity.DG


class KronGramSolver:
    """Inverse of G = M_t (x) K_x.

    K_x is factored once; a DG-in-time mass matrix is inverted by explicit 2x2
    blocks. Anything else falls back to a generic sparse factorization.
    """

    def __init__(self, G: KroneckerOp):
        self.op = G
        self.shape = G.shape
        self.generic = None
        if len(G.terms) != 1:
            log.debug("Gram operator has %d terms, using generic factorization", len(G.terms))
            self.generic = factor_spd(G.to_sparse())
            return
        Mt, Kx = G.terms[0]
        self.Mt, self.Kx = Mt, Kx
        self.Kx_factor = factor_spd(Kx)
        if _is_dg_time(G):
            a, d = Mt.diagonal()[0::2], Mt.diagonal()[1::2]
            b, c = Mt.diagonal(1)[0::2], Mt.diagonal(-1)[0::2]
            det = a * d - b * c
            if np.any(det <= 0) or np.any(a <= 0):
                raise NotSPDError("matrix not SPD: DG time mass block")
            inv = np.stack([np.stack([d, -b], 1), np.stack([-c, a], 1)], 1) / det[:, None, None]
            self.Mt_inv = sp.block_diag(list(inv), format="csr")
            self.Mt_solve = lambda R: self.Mt_inv @ R
        else:
            f = factor_spd(Mt)
            self.Mt_solve = f.solve

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.generic is not None:
            return self.generic.solve(rhs)
        R = rhs.reshape(self.op.row_space.shape)
        Z = self.Kx_factor.solve(R.T).T
        return np.asarray(self.Mt_solve(Z)).reshape(rhs.shape)

    __call__ = solve

    def time_inverse_times(self, A) -> np.ndarray:
        """M_t^{-1} A for a (sparse) matrix A with as many rows as M_t."""
        if hasattr(self, "Mt_inv"):
            return self.Mt_inv @ A
        return self.Mt_solve(A.toarray() if sp.issparse(A) else A)

    def dual_norm_sq(self, r) -> float:
        return float(np.asarray(r) @ self.solve(r))


def kron_solve_GY(G: KroneckerOp, rhs) -> np.ndarray:
    return KronGramSolver(G).solve(rhs)


# -- sums of Kronecker products with dense spatial factors ----------------


@dataclass
class KronSum:
    """Square operator sum_j T_j (x) S_j with sparse time and dense space factors."""

    terms: list  # (T_j sparse (nt, nt), S_j dense (nx, nx))

    @property
    def block_shape(self) -> tuple[int, int]:
        T, S = self.terms[0]
        return T.shape[0], S.shape[0]

    @property
    def dim(self) -> int:
        nt, nx = self.block_shape
        return nt * nx

    def apply(self, v) -> np.ndarray:
        V = np.asarray(v, dtype=float).reshape(self.block_shape)
        out = np.zeros_like(V)
        for T, S in self.terms:
            out += T @ (V @ S.T)
        return out.ravel()

    def quadratic(self, v) -> float:
        return float(np.asarray(v) @ self.apply(v))

    def time_bandwidth(self) -> int:
        bw = 0
        for T, _ in self.terms:
            T = sp.coo_matrix(T)
            if T.nnz:
                bw = max(bw, int(np.abs(T.row - T.col).max()))
        return bw

    def to_dense(self) -> np.ndarray:
        nt, nx = self.block_shape
        out = np.zeros((nt * nx, nt * nx))
        for T, S in self.terms:
            T = T.toarray() if sp.issparse(T) else np.asarray(T)
            out += np.kron(T, S)
        return out

    def tridiagonal_blocks(self):
        """Diagonal and sub-diagonal blocks (requires time bandwidth <= 1)."""
        if self.time_bandwidth() > 1:
            raise ValueError("time factors are not tridiagonal")
        nt, nx = self.block_shape
        D = np.zeros((nt, nx, nx))
        E = np.zeros((max(nt - 1, 0), nx, nx))
        for T, S in self.terms:
            T = sp.csr_matrix(T)
            d = T.diagonal()
            D += d[:, None, None] * S[None]
            if nt > 1:
                e = T.diagonal(-1)
                E += e[:, None, None] * S[None]
        return D, E


def kron_image_gram(O: KroneckerOp, gram: KronGramSolver) -> KronSum:
    """O^T G^{-1} O as a KronSum (G = M_t (x) K_x)."""
    if gram.generic is not None:
        raise ValueError("structured Gram solver required")
    terms = []
    time_mapped = [gram.time_inverse_times(At) for At, _ in O.terms]
    space_mapped = [gram.Kx_factor.solve(Bx.toarray()) for _, Bx in O.terms]
    for k, (Atk, Bxk) in enumerate(O.terms):
        for l in range(len(O.terms)):
            T = Atk.T @ time_mapped[l]
            T = sp.csr_matrix(T)
            T.eliminate_zeros()
            S = np.asarray(Bxk.T @ space_mapped[l])
            terms.append((T, S))
    return KronSum(terms)


class BlockTridiagonalCholesky:
    """Cholesky factorization of a symmetric block-tridiagonal matrix with dense blocks."""

    def __init__(self, D: np.ndarray, E: np.ndarray):
        n = D.shape[0]
        self.L = np.empty_like(D)
        self.F = np.empty_like(E)
        for i in range(n):
            Di = D[i].copy()
            if i > 0:
                # F_i = E_{i-1} L_{i-1}^{-T}
                self.F[i - 1] = sla.solve_triangular(self.L[i - 1], E[i - 1].T, lower=True).T
                Di -= self.F[i - 1] @ self.F[i - 1].T
            try:
                self.L[i] = sla.cholesky(0.5 * (Di + Di.T), lower=True)
            except np.linalg.LinAlgError as exc:
                raise NotSPDError(f"matrix not SPD: block {i} ({exc})") from exc

    def solve(self, rhs) -> np.ndarray:
        n, m, _ = self.L.shape
        B = np.asarray(rhs, dtype=float).reshape(n, m)
        Y = np.empty_like(B)
        for i in range(n):
            r = B[i] if i == 0 else B[i] - self.F[i - 1] @ Y[i - 1]
            Y[i] = sla.solve_triangular(self.L[i], r, lower=True)
        X = np.empty_like(B)
        for i in reversed(range(n)):
            r = Y[i] if i == n - 1 else Y[i] - self.F[i].T @ X[i + 1]
            X[i] = sla.solve_triangular(self.L[i], r, lower=True, trans="T")
        return X.ravel()


def factor_kron_sum(N: KronSum):
    """Direct factorization of an SPD KronSum: block Cholesky when tridiagonal in
    time, dense Cholesky otherwise."""
    if N.time_bandwidth() <= 1:
        return BlockTridiagonalCholesky(*N.tridiagonal_blocks())
    if N.dim > DENSE_LIMIT:
        raise ValueError(f"dense factorization refused above dimension {DENSE_LIMIT}")
    try:
        c = sla.cho_factor(N.to_dense(), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"matrix not SPD: {exc}") from exc

    class _Dense:
        def solve(self, b):
            return sla.cho_solve(c, b)

    return _Dense()


# -- extremal generalized eigenvalues -------------------------------------


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def _complement_basis(Z, M):
    """Orthonormal basis of the M-orthogonal complement of span(Z), or the
    Euclidean complement when M is degenerate on Z."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float).T).T
    MZ = M @ Z
    scale = np.linalg.norm(M, 2) * np.linalg.norm(Z, 2)
    if np.linalg.norm(Z.T @ MZ, 2) > 1e-10 * scale:
        return sla.null_space(MZ.T)
    return sla.null_space(Z.T)


def gen_eig_extremal(
    A,
    M,
    which: str = "smallest",
    deflation=None,
    method: str = "auto",
    tol: float = 1e-8,
    max_iter: int = 20000,
    seed: int = 0,
) -> float:
    """Extremal eigenvalue of A x = lam M x (A symmetric PSD, M SPD on the
    complement of ``deflation``)."""
    if which not in ("smallest", "largest"):
        raise ValueError("which must be 'smallest' or 'largest'")
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n < DENSE_LIMIT else "iterative"
    if method == "dense":
        Ad, Md = _dense(A), _dense(M)
        if deflation is not None and np.size(deflation):
            Q = _complement_basis(deflation, Md)
            Ad, Md = Q.T @ Ad @ Q, Q.T @ Md @ Q
        k = 0 if which == "smallest" else Ad.shape[0] - 1
        try:
            lam = sla.eigh(
                0.5 * (Ad + Ad.T), 0.5 * (Md + Md.T), eigvals_only=True, subset_by_index=[k, k]
            )
        except np.linalg.LinAlgError as exc:
            raise EigenBreakdown(f"dense eigensolver failed: {exc}", np.nan) from exc
        return float(lam[0])
    return _iterative_extremal(A, M, which, deflation, tol, max_iter, seed)


def _iterative_extremal(A, M, which, deflation, tol, max_iter, seed):
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    n = A.shape[0]
    Mf = factor_spd(M)
    if deflation is not None and np.size(deflation):
        Z = np.atleast_2d(np.asarray(deflation, dtype=float).T).T
        MZ = M @ Z
        ZMZ = Z.T @ MZ

        def project(x):
            return x - Z @ np.linalg.solve(ZMZ, MZ.T @ x)
    else:
        Z = None

        def project(x):
            return x

    if which == "smallest":
        shifted = A
        if Z is not None:
            c = abs(A).sum(axis=1).max() / max(abs(ZMZ).max(), 1e-300)
            shifted = A + sp.csr_matrix(c * MZ @ MZ.T)
        Af = factor_spd(shifted)

        def step(x):
            return project(Af.solve(M @ x))
    else:

        def step(x):
            return project(Mf.solve(A @ x))

    x = project(np.random.default_rng(seed).standard_normal(n))
    lam = np.nan
    for _ in range(max_iter):
        x = step(x)
        nrm = np.sqrt(x @ (M @ x))
        if not np.isfinite(nrm) or nrm == 0:
            raise EigenBreakdown("iteration collapsed", lam)
        x /= nrm
        Ax = A @ x
        lam = float(x @ Ax)
        res = Ax - lam * (M @ x)
        res_norm = np.sqrt(max(res @ Mf.solve(res), 0.0))
        if res_norm <= np.sqrt(tol) * max(abs(lam), 1e-300) * 1e-2:
            return lam
    raise EigenBreakdown(f"no convergence in {max_iter} iterations", lam)
