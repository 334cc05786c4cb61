"""Minimal-residual and BEN solves on tensor-product trial/test spaces."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diagnostics
from .assembly import (
    KroneckerOp,
    ProblemSpec,
    TraceOps,
    assemble_As,
    assemble_B,
    assemble_C,
    assemble_load,
    assemble_trace_ops,
    initial_load,
    mass_1d,
    stiffness_1d,
    symmetric_spatial,
)
from .linops import (
    KronGramSolver,
    KronSum,
    cg_solve,
    factor_kron_sum,
    kron_image_gram,
)
from .spaces import LEFT, RIGHT, TensorSpace, c0_space, dg_space, trace_vector

log = logging.getLogger(__name__)

OPTIONS = ("i", "ii")


def trial_space(p: ProblemSpec, n: int) -> TensorSpace:
    """Continuous P1 in time and space on a uniform n x n mesh."""
    return TensorSpace(c0_space(n), c0_space(n, p.trial_bc))


def test_space(p: ProblemSpec, n: int, option: str = "ii") -> TensorSpace:
    """DG-P1 in time on the trial time mesh; C0-P1 in space on the trial mesh
    (option i) or on the trial mesh refined by three (option ii)."""
    if option not in OPTIONS:
        raise ValueError(f"option must be 'i' or 'ii', got {option!r}")
    factor = 1 if option == "i" else 3
    return TensorSpace(dg_space(n), c0_space(factor * n, p.gamma))


@dataclass
class DiscreteSystem:
    p: ProblemSpec
    X: TensorSpace
    Y: TensorSpace
    B: KroneckerOp
    G: KroneckerOp
    G_solver: KronGramSolver
    traces: TraceOps
    g: np.ndarray
    m0: np.ndarray
    u0_sq: float

    @property
    def beta(self) -> float:
        return self.p.beta

    def normal_operator(self) -> KronSum:
        """B^T G^{-1} B + beta gamma0' gamma0 (+ outflow penalty) as a Kronecker sum."""
        N = kron_image_gram(self.B, self.G_solver)
        nt = self.X.time.dim
        e0 = trace_vector(self.X.time, LEFT)
        terms = list(N.terms)
        terms.append((sp.csr_matrix(self.beta * np.outer(e0, e0)), self.traces.mass_H.toarray()))
        if self.traces.penalty is not None:
            eR = trace_vector(self.X.space, RIGHT)
            terms.append((self.p.epsilon * mass_1d(self.X.time, self.X.time), np.outer(eR, eR)))
        assert terms[0][0].shape == (nt, nt)
        return KronSum(terms)

    def apply_normal(self, w) -> np.ndarray:
        """Matrix-free application of the normal operator."""
        out = self.B.apply_transpose(self.G_solver.solve(self.B.apply(w)))
        out += self.beta * (self.traces.gamma0.T @ (self.traces.mass_H @ (self.traces.gamma0 @ w)))
        if self.traces.penalty is not None:
            out += self.traces.penalty @ w
        return out

    def normal_rhs(self) -> np.ndarray:
        return self.B.apply_transpose(self.G_solver.solve(self.g)) + self.beta * (
            self.traces.gamma0.T @ self.m0
        )

    def functional(self, w) -> float:
        """Value of the minimized quadratic: residual dual norm^2 + beta misfit^2 (+ penalty)."""
        w = np.asarray(w, dtype=float)
        val = diagnostics.estimator(self, w) ** 2
        if self.traces.penalty is not None:
            val += float(w @ (self.traces.penalty @ w))
        return val


def build_system(p: ProblemSpec, X: TensorSpace, Y: TensorSpace) -> DiscreteSystem:
    B = assemble_B(p, X, Y)
    G = assemble_As(p, Y)
    m0, u0_sq = initial_load(p, X.space)
    return DiscreteSystem(
        p=p,
        X=X,
        Y=Y,
        B=B,
        G=G,
        G_solver=KronGramSolver(G),
        traces=assemble_trace_ops(p, X),
        g=assemble_load(p, Y),
        m0=m0,
        u0_sq=u0_sq,
    )


@dataclass
class SolveReport:
    coefficients: np.ndarray
    estimator: float
    relative_error: float
    iterations: int
    final_residual: float
    wall_time: float
    residual_history: list = field(default_factory=list)
    multiplier: np.ndarray | None = None


class XRieszPreconditioner:
    """Inverse of a Riesz map of the X norm on the trial space.

    ||w||_X^2 ~ w'(M_t (x) K + S_t (x) M K^{-1} M + (e_T e_T' + (beta-1) e_0 e_0') (x) M) w
    with K the spatial energy matrix and M the spatial mass. In the basis of the
    pencil (K, M) every spatial mode decouples into a tridiagonal time system.
    """

    def __init__(self, sys: DiscreteSystem):
        X, p = sys.X, sys.p
        K = symmetric_spatial(p, X.space, X.space).toarray()
        M = mass_1d(X.space, X.space).toarray()
        lam, self.Phi = sla.eigh(K, M)
        Mt = mass_1d(X.time, X.time)
        St = stiffness_1d(X.time, X.time)
        nt = X.time.dim
        e = np.zeros(nt)
        e[0] += sys.beta - 1.0
        e[-1] += 1.0
        main = lam[None, :] * Mt.diagonal()[:, None] + St.diagonal()[:, None] / lam[None, :] + e[:, None]
        off = lam[None, :] * Mt.diagonal(1)[:, None] + St.diagonal(1)[:, None] / lam[None, :]
        # batched LDL^T of the symmetric tridiagonal time systems, one per mode
        self.d = main.copy()
        self.l = np.zeros_like(off)
        for i in range(1, nt):
            self.l[i - 1] = off[i - 1] / self.d[i - 1]
            self.d[i] -= self.l[i - 1] * off[i - 1]
        self.shape = X.shape

    def __call__(self, r) -> np.ndarray:
        R = np.asarray(r).reshape(self.shape) @ self.Phi
        nt = self.shape[0]
        for i in range(1, nt):
            R[i] -= self.l[i - 1] * R[i - 1]
        R /= self.d
        for i in range(nt - 2, -1, -1):
            R[i] -= self.l[i] * R[i + 1]
        return (R @ self.Phi.T).ravel()


def _report(sys, w, iterations, residual, t0, history=(), denominator=None, estimation_space=None):
    est = diagnostics.estimator(sys, w, estimation_space)
    if denominator is None:
        denominator = diagnostics.data_norm(sys)
    rel = est / denominator if denominator > 0 else (0.0 if est == 0 else np.inf)
    return SolveReport(
        coefficients=w,
        estimator=est,
        relative_error=rel,
        iterations=iterations,
        final_residual=residual,
        wall_time=time.perf_counter() - t0,
        residual_history=list(history),
    )


def solve_mr(
    sys: DiscreteSystem,
    method: str = "direct",
    tol: float = 1e-10,
    max_iter: int | None = None,
    denominator: float | None = None,
    estimation_space: TensorSpace | None = None,
) -> SolveReport:
    """Minimal-residual solve of the normal equations.

    ``direct`` factors the normal operator exactly (block Cholesky over time
    slices); ``cg`` runs matrix-free preconditioned CG. The estimator is taken on
    ``estimation_space`` (default: the system's test space) and the relative
    error divides it by ``denominator`` (default: the data norm on that space).
    """
    t0 = time.perf_counter()
    rhs = sys.normal_rhs()
    if method == "direct":
        N = sys.normal_operator()
        w = factor_kron_sum(N).solve(rhs)
        rnorm = np.linalg.norm(rhs)
        res = np.linalg.norm(N.apply(w) - rhs) / rnorm if rnorm > 0 else 0.0
        return _report(sys, w, 1, res, t0, [res], denominator, estimation_space)
    if method == "cg":
        out = cg_solve(
            sys.apply_normal,
            rhs,
            precond=XRieszPreconditioner(sys),
            tol=tol,
            max_iter=10 * rhs.size if max_iter is None else max_iter,
        )
        return _report(sys, out.x, out.iterations, out.residual, t0, out.history, denominator, estimation_space)
    raise ValueError(f"unknown solve method {method!r}")


def solve_mr_weak_outflow(
    p: ProblemSpec, X_hat: TensorSpace, Y: TensorSpace, **kwargs
) -> SolveReport:
    """MR solve with the outflow condition at x = 1 replaced by the penalty
    eps ||w(., 1)||^2_{L2(I)}."""
    if not p.weak_outflow:
        raise ValueError("problem does not request a weak outflow condition")
    if RIGHT in X_hat.space.essential_bc:
        raise ValueError("trial space still constrains x = 1")
    return solve_mr(build_system(p, X_hat, Y), **kwargs)


def ben_saddle(sys: DiscreteSystem):
    """Saddle matrix and right-hand side of the Galerkin BEN system."""
    p, X, Y = sys.p, sys.X, sys.Y
    if p.weak_outflow:
        raise ValueError("BEN is not defined for the weak outflow functional")
    G = sys.G.to_sparse()
    Cm = assemble_C(p, X, Y).to_sparse()
    As_X = assemble_As(p, X).to_sparse()
    MH = sys.traces.mass_H
    eT = trace_vector(X.time, RIGHT)
    e0 = trace_vector(X.time, LEFT)
    traces = sp.kron(sp.csr_matrix(np.outer(eT, eT) + (sys.beta - 1.0) * np.outer(e0, e0)), MH)
    K = sp.bmat([[G, Cm], [Cm.T, -(As_X + traces)]], format="csc")
    g_X = assemble_load(p, X)
    rhs = np.concatenate([sys.g, -(g_X + sys.beta * (sys.traces.gamma0.T @ sys.m0))])
    return K, rhs


def solve_ben(sys: DiscreteSystem, denominator=None, estimation_space=None) -> SolveReport:
    """Direct solve of the BEN saddle-point system; returns the trial block."""
    t0 = time.perf_counter()
    K, rhs = ben_saddle(sys)
    with np.errstate(all="raise"):
        try:
            sol = spla.spsolve(K, rhs)
        except (RuntimeError, FloatingPointError) as exc:
            raise np.linalg.LinAlgError(f"singular saddle system: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("singular saddle system")
    ny = sys.Y.dim
    lam, u = sol[:ny], sol[ny:]
    rnorm = np.linalg.norm(rhs)
    res = np.linalg.norm(K @ sol - rhs) / rnorm if rnorm > 0 else 0.0
    report = _report(sys, u, 1, res, t0, [res], denominator, estimation_space)
    report.multiplier = lam
    return report
