"""A posteriori estimator, truth-space dual norms and stability constants."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .assembly import (
    ProblemSpec,
    assemble_Aa,
    assemble_As,
    assemble_B,
    assemble_C,
    assemble_dt,
    assemble_load,
    assemble_trace_ops,
    convection_1d,
    initial_load,
    initial_misfit,
    mass_1d,
    stiffness_1d,
    symmetric_spatial,
)
from .linops import KronGramSolver, gen_eig_extremal, kron_image_gram
from .spaces import RIGHT, FESpace1D, TensorSpace, c0_space, dg_space, trace_vector

log = logging.getLogger(__name__)

NULL_TOL = 1e-10


@dataclass(frozen=True)
class TruthSpace:
    """Over-refined test space standing in for the continuous Y."""

    space: TensorSpace
    refinement_level: int = 1

    @property
    def dim(self) -> int:
        return self.space.dim


def truth_space(p: ProblemSpec, n: int, level: int = 1, refine_space: bool = True) -> TruthSpace:
    """Option (ii) test space for the n x n trial mesh, refined ``level`` more
    times (time cells x2, space cells x3 per level)."""
    nt = n * 2**level
    nx = 3 * n * 3**level if refine_space else n
    return TruthSpace(TensorSpace(dg_space(nt), c0_space(nx, p.gamma)), level)


def _as_space(Y):
    return Y.space if isinstance(Y, TruthSpace) else Y


def _nested(coarse: FESpace1D, fine: FESpace1D) -> bool:
    return fine.n_cells % coarse.n_cells == 0


def estimator(sys, w, Yest=None) -> float:
    """sqrt(||g - Bw||^2_{Yest'} + beta ||u0 - gamma0 w||^2).

    An outflow penalty, if the system has one, is not part of the estimate.
    """
    p = sys.p
    w = np.asarray(w, dtype=float)
    Yest = _as_space(Yest)
    if Yest is None or Yest == sys.Y:
        r = sys.g - sys.B.apply(w)
        dual = sys.G_solver.dual_norm_sq(r)
    else:
        if not (_nested(sys.Y.time, Yest.time) and _nested(sys.Y.space, Yest.space)):
            raise ValueError("estimation space must be a nested refinement of the test space")
        r = assemble_load(p, Yest) - assemble_B(p, sys.X, Yest).apply(w)
        dual = KronGramSolver(assemble_As(p, Yest)).dual_norm_sq(r)
    val = max(dual, 0.0) + p.beta * initial_misfit(p, sys.X, sys.traces, w)
    return float(np.sqrt(max(val, 0.0)))


def data_norm(sys) -> float:
    """sqrt(||g||^2_{Y'} + beta ||u0||^2) on the system's own test space."""
    return float(np.sqrt(max(sys.G_solver.dual_norm_sq(sys.g), 0.0) + sys.p.beta * sys.u0_sq))


def relative_denominator(p: ProblemSpec, truth) -> float:
    """sqrt(||g||^2_{truth'} + beta ||u0||^2)."""
    T = _as_space(truth)
    g = assemble_load(p, T)
    _, u0_sq = initial_load(p, c0_space(T.space.n_cells, p.trial_bc))
    dual = KronGramSolver(assemble_As(p, T)).dual_norm_sq(g) if np.any(g) else 0.0
    return float(np.sqrt(max(dual, 0.0) + p.beta * u0_sq))


# -- inf-sup constants ---------------------------------------------------


def _operator(kind, p, X, Y):
    if kind == "dt":
        return assemble_dt(X, Y)
    if kind == "C":
        return assemble_C(p, X, Y)
    if kind == "B":
        return assemble_B(p, X, Y)
    raise ValueError(f"kind must be 'dt', 'C' or 'B', got {kind!r}")


def _numerical_kernel(M: np.ndarray) -> np.ndarray | None:
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    small = lam < NULL_TOL * max(lam.max(), 1.0)
    return V[:, small] if small.any() else None


def inf_sup(kind: str, X: TensorSpace, Y: TensorSpace, truth, p: ProblemSpec, method="auto") -> float:
    """inf over w in X of ||O w||_{Y'} / ||O w||_{truth'} with O in {dt, C, B}.

    Kernel directions of O are deflated: time-constant functions for dt, and
    numerically detected null vectors otherwise.
    """
    T = _as_space(truth)
    GY = KronGramSolver(assemble_As(p, Y))
    GT = KronGramSolver(assemble_As(p, T))
    A = kron_image_gram(_operator(kind, p, X, Y), GY).to_dense()
    M = kron_image_gram(_operator(kind, p, X, T), GT).to_dense()
    if kind == "dt":
        Z = np.kron(np.ones((X.time.dim, 1)), np.eye(X.space.dim))
    else:
        Z = _numerical_kernel(M)
    lam = gen_eig_extremal(A, M, "smallest", deflation=Z, method=method)
    return float(np.sqrt(max(lam, 0.0)))


def time_inf_sup(Xt: FESpace1D, Yt: FESpace1D) -> float:
    """inf over w in Xt of ||P_Yt w'||_{L2} / ||w'||_{L2}, constants deflated."""
    Ct = convection_1d(Yt, Xt).toarray()
    My = mass_1d(Yt, Yt).toarray()
    A = Ct.T @ np.linalg.solve(My, Ct)
    S = stiffness_1d(Xt, Xt).toarray()
    Z = np.ones((Xt.dim, 1))
    return float(np.sqrt(max(gen_eig_extremal(A, S, "smallest", deflation=Z), 0.0)))


def spatial_inf_sup(p: ProblemSpec, Xs: FESpace1D, Ys: FESpace1D, Ts: FESpace1D) -> float:
    """inf over w in Xs of ||w||_{Ys'} / ||w||_{Ts'} for the spatial energy norm."""
    def gram(V):
        Mvx = mass_1d(V, Xs).toarray()
        K = symmetric_spatial(p, V, V).toarray()
        return Mvx.T @ np.linalg.solve(K, Mvx)

    return float(np.sqrt(max(gen_eig_extremal(gram(Ys), gram(Ts), "smallest"), 0.0)))


def alpha(p: ProblemSpec, truth, reduced: bool = True) -> float:
    """sqrt of the largest eigenvalue of A_a' G^{-1} A_a v = lam G v on the truth space.

    With A_a = M_t (x) bN and G = M_t (x) K the time factors cancel, so the
    reduced path solves the spatial pencil (b^2 N' K^{-1} N, K) only.
    """
    T = _as_space(truth)
    if p.b == 0:
        return 0.0
    if reduced:
        S = T.space
        K = symmetric_spatial(p, S, S).toarray()
        N = p.b * convection_1d(S, S).toarray()
        A = N.T @ np.linalg.solve(K, N)
        lam = gen_eig_extremal(A, K, "largest")
    else:
        G = assemble_As(p, T)
        A = kron_image_gram(assemble_Aa(p, T, T), KronGramSolver(G)).to_dense()
        lam = gen_eig_extremal(A, G.to_sparse().toarray(), "largest")
    return float(np.sqrt(max(lam, 0.0)))


# -- Prop. norm equivalence ------------------------------------------------


@dataclass
class BoundsCheck:
    passed: bool
    worst_ratio: float
    worst_sample: int
    lower: float
    upper: float
    ratios: np.ndarray

    def __bool__(self):
        return self.passed


def equivalence_constant(a: float) -> float:
    return 1.0 + a * (a + np.sqrt(a * a + 4.0)) / 2.0


class NormPair:
    """Evaluates the energy norm |||w|||^2 and the X norm ||w||^2 of trial
    functions, with dual norms taken on a truth space."""

    def __init__(self, p: ProblemSpec, X: TensorSpace, truth):
        T = _as_space(truth)
        self.p, self.X = p, X
        self.G = KronGramSolver(assemble_As(p, T))
        self.B = assemble_B(p, X, T)
        self.D = assemble_dt(X, T)
        self.As = assemble_As(p, X)
        tr = assemble_trace_ops(p, X)
        self.g0, self.MH = tr.gamma0, tr.mass_H
        eT = trace_vector(X.time, RIGHT)
        self.gT = np.kron(eT[None, :], np.eye(X.space.dim))

    def _h_sq(self, G, w):
        v = G @ w
        return float(v @ (self.MH @ v))

    def energy_sq(self, w) -> float:
        Bw = self.B.apply(w)
        return self.G.dual_norm_sq(Bw) + self.p.beta * self._h_sq(self.g0, w)

    def x_sq(self, w) -> float:
        return (
            float(w @ self.As.apply(w))
            + self.G.dual_norm_sq(self.D.apply(w))
            + self._h_sq(self.gT, w)
            + (self.p.beta - 1.0) * self._h_sq(self.g0, w)
        )

    def ratio(self, w) -> float:
        return self.energy_sq(w) / self.x_sq(w)


def check_norm_equivalence(
    p: ProblemSpec, X: TensorSpace, truth, n_samples: int = 100, slack: float = 0.05, seed: int = 0
) -> BoundsCheck:
    """Checks c^{-1} <= |||w|||^2 / ||w||^2 <= c on random trial functions,
    c = 1 + a(a + sqrt(a^2 + 4))/2 with a = alpha, widened by ``slack``."""
    pair = NormPair(p, X, truth)
    c = equivalence_constant(alpha(p, truth))
    lower, upper = (1.0 - slack) / c, (1.0 + slack) * c
    rng = np.random.default_rng(seed)
    ratios = np.array([pair.ratio(rng.standard_normal(X.dim)) for _ in range(n_samples)])
    bad = np.maximum(lower - ratios, ratios - upper)
    k = int(np.argmax(bad))
    passed = bool(np.all(bad <= 0))
    if not passed:
        log.warning("norm equivalence violated: sample %d ratio %.6g not in [%.6g, %.6g]",
                    k, ratios[k], lower, upper)
    return BoundsCheck(passed, float(ratios[k]), k, lower, upper, ratios)


@dataclass
class DiagnosticsReport:
    gamma_dt: float
    gamma_C: float
    gamma_B: float
    alpha: float
    bounds_check: BoundsCheck | None = None


def diagnose(p: ProblemSpec, X: TensorSpace, Y: TensorSpace, truth, n_samples: int = 0) -> DiagnosticsReport:
    check = check_norm_equivalence(p, X, truth, n_samples) if n_samples else None
    return DiagnosticsReport(
        gamma_dt=inf_sup("dt", X, Y, truth, p),
        gamma_C=inf_sup("C", X, Y, truth, p),
        gamma_B=inf_sup("B", X, Y, truth, p),
        alpha=alpha(p, truth),
        bounds_check=check,
    )
