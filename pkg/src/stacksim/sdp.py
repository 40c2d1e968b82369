"""Unit-diagonal complex SDP:  max tr(C V)  s.t.  V_aa = 1,  V >= 0.

Two independent solvers are provided. ``solve`` uses a low-rank
factorisation V = Q Q^H with unit-norm rows updated one row at a time
(each row update is an exact maximisation, so the objective never
decreases). ``solve_admm`` works on the full 2n x 2n real embedding with
alternating projections onto the affine unit-diagonal set and the PSD
cone. Both report a dual certificate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class SdpProblem:
    costs: list  # Hermitian PSD (n x n) matrices R_s

    def __post_init__(self):
        if not self.costs:
            raise ValueError("at least one cost matrix is required")
        n = self.costs[0].shape[0]
        for R in self.costs:
            R = np.asarray(R)
            if R.shape != (n, n):
                raise ValueError("cost matrices must share one square shape")
            scale = max(1.0, float(np.abs(R).max()))
            if np.abs(R - R.conj().T).max() > 1e-10 * scale:
                raise ValueError("cost matrix is not Hermitian")

    @property
    def dim(self) -> int:
        return self.costs[0].shape[0]

    @property
    def aggregate(self) -> np.ndarray:
        C = sum(np.asarray(R, dtype=complex) for R in self.costs)
        return 0.5 * (C + C.conj().T)

    def objective(self, V: np.ndarray) -> float:
        return float(np.real(np.sum(self.aggregate * V.T)))


@dataclass
class SdpSolution:
    V: np.ndarray
    objective: float
    certificate: float  # relative duality gap of the repaired dual
    iterations: int
    status: str = "optimal"
    history: list = field(default_factory=list)
    factor: np.ndarray | None = None


@dataclass(frozen=True)
class CertificateReport:
    diag_residual: float
    psd_residual: float
    dual: np.ndarray
    dual_residual: float  # -min eig(Diag(y) - C) before repair, clipped at 0
    gap: float            # sum(y_feasible) - objective
    relative_gap: float

    def ok(self, tol: float = 1e-6, gap_tol: float = 1e-4) -> bool:
        return (self.diag_residual <= tol and self.psd_residual <= tol
                and self.relative_gap <= gap_tol)


def check_certificate(problem: SdpProblem, solution: SdpSolution, dual=None) -> CertificateReport:
    """Primal residuals plus a repaired dual bound.

    The dual candidate is y_a = Re (C V)_aa (complementary slackness);
    shifting it by the most negative eigenvalue of Diag(y) - C makes it
    dual feasible, so sum(y) upper-bounds the SDP optimum.
    """
    C = problem.aggregate
    V = 0.5 * (solution.V + solution.V.conj().T)
    n = C.shape[0]
    diag_res = float(np.abs(np.real(np.diag(V)) - 1.0).max())
    psd_res = max(0.0, -float(np.linalg.eigvalsh(V).min()))
    y = np.real(np.diag(C @ V)).copy() if dual is None else np.asarray(dual, dtype=float)
    slack_min = float(np.linalg.eigvalsh(np.diag(y) - C).min())
    dual_res = max(0.0, -slack_min)
    objective = problem.objective(V)
    gap = float(y.sum() + n * dual_res - objective)
    scale = max(abs(objective), float(np.abs(C).max()), 1e-300)
    return CertificateReport(diag_res, psd_res, y, dual_res, gap, max(gap, 0.0) / scale)


def _rank(n: int, rank: int | None) -> int:
    if rank is not None:
        return max(1, min(rank, n))
    return min(n, int(math.ceil(math.sqrt(2 * n))) + 1)


def solve(problem: SdpProblem, tol: float = 1e-4, max_iter: int = 5000, rank: int | None = None,
          rng: np.random.Generator | None = None, check_every: int = 5) -> SdpSolution:
    """Row-wise ascent on the factor Q of V = Q Q^H."""
    C = problem.aggregate
    n = C.shape[0]
    k = _rank(n, rank)
    rng = rng if rng is not None else np.random.default_rng(0)
    Q = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    Q /= np.linalg.norm(Q, axis=1, keepdims=True)
    offdiag = C - np.diag(np.diag(C))
    history = [float(np.real(np.vdot(Q, C @ Q)))]
    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        for i in range(n):
            g = offdiag[i] @ Q
            norm = np.linalg.norm(g)
            if norm > 0:
                Q[i] = g / norm
        history.append(float(np.real(np.vdot(Q, C @ Q))))
        if it % check_every == 0:
            sol = SdpSolution(Q @ Q.conj().T, history[-1], math.inf, it)
            rep = check_certificate(problem, sol)
            if rep.relative_gap <= tol:
                status = "optimal"
                break
    V = Q @ Q.conj().T
    rep = check_certificate(problem, SdpSolution(V, history[-1], math.inf, it))
    if status != "optimal" and rep.relative_gap <= tol:
        status = "optimal"
    return SdpSolution(V, problem.objective(V), rep.relative_gap, it, status, history, Q)


# full-matrix path ----------------------------------------------------------------

def real_embedding(A: np.ndarray) -> np.ndarray:
    """[[Re A, -Im A], [Im A, Re A]]."""
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def from_real_embedding(X: np.ndarray) -> np.ndarray:
    n = X.shape[0] // 2
    return 0.5 * (X[:n, :n] + X[n:, n:]) + 0.5j * (X[n:, :n] - X[:n, n:])


def _proj_psd(X: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (X + X.T))
    return (V * np.clip(w, 0.0, None)) @ V.T


def solve_admm(problem: SdpProblem, tol: float = 1e-4, max_iter: int = 50000,
               sigma: float | None = None, check_every: int = 20) -> SdpSolution:
    """ADMM on the real embedding: V in {diag = 1}, Z in PSD, V = Z.

    The scaled multiplier U of V = Z yields the dual candidate
    y = diag(C - sigma U); it is averaged over the two halves of the
    embedding to give a complex dual point.
    """
    C = real_embedding(problem.aggregate)
    m = C.shape[0]
    n = m // 2
    scale = max(float(np.abs(C).max()), 1e-300)
    Cn = C / scale
    sig = sigma if sigma is not None else 1.0
    Z = np.eye(m)
    Ulag = np.zeros((m, m))
    idx = np.arange(m)
    status = "max_iter"
    history = []
    sol = None
    it = 0
    for it in range(1, max_iter + 1):
        V = Z - Ulag + Cn / sig
        V[idx, idx] = 1.0
        Z = _proj_psd(V + Ulag)
        Ulag = Ulag + V - Z
        if it % check_every == 0 or it == max_iter:
            sol, rep = _admm_point(problem, Z, Cn, Ulag, sig, scale, n, it)
            history.append(sol.objective)
            if rep.relative_gap <= tol:
                status = "optimal"
                break
    sol.status = status
    sol.iterations = it
    sol.history = history
    return sol


def _admm_point(problem, Z, Cn, Ulag, sig, scale, n, it):
    d = np.sqrt(np.clip(np.diag(Z), 1e-300, None))
    Vc = from_real_embedding(Z / np.outer(d, d))
    y_real = scale * np.diag(Cn - sig * Ulag)
    y = 0.5 * (y_real[:n] + y_real[n:])
    sol = SdpSolution(Vc, problem.objective(Vc), math.inf, it)
    rep = check_certificate(problem, sol, dual=y)
    sol.certificate = rep.relative_gap
    return sol, rep


# dump format -----------------------------------------------------------------

def _cplx(A):
    A = np.asarray(A)
    return {"re": A.real.tolist(), "im": A.imag.tolist()}


def _uncplx(d):
    return np.asarray(d["re"]) + 1j * np.asarray(d["im"])


def dump(problem: SdpProblem, solution: SdpSolution | None, path) -> None:
    """JSON dump of dimension, cost matrices and (optionally) the solution."""
    doc = {"dim": problem.dim, "costs": [_cplx(R) for R in problem.costs]}
    if solution is not None:
        doc["solution"] = {
            "V": _cplx(solution.V),
            "objective": solution.objective,
            "certificate": solution.certificate,
            "iterations": solution.iterations,
            "status": solution.status,
        }
    Path(path).write_text(json.dumps(doc))


def load(path):
    doc = json.loads(Path(path).read_text())
    problem = SdpProblem([_uncplx(R) for R in doc["costs"]])
    sol = None
    if "solution" in doc:
        s = doc["solution"]
        sol = SdpSolution(_uncplx(s["V"]), s["objective"], s["certificate"], s["iterations"], s["status"])
    return problem, sol
