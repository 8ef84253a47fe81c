"""Right-preconditioned Bi-CGStab with full metric capture.

Right preconditioning keeps the recursion residual equal to the true
system residual, so the stopping rule ||r_k|| / ||r_0|| <= tol is
unambiguous.  The initial guess is the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SolveReport:
    """Iteration counts, convergence flags, residual history and timings."""

    n_it: int = 0
    converged: bool = False
    breakdown: bool = False
    relres_history: list = field(default_factory=list)
    final_relres: float = np.inf
    t_stage1: float = 0.0
    t_stage2: float = 0.0
    t_solve: float = 0.0
    density: float | None = None

    @property
    def t_total(self) -> float:
        """Per-step cost: stage-2 setup plus iteration time."""
        return self.t_stage2 + self.t_solve

    def history_csv(self) -> str:
        lines = ["iteration,relres"]
        lines += [f"{k},{r:.6e}" for k, r in enumerate(self.relres_history)]
        return "\n".join(lines) + "\n"


def bicgstab(A_apply, P_apply, b: np.ndarray, tol: float = 1e-8,
             max_it: int = 2000):
    """Solve A x = b with right preconditioning; returns (x, SolveReport).

    ``A_apply`` and ``P_apply`` are callables; ``P_apply=None`` runs the
    unpreconditioned iteration.  A rho or omega breakdown is reported on
    the SolveReport (with the iteration index in the history length), not
    raised.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if P_apply is None:
        P_apply = lambda v: v

    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    report = SolveReport()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        report.converged = True
        report.final_relres = 0.0
        report.relres_history.append(0.0)
        return np.zeros(n), report

    x = np.zeros(n)
    r = b.copy()
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    p = np.zeros(n)
    v = np.zeros(n)

    while report.n_it < max_it:
        rho_next = r_hat @ r
        if rho_next == 0.0:
            report.breakdown = True
            break
        beta = (rho_next / rho) * (alpha / omega)
        rho = rho_next
        p = r + beta * (p - omega * v)
        p_hat = P_apply(p)
        v = A_apply(p_hat)
        denom = r_hat @ v
        if denom == 0.0:
            report.breakdown = True
            break
        alpha = rho / denom
        s = r - alpha * v
        report.n_it += 1
        snorm = np.linalg.norm(s)
        if snorm / bnorm <= tol:
            x = x + alpha * p_hat
            report.relres_history.append(snorm / bnorm)
            report.converged = True
            break
        s_hat = P_apply(s)
        t = A_apply(s_hat)
        tt = t @ t
        if tt == 0.0:
            report.breakdown = True
            break
        omega = (t @ s) / tt
        x = x + alpha * p_hat + omega * s_hat
        r = s - omega * t
        relres = np.linalg.norm(r) / bnorm
        report.relres_history.append(relres)
        if relres <= tol:
            report.converged = True
            break
        if omega == 0.0:
            report.breakdown = True
            break

    if not report.relres_history:   # breakdown before the first full iteration
        report.relres_history.append(np.linalg.norm(r) / bnorm)
    report.final_relres = np.linalg.norm(b - A_apply(x)) / bnorm
    return x, report
