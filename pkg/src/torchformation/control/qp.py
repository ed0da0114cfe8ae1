"""
Dense convex QP solver.

Solves

    minimize    ½ zᵀ H z + hᵀ z
    subject to  G z ≤ b,  lb ≤ z ≤ ub

with a primal active-set method. Bound constraints are handled by fixing
variables, so each iteration solves an equality-constrained subproblem in
the free variables only. Multipliers of the final working set are
returned together with KKT residuals. The iteration is deterministic:
whenever several constraints qualify for entering or leaving the working
set, the one with the lowest index is chosen, counting general rows
first, then lower bounds, then upper bounds.
"""

from dataclasses import dataclass
from enum import auto

from torchformation._compat import StrEnum
import logging
from typing import NamedTuple, TypeAlias

import torch

from torchformation.errors import ContractError, QpInfeasibleError
from torchformation.utils.linalg import is_positive_semidefinite, mv
from torchformation.utils.torch import DTYPE, all_finite

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Tensor: TypeAlias = torch.Tensor

KKT_TOL = 1e-8
PHASE_ONE_REG = 1e-6


class SolveStatus(StrEnum):
    solved = auto()
    max_iter = auto()
    degraded = auto()


@dataclass
class QpProblem:
    H: Tensor
    h: Tensor
    lb: Tensor | None = None
    ub: Tensor | None = None
    G: Tensor | None = None
    b: Tensor | None = None

    def __post_init__(self):
        n = self.h.shape[-1]
        if self.h.dim() != 1 or self.H.shape != (n, n):
            raise ContractError(
                f"H {tuple(self.H.shape)} does not match "
                f"h {tuple(self.h.shape)}"
            )
        if not is_positive_semidefinite(self.H, atol=1e-10):
            raise ContractError("H must be symmetric positive semidefinite")

        inf = torch.full((n,), float("inf"), dtype=DTYPE)
        self.lb = -inf if self.lb is None else self.lb
        self.ub = inf if self.ub is None else self.ub
        if self.G is None:
            self.G = torch.zeros(0, n, dtype=DTYPE)
            self.b = torch.zeros(0, dtype=DTYPE)
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ContractError("bounds must have one entry per variable")
        if self.G.shape[-1] != n or self.b.shape != self.G.shape[:1]:
            raise ContractError(
                f"rows G {tuple(self.G.shape)}, b {tuple(self.b.shape)} "
                f"do not match {n} variables"
            )

        crossed = (self.lb > self.ub).nonzero().flatten().tolist()
        if crossed:
            i = crossed[0]
            raise QpInfeasibleError(
                f"lower bound exceeds upper bound for variable {i}",
                certificate={
                    "kind": "bounds",
                    "index": i,
                    "lower": float(self.lb[i]),
                    "upper": float(self.ub[i]),
                },
            )

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def objective(self, z: Tensor) -> float:
        return float(0.5 * z @ self.H @ z + self.h @ z)


@dataclass(frozen=True)
class ActiveSet:
    rows: tuple[int, ...] = ()
    lower: tuple[int, ...] = ()
    upper: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return len(self.rows) + len(self.lower) + len(self.upper)


class KktResiduals(NamedTuple):
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    def max(self) -> float:
        return max(self)


class QpSolution(NamedTuple):
    z: Tensor
    mu: Tensor
    lam_lower: Tensor
    lam_upper: Tensor
    status: SolveStatus
    iterations: int
    residuals: KktResiduals
    active: ActiveSet

    @property
    def ok(self) -> bool:
        return self.status == SolveStatus.solved


def kkt_residuals(
    problem: QpProblem,
    z: Tensor,
    mu: Tensor,
    lam_lower: Tensor,
    lam_upper: Tensor,
) -> KktResiduals:
    P = problem
    grad = mv(P.H, z) + P.h + P.G.T @ mu - lam_lower + lam_upper
    slack_rows = P.G @ z - P.b
    zero = torch.zeros(1, dtype=DTYPE)

    primal = torch.cat([slack_rows, P.lb - z, z - P.ub, zero]).max()
    dual = torch.cat([-mu, -lam_lower, -lam_upper, zero]).max()

    # inactive multipliers are exactly zero, so infinite bounds give 0 * inf
    gap_lower = torch.where(lam_lower != 0, lam_lower * (z - P.lb), 0.0)
    gap_upper = torch.where(lam_upper != 0, lam_upper * (P.ub - z), 0.0)
    comp = torch.cat(
        [(mu * slack_rows).abs(), gap_lower.abs(), gap_upper.abs(), zero]
    ).max()

    return KktResiduals(
        stationarity=float(grad.abs().max()) if grad.numel() else 0.0,
        primal=float(primal),
        dual=float(dual),
        complementarity=float(comp),
    )


def _solve_kkt(K: Tensor, rhs: Tensor) -> tuple[Tensor, bool]:
    try:
        sol = torch.linalg.solve(K, rhs)
    except RuntimeError:
        sol = None
    if sol is None or not all_finite(sol):
        sol = torch.linalg.lstsq(K, rhs.unsqueeze(-1)).solution.squeeze(-1)
        return sol, False
    return sol, True


def _phase_one(problem: QpProblem, z0: Tensor, feas_tol: float) -> Tensor:
    """
    Find a point satisfying every constraint by minimizing the total row
    violation t ≥ 0 subject to G z - t ≤ b and the bounds. Raises with the
    minimum violation as certificate when it is positive.
    """
    P = problem
    n, m = P.n, P.m
    t0 = torch.clamp(P.G @ z0 - P.b, min=0)

    aux = QpProblem(
        H=PHASE_ONE_REG * torch.eye(n + m, dtype=DTYPE),
        h=torch.cat([-PHASE_ONE_REG * z0, torch.ones(m, dtype=DTYPE)]),
        lb=torch.cat([P.lb, torch.zeros(m, dtype=DTYPE)]),
        ub=torch.cat([P.ub, torch.full((m,), float("inf"), dtype=DTYPE)]),
        G=torch.cat([P.G, -torch.eye(m, dtype=DTYPE)], dim=1),
        b=P.b,
    )
    sol = solve_qp(aux, torch.cat([z0, t0]))
    z, t = sol.z[:n], sol.z[n:]

    if float(t.max()) > feas_tol:
        violated = (t > feas_tol).nonzero().flatten().tolist()
        raise QpInfeasibleError(
            f"no point satisfies rows {violated}",
            certificate={
                "kind": "rows",
                "rows": violated,
                "violation": float(t.sum()),
                "point": z.tolist(),
            },
        )
    return z


def solve_qp(
    problem: QpProblem,
    z0: Tensor | None = None,
    active: ActiveSet | None = None,
    max_iter: int | None = None,
    tol: float = 1e-12,
) -> QpSolution:
    """
    Solve ``problem`` starting from ``z0`` (clipped to the bounds) and the
    warm-start working set ``active``. Constraints of the warm-start set
    that are not active at the starting point are discarded. Raises
    ``QpInfeasibleError`` when no point satisfies the rows.
    """
    P = problem
    n, m = P.n, P.m
    max_iter = max_iter if max_iter is not None else 10 * (n + m) + 50
    scale = max(1.0, float(P.H.abs().max()), float(P.h.abs().max()))
    feas_tol = 1e-9 * max(1.0, float(P.b.abs().max()) if m else 1.0)

    z = torch.zeros(n, dtype=DTYPE) if z0 is None else z0.clone()
    z = torch.clamp(z, P.lb, P.ub)

    if m and float((P.G @ z - P.b).max()) > feas_tol:
        z = _phase_one(P, z, feas_tol)

    # working set: variables sitting on a bound, rows from the warm start
    fixed_lower = z <= P.lb
    fixed_upper = (z >= P.ub) & ~fixed_lower
    rows: list[int] = []
    if active is not None and m:
        slack = P.G @ z - P.b
        rows = [i for i in active.rows if abs(float(slack[i])) <= feas_tol]

    mu_w = torch.zeros(0, dtype=DTYPE)
    reliable = True
    stationary = False
    status = SolveStatus.max_iter
    iteration = 0

    for iteration in range(1, max_iter + 1):
        fixed = fixed_lower | fixed_upper
        free = (~fixed).nonzero().flatten()
        nf, nw = len(free), len(rows)

        g = mv(P.H, z) + P.h
        Gw = P.G[rows][:, free]
        K = torch.zeros(nf + nw, nf + nw, dtype=DTYPE)
        K[:nf, :nf] = P.H[free][:, free]
        K[:nf, nf:] = Gw.T
        K[nf:, :nf] = Gw
        rhs = torch.cat([-g[free], torch.zeros(nw, dtype=DTYPE)])

        if nf + nw:
            sol, exact = _solve_kkt(K, rhs)
            reliable = exact
        else:
            sol = rhs

        p = torch.zeros(n, dtype=DTYPE)
        p[free] = sol[:nf]
        mu_w = sol[nf:]

        step_norm = float(p.abs().max()) if n else 0.0
        if stationary or step_norm <= tol * max(1.0, float(z.abs().max())):
            r = g + P.G[rows].T @ mu_w
            # multipliers indexed as rows, lower bounds, upper bounds
            values = torch.full((m + 2 * n,), float("inf"), dtype=DTYPE)
            if nw:
                values[torch.tensor(rows, dtype=torch.long)] = mu_w
            values[m : m + n][fixed_lower] = r[fixed_lower]
            values[m + n :][fixed_upper] = -r[fixed_upper]

            worst = int(torch.argmin(values))
            if float(values[worst]) >= -tol * scale:
                status = SolveStatus.solved
                break

            if worst < m:
                rows.remove(worst)
            elif worst < m + n:
                fixed_lower[worst - m] = False
            else:
                fixed_upper[worst - m - n] = False
            stationary = False
            continue

        # ratio test over constraints outside the working set
        ratios = torch.full((m + 2 * n,), float("inf"), dtype=DTYPE)
        if m:
            Gp = P.G @ p
            gap = torch.clamp(P.b - P.G @ z, min=0)
            candidates = Gp > 0
            if rows:
                candidates[torch.tensor(rows, dtype=torch.long)] = False
            ratios[:m] = torch.where(candidates, gap / Gp, float("inf"))

        down = ~fixed & (p < 0) & torch.isfinite(P.lb)
        up = ~fixed & (p > 0) & torch.isfinite(P.ub)
        ratios[m : m + n] = torch.where(
            down, torch.clamp(z - P.lb, min=0) / -p, float("inf")
        )
        ratios[m + n :] = torch.where(
            up, torch.clamp(P.ub - z, min=0) / p, float("inf")
        )

        blocking = int(torch.argmin(ratios))
        α = float(ratios[blocking])

        if α >= 1:
            z = z + p
            stationary = True
            continue

        z = z + α * p
        if blocking < m:
            rows.append(blocking)
        elif blocking < m + n:
            i = blocking - m
            z[i] = P.lb[i]
            fixed_lower[i] = True
        else:
            i = blocking - m - n
            z[i] = P.ub[i]
            fixed_upper[i] = True

    # expand working-set multipliers to full vectors
    mu = torch.zeros(m, dtype=DTYPE)
    if rows and len(mu_w) == len(rows):
        mu[torch.tensor(rows, dtype=torch.long)] = mu_w
    r = mv(P.H, z) + P.h + P.G.T @ mu
    lam_lower = torch.where(fixed_lower, r, 0.0)
    lam_upper = torch.where(fixed_upper, -r, 0.0)

    residuals = kkt_residuals(P, z, mu, lam_lower, lam_upper)

    if status == SolveStatus.solved and (
        not reliable
        or residuals.stationarity > KKT_TOL * scale
        or residuals.primal > KKT_TOL
        or residuals.dual > KKT_TOL * scale
        or residuals.complementarity > KKT_TOL * scale
    ):
        status = SolveStatus.degraded
    if status == SolveStatus.max_iter:
        logger.debug(f"QP stopped after {max_iter} iterations")

    active_set = ActiveSet(
        rows=tuple(sorted(rows)),
        lower=tuple(fixed_lower.nonzero().flatten().tolist()),
        upper=tuple(fixed_upper.nonzero().flatten().tolist()),
    )

    return QpSolution(
        z=z,
        mu=mu,
        lam_lower=lam_lower,
        lam_upper=lam_upper,
        status=status,
        iterations=iteration,
        residuals=residuals,
        active=active_set,
    )
