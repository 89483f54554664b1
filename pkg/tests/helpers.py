"""Independent oracles and second-path formulas used by the test suite.

Everything here is implemented from the mathematical definitions without
calling into the code paths under test (except trivially shared
containers), so agreement between the two routes is evidence, not
tautology.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from bvrvi.geometry import (
    ENTROPY_SIMPLEX,
    EUCLIDEAN_BALL,
    EUCLIDEAN_FREE,
    BlockVector,
    GeometrySpec,
    fused_inertial_prox,
)
from bvrvi.operators import FiniteSumProblem, OracleSampleDistribution


# ---------------------------------------------------------------------------
# Brute-force fused-prox minimizer (one block per row, many instances).
# ---------------------------------------------------------------------------

def _slsqp_entropy_prox(x_cur, x_prev, gamma, v, alpha) -> np.ndarray:
    from scipy.optimize import minimize

    lc, lp = np.log(x_cur), np.log(x_prev)

    def objective(z):
        lz = np.log(np.maximum(z, 1e-300))
        kl_c = float(np.sum(z * (lz - lc) - z + x_cur))
        kl_p = float(np.sum(z * (lz - lp) - z + x_prev))
        return alpha * float(v @ z) + gamma * kl_c + (1.0 - gamma) * kl_p

    def grad(z):
        lz = np.log(np.maximum(z, 1e-300))
        return alpha * v + gamma * (lz - lc) + (1.0 - gamma) * (lz - lp)

    d = x_cur.shape[0]
    with warnings.catch_warnings():
        # SLSQP probes marginally out-of-bounds points and clips; harmless.
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(objective, np.full(d, 1.0 / d), jac=grad, method="SLSQP",
                       bounds=[(1e-18, 1.0)] * d,
                       constraints=[{"type": "eq",
                                     "fun": lambda z: z.sum() - 1.0,
                                     "jac": lambda z: np.ones_like(z)}],
                       options={"maxiter": 1000, "ftol": 1e-16})
    if res.status != 0:
        raise RuntimeError(f"reference prox solve failed: {res.message}")
    return res.x


def brute_prox_oracle(kind: str, x_cur: np.ndarray, x_prev: np.ndarray,
                      gamma: np.ndarray, v: np.ndarray, alpha: np.ndarray,
                      radius: float = 1.0) -> np.ndarray:
    """Brute-force minimizer of the fused prox objective, rowwise.

    Inputs are (instances, dim) arrays; gamma and alpha are per-row.  The
    Euclidean kinds are solved in one exact step (unit curvature); the
    entropy kind is handed to a constrained SQP solver, an algorithm with
    nothing in common with the closed form it certifies.
    """
    g = np.asarray(gamma, dtype=np.float64)[:, None]
    a = np.asarray(alpha, dtype=np.float64)[:, None]
    if kind == ENTROPY_SIMPLEX:
        return np.stack([
            _slsqp_entropy_prox(x_cur[i], x_prev[i], float(gamma[i]), v[i],
                                float(alpha[i]))
            for i in range(x_cur.shape[0])
        ])
    combo = g * x_cur + (1.0 - g) * x_prev - a * v
    if kind == EUCLIDEAN_BALL:
        nrm = np.linalg.norm(combo, axis=1, keepdims=True)
        scale = np.minimum(1.0, radius / np.maximum(nrm, 1e-300))
        return combo * scale
    if kind == EUCLIDEAN_FREE:
        return combo
    raise ValueError(f"unknown kind {kind!r}")


def prox_objective(kind: str, z: np.ndarray, x_cur: np.ndarray,
                   x_prev: np.ndarray, gamma: float, v: np.ndarray,
                   alpha: float) -> float:
    """Value of <alpha*v, z> + gamma*D(z, x_cur) + (1-gamma)*D(z, x_prev)."""
    if kind == ENTROPY_SIMPLEX:
        def kl(pa, pb):
            pos = pa > 0
            return float(np.sum(pa[pos] * np.log(pa[pos] / pb[pos]))
                         + np.sum(pb) - np.sum(pa))
        return float(alpha * (v @ z) + gamma * kl(z, x_cur)
                     + (1.0 - gamma) * kl(z, x_prev))
    return float(alpha * (v @ z)
                 + 0.5 * gamma * np.sum((z - x_cur) ** 2)
                 + 0.5 * (1.0 - gamma) * np.sum((z - x_prev) ** 2))


# ---------------------------------------------------------------------------
# Small matrix-game equilibria by support enumeration.
# ---------------------------------------------------------------------------

def solve_small_matrix_game(payoff: np.ndarray, tol: float = 1e-9):
    """Equilibrium (x, y, value) of min_x max_y y^T A x on simplices.

    Exhaustive support enumeration; intended for n <= 4.  Returns the
    first support pair whose indifference solution is feasible and
    unimprovable.
    """
    a = np.asarray(payoff, dtype=np.float64)
    n = a.shape[0]
    supports = [tuple(s) for s in _nonempty_subsets(n)]
    for sy in supports:
        for sx in supports:
            if len(sx) != len(sy):
                continue
            sol = _indifference_solve(a, sy, sx)
            if sol is None:
                continue
            x, y, v = sol
            if np.min(x) < -tol or np.min(y) < -tol:
                continue
            if np.max(a @ x) > v + 1e-7 or np.min(a.T @ y) < v - 1e-7:
                continue
            return np.maximum(x, 0.0), np.maximum(y, 0.0), v
    raise RuntimeError("no equilibrium found; increase tolerance")


def _nonempty_subsets(n: int):
    for mask in range(1, 1 << n):
        yield [i for i in range(n) if mask >> i & 1]


def _indifference_solve(a, sy, sx):
    k = len(sx)
    sub = a[np.ix_(sy, sx)]
    # x makes the rows in sy indifferent; y makes the columns in sx.
    mx = np.zeros((k + 1, k + 1))
    mx[:k, :k] = sub
    mx[:k, k] = -1.0
    mx[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        solx = np.linalg.solve(mx, rhs)
        my = mx.copy()
        my[:k, :k] = sub.T
        soly = np.linalg.solve(my, rhs)
    except np.linalg.LinAlgError:
        return None
    if abs(solx[k] - soly[k]) > 1e-7:
        return None
    n = a.shape[0]
    x = np.zeros(n)
    y = np.zeros(n)
    x[list(sx)] = solx[:k]
    y[list(sy)] = soly[:k]
    return x, y, float(solx[k])


# ---------------------------------------------------------------------------
# Second-path guarantee formulas (different algebraic groupings).
# ---------------------------------------------------------------------------

def alt_step_bound(gamma, p, b, lip, lip_bar):
    return min((gamma - p) / (2.0 - 2.0 * p),
               b * (1.0 - gamma) / ((1.0 - p) * (2.0 * lip_bar ** 2 + b * lip ** 2)))


def alt_ergodic_coeff(gamma, alpha):
    return (2.0 - gamma) / alpha + 1.0


def alt_sigma1(gamma, p, alpha, b, lip, lip_bar, rho, lf):
    lead = 0.5 * (1.0 - gamma) / (1.0 - p) * (1.0 - 8.0 * rho * lf * lf / alpha)
    tail = alpha * (2.0 * alpha * lip ** 2 + 8.0 * rho * lip ** 2
                    + (4.0 * rho + 2.5 * alpha) * lip_bar ** 2 / b)
    return lead - tail


def alt_sigma2(gamma, p, alpha, b, lip, lip_bar, lf):
    return (8.0 * lip ** 2 + (4.0 / alpha ** 2) * ((1.0 - gamma) * lf * lf / (1.0 - p))
            + 4.0 * lip_bar ** 2 / b)


def alt_sigma1_p1(gamma, alpha, b, lip, lip_bar, rho, lf):
    tail = alpha * (4.0 * alpha * lip ** 2 + 16.0 * rho * lip ** 2
                    + (8.0 * rho + 5.0 * alpha) * lip_bar ** 2 / b)
    return (gamma - 0.5) - tail - 8.0 * gamma * rho * lf * lf / alpha


def alt_sigma2_p1(gamma, alpha, b, lip, lip_bar, lf):
    return 16.0 * lip ** 2 + 8.0 * (gamma / alpha ** 2) * lf * lf + 8.0 * lip_bar ** 2 / b


def alt_theta(gamma, p, alpha, b, lip, lip_bar, beta):
    t1 = (1.0 + 2.0 * alpha * beta + alpha) / (2.0 + 2.0 * gamma + alpha)
    t2 = (((1.0 - gamma) / (1.0 - p) + 2.0 * alpha * lip ** 2)
          / (alpha * (2.0 * alpha * lip_bar ** 2 / b + 3.0 * lip ** 2)))
    t3 = 1.0 / (1.0 - gamma)
    return min(t1, t2, t3)


def alt_varsigma(gamma, alpha, b, lip, lip_bar, beta):
    v1 = (1.0 + 2.0 * alpha * beta + alpha) / (2.0 + 2.0 * gamma + alpha)
    v2 = ((gamma + alpha * (2.0 * lip ** 2 - 1.0))
          / (alpha * (2.0 * alpha * lip_bar ** 2 / b + 3.0 * lip ** 2)))
    v3 = 1.0 / (1.0 - gamma) if gamma < 1.0 else math.inf
    return min(v1, v2, v3)


def alt_envelope_coeff(gamma, alpha):
    return 8.0 / (2.0 * (1.0 + gamma - alpha))


# ---------------------------------------------------------------------------
# Reference iterations and ad-hoc problems.
# ---------------------------------------------------------------------------

def reflected_reference(full_fn, spec: GeometrySpec, x0: BlockVector,
                        alpha: float, iters: int) -> list[BlockVector]:
    """Deterministic reflected update x+ = prox(x, alpha*(2F(x) - F(x-))).

    Returns [x0, x1, ..., x_iters]; the lagged point starts at x0.
    """
    x_prev, x = x0.copy(), x0.copy()
    traj = [x0.copy()]
    for _ in range(iters):
        direction = full_fn(x).scaled(2.0) - full_fn(x_prev)
        x_next = fused_inertial_prox(spec, x, x, 1.0, direction, alpha)
        x_prev, x = x, x_next
        traj.append(x_next)
    return traj


class SingleLinearSimplexProblem(FiniteSumProblem):
    """One-component linear operator on a single probability simplex."""

    def __init__(self, mat: np.ndarray, offset: np.ndarray):
        self.mat = np.asarray(mat, dtype=np.float64)
        self.offset = np.asarray(offset, dtype=np.float64)
        d = self.mat.shape[0]
        self.geometry = GeometrySpec(ENTROPY_SIMPLEX, (d,))
        self.n_rows = 1
        self.n_cols = 1
        self.lip = float(np.linalg.norm(self.mat, 2))
        self.lip_bar = self.lip
        self.tag = "monotone"
        self.rho = 0.0
        self.beta = None
        self.solution = None

    def full(self, z):
        return BlockVector((self.mat @ z.blocks[0] + self.offset,))

    def component(self, xi, z, dist):
        self._check_index(xi)
        return self.full(z)

    def distribution(self, u, v):
        same = np.array_equal(u.blocks[0], v.blocks[0])
        return OracleSampleDistribution(r=np.ones(1), c=np.ones(1), degenerate=same)

    def jacobian_transpose_apply(self, w):
        return BlockVector((self.mat.T @ w.blocks[0],))


def random_feasible(spec: GeometrySpec, rng: np.random.Generator) -> BlockVector:
    """A random point in the constraint set (interior for simplices)."""
    if spec.kind == ENTROPY_SIMPLEX:
        return BlockVector(tuple(rng.dirichlet(np.ones(d)) for d in spec.block_dims))
    if spec.kind == EUCLIDEAN_BALL:
        out = []
        for d in spec.block_dims:
            raw = rng.standard_normal(d)
            raw *= spec.radius * rng.random() ** (1.0 / d) / np.linalg.norm(raw)
            out.append(raw)
        return BlockVector(tuple(out))
    return BlockVector(tuple(rng.standard_normal(d) for d in spec.block_dims))
