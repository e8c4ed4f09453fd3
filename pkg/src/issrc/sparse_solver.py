"""Solvers for the l1-regularized inverse representation problem

    min_a ||h - D a||_2^2 + lam * ||a||_1

written in split form (a - b = 0) and solved either by a generalized ADMM
with a majorized gradient step, relaxed iterates and semi-proximal structure
(gsadmm_solve) or by the classic two-block ADMM with an exact least-squares
step (admm_solve). Both schemes share the soft-threshold b-step and the same
stopping rule, and both report per-iteration primal and KKT residuals.

Note the objective carries no 1/2 factor, so the data-term gradient is
2 D'(D a - h). A paper-faithful variant that drops the factor 2 (and hence
solves the problem with an effectively doubled l1 weight) is available via
gradient_factor=1.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np


class SolverDiverged(RuntimeError):
    """Non-finite iterate: the majorization constant is too small."""


@dataclass
class SolverParams:
    """Knobs for gsadmm_solve / admm_solve.

    lam=None selects the scale-adaptive policy 0.01 * ||D'h||_inf per solve.
    theta_k=None computes the majorization constant from theta_policy:
    "spectral" uses (1+1e-3) * (g * ||D||_2^2 + sigma) (tightest valid
    majorizer of the smoothed subproblem), "frobenius" the looser
    (1+1e-3) * ||D'D + sigma I||_F^2 bound.
    """

    lam: float = None
    sigma: float = 1.0
    rho: float = 1.8
    theta_k: float = None
    theta_policy: str = "spectral"
    max_iters: int = 2000
    tol: float = 1e-8
    gradient_factor: int = 2

    def validate(self):
        problems = []
        if self.lam is not None and not self.lam >= 0:
            problems.append("lambda must be >= 0 or None (auto)")
        if self.theta_k is not None and not self.theta_k > 0:
            problems.append("theta_k must be positive")
        if not self.sigma > 0:
            problems.append("sigma must be positive")
        if not 0.0 < self.rho < 2.0:
            problems.append("rho must lie strictly in (0, 2)")
        if self.theta_policy not in ("spectral", "frobenius"):
            problems.append("theta_policy must be spectral or frobenius")
        if self.gradient_factor not in (1, 2):
            problems.append("gradient_factor must be 1 or 2")
        if self.max_iters < 1:
            problems.append("max_iters must be >= 1")
        if not self.tol >= 0:
            problems.append("tol must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))
        return self


@dataclass
class SparseSolveState:
    """Final iterates and residual history of one solve."""

    alpha: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    iterations: int
    converged: bool
    lam: float
    theta_k: float = None
    primal_residuals: np.ndarray = None
    kkt_residuals: np.ndarray = None
    flags: dict = field(default_factory=dict)


def soft_threshold(x, eps):
    """Shrink toward zero: x-eps above eps, x+eps below -eps, else 0."""
    if eps < 0:
        raise ValueError("threshold must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > eps, x - eps, np.where(x < -eps, x + eps, 0.0))


def resolve_lambda(params, h_target, dictionary):
    """Concrete l1 weight for a solve under the auto policy."""
    if params.lam is not None:
        return float(params.lam)
    scale = float(np.max(np.abs(dictionary.T @ h_target)))
    return 0.01 * scale if scale > 0 else 1e-12


def _majorizer(dict_gram, sigma, g, policy, override):
    k = dict_gram.shape[0]
    if override is not None:
        return float(override)
    if policy == "frobenius":
        K = dict_gram + sigma * np.eye(k)
        return (1.0 + 1e-3) * float(np.linalg.norm(K, "fro") ** 2)
    lam_max = float(np.linalg.eigvalsh(dict_gram)[-1])
    return (1.0 + 1e-3) * (g * lam_max + sigma)


def kkt_residual(alpha, b, eta, h_target, dictionary, lam, gradient_factor=2):
    """Distance of (alpha, b, eta) from the first-order optimality system.

    eta follows the convention eta = grad f(alpha) with
    f(a) = ||h - D a||^2, i.e. the negative of the solver's internal
    multiplier. The returned value is the max of the stationarity gap,
    the per-coordinate distance of -eta from the l1 subdifferential, and
    the split feasibility gap, all in the infinity norm.
    """
    alpha, b, eta = (np.asarray(x, dtype=np.float64) for x in (alpha, b, eta))
    g = gradient_factor
    stationarity = np.max(np.abs(eta - g * (dictionary.T @ (dictionary @ alpha - h_target))))
    at_zero = np.maximum(0.0, np.abs(-eta) - lam)
    off_zero = np.abs(-eta - lam * np.sign(b))
    subdiff = np.max(np.where(b == 0.0, at_zero, off_zero)) if b.size else 0.0
    feasibility = np.max(np.abs(alpha - b)) if b.size else 0.0
    return float(max(stationarity, subdiff, feasibility))


def gsadmm_solve(h_target, dictionary, params=None):
    """Generalized ADMM with majorized gradient step and relaxation.

    Per iteration: a gradient step on the smoothed split objective scaled by
    1/theta_k, a multiplier step, a soft-threshold step, then relaxation of
    all three iterates by rho. Stops when max(||a-b||_2, ||a-a_prev||_2)
    drops below tol. Returns the thresholded iterate (exact zeros) and the
    solve state; hitting max_iters sets converged=False instead of raising.
    """
    params = (params or SolverParams()).validate()
    h = np.asarray(h_target, dtype=np.float64).ravel()
    D = np.asarray(dictionary, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != h.size:
        raise ValueError("dictionary shape %s does not match target length %d" % (D.shape, h.size))
    if not np.any(D != 0):
        raise ValueError("dictionary is all zeros")
    k = D.shape[1]
    g = params.gradient_factor
    lam = resolve_lambda(params, h, D)
    gram = D.T @ D
    Dth = D.T @ h
    theta = _majorizer(gram, params.sigma, g, params.theta_policy, params.theta_k)
    sigma, rho = params.sigma, params.rho

    a_t = np.zeros(k)
    b_t = np.zeros(k)
    e_t = np.zeros(k)
    a_prev = np.zeros(k)
    primal_hist = []
    kkt_hist = []
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            z = g * (gram @ a_t - Dth) + sigma * (a_t - b_t) + e_t
            a = a_t - z / theta
            e = e_t + sigma * (a - b_t)
            b = soft_threshold(a + e / sigma, lam / sigma)
            a_t = a_t + rho * (a - a_t)
            b_t = b_t + rho * (b - b_t)
            e_t = e_t + rho * (e - e_t)
        if not np.all(np.isfinite(a)):
            raise SolverDiverged("non-finite iterate at iteration %d (theta_k too small?)" % it)
        primal = float(np.linalg.norm(a - b))
        change = float(np.linalg.norm(a - a_prev))
        primal_hist.append(primal)
        kkt_hist.append(kkt_residual(a, b, -e, h, D, lam, g))
        a_prev = a
        if max(primal, change) < params.tol:
            converged = True
            break
    state = SparseSolveState(alpha=a, b=b, eta=e, iterations=it, converged=converged,
                             lam=lam, theta_k=theta,
                             primal_residuals=np.array(primal_hist),
                             kkt_residuals=np.array(kkt_hist))
    if not converged:
        state.flags["warning"] = "max_iters reached before tolerance"
    return b.copy(), state


def admm_solve(h_target, dictionary, params=None):
    """Classic two-block ADMM baseline with an exact least-squares step.

    The a-step solves (g D'D + sigma I) a = g D'h + sigma b - eta through a
    cached Cholesky factorization; b and eta steps and the stopping rule
    match gsadmm_solve.
    """
    params = (params or SolverParams()).validate()
    h = np.asarray(h_target, dtype=np.float64).ravel()
    D = np.asarray(dictionary, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != h.size:
        raise ValueError("dictionary shape %s does not match target length %d" % (D.shape, h.size))
    if not np.any(D != 0):
        raise ValueError("dictionary is all zeros")
    k = D.shape[1]
    g = params.gradient_factor
    lam = resolve_lambda(params, h, D)
    sigma = params.sigma
    gram = D.T @ D
    Dth = D.T @ h
    try:
        chol = np.linalg.cholesky(g * gram + sigma * np.eye(k))
    except np.linalg.LinAlgError:
        raise ValueError("normal equations are singular; sigma must be positive")

    b = np.zeros(k)
    e = np.zeros(k)
    a_prev = np.zeros(k)
    primal_hist = []
    kkt_hist = []
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        rhs = g * Dth + sigma * b - e
        a = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        b = soft_threshold(a + e / sigma, lam / sigma)
        e = e + sigma * (a - b)
        primal = float(np.linalg.norm(a - b))
        change = float(np.linalg.norm(a - a_prev))
        primal_hist.append(primal)
        kkt_hist.append(kkt_residual(a, b, -e, h, D, lam, g))
        a_prev = a
        if max(primal, change) < params.tol:
            converged = True
            break
    state = SparseSolveState(alpha=a, b=b, eta=e, iterations=it, converged=converged,
                             lam=lam,
                             primal_residuals=np.array(primal_hist),
                             kkt_residuals=np.array(kkt_hist))
    if not converged:
        state.flags["warning"] = "max_iters reached before tolerance"
    return b.copy(), state


def make_benchmark(n_instances, r=20, k=8, seed=0, density=None, noise=0.01):
    """Random well-posed instances with Gaussian dictionaries.

    The target is Gaussian by default; passing a density in (0, 1] plants a
    sparse signal h = D a + noise instead.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_instances):
        D = rng.standard_normal((r, k))
        if density is None:
            h = rng.standard_normal(r)
        else:
            a_true = rng.standard_normal(k) * (rng.random(k) < density)
            h = D @ a_true + noise * rng.standard_normal(r)
        out.append((h, D))
    return out


_SOLVERS = {"gsadmm": gsadmm_solve, "admm": admm_solve}


def convergence_report(instances, params_list, solvers=("gsadmm", "admm")):
    """Run each solver/parameter combo on each instance.

    Returns one row per (instance, solver, params): iterations, convergence
    flag, final primal and KKT residuals and wall time. Rows are plain dicts
    ready for CSV emission.
    """
    if not instances:
        raise ValueError("instance set is empty")
    if isinstance(params_list, SolverParams):
        params_list = [params_list]
    rows = []
    for idx, (h, D) in enumerate(instances):
        for params in params_list:
            for name in solvers:
                t0 = time.perf_counter()
                _, state = _SOLVERS[name](h, D, params)
                wall = time.perf_counter() - t0
                rows.append({
                    "instance": idx,
                    "solver": name,
                    "rho": params.rho,
                    "sigma": params.sigma,
                    "lam": state.lam,
                    "gradient_factor": params.gradient_factor,
                    "iterations": state.iterations,
                    "converged": state.converged,
                    "final_primal": float(state.primal_residuals[-1]),
                    "final_kkt": float(state.kkt_residuals[-1]),
                    "wall_time_s": wall,
                })
    return rows


def params_with(params, **overrides):
    """Copy of params with fields replaced (convenience for sweeps)."""
    return replace(params, **overrides)
