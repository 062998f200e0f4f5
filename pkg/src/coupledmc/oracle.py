"""Independent numerical oracles for the coupled estimator.

Everything here is checked by plain Monte Carlo on Gaussian draws or by a
closed form; nothing imports the gradient code. Functions named ``check_*``
return a :class:`CheckResult` and back the ``check`` CLI subcommand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import (BasketCall, BlackScholes, Call, Heston, HestonCall, LogSquare,
                     vanilla_terminal)
from .numerics import RngStream, SampleStats, sample_stats, skewness
from .policy import constant_agent, init_params, reference_agent
from .trainer import simulate


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "details": _jsonable(self.details)}


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, SampleStats):
        return v.to_dict()
    return v


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bs_call_closed_form(b: float, sigma: float, s0: float, K: float, T: float) -> float:
    """Undiscounted ``E[(X_T - K)_+]`` for ``dX = b X dt + sigma X dW``."""
    if sigma < 0 or s0 <= 0 or K < 0 or T <= 0:
        raise ValueError("domain")
    fwd = s0 * math.exp(b * T)
    if K == 0:
        return fwd
    if sigma == 0:
        return max(fwd - K, 0.0)
    sd = sigma * math.sqrt(T)
    d1 = (math.log(s0 / K) + (b + 0.5 * sigma ** 2) * T) / sd
    return fwd * norm_cdf(d1) - K * norm_cdf(d1 - sd)


# -- Gaussian correlation function --------------------------------------------

@dataclass
class PhiEstimate:
    rho: float
    value: SampleStats


def _pair(n: int, seed: int):
    z = RngStream(seed, 0).normal((2, n))
    return z[0], z[1]


def _mix(z1, z3, rho):
    return rho * z1 + math.sqrt(max(1.0 - rho * rho, 0.0)) * z3


def phi_mc(g, rho: float, n: int, seed: int) -> PhiEstimate:
    """``E[g(Z1) g(rho Z1 + sqrt(1-rho^2) Z3)]``; draws depend on ``seed`` only."""
    if abs(rho) > 1 or n < 2:
        raise ValueError("need |rho| <= 1 and n >= 2")
    z1, z3 = _pair(n, seed)
    return PhiEstimate(rho, sample_stats(g(z1) * g(_mix(z1, z3, rho))))


def phi_prime_rhs_mc(gprime, rho: float, n: int, seed: int) -> SampleStats:
    """``E[g'(Z1) g'(rho Z1 + sqrt(1-rho^2) Z3)]`` on the same draws as :func:`phi_mc`."""
    z1, z3 = _pair(n, seed)
    return sample_stats(gprime(z1) * gprime(_mix(z1, z3, rho)))


def phi_prime_fd_mc(g, rho: float, n: int, seed: int, delta: float = 1e-3) -> SampleStats:
    """Pathwise central difference of ``phi`` in ``rho`` with common draws."""
    z1, z3 = _pair(n, seed)
    up = g(_mix(z1, z3, min(rho + delta, 1.0)))
    dn = g(_mix(z1, z3, max(rho - delta, -1.0)))
    width = min(rho + delta, 1.0) - max(rho - delta, -1.0)
    return sample_stats(g(z1) * (up - dn) / width)


def stein_identity_check(phi, n: int, seed: int, dx: float = 1e-5):
    """Both sides of ``E[phi'(Z)] = E[Z phi(Z)]``; ``phi'`` by central difference."""
    if n < 2:
        raise ValueError("n must be >= 2")
    z = RngStream(seed, 1).normal(n)
    lhs = sample_stats((phi(z + dx) - phi(z - dx)) / (2 * dx))
    rhs = sample_stats(z * phi(z))
    return lhs, rhs


def _agree(a: SampleStats, b: SampleStats, k: float = 3.0):
    tol = k * math.hypot(a.half_width_95, b.half_width_95)
    return abs(a.mean - b.mean) <= tol, tol


TEST_FUNCTIONS = {
    "square": (lambda x: x * x, lambda x: 2 * x),
    "tanh": (np.tanh, lambda x: 1.0 / np.cosh(x) ** 2),
    "exp_half": (lambda x: np.exp(0.5 * x), lambda x: 0.5 * np.exp(0.5 * x)),
}
RHO_POINTS = (-0.9, -0.5, 0.0, 0.5, 0.9)


def check_stein(n: int = 10 ** 6, seed: int = 11) -> CheckResult:
    rows, ok = [], True
    for name, phi, exact in (("x", lambda x: x, 1.0), ("x^2", lambda x: x * x, 0.0),
                             ("sin", np.sin, math.exp(-0.5))):
        lhs, rhs = stein_identity_check(phi, n, seed)
        good, tol = _agree(lhs, rhs)
        good = good and abs(rhs.mean - exact) <= 3 * rhs.half_width_95 + 1e-12
        ok &= good
        rows.append({"phi": name, "lhs": lhs.mean, "rhs": rhs.mean, "exact": exact,
                     "tol": tol, "passed": good})
    return CheckResult("stein_identity", ok, {"rows": rows})


def check_derivative_identity(n: int = 10 ** 6, seed: int = 12) -> CheckResult:
    """d/drho of the Gaussian correlation function equals the g'-correlation."""
    rows, ok = [], True
    for name, (g, gp) in TEST_FUNCTIONS.items():
        for rho in RHO_POINTS:
            fd = phi_prime_fd_mc(g, rho, n, seed)
            rhs = phi_prime_rhs_mc(gp, rho, n, seed)
            good, tol = _agree(fd, rhs)
            ok &= good
            rows.append({"g": name, "rho": rho, "fd": fd.mean, "rhs": rhs.mean,
                         "tol": tol, "passed": good})
    return CheckResult("derivative_identity", ok, {"rows": rows})


def check_quadratic_curve(n: int = 10 ** 6, seed: int = 13) -> CheckResult:
    """For ``g(x) = x^2`` the correlation function is ``1 + 2 rho^2``: interior minimum."""
    grid = np.linspace(-1, 1, 21)
    est = [phi_mc(lambda x: x * x, float(r), n, seed).value for r in grid]
    dev = [abs(e.mean - (1 + 2 * r * r)) for e, r in zip(est, grid)]
    fit_ok = all(d < 3 * e.half_width_95 for d, e in zip(dev, est))
    argmin = float(grid[int(np.argmin([e.mean for e in est]))])
    slope = phi_prime_rhs_mc(lambda x: 2 * x, -1.0, n, seed)
    ok = fit_ok and abs(argmin) <= 0.1 and slope.mean < 0
    return CheckResult("quadratic_counterexample", ok,
                       {"max_abs_dev": max(dev), "argmin": argmin,
                        "slope_at_minus_one": slope.mean, "fit_ok": fit_ok})


# -- constant-correlation searches on the SDE ---------------------------------

def _variance_and_se(z):
    c = z - z.mean()
    sq = c * c
    return float(np.var(z, ddof=1)), float(np.sqrt(np.var(sq, ddof=1) / z.size))


def constant_rho_grid_search(model, payoff, grid, n_paths: int, seed: int):
    """Variance of the paired estimator for each constant ``rho`` in ``grid``.

    Every grid point uses the same draws. Returns ``[(rho, variance, se, cross)]``
    with ``cross`` the sample mean of ``f(x1_T) f(x2_T)``.
    """
    out = []
    for rho in grid:
        agent = constant_agent(rho)
        r = simulate(agent, model, payoff, n_paths, seed, vanilla=False)
        var, se = _variance_and_se(0.5 * (r.f1 + r.f2))
        out.append((np.atleast_2d(rho), var, se, float(np.mean(r.f1 * r.f2))))
    return out


def reference_bs(d: int = 1, N: int = 50) -> BlackScholes:
    return BlackScholes([0.06] * d, [0.3] * d, [1.0] * d, T=1.0, N=N)


def reference_heston(n_assets: int = 1, N: int = 50) -> Heston:
    return Heston(mean_reversion=[0.5] * n_assets, long_var=[0.04] * n_assets,
                  vol_of_vol=[0.5] * n_assets, rho_sv=[-0.7] * n_assets,
                  s0=[1.0] * n_assets, v0=[0.1] * n_assets, T=1.0, N=N)


def check_antithetic_optimality(n_paths: int = 2 * 10 ** 5, seed: int = 14) -> CheckResult:
    """Constant correlations on the 1-d BS call: variance increases with rho."""
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0]
    res = constant_rho_grid_search(reference_bs(1), Call(1.0), [[[r]] for r in grid], n_paths, seed)
    var = [v for _, v, _, _ in res]
    se = [s for _, _, s, _ in res]
    mono = all(var[i + 1] >= var[i] - 3 * math.hypot(se[i], se[i + 1]) for i in range(len(var) - 1))
    argmin = grid[int(np.argmin(var))]
    return CheckResult("antithetic_optimality", mono and argmin == -1.0,
                       {"grid": grid, "variance": var, "se": se, "argmin": argmin})


def check_logsquare_interior(n_paths: int = 2 * 10 ** 5, seed: int = 15) -> CheckResult:
    """Log-square payoff on the 1-d BS model: the cross term is smallest near 0."""
    b, s = 0.06, 0.3
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0]
    res = constant_rho_grid_search(reference_bs(1), LogSquare(b - s * s / 2, s, 1.0),
                                   [[[r]] for r in grid], n_paths, seed)
    cross = [c for *_, c in res]
    argmin = grid[int(np.argmin(cross))]
    analytic = [1 + 2 * r * r for r in grid]
    return CheckResult("logsquare_interior_optimum", argmin == 0.0 and cross[0] > cross[2],
                       {"grid": grid, "cross_term": cross, "analytic": analytic,
                        "argmin": argmin})


def check_minus_plus_convention(n_paths: int = 2 * 10 ** 5, seed: int = 16,
                                target: float = 0.4341e-2, rel_tol: float = 0.10) -> CheckResult:
    """Sign patterns ``diag(+-1, +-1)`` on the 1-asset Heston call."""
    patterns = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    res = constant_rho_grid_search(reference_heston(1), HestonCall(1.0),
                                   [np.diag(p).astype(float) for p in patterns], n_paths, seed)
    var = [v for _, v, _, _ in res]
    best = patterns[int(np.argmin(var))]
    ok = best == (-1, 1) and abs(min(var) - target) <= rel_tol * target
    return CheckResult("minus_plus_convention", ok,
                       {"patterns": patterns, "variance": var, "argmin": best,
                        "target": target})


# -- marginal law and bias ----------------------------------------------------

def _batch_se(x, stat, n_batches: int = 50):
    parts = np.array_split(x, n_batches)
    vals = np.array([stat(p) for p in parts])
    return float(np.std(vals, ddof=1) / math.sqrt(n_batches))


def marginal_law_check(agent, model, payoff, n_paths: int, seed: int, k: float = 3.0) -> dict:
    """Compare mean/variance/skewness of ``f(x2_T)`` with an independent vanilla run.

    Standard errors come from 50 batch means on each side.
    """
    if n_paths < 10 ** 4:
        raise ValueError("n_paths must be >= 1e4")
    coupled = simulate(agent, model, payoff, n_paths, seed, vanilla=False).f2
    vanilla = payoff.value(vanilla_terminal(model, n_paths, RngStream(seed, 1 << 33)))
    stats = {"mean": np.mean, "variance": lambda x: np.var(x, ddof=1), "skewness": skewness}
    out, ok = {}, True
    for name, fn in stats.items():
        a, b = float(fn(coupled)), float(fn(vanilla))
        se = math.hypot(_batch_se(coupled, fn), _batch_se(vanilla, fn))
        good = abs(a - b) <= k * se
        ok &= good
        out[name] = {"coupled": a, "vanilla": b, "se": se, "passed": good}
    out["passed"] = ok
    return out


def check_marginal_law(n_paths: int = 10 ** 5, seed: int = 17) -> CheckResult:
    model = reference_bs(2)
    payoff = BasketCall.equal_weights(2)
    policy = init_params("ortho", 2, 2, seed=seed, zero_head=False)
    rows = {
        "random_ortho": marginal_law_check(policy, model, payoff, n_paths, seed),
        "antithetic": marginal_law_check(reference_agent("antithetic", 2), model, payoff,
                                         n_paths, seed),
        "identity": marginal_law_check(reference_agent("identity", 2), model, payoff,
                                       n_paths, seed),
    }
    return CheckResult("marginal_law", all(r["passed"] for r in rows.values()), rows)


def euler_call_means(ns=(50, 100, 200), n_paths: int = 10 ** 6, seed: int = 18,
                     b: float = 0.06, sigma: float = 0.3, chunk: int = 1 << 17):
    """Vanilla Euler call means for several step counts on nested increments.

    Increments are drawn on the finest grid and summed for coarser ones, so
    the estimates share their Brownian paths and their differences are sharp.
    """
    fine = max(ns)
    if any(fine % n for n in ns):
        raise ValueError("step counts must divide the finest one")
    sums = {n: [] for n in ns}
    stream = RngStream(seed, 0)
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        dw = stream.normal((m, fine)) * math.sqrt(1.0 / fine)
        for n in ns:
            inc = dw.reshape(m, n, fine // n).sum(axis=2)
            x = np.ones(m)
            for j in range(n):
                x = x + (b / n) * x + sigma * x * inc[:, j]
            sums[n].append(np.maximum(x - 1.0, 0.0))
    return {n: sample_stats(np.concatenate(v)) for n, v in sums.items()}


def check_discretization_bias(n_paths: int = 10 ** 6, seed: int = 18) -> CheckResult:
    """Euler mean at N=50 sits within CI + C*h of the closed-form price."""
    price = bs_call_closed_form(0.06, 0.3, 1.0, 1.0, 1.0)
    means = euler_call_means(n_paths=n_paths, seed=seed)
    # Richardson: bias(N) ~ C/N, slope from the two finest grids
    C = abs(means[100].mean - means[200].mean) / (1 / 100 - 1 / 200)
    m50 = means[50]
    gap = abs(m50.mean - price)
    tol = 3 * m50.half_width_95 + C / 50
    return CheckResult("discretization_bias", gap < tol,
                       {"closed_form": price, "euler_means": {n: s.mean for n, s in means.items()},
                        "C": C, "gap": gap, "tol": tol})


ALL_CHECKS = {
    "stein_identity": check_stein,
    "derivative_identity": check_derivative_identity,
    "quadratic_counterexample": check_quadratic_curve,
    "antithetic_optimality": check_antithetic_optimality,
    "logsquare_interior_optimum": check_logsquare_interior,
    "minus_plus_convention": check_minus_plus_convention,
    "marginal_law": check_marginal_law,
    "discretization_bias": check_discretization_bias,
}


def run_checks(seed: int | None = None, names=None) -> list[CheckResult]:
    """Run the oracle suite; ``seed`` replaces every check's default seed."""
    out = []
    for name, fn in ALL_CHECKS.items():
        if names is not None and name not in names:
            continue
        out.append(fn() if seed is None else fn(seed=seed))
    return out
