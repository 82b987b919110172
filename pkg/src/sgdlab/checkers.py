"""Numerical checkers for the analysis assumptions and technical inequalities.

Every checker is a falsifiable test with an explicit tolerance: it reports a
pass/fail/inconclusive verdict, the worst violation it found, and a witness
that reproduces a failure.  Sampling-based estimates of suprema are lower
bounds by construction; checkers that need an upper bound take it as an
explicit input (or use twice a grid estimate) rather than silently trusting
a sampled value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .engine import Schedule
from .errors import ContractViolation, DomainError
from .objectives import Objective, StochasticOracle

ZERO_CLAMP = 1e-300
DEFAULT_TOL = 1e-9

Verdict = Literal["pass", "fail", "inconclusive"]


@dataclass
class AssumptionReport:
    """Outcome of one numerical check.

    On failure the witness reproduces the violation when re-evaluated; on an
    inconclusive verdict required inputs were missing.
    """

    assumption_id: str
    verdict: Verdict
    worst_violation: float
    witness: object
    tolerance: float


@dataclass
class HolderEstimate:
    """Sampled local Hölder constant of the gradient over a closed ball.

    value = max over sampled points phi' of
        ||grad(phi') - grad(phi)|| / ||phi' - phi||^alpha,
    hence a lower bound of the true supremum.  The sample sequence is nested,
    so the estimate never decreases as n_samples grows.
    """

    center: np.ndarray
    radius: float
    alpha: float
    value: float
    n_samples: int
    method: str


@dataclass
class RadialRecord:
    radius: float
    grad_norm_sq: float
    L_r: float
    G_value: float
    ratio: float


@dataclass
class RadialProbe:
    """Gradient-energy vs noise-and-smoothness balance along a fixed ray.

    At each probe radius rho the record holds ||grad||^2, the sampled local
    Hölder constant L_r, the envelope value G, and

        ratio = grad_norm_sq / ((L_r + [L_r = 0]) * (G^((1+alpha)/2) + [G = 0]))

    with exact-zero indicator guards.  a5_trend tracks the monotonicity of F
    along the ray; a6_verdict states whether the ratio clears b_threshold at
    the largest radii.  Both are finite-horizon statements only.
    """

    radii: list[float]
    records: list[RadialRecord]
    alpha: float
    r: float
    b_threshold: float
    a5_trend: str
    a6_verdict: str


def _van_der_corput(n: int) -> np.ndarray:
    """First n points of the base-2 bit-reversal sequence in (0, 1)."""
    out = np.empty(n)
    for i in range(1, n + 1):
        v = 0.0
        denom = 1.0
        x = i
        while x:
            denom *= 2.0
            v += (x & 1) / denom
            x >>= 1
        out[i - 1] = v
    return out


def _ball_points(phi: np.ndarray, r: float, n: int, method: str, seed: int) -> np.ndarray:
    """Nested sample sequence in the closed ball around phi.

    grid (1-D): both endpoints first, then bit-reversal points of the
    interval.  pair-sampling (any p): alternating sphere/interior points from
    a seeded stream, one fixed draw count per point.  Either way the first n
    points of a longer sequence coincide with the shorter one.
    """
    p = phi.shape[0]
    if method == "grid":
        if p != 1:
            raise ContractViolation("grid method is one-dimensional")
        pts = np.empty((n, 1))
        pts[0, 0] = phi[0] + r
        if n > 1:
            pts[1, 0] = phi[0] - r
        if n > 2:
            v = _van_der_corput(n - 2)
            pts[2:, 0] = phi[0] + (2.0 * v - 1.0) * r
        return pts
    if method != "pair-sampling":
        raise ContractViolation(f"unknown sampling method {method!r}")
    rng = np.random.default_rng(seed)
    pts = np.empty((n, p))
    for i in range(n):
        d = rng.standard_normal(p)
        nd = float(np.linalg.norm(d))
        if nd == 0.0:  # pragma: no cover - measure zero
            d[0] = 1.0
            nd = 1.0
        rad = r if i % 2 == 0 else r * rng.random() ** (1.0 / p)
        pts[i] = phi + (rad / nd) * d
    return pts


def estimate_local_holder(
    obj: Objective,
    phi,
    r: float,
    alpha: float,
    n_samples: int,
    method: str | None = None,
    seed: int = 0,
) -> HolderEstimate:
    """Sampled L_r(phi): max gradient-difference ratio over the closed ball."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if r <= 0.0:
        raise ContractViolation("radius r must be > 0")
    if n_samples < 2:
        raise ContractViolation("need at least 2 samples")
    if obj.r0 > 0.0 and float(np.linalg.norm(phi)) - r < obj.r0:
        raise DomainError(
            f"ball of radius {r} around phi intersects the forbidden region "
            f"norm < {obj.r0}",
            theta=phi,
        )
    if method is None:
        method = "grid" if obj.dim == 1 else "pair-sampling"

    pts = _ball_points(phi, r, n_samples, method, seed)
    diffs = pts - phi[None, :]
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    keep = dists > 0.0
    gphi = obj.grad(phi)
    gdiff = obj.grad_batch(pts[keep]) - gphi[None, :]
    num = np.sqrt(np.einsum("ij,ij->i", gdiff, gdiff))
    ratios = num / dists[keep] ** alpha
    value = float(np.max(ratios)) if ratios.size else 0.0
    return HolderEstimate(
        center=phi, radius=r, alpha=alpha, value=value,
        n_samples=n_samples, method=method,
    )


def holder_sup_on_box(obj: Objective, box: tuple[float, float], alpha: float,
                      n_grid: int = 512, seed: int = 0) -> float:
    """Grid estimate of the pairwise Hölder ratio supremum over a box.

    For 1-D objectives this is exact over all grid pairs; for p > 1 it falls
    back to seeded random pairs.  A lower bound of the true sup either way.
    """
    lo, hi = float(box[0]), float(box[1])
    if not hi > lo:
        raise ContractViolation("box must satisfy hi > lo")
    if obj.dim == 1:
        xs = np.linspace(lo, hi, n_grid)[:, None]
        _check_in_domain(obj, xs)
        g = obj.grad_batch(xs)[:, 0]
        dx = np.abs(xs[:, 0][None, :] - xs[:, 0][:, None])
        dg = np.abs(g[None, :] - g[:, None])
        iu = np.triu_indices(n_grid, k=1)
        return float(np.max(dg[iu] / dx[iu] ** alpha))
    rng = np.random.default_rng(seed)
    a = rng.uniform(lo, hi, size=(n_grid, obj.dim))
    b = rng.uniform(lo, hi, size=(n_grid, obj.dim))
    _check_in_domain(obj, a)
    _check_in_domain(obj, b)
    diff = b - a
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    keep = dist > 0
    gd = obj.grad_batch(b[keep]) - obj.grad_batch(a[keep])
    num = np.sqrt(np.einsum("ij,ij->i", gd, gd))
    return float(np.max(num / dist[keep] ** alpha))


def _check_in_domain(obj: Objective, pts: np.ndarray) -> None:
    if obj.r0 <= 0.0:
        return
    norms = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    bad = norms < obj.r0
    if np.any(bad):
        theta = pts[int(np.argmax(bad))]
        raise DomainError(
            f"sample point violates the domain floor norm >= {obj.r0}", theta=theta
        )


def _uniform_box(rng: np.random.Generator, n: int, box: tuple[float, float],
                 dim: int) -> np.ndarray:
    lo, hi = float(box[0]), float(box[1])
    if not hi > lo:
        raise ContractViolation("box must satisfy hi > lo")
    return rng.uniform(lo, hi, size=(n, dim))


def check_descent_inequality(
    obj: Objective,
    n_pairs: int,
    L_tilde: float,
    alpha: float,
    box: tuple[float, float],
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> AssumptionReport:
    """Check the Hölder descent inequality on sampled pairs.

    Requires, for every sampled (theta, phi) in the box,

        F(theta) - F(phi) - grad(phi)^T (theta - phi)
            - L_tilde/(1+alpha) * ||theta - phi||^(1+alpha)  <=  tol.

    worst_violation is the largest left-hand side seen.
    """
    if L_tilde <= 0.0:
        raise ContractViolation("L_tilde must be > 0")
    rng = np.random.default_rng(seed)
    thetas = _uniform_box(rng, n_pairs, box, obj.dim)
    phis = _uniform_box(rng, n_pairs, box, obj.dim)
    _check_in_domain(obj, thetas)
    _check_in_domain(obj, phis)

    f_t = obj.value_batch(thetas)
    f_p = obj.value_batch(phis)
    g_p = obj.grad_batch(phis)
    diff = thetas - phis
    inner = np.einsum("ij,ij->i", g_p, diff)
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    lhs = f_t - f_p - inner - (L_tilde / (1.0 + alpha)) * dist ** (1.0 + alpha)

    worst_idx = int(np.argmax(lhs))
    worst = float(lhs[worst_idx])
    witness = {
        "theta": thetas[worst_idx].tolist(),
        "phi": phis[worst_idx].tolist(),
        "lhs": worst,
    }
    return AssumptionReport(
        assumption_id="descent",
        verdict="pass" if worst <= tol else "fail",
        worst_violation=worst,
        witness=witness,
        tolerance=tol,
    )


def descent_lhs(obj: Objective, theta, phi, L_tilde: float, alpha: float) -> float:
    """Re-evaluate the descent-inequality left-hand side at one pair."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    diff = theta - phi
    dist = float(np.linalg.norm(diff))
    return (
        obj.value(theta) - obj.value(phi) - float(obj.grad(phi) @ diff)
        - (L_tilde / (1.0 + alpha)) * dist ** (1.0 + alpha)
    )


def check_variance_control(norm_samples, alpha: float,
                           tol: float = 1e-12) -> AssumptionReport:
    """Check the two-link moment chain on nonnegative samples s:

        mean(s^(1+alpha)) <= mean(s^2)^((1+alpha)/2)
                          <= (1+alpha)/2 * mean(s^2) + (1-alpha)/2.

    The chain holds for every nonnegative sample set and alpha in (0, 1].
    Links can be mathematical equalities (alpha = 1, or a single sample), so
    the tolerance is applied relative to the link magnitude: pow rounding on
    large samples would otherwise register as a violation.
    """
    s = np.asarray(norm_samples, dtype=float)
    if s.size == 0:
        raise ContractViolation("sample set must be nonempty")
    if np.any(s < 0.0) or not np.all(np.isfinite(s)):
        raise ContractViolation("samples must be finite and >= 0")
    if not (0.0 < alpha <= 1.0):
        raise ContractViolation("alpha must be in (0, 1]")

    m_low = float(np.mean(s ** (1.0 + alpha)))
    m_mid = float(np.mean(s ** 2) ** ((1.0 + alpha) / 2.0))
    m_young = float((1.0 + alpha) / 2.0 * np.mean(s ** 2) + (1.0 - alpha) / 2.0)
    worst = max(
        (m_low - m_mid) / max(1.0, abs(m_mid)),
        (m_mid - m_young) / max(1.0, abs(m_young)),
    )
    witness = {"chain": [m_low, m_mid, m_young], "alpha": alpha}
    return AssumptionReport(
        assumption_id="variance",
        verdict="pass" if worst <= tol else "fail",
        worst_violation=worst,
        witness=witness,
        tolerance=tol,
    )


def check_grad_bound(
    obj: Objective,
    L: float | None,
    alpha: float,
    n_points: int,
    box: tuple[float, float],
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> AssumptionReport:
    """Check the gradient-energy bound from the global Hölder constant:

        ||grad(phi)||^2 <= (L^(1/alpha) * (1+alpha)/alpha * (F(phi) - f_lb))^(2*alpha/(1+alpha))

    at sampled points, to relative tolerance tol.  Without a global constant
    the verdict is inconclusive.
    """
    if L is None:
        return AssumptionReport(
            assumption_id="gradbound",
            verdict="inconclusive",
            worst_violation=0.0,
            witness=None,
            tolerance=tol,
        )
    rng = np.random.default_rng(seed)
    pts = _uniform_box(rng, n_points, box, obj.dim)
    _check_in_domain(obj, pts)
    f = obj.value_batch(pts) - obj.f_lb
    gsq = obj.grad_norm_batch(pts) ** 2
    bound = (L ** (1.0 / alpha) * (1.0 + alpha) / alpha * f) ** (2.0 * alpha / (1.0 + alpha))
    rel = (gsq - bound) / np.maximum(1.0, bound)
    worst_idx = int(np.argmax(rel))
    worst = float(rel[worst_idx])
    witness = {
        "phi": pts[worst_idx].tolist(),
        "grad_norm_sq": float(gsq[worst_idx]),
        "bound": float(bound[worst_idx]),
    }
    return AssumptionReport(
        assumption_id="gradbound",
        verdict="pass" if worst <= tol else "fail",
        worst_violation=worst,
        witness=witness,
        tolerance=tol,
    )


def _sample_sq_norms(oracle: StochasticOracle, theta: np.ndarray,
                     rng: np.random.Generator, n: int) -> np.ndarray:
    """n draws of ||sample||^2 at theta, vectorized per noise kind."""
    noise = oracle.noise
    grad = oracle.objective.grad(theta)
    if noise.kind == "zero":
        return np.full(n, float(grad @ grad))
    if noise.kind == "rademacher-radial":
        signs = rng.integers(0, 2, n).astype(np.float64) * 2.0 - 1.0
        rho = float(np.linalg.norm(theta))
        draws = grad[None, :] + rho * signs[:, None] * noise.direction[None, :]
        return np.einsum("ij,ij->i", draws, draws)
    sigma = noise.sigma_at(theta)
    draws = grad[None, :] + sigma * rng.standard_normal((n, noise.dim))
    return np.einsum("ij,ij->i", draws, draws)


def sample_gradient_norms(oracle: StochasticOracle, theta, rng: np.random.Generator,
                          n: int) -> np.ndarray:
    """n draws of ||sample|| at theta (input for the variance-control check)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    oracle.objective.check_domain(theta)
    return np.sqrt(_sample_sq_norms(oracle, theta, rng, n))


def check_expected_smoothness(
    oracle: StochasticOracle,
    C1: float,
    C2: float,
    C3: float,
    n_points: int,
    n_draws: int,
    box: tuple[float, float],
    seed: int = 0,
) -> AssumptionReport:
    """Check the declared second-moment bound

        E||sample||^2 <= C1 + C2*(F - f_lb) + C3*||grad||^2

    empirically: at each sampled theta, the mean of n_draws squared sample
    norms must not exceed the bound plus a 4-sigma statistical margin.
    """
    if C1 < 0.0 or C2 < 0.0:
        raise ContractViolation("C1 and C2 must be >= 0")
    if C3 < 1.0:
        raise ContractViolation("C3 must be >= 1")
    if n_draws < 2:
        raise ContractViolation("n_draws must be >= 2")
    obj = oracle.objective
    rng = np.random.default_rng(seed)
    pts = _uniform_box(rng, n_points, box, obj.dim)
    _check_in_domain(obj, pts)

    worst = -np.inf
    witness = None
    for theta in pts:
        sq = _sample_sq_norms(oracle, theta, rng, n_draws)
        m_hat = float(np.mean(sq))
        se = float(np.std(sq, ddof=1) / np.sqrt(n_draws))
        f = obj.value(theta) - obj.f_lb
        gsq = float(obj.grad(theta) @ obj.grad(theta))
        bound = C1 + C2 * f + C3 * gsq
        margin = m_hat - bound - 4.0 * se
        slack = 1e-12 * max(1.0, bound)
        if margin - slack > worst:
            worst = margin - slack
            witness = {
                "theta": theta.tolist(),
                "empirical_second_moment": m_hat,
                "bound": bound,
                "stderr": se,
            }
    return AssumptionReport(
        assumption_id="smoothness",
        verdict="pass" if worst <= 0.0 else "fail",
        worst_violation=worst,
        witness=witness,
        tolerance=0.0,
    )


def probe_radial_conditions(
    obj: Objective,
    G_fn: Callable[[np.ndarray], float],
    alpha: float,
    r: float,
    radii,
    b_threshold: float,
    direction=None,
    n_holder_samples: int = 512,
    seed: int = 0,
) -> RadialProbe:
    """Probe the gradient-energy / noise balance along a fixed direction.

    Verdicts are horizon-bound: satisfied-at-horizon means the ratio clears
    b_threshold at the largest probed radii, violated-at-horizon means it is
    decreasing and below the threshold there; no claim about the true limit.
    """
    radii = [float(x) for x in radii]
    if len(radii) == 0 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ContractViolation("radii must be strictly increasing")
    if b_threshold <= 0.0:
        raise ContractViolation("b_threshold must be > 0")
    if any(rho < obj.r0 + r for rho in radii):
        raise ContractViolation(f"all radii must be >= r0 + r = {obj.r0 + r}")

    if direction is None:
        u = np.zeros(obj.dim)
        u[0] = 1.0
    else:
        u = np.asarray(direction, dtype=float)
        u = u / float(np.linalg.norm(u))

    records = []
    f_values = []
    for rho in radii:
        phi = rho * u
        g = obj.grad(phi)
        gns = float(g @ g)
        est = estimate_local_holder(obj, phi, r, alpha, n_holder_samples, seed=seed)
        l_r = est.value if est.value >= ZERO_CLAMP else 0.0
        g_val = float(G_fn(phi))
        g_val = g_val if g_val >= ZERO_CLAMP else 0.0
        denom = (l_r + (1.0 if l_r == 0.0 else 0.0)) * (
            g_val ** ((1.0 + alpha) / 2.0) + (1.0 if g_val == 0.0 else 0.0)
        )
        records.append(RadialRecord(
            radius=rho, grad_norm_sq=gns, L_r=l_r, G_value=g_val,
            ratio=gns / denom,
        ))
        f_values.append(obj.value(phi))

    diffs = np.diff(f_values)
    if len(diffs) and np.all(diffs > 0.0):
        a5 = "increasing-unbounded"
    elif len(diffs) and np.all(diffs <= 0.0) and np.any(diffs < 0.0):
        # exact-zero diffs tolerated: F may underflow to 0.0 along the ray
        a5 = "decreasing"
    else:
        a5 = "bounded"

    tail = records[-min(3, len(records)):]
    ratios = [rec.ratio for rec in tail]
    if all(x >= b_threshold for x in ratios):
        a6 = "satisfied-at-horizon"
    elif all(b < a for a, b in zip(ratios, ratios[1:])) and all(x < b_threshold for x in ratios):
        a6 = "violated-at-horizon"
    else:
        a6 = "inconclusive"

    return RadialProbe(
        radii=radii, records=records, alpha=alpha, r=r,
        b_threshold=b_threshold, a5_trend=a5, a6_verdict=a6,
    )


def find_eigenvalue_threshold(schedule: Schedule, C: float, alpha: float,
                              K_max: int) -> int | None:
    """Smallest K with lambda_max(M_k)^alpha * kappa(M_k) <= 1/C for all
    k in [K, K_max]; None when the condition never settles by K_max.

    The returned K is exactly the index from which the eigenvalue lower bound
    lambda_min - (C/2) lambda_max^(1+alpha) >= lambda_min/2 holds.
    """
    if C <= 0.0:
        raise ContractViolation("C must be > 0")
    if K_max < 1:
        raise ContractViolation("K_max must be >= 1")
    target = 1.0 / C
    chunk = 1 << 20
    suffix_ok_from = None  # smallest K valid for the suffix scanned so far
    for hi in range(K_max, -1, -chunk):
        lo = max(0, hi - chunk + 1)
        ks = np.arange(lo, hi + 1)
        lmax = schedule.lambda_max_at(ks)
        lmin = schedule.lambda_min_at(ks)
        h = lmax ** alpha * (lmax / lmin)
        ok = h <= target
        if not np.all(ok):
            last_bad = lo + int(np.nonzero(~ok)[0][-1])
            return None if last_bad == K_max else last_bad + 1
        suffix_ok_from = lo
    return suffix_ok_from
