"""SGD recursion with matrix-valued learning rates and power-law schedules.

The update is theta_{k+1} = theta_k - M_k * sample_k where sample_k is one
stochastic-gradient draw and M_k is a symmetric positive-definite matrix
emitted by a schedule.  Schedules are (rotated) diagonal power laws with
eigenvalues d_i(k) = c_i * (k + k0)^(-beta_i), so the eigenvalue bounds
lambda_min/lambda_max/kappa are exact and the step-size summability tests
reduce to exponent comparisons.

beta_i = 0 is allowed (constant eigenvalue); the summability tests stay exact
for that case and it is needed to express constant step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ContractViolation, DomainError
from .objectives import OVERFLOW_CAP, StochasticOracle

# Iterates at or beyond this magnitude are treated as numeric overflow;
# squared norms then still fit in a float64.
THETA_CAP = 1e150

ORTHO_TOL = 1e-10

_CHUNK = 65536

Verdict = Literal["pass", "fail", "inconclusive"]

POWER_FAMILIES = ("scalar-power", "diagonal-power", "rotated-diagonal-power")


def _as_vector(x, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape == (1,) and dim > 1:
        arr = np.full(dim, arr[0])
    if arr.shape != (dim,):
        raise ContractViolation(f"{name} must have shape ({dim},), got {arr.shape}")
    return arr


def random_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Deterministic random orthogonal matrix (QR of a Gaussian, signs fixed)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q


@dataclass
class LearningRateMatrix:
    """Symmetric positive-definite step matrix stored by its eigensystem.

    kind "scalar" and "diagonal" mean Q = I; kind "rotated" stores
    M = Q diag(d) Q^T with Q orthogonal.  lambda_max/lambda_min/kappa are
    exact reads of the stored eigenvalues.
    """

    kind: str
    dim: int
    diag: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        self.diag = _as_vector(self.diag, self.dim, "diag")
        if not np.all(np.isfinite(self.diag)) or np.any(self.diag <= 0.0):
            raise ContractViolation("eigenvalues must be finite and > 0")
        if self.kind not in ("scalar", "diagonal", "rotated"):
            raise ContractViolation(f"unknown matrix kind {self.kind!r}")
        if self.kind == "scalar" and not np.all(self.diag == self.diag[0]):
            raise ContractViolation("scalar matrix requires equal eigenvalues")
        if self.kind == "rotated":
            if self.q is None:
                raise ContractViolation("rotated matrix requires an orthogonal factor")
            self.q = np.asarray(self.q, dtype=float)
            if self.q.shape != (self.dim, self.dim):
                raise ContractViolation("orthogonal factor has wrong shape")
            err = float(np.max(np.abs(self.q.T @ self.q - np.eye(self.dim))))
            if err > ORTHO_TOL:
                raise ContractViolation(f"factor is not orthogonal (|Q^T Q - I| = {err:g})")

    @property
    def lambda_max(self) -> float:
        return float(np.max(self.diag))

    @property
    def lambda_min(self) -> float:
        return float(np.min(self.diag))

    @property
    def kappa(self) -> float:
        return self.lambda_max / self.lambda_min

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Matrix-vector product under the stored representation."""
        g = _as_vector(g, self.dim, "g")
        if self.kind == "rotated":
            return self.q @ (self.diag * (self.q.T @ g))
        return self.diag * g

    def to_matrix(self) -> np.ndarray:
        if self.kind == "rotated":
            return self.q @ np.diag(self.diag) @ self.q.T
        return np.diag(self.diag)


def sgd_step(theta, m: LearningRateMatrix, g) -> np.ndarray:
    """One recursion step: theta - M g, exact under the stored representation."""
    theta = _as_vector(theta, m.dim, "theta")
    return theta - m.apply(g)


@dataclass
class Schedule:
    """Power-law learning-rate schedule d_i(k) = c_i * (k + k0)^(-beta_i).

    k0 >= 1 keeps k = 0 well defined.  The rotated family conjugates the
    diagonal by a fixed orthogonal factor built from rotation_seed (or given
    explicitly), which changes eigenvectors but not eigenvalues.
    """

    family: str
    c: np.ndarray
    beta: np.ndarray
    k0: float
    dim: int
    rotation_seed: int | None = None
    q: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.family not in POWER_FAMILIES:
            raise ContractViolation(f"unknown schedule family {self.family!r}")
        self.c = _as_vector(self.c, self.dim, "c")
        self.beta = _as_vector(self.beta, self.dim, "beta")
        if np.any(self.c <= 0.0):
            raise ContractViolation("coefficients c must be > 0")
        if np.any(self.beta < 0.0):
            raise ContractViolation("exponents beta must be >= 0")
        if self.k0 < 1.0:
            raise ContractViolation("offset k0 must be >= 1")
        if self.family == "scalar-power":
            if not (np.all(self.c == self.c[0]) and np.all(self.beta == self.beta[0])):
                raise ContractViolation("scalar-power requires one (c, beta) pair")
        if self.family == "rotated-diagonal-power":
            if self.q is None:
                seed = 0 if self.rotation_seed is None else int(self.rotation_seed)
                self.q = random_orthogonal(self.dim, seed)
            else:
                self.q = np.asarray(self.q, dtype=float)
        elif self.q is not None:
            raise ContractViolation(f"{self.family} does not take an orthogonal factor")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def scalar(c: float, beta: float, k0: float = 1.0, dim: int = 1) -> "Schedule":
        return Schedule("scalar-power", np.full(dim, float(c)), np.full(dim, float(beta)), k0, dim)

    @staticmethod
    def diagonal(c, beta, k0: float = 1.0) -> "Schedule":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return Schedule("diagonal-power", c, beta, k0, len(c))

    @staticmethod
    def rotated(c, beta, k0: float = 1.0, rotation_seed: int = 0, q=None) -> "Schedule":
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return Schedule("rotated-diagonal-power", c, beta, k0, len(c),
                        rotation_seed=rotation_seed, q=q)

    # -- evaluation ---------------------------------------------------------

    @property
    def label(self) -> str:
        c = ",".join(f"{v:g}" for v in self.c)
        b = ",".join(f"{v:g}" for v in self.beta)
        extra = f",rot={self.rotation_seed}" if self.family == "rotated-diagonal-power" else ""
        return f"{self.family}(c={c},beta={b},k0={self.k0:g},p={self.dim}{extra})"

    def eigenvalues(self, k: int) -> np.ndarray:
        if k < 0:
            raise ContractViolation("k must be >= 0")
        return self.c * (k + self.k0) ** (-self.beta)

    def matrix_at(self, k: int) -> LearningRateMatrix:
        d = self.eigenvalues(k)
        if self.family == "scalar-power":
            return LearningRateMatrix("scalar", self.dim, d)
        if self.family == "diagonal-power":
            return LearningRateMatrix("diagonal", self.dim, d)
        return LearningRateMatrix("rotated", self.dim, d, q=self.q)

    def eigen_bounds(self, k: int) -> tuple[float, float, float]:
        d = self.eigenvalues(k)
        lmin = float(np.min(d))
        lmax = float(np.max(d))
        return lmin, lmax, lmax / lmin

    def lambda_max_at(self, ks: np.ndarray) -> np.ndarray:
        """Vectorized lambda_max over an array of step indices."""
        ks = np.asarray(ks, dtype=float)
        d = self.c[None, :] * (ks[:, None] + self.k0) ** (-self.beta[None, :])
        return d.max(axis=1)

    def lambda_min_at(self, ks: np.ndarray) -> np.ndarray:
        ks = np.asarray(ks, dtype=float)
        d = self.c[None, :] * (ks[:, None] + self.k0) ** (-self.beta[None, :])
        return d.min(axis=1)

    def is_scalar_like(self) -> bool:
        return bool(np.all(self.c == self.c[0]) and np.all(self.beta == self.beta[0]))


def schedule_eigen_bounds(schedule: Schedule, k: int) -> tuple[float, float, float]:
    """(lambda_min, lambda_max, kappa) of M_k, exact from the family parameters."""
    return schedule.eigen_bounds(k)


@dataclass
class ScheduleReport:
    """Verdicts for the step-size summability and conditioning requirements.

    For power families every verdict is analytic (an exponent comparison);
    p2_partial_sum is the finite-horizon sum of lambda_max^(1+alpha), i.e. a
    lower estimate of its limit S.
    """

    alpha: float
    p2_partial_sum: float
    p2_verdict: Verdict
    p3_verdict: Verdict
    p4_verdict: Verdict
    analytic_basis: str
    horizon_used: int


def validate_schedule(schedule: Schedule, alpha: float, horizon: int) -> ScheduleReport:
    """Check the schedule against the three eigenvalue-sequence requirements.

    P2: sum_k lambda_max(M_k)^(1+alpha) finite  <=>  min(beta)*(1+alpha) > 1.
    P3: sum_k lambda_min(M_k) infinite          <=>  max(beta) <= 1.
    P4: lambda_max(M_k)^alpha * kappa(M_k) -> 0 <=>  max(beta) < (1+alpha)*min(beta).

    The partial sum is accumulated to the horizon either way.
    """
    if not (0.0 < alpha <= 1.0):
        raise ContractViolation("alpha must be in (0, 1]")
    if horizon < 1:
        raise ContractViolation("horizon must be >= 1")

    total = 0.0
    for start in range(0, horizon + 1, _CHUNK):
        ks = np.arange(start, min(start + _CHUNK, horizon + 1))
        total += float(np.sum(schedule.lambda_max_at(ks) ** (1.0 + alpha)))

    if schedule.family in POWER_FAMILIES:
        bmin = float(np.min(schedule.beta))
        bmax = float(np.max(schedule.beta))
        p2 = "pass" if bmin * (1.0 + alpha) > 1.0 else "fail"
        p3 = "pass" if bmax <= 1.0 else "fail"
        p4 = "pass" if bmax < (1.0 + alpha) * bmin else "fail"
        basis = (
            "power-family exponent tests: "
            f"P2 iff min(beta)*(1+alpha) > 1 [{bmin * (1 + alpha):g} vs 1]; "
            f"P3 iff max(beta) <= 1 [{bmax:g}]; "
            f"P4 iff max(beta) < (1+alpha)*min(beta) [{bmax:g} vs {(1 + alpha) * bmin:g}]"
        )
    else:  # pragma: no cover - no non-power family exists yet
        p2 = p3 = p4 = "inconclusive"
        basis = "non-power family: sampled partial sums only"

    return ScheduleReport(
        alpha=alpha,
        p2_partial_sum=total,
        p2_verdict=p2,
        p3_verdict=p3,
        p4_verdict=p4,
        analytic_basis=basis,
        horizon_used=horizon,
    )


@dataclass
class Trajectory:
    """A recorded SGD run.

    Steps are recorded at indices 0, s, 2s, ... plus the final index, where s
    is the record stride; with s = 1 the records cover 0..K contiguously.  On
    numeric overflow the run is truncated at the last finite iterate and
    flagged rather than raised, since divergence is an expected outcome.
    """

    ks: np.ndarray
    thetas: np.ndarray
    f_values: np.ndarray
    grad_norms: np.ndarray
    seed: int
    schedule_id: str
    objective_id: str
    oracle_id: str
    horizon: int
    record_stride: int = 1
    overflow: bool = False
    domain_violation: bool = False
    violation_theta: np.ndarray | None = None
    norm_trace: np.ndarray | None = None
    theta_trace: np.ndarray | None = None

    @property
    def last_k(self) -> int:
        return int(self.ks[-1])

    @property
    def truncated(self) -> bool:
        return self.last_k < self.horizon


def _run_scalar_loop(g1, noise, etas, x0: float, K: int, rng, r0: float,
                     truncate_on_domain: bool):
    """Tight 1-D loop; returns (trace array over 0..last, flags...)."""
    trace = np.empty(K + 1)
    trace[0] = x0
    x = x0
    kind = noise.kind
    sigma = noise.sigma
    overflow = False
    domain_hit = False
    viol = None
    last = K
    k = 0
    stop = False
    while k < K and not stop:
        n = min(_CHUNK, K - k)
        if kind == "additive-gaussian" or kind == "additive-gaussian-statedep":
            z = rng.standard_normal(n)
        elif kind == "rademacher-radial":
            z = rng.integers(0, 2, n).astype(np.float64) * 2.0 - 1.0
        else:
            z = None
        for j in range(n):
            if kind == "zero":
                g = g1(x)
            elif kind == "additive-gaussian":
                g = g1(x) + sigma * z[j]
            elif kind == "rademacher-radial":
                g = g1(x) + abs(x) * z[j]
            else:
                g = g1(x) + noise.sigma_at(np.array([x])) * z[j]
            xn = x - etas[k + j] * g
            if not (-THETA_CAP < xn < THETA_CAP):
                overflow = True
                last = k + j
                stop = True
                break
            if r0 > 0.0 and abs(xn) < r0:
                if not truncate_on_domain:
                    raise DomainError(
                        f"iterate left the domain (|theta| < {r0}) at step {k + j + 1}",
                        theta=np.array([xn]),
                    )
                domain_hit = True
                viol = np.array([xn])
                last = k + j
                stop = True
                break
            trace[k + j + 1] = xn
            x = xn
        k += n
    return trace[: last + 1], overflow, domain_hit, viol


def _run_vector_loop(objective, noise, schedule: Schedule, theta0: np.ndarray,
                     K: int, rng, truncate_on_domain: bool):
    """General p-dimensional loop."""
    p = objective.dim
    r0 = objective.r0
    trace = np.empty((K + 1, p))
    trace[0] = theta0
    theta = theta0.copy()
    grad = objective.grad
    kind = noise.kind
    overflow = False
    domain_hit = False
    viol = None
    last = K
    is_rotated = schedule.family == "rotated-diagonal-power"
    q = schedule.q
    k = 0
    stop = False
    while k < K and not stop:
        n = min(_CHUNK, K - k)
        ks = np.arange(k, k + n, dtype=float)
        ds = schedule.c[None, :] * (ks[:, None] + schedule.k0) ** (-schedule.beta[None, :])
        if kind == "additive-gaussian" or kind == "additive-gaussian-statedep":
            z = rng.standard_normal((n, p))
        elif kind == "rademacher-radial":
            z = rng.integers(0, 2, n).astype(np.float64) * 2.0 - 1.0
        else:
            z = None
        for j in range(n):
            g = grad(theta)
            if kind == "additive-gaussian":
                g = g + noise.sigma * z[j]
            elif kind == "rademacher-radial":
                g = g + float(np.linalg.norm(theta)) * z[j] * noise.direction
            elif kind == "additive-gaussian-statedep":
                g = g + noise.sigma_at(theta) * z[j]
            if is_rotated:
                step = q @ (ds[j] * (q.T @ g))
            else:
                step = ds[j] * g
            theta_n = theta - step
            nrm = float(np.linalg.norm(theta_n))
            if not (nrm < THETA_CAP):
                overflow = True
                last = k + j
                stop = True
                break
            if r0 > 0.0 and nrm < r0:
                if not truncate_on_domain:
                    raise DomainError(
                        f"iterate left the domain (norm < {r0}) at step {k + j + 1}",
                        theta=theta_n,
                    )
                domain_hit = True
                viol = theta_n
                last = k + j
                stop = True
                break
            trace[k + j + 1] = theta_n
            theta = theta_n
        k += n
    return trace[: last + 1], overflow, domain_hit, viol


def run_trajectory(
    oracle: StochasticOracle,
    schedule: Schedule,
    theta0,
    K: int,
    seed: int,
    record_stride: int = 1,
    keep_norm_trace: bool = False,
    keep_theta_trace: bool = False,
    truncate_on_domain_error: bool = False,
) -> Trajectory:
    """Run the recursion for K steps from theta0, one oracle draw per step.

    Deterministic given seed: the noise stream is consumed in a fixed chunked
    order, so re-running with identical arguments reproduces every recorded
    field bit for bit.  F and the gradient norm are recorded at every stride
    point plus the final index.
    """
    objective = oracle.objective
    noise = oracle.noise
    if K < 1:
        raise ContractViolation("K must be >= 1")
    if record_stride < 1:
        raise ContractViolation("record_stride must be >= 1")
    if objective.dim != schedule.dim:
        raise ContractViolation(
            f"objective dimension {objective.dim} != schedule dimension {schedule.dim}"
        )
    theta0 = _as_vector(theta0, objective.dim, "theta0")
    if not np.all(np.isfinite(theta0)):
        raise ContractViolation("theta0 must be finite")
    objective.check_domain(theta0)

    rng = np.random.default_rng(int(seed))

    if objective.dim == 1 and objective.g1 is not None:
        ks_all = np.arange(K, dtype=float)
        etas = (schedule.c[0] * (ks_all + schedule.k0) ** (-schedule.beta[0]))
        trace1, overflow, domain_hit, viol = _run_scalar_loop(
            objective.g1, noise, etas, float(theta0[0]), K, rng,
            objective.r0, truncate_on_domain_error,
        )
        trace = trace1[:, None]
        norm_trace = np.abs(trace1)
    else:
        trace, overflow, domain_hit, viol = _run_vector_loop(
            objective, noise, schedule, theta0, K, rng, truncate_on_domain_error,
        )
        norm_trace = np.sqrt(np.einsum("ij,ij->i", trace, trace))

    last = trace.shape[0] - 1
    rec = np.arange(0, last + 1, record_stride)
    if rec[-1] != last:
        rec = np.append(rec, last)
    thetas = trace[rec]
    f_values = np.asarray(objective.value_batch(thetas), dtype=float)
    grad_norms = np.asarray(objective.grad_norm_batch(thetas), dtype=float)

    # F at or beyond the cap is numeric overflow: truncate at the last good record.
    bad = ~np.isfinite(f_values) | (f_values >= OVERFLOW_CAP)
    if np.any(bad):
        cut = int(np.argmax(bad))
        cut = max(cut, 1)
        rec = rec[:cut]
        thetas = thetas[:cut]
        f_values = f_values[:cut]
        grad_norms = grad_norms[:cut]
        norm_trace = norm_trace[: int(rec[-1]) + 1]
        trace = trace[: int(rec[-1]) + 1]
        overflow = True

    return Trajectory(
        ks=rec.astype(np.int64),
        thetas=thetas,
        f_values=f_values,
        grad_norms=grad_norms,
        seed=int(seed),
        schedule_id=schedule.label,
        objective_id=objective.id,
        oracle_id=oracle.id,
        horizon=K,
        record_stride=record_stride,
        overflow=overflow,
        domain_violation=domain_hit,
        violation_theta=viol,
        norm_trace=norm_trace if (keep_norm_trace or keep_theta_trace) else None,
        theta_trace=trace[: int(rec[-1]) + 1] if keep_theta_trace else None,
    )
