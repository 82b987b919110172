"""Monte Carlo ensembles and the statistics that operationalize the theory.

Everything here is a finite-horizon surrogate of an asymptotic statement:
dichotomy verdicts are "-like", radial and capture verdicts are horizon
bound, and expectations are ensemble means with standard errors.  Ensembles
are deterministic functions of their spec: trajectory i always runs with
seed split(master_seed, i), and aggregation happens in fixed trajectory
order, so results do not depend on execution interleaving.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import Schedule, Trajectory, run_trajectory
from .errors import ContractViolation
from .objectives import NoiseSpec, ObjectiveSpec, StochasticOracle

__all__ = [
    "EnsembleSpec",
    "CaptureConfig",
    "CaptureReport",
    "DichotomyClassification",
    "ConvergenceReport",
    "EnsembleResult",
    "StoppingTimes",
    "split_seed",
    "classify_dichotomy",
    "run_ensemble",
    "capture_escape_frequency",
    "gradient_convergence_stats",
    "compute_stopping_times",
    "envelope_sup_over_ball",
]


def split_seed(master_seed: int, index: int) -> int:
    """Hash-split the master seed: trajectory seeds are reproducible and do
    not change when the ensemble is extended."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class EnsembleSpec:
    """Recipe for an ensemble of independent trajectories."""

    objective: ObjectiveSpec
    noise: NoiseSpec
    schedule: Schedule
    theta0: tuple[float, ...]
    horizon: int
    n_trajectories: int
    master_seed: int
    record_stride: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        if self.n_trajectories < 1:
            raise ContractViolation("n_trajectories must be >= 1")
        if self.record_stride < 1:
            raise ContractViolation("record_stride must be >= 1")
        if len(self.theta0) != self.objective.dimension:
            raise ContractViolation("theta0 dimension does not match the objective")

    def build(self) -> StochasticOracle:
        obj = self.objective.build()
        return StochasticOracle(obj, self.noise.build(obj.dim))

    @property
    def objective_id(self) -> str:
        return self.objective.label

    @property
    def noise_id(self) -> str:
        return self.noise.label

    @property
    def schedule_id(self) -> str:
        return self.schedule.label

    def checkpoints(self) -> np.ndarray:
        cps = np.arange(0, self.horizon + 1, self.record_stride)
        if cps[-1] != self.horizon:
            cps = np.append(cps, self.horizon)
        return cps


@dataclass(frozen=True)
class CaptureConfig:
    """Ball and jump size for escape-event tracking."""

    theta_bar: tuple[float, ...]
    R: float
    epsilon: float
    n_grid: int = 8193


@dataclass
class DichotomyClassification:
    """Finite-horizon verdict on the iterate norms over the final window.

    converged-like: window range < epsilon_conv and window max < R_div.
    diverging-like: window min > R_div.  Anything else is undecided.  The
    evidence dict carries the window range and window min that the rules
    used, so a verdict can be re-derived from the classification alone.
    """

    verdict: str
    window_length: int
    epsilon_conv: float
    R_div: float
    evidence: dict


@dataclass
class ConvergenceReport:
    """Per-checkpoint ensemble statistics of F - f_lb and the gradient norm.

    Statistics at checkpoint k are taken over the trajectories still running
    at step k (n_alive).  sup_mean_f estimates sup_k E[F(theta_k) - f_lb];
    final_decade_slope is the least-squares slope of log mean gradient norm
    against log k over the last decade of checkpoints.
    """

    ks: list[int]
    n_alive: list[int]
    f_gap_mean: list[float]
    f_gap_se: list[float]
    f_gap_median: list[float]
    f_gap_q25: list[float]
    f_gap_q75: list[float]
    grad_norm_mean: list[float]
    grad_norm_se: list[float]
    grad_norm_median: list[float]
    grad_norm_q25: list[float]
    grad_norm_q75: list[float]
    grad_norm_sq_mean: list[float]
    grad_norm_sq_se: list[float]
    grad_norm_sq_median: list[float]
    grad_norm_sq_q25: list[float]
    grad_norm_sq_q75: list[float]
    f_lim_estimates: list[float]
    sup_mean_f: float
    sup_mean_f_k: int
    sup_mean_f_se: float
    gamma_moments: dict[float, list[float]] | None
    final_decade_slope: float | None
    escape_total: int | None = None


@dataclass
class CaptureReport:
    """Escape frequencies against the step-size tail bound.

    empirical[k] is the fraction of trajectories with ||theta_k - theta_bar||
    <= R and ||theta_{k+1} - theta_bar|| >= R + epsilon; theoretical_tail[k]
    is epsilon^-2 * lambda_max(M_k)^2 * G_R with G_R the grid maximum of the
    declared envelope over the ball.  bound_margin_max is the largest value
    of empirical - tail - 4 * binomial stderr over all k (<= 0 means the
    per-step bound held everywhere).
    """

    theta_bar: tuple[float, ...]
    R: float
    epsilon: float
    G_R: float
    n_trajectories: int
    n_steps: int
    escape_counts: dict[int, int]
    empirical: np.ndarray = field(repr=False)
    theoretical_tail: np.ndarray = field(repr=False)
    empirical_sum: float = 0.0
    theoretical_sum: float = 0.0
    total_escapes: int = 0
    bound_margin_max: float = 0.0


@dataclass
class EnsembleResult:
    """Everything run_ensemble produces, in fixed trajectory order."""

    spec: EnsembleSpec
    convergence: ConvergenceReport
    classifications: list[DichotomyClassification]
    capture: CaptureReport | None
    n_overflow: int
    n_domain_violation: int
    seeds: list[int]


@dataclass
class StoppingTimes:
    """Indices where F first exceeds its value at the previous stopping time
    by more than 1, starting from tau_0 = 0.

    complete is True when the final recorded step is itself a stopping time
    (the sequence filled the horizon); it is False when the horizon ended
    while scanning for the next crossing.  tau_geq_k records whether
    tau_k >= k held for every recorded k.
    """

    taus: list[int]
    complete: bool
    tau_geq_k: bool


# ---------------------------------------------------------------------------
# dichotomy classification
# ---------------------------------------------------------------------------

def default_window(horizon: int) -> int:
    return max(1, horizon // 10)


def default_epsilon_conv(theta0) -> float:
    return 1e-3 * (1.0 + float(np.linalg.norm(theta0)))


def default_r_div(theta0) -> float:
    return 1e3 * (1.0 + float(np.linalg.norm(theta0)))


def _classify_window(window: np.ndarray, W: int, epsilon_conv: float,
                     R_div: float) -> DichotomyClassification:
    wmin = float(np.min(window))
    wmax = float(np.max(window))
    wrange = wmax - wmin
    if wrange < epsilon_conv and wmax < R_div:
        verdict = "converged-like"
    elif wmin > R_div:
        verdict = "diverging-like"
    else:
        verdict = "undecided"
    return DichotomyClassification(
        verdict=verdict,
        window_length=W,
        epsilon_conv=epsilon_conv,
        R_div=R_div,
        evidence={"window_range": wrange, "window_min": wmin},
    )


def classify_dichotomy(traj: Trajectory, W: int, epsilon_conv: float,
                       R_div: float) -> DichotomyClassification:
    """Classify a trajectory from the norms over its final W steps.

    Uses the per-step norm trace when the trajectory carries one, otherwise
    the norms of the recorded iterates that fall inside the window.
    """
    if W < 1 or W > traj.horizon:
        raise ContractViolation("window W must satisfy 1 <= W <= horizon")
    if traj.norm_trace is not None:
        window = traj.norm_trace[-min(W, len(traj.norm_trace)):]
    else:
        sel = traj.ks > (traj.last_k - W)
        thetas = traj.thetas[sel]
        window = np.sqrt(np.einsum("ij,ij->i", thetas, thetas))
    return _classify_window(window, W, epsilon_conv, R_div)


# ---------------------------------------------------------------------------
# per-trajectory worker
# ---------------------------------------------------------------------------

@dataclass
class _TrajectorySummary:
    f_gap: np.ndarray
    grad_norm: np.ndarray
    classification: DichotomyClassification
    escape_ks: np.ndarray | None
    overflow: bool
    domain_violation: bool
    f_lim_estimate: float
    last_k: int
    seed: int


def _summarize_one(spec: EnsembleSpec, index: int, W: int, epsilon_conv: float,
                   R_div: float, capture: CaptureConfig | None) -> _TrajectorySummary:
    oracle = spec.build()
    seed = split_seed(spec.master_seed, index)
    traj = run_trajectory(
        oracle,
        spec.schedule,
        np.asarray(spec.theta0, dtype=float),
        spec.horizon,
        seed,
        record_stride=spec.record_stride,
        keep_norm_trace=True,
        keep_theta_trace=capture is not None,
        truncate_on_domain_error=True,
    )
    cps = spec.checkpoints()
    f_gap = np.full(len(cps), np.nan)
    grad_norm = np.full(len(cps), np.nan)
    pos = np.searchsorted(traj.ks, cps)
    ok = pos < len(traj.ks)
    ok[ok] &= traj.ks[pos[ok]] == cps[ok]
    f_gap[ok] = traj.f_values[pos[ok]] - oracle.objective.f_lb
    grad_norm[ok] = traj.grad_norms[pos[ok]]

    classification = classify_dichotomy(traj, W, epsilon_conv, R_div)

    escape_ks = None
    if capture is not None:
        tb = np.asarray(capture.theta_bar, dtype=float)
        diff = traj.theta_trace - tb[None, :]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        inside = dist[:-1] <= capture.R
        jumped = dist[1:] >= capture.R + capture.epsilon
        escape_ks = np.nonzero(inside & jumped)[0].astype(np.int64)

    window_sel = traj.ks > (traj.last_k - W)
    f_lim_estimate = float(np.mean(traj.f_values[window_sel]))

    return _TrajectorySummary(
        f_gap=f_gap,
        grad_norm=grad_norm,
        classification=classification,
        escape_ks=escape_ks,
        overflow=traj.overflow,
        domain_violation=traj.domain_violation,
        f_lim_estimate=f_lim_estimate,
        last_k=traj.last_k,
        seed=seed,
    )


def _worker(args):
    return _summarize_one(*args)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _column_stats(matrix: np.ndarray):
    """Per-column mean/se/median/q25/q75 ignoring NaN entries."""
    n_cols = matrix.shape[1]
    n_alive = np.sum(~np.isnan(matrix), axis=0).astype(int)
    mean = np.full(n_cols, np.nan)
    se = np.full(n_cols, np.nan)
    med = np.full(n_cols, np.nan)
    q25 = np.full(n_cols, np.nan)
    q75 = np.full(n_cols, np.nan)
    for j in range(n_cols):
        col = matrix[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            continue
        mean[j] = np.mean(col)
        se[j] = np.std(col, ddof=1) / np.sqrt(col.size) if col.size > 1 else 0.0
        med[j] = np.median(col)
        q25[j] = np.quantile(col, 0.25)
        q75[j] = np.quantile(col, 0.75)
    return n_alive, mean, se, med, q25, q75


def gradient_convergence_stats(
    ks: np.ndarray,
    f_gap: np.ndarray,
    grad_norm: np.ndarray,
    f_lim_estimates: list[float],
    gammas: list[float] | None = None,
) -> ConvergenceReport:
    """Aggregate per-checkpoint ensemble statistics.

    ks are the checkpoint indices; f_gap and grad_norm are
    (n_trajectories, n_checkpoints) matrices with NaN marking steps past a
    trajectory's truncation point.
    """
    ks = np.asarray(ks)
    n_alive, fg_mean, fg_se, fg_med, fg_q25, fg_q75 = _column_stats(f_gap)
    _, gn_mean, gn_se, gn_med, gn_q25, gn_q75 = _column_stats(grad_norm)
    _, g2_mean, g2_se, g2_med, g2_q25, g2_q75 = _column_stats(grad_norm ** 2)

    valid = ~np.isnan(fg_mean)
    if np.any(valid):
        sup_idx = int(np.nanargmax(fg_mean))
        sup_mean_f = float(fg_mean[sup_idx])
        sup_k = int(ks[sup_idx])
        sup_se = float(fg_se[sup_idx])
    else:  # pragma: no cover - all trajectories dead at every checkpoint
        sup_mean_f, sup_k, sup_se = float("nan"), -1, float("nan")

    gamma_moments = None
    if gammas is not None:
        gamma_moments = {}
        for gamma in gammas:
            if not (0.0 <= gamma < 1.0):
                raise ContractViolation("gamma moments require gamma in [0, 1)")
            powed = np.maximum(f_gap, 0.0) ** gamma
            powed[np.isnan(f_gap)] = np.nan
            _, m, *_ = _column_stats(powed)
            gamma_moments[gamma] = [float(x) for x in m]

    slope = None
    k_hi = int(ks[-1])
    sel = (ks >= max(1, k_hi // 10)) & (ks >= 1) & ~np.isnan(gn_mean) & (gn_mean > 0.0)
    if np.sum(sel) >= 2:
        x = np.log(ks[sel].astype(float))
        y = np.log(gn_mean[sel])
        slope = float(np.polyfit(x, y, 1)[0])

    def aslist(a):
        return [float(v) for v in a]

    return ConvergenceReport(
        ks=[int(k) for k in ks],
        n_alive=[int(v) for v in n_alive],
        f_gap_mean=aslist(fg_mean),
        f_gap_se=aslist(fg_se),
        f_gap_median=aslist(fg_med),
        f_gap_q25=aslist(fg_q25),
        f_gap_q75=aslist(fg_q75),
        grad_norm_mean=aslist(gn_mean),
        grad_norm_se=aslist(gn_se),
        grad_norm_median=aslist(gn_med),
        grad_norm_q25=aslist(gn_q25),
        grad_norm_q75=aslist(gn_q75),
        grad_norm_sq_mean=aslist(g2_mean),
        grad_norm_sq_se=aslist(g2_se),
        grad_norm_sq_median=aslist(g2_med),
        grad_norm_sq_q25=aslist(g2_q25),
        grad_norm_sq_q75=aslist(g2_q75),
        f_lim_estimates=[float(x) for x in f_lim_estimates],
        sup_mean_f=sup_mean_f,
        sup_mean_f_k=sup_k,
        sup_mean_f_se=sup_se,
        gamma_moments=gamma_moments,
        final_decade_slope=slope,
    )


def envelope_sup_over_ball(spec: EnsembleSpec, theta_bar, R: float,
                           n_grid: int = 8193) -> float:
    """Grid maximization of the declared envelope G over the closed ball.

    Exact up to grid resolution for 1-D problems; radial problems reduce to a
    1-D sweep over the norm range covered by the ball.  The grid is clipped
    to the objective's domain.
    """
    oracle = spec.build()
    obj = oracle.objective
    noise = oracle.noise
    tb = np.atleast_1d(np.asarray(theta_bar, dtype=float))
    if R < 0:
        raise ContractViolation("R must be >= 0")
    if obj.dim == 1:
        lo, hi = tb[0] - R, tb[0] + R
        xs = np.linspace(lo, hi, n_grid)
        if obj.r0 > 0.0:
            xs = xs[np.abs(xs) >= obj.r0]
            if xs.size == 0:
                raise ContractViolation("ball lies entirely inside the forbidden region")
        pts = xs[:, None]
    elif getattr(obj, "radial", False) and noise.kind != "additive-gaussian-statedep":
        nb = float(np.linalg.norm(tb))
        lo = max(obj.r0, max(0.0, nb - R))
        hi = nb + R
        rhos = np.linspace(lo, hi, n_grid)
        pts = np.zeros((len(rhos), obj.dim))
        pts[:, 0] = rhos
    else:
        raise ContractViolation(
            "envelope maximization supports 1-D problems and radial objectives"
        )
    g_vals = noise.envelope_batch(obj, pts)
    return float(np.max(g_vals))


def run_ensemble(
    spec: EnsembleSpec,
    *,
    W: int | None = None,
    epsilon_conv: float | None = None,
    R_div: float | None = None,
    gammas: list[float] | None = None,
    capture: CaptureConfig | None = None,
    jobs: int = 1,
) -> EnsembleResult:
    """Run the ensemble and aggregate convergence statistics, dichotomy
    classifications, and (optionally) capture/escape tallies.

    Deterministic given the spec: identical specs yield identical results,
    independent of the jobs level.
    """
    W = default_window(spec.horizon) if W is None else int(W)
    epsilon_conv = default_epsilon_conv(spec.theta0) if epsilon_conv is None else float(epsilon_conv)
    R_div = default_r_div(spec.theta0) if R_div is None else float(R_div)
    if W > spec.horizon:
        raise ContractViolation("window W must be <= horizon")

    args = [(spec, i, W, epsilon_conv, R_div, capture) for i in range(spec.n_trajectories)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_worker, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        summaries = [_summarize_one(*a) for a in args]

    cps = spec.checkpoints()
    f_gap = np.vstack([s.f_gap for s in summaries])
    grad_norm = np.vstack([s.grad_norm for s in summaries])
    report = gradient_convergence_stats(
        cps, f_gap, grad_norm,
        [s.f_lim_estimate for s in summaries],
        gammas=gammas,
    )

    capture_report = None
    if capture is not None:
        g_r = envelope_sup_over_ball(spec, capture.theta_bar, capture.R, capture.n_grid)
        counts = np.zeros(spec.horizon, dtype=np.int64)
        for s in summaries:
            counts[s.escape_ks] += 1
        n = spec.n_trajectories
        empirical = counts / n
        ks = np.arange(spec.horizon)
        lmax = spec.schedule.lambda_max_at(ks)
        tail = (capture.epsilon ** -2) * lmax ** 2 * g_r
        se = np.sqrt(empirical * (1.0 - empirical) / n)
        margin = empirical - tail - 4.0 * se
        nonzero = np.nonzero(counts)[0]
        capture_report = CaptureReport(
            theta_bar=tuple(float(x) for x in capture.theta_bar),
            R=capture.R,
            epsilon=capture.epsilon,
            G_R=g_r,
            n_trajectories=n,
            n_steps=spec.horizon,
            escape_counts={int(k): int(counts[k]) for k in nonzero},
            empirical=empirical,
            theoretical_tail=tail,
            empirical_sum=float(np.sum(empirical)),
            theoretical_sum=float(np.sum(tail)),
            total_escapes=int(np.sum(counts)),
            bound_margin_max=float(np.max(margin)) if len(margin) else 0.0,
        )
        report.escape_total = capture_report.total_escapes

    return EnsembleResult(
        spec=spec,
        convergence=report,
        classifications=[s.classification for s in summaries],
        capture=capture_report,
        n_overflow=sum(1 for s in summaries if s.overflow),
        n_domain_violation=sum(1 for s in summaries if s.domain_violation),
        seeds=[s.seed for s in summaries],
    )


def capture_escape_frequency(spec: EnsembleSpec, theta_bar, R: float,
                             epsilon: float, jobs: int = 1) -> CaptureReport:
    """Escape frequencies per step against the theoretical tail bound."""
    capture = CaptureConfig(
        theta_bar=tuple(float(x) for x in np.atleast_1d(theta_bar)),
        R=float(R),
        epsilon=float(epsilon),
    )
    result = run_ensemble(spec, capture=capture, jobs=jobs)
    return result.capture


def compute_stopping_times(traj: Trajectory) -> StoppingTimes:
    """Scan the recorded objective values for +1 threshold crossings.

    Requires every step recorded (stride 1): the crossing indices are exact
    step indices, not checkpoint positions.
    """
    if traj.record_stride != 1:
        raise ContractViolation("stopping times need record_stride == 1")
    f = traj.f_values
    taus = [0]
    current = float(f[0])
    for j in range(1, len(f)):
        if f[j] > current + 1.0:
            taus.append(j)
            current = float(f[j])
    complete = len(taus) > 1 and taus[-1] == len(f) - 1
    tau_geq_k = all(t >= i for i, t in enumerate(taus))
    return StoppingTimes(taus=taus, complete=complete, tau_geq_k=tau_geq_k)
