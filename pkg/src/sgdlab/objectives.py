"""Closed-form objective functions and stochastic-gradient noise models.

Every objective carries exact value and gradient functions plus the declared
constants the assumption checkers consume: a lower bound ``f_lb``, a Hölder
exponent ``alpha`` for the gradient, an optional global Hölder constant
``l_global``, and a domain floor ``r0`` (evaluation is restricted to
``norm(theta) >= r0`` when ``r0 > 0``).

The catalog:

    quadratic        F = 0.5*||theta||^2
    smooth-rectifier F = sum_i log(1 + exp(theta_i))      (softplus)
    exp-abs          F = exp(||theta||),        restricted to ||theta|| >= r0
    power-q          F = ||theta||^q  (q > 0),  restricted
    log1p-abs        F = log(1 + ||theta||),    restricted
    loglog1p-abs     F = log(log(1 + ||theta||)), restricted
    gauss-bump       F = exp(-||theta||^2)

The 1-D forms are extended to dimension p either radially (F = g(||theta||))
or, for the rectifier, coordinate-wise; for p = 1 both coincide with the 1-D
originals.

Noise models add zero-mean perturbations to the exact gradient, so
unbiasedness holds by construction, and each declares a closed-form
second-moment envelope G with E||sample||^2 <= G(theta) (with equality for
every kind implemented here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractViolation, DomainError, UnknownObjectiveError

# Values are capped here instead of overflowing to inf; the trajectory runner
# treats any F at or above the cap as overflow.
OVERFLOW_CAP = 1e300

CATALOG_NAMES = (
    "quadratic",
    "smooth-rectifier",
    "exp-abs",
    "power-q",
    "log1p-abs",
    "loglog1p-abs",
    "gauss-bump",
)

RESTRICTED_DEFAULT_R0 = 1.0


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) computed as max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus1(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid1(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


@dataclass
class Objective:
    """A closed-form objective with exact gradient and declared constants.

    The callables operate on numpy arrays: ``value``/``grad`` on a single
    point of shape (p,), the ``*_batch`` variants on stacks of shape (n, p).
    ``f1``/``g1`` are scalar fast paths, present only when ``dim == 1``.
    """

    id: str
    dim: int
    f_lb: float
    alpha: float
    l_global: float | None
    r0: float
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    value_batch: Callable[[np.ndarray], np.ndarray]
    grad_batch: Callable[[np.ndarray], np.ndarray]
    grad_norm_batch: Callable[[np.ndarray], np.ndarray]
    f1: Callable[[float], float] | None = None
    g1: Callable[[float], float] | None = None
    radial: bool = False

    def in_domain(self, theta: np.ndarray) -> bool:
        if self.r0 <= 0.0:
            return True
        return float(np.linalg.norm(theta)) >= self.r0

    def check_domain(self, theta: np.ndarray) -> None:
        if not self.in_domain(theta):
            raise DomainError(
                f"objective {self.id!r} requires norm(theta) >= {self.r0}; "
                f"got theta={np.asarray(theta).tolist()}",
                theta=np.asarray(theta, dtype=float),
            )


def eval_objective(obj: Objective, theta) -> tuple[float, np.ndarray]:
    """Evaluate (F(theta), grad F(theta)); raises DomainError below the floor."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (obj.dim,):
        raise ContractViolation(
            f"theta has shape {theta.shape}, objective {obj.id!r} expects ({obj.dim},)"
        )
    obj.check_domain(theta)
    return obj.value(theta), obj.grad(theta)


def _norms(thetas: np.ndarray) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    return np.sqrt(np.einsum("ij,ij->i", thetas, thetas))


def _make_quadratic(dim: int) -> Objective:
    """F = 0.5*||theta||^2, grad = theta. Smooth everywhere, l_global = 1."""

    def value(theta):
        return 0.5 * float(theta @ theta)

    def grad(theta):
        return np.array(theta, dtype=float, copy=True)

    def value_batch(thetas):
        rho = _norms(thetas)
        return 0.5 * rho * rho

    def grad_batch(thetas):
        return np.array(thetas, dtype=float, copy=True)

    def grad_norm_batch(thetas):
        return _norms(thetas)

    return Objective(
        id="quadratic",
        dim=dim,
        f_lb=0.0,
        alpha=1.0,
        l_global=1.0,
        r0=0.0,
        value=value,
        grad=grad,
        value_batch=value_batch,
        grad_batch=grad_batch,
        grad_norm_batch=grad_norm_batch,
        f1=(lambda x: 0.5 * x * x) if dim == 1 else None,
        g1=(lambda x: x) if dim == 1 else None,
        radial=True,
    )


def _make_smooth_rectifier(dim: int) -> Objective:
    """F = sum_i softplus(theta_i), grad_i = sigmoid(theta_i).

    l_global = 0.25: the Hessian is diag(sigmoid'(theta_i)) and
    sup sigmoid' = 1/4 (attained at 0).
    """

    def value(theta):
        return float(np.sum(softplus(theta)))

    def grad(theta):
        return sigmoid(theta)

    def value_batch(thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        return softplus(thetas).sum(axis=1)

    def grad_batch(thetas):
        return sigmoid(np.atleast_2d(np.asarray(thetas, dtype=float)))

    def grad_norm_batch(thetas):
        g = grad_batch(thetas)
        return np.sqrt(np.einsum("ij,ij->i", g, g))

    return Objective(
        id="smooth-rectifier",
        dim=dim,
        f_lb=0.0,
        alpha=1.0,
        l_global=0.25,
        r0=0.0,
        value=value,
        grad=grad,
        value_batch=value_batch,
        grad_batch=grad_batch,
        grad_norm_batch=grad_norm_batch,
        f1=_softplus1 if dim == 1 else None,
        g1=_sigmoid1 if dim == 1 else None,
    )


def _make_gauss_bump(dim: int) -> Objective:
    """F = exp(-||theta||^2), grad = -2*exp(-||theta||^2)*theta.

    Smooth everywhere; l_global = 2 (Hessian norm is maximal at the origin).
    """

    def value(theta):
        return math.exp(-float(theta @ theta))

    def grad(theta):
        return -2.0 * math.exp(-float(theta @ theta)) * np.asarray(theta, dtype=float)

    def value_batch(thetas):
        rho = _norms(thetas)
        return np.exp(-rho * rho)

    def grad_batch(thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        rho2 = np.einsum("ij,ij->i", thetas, thetas)
        return -2.0 * np.exp(-rho2)[:, None] * thetas

    def grad_norm_batch(thetas):
        rho = _norms(thetas)
        return 2.0 * rho * np.exp(-rho * rho)

    return Objective(
        id="gauss-bump",
        dim=dim,
        f_lb=0.0,
        alpha=1.0,
        l_global=2.0,
        r0=0.0,
        value=value,
        grad=grad,
        value_batch=value_batch,
        grad_batch=grad_batch,
        grad_norm_batch=grad_norm_batch,
        f1=(lambda x: math.exp(-x * x)) if dim == 1 else None,
        g1=(lambda x: -2.0 * x * math.exp(-x * x)) if dim == 1 else None,
        radial=True,
    )


def _make_radial(
    name: str,
    dim: int,
    r0: float,
    g1: Callable[[float], float],
    gp1: Callable[[float], float],
    g_vec: Callable[[np.ndarray], np.ndarray],
    gp_vec: Callable[[np.ndarray], np.ndarray],
) -> Objective:
    """Radial objective F = g(||theta||) restricted to ||theta|| >= r0 > 0.

    grad = g'(rho) * theta / rho; well defined since rho >= r0 > 0 on the
    domain, and ||grad|| = |g'(rho)|.  f_lb = g(r0): every g in the catalog
    is nondecreasing on [r0, inf).
    """
    if r0 <= 0.0:
        raise ContractViolation(f"radial objective {name!r} needs a domain floor r0 > 0")

    def value(theta):
        return g1(float(np.linalg.norm(theta)))

    def grad(theta):
        rho = float(np.linalg.norm(theta))
        return (gp1(rho) / rho) * np.asarray(theta, dtype=float)

    def value_batch(thetas):
        return g_vec(_norms(thetas))

    def grad_batch(thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        rho = _norms(thetas)
        return (gp_vec(rho) / rho)[:, None] * thetas

    def grad_norm_batch(thetas):
        return np.abs(gp_vec(_norms(thetas)))

    return Objective(
        id=name,
        dim=dim,
        f_lb=g1(r0),
        alpha=1.0,
        l_global=None,
        r0=r0,
        value=value,
        grad=grad,
        value_batch=value_batch,
        grad_batch=grad_batch,
        grad_norm_batch=grad_norm_batch,
        f1=(lambda x: g1(abs(x))) if dim == 1 else None,
        g1=(lambda x: gp1(abs(x)) * (1.0 if x >= 0 else -1.0)) if dim == 1 else None,
        radial=True,
    )


def _exp_capped1(rho: float) -> float:
    return math.exp(rho) if rho < 690.0 else OVERFLOW_CAP


def _exp_capped_vec(rho: np.ndarray) -> np.ndarray:
    return np.where(rho < 690.0, np.exp(np.minimum(rho, 690.0)), OVERFLOW_CAP)


def catalog_lookup(
    name: str,
    dimension: int = 1,
    q: float | None = None,
    r0: float | None = None,
) -> Objective:
    """Build a catalog objective by name.

    ``q`` is required for power-q; ``r0`` overrides the default domain floor
    (1.0) of the restricted entries and is ignored for the unrestricted ones.
    """
    if dimension < 1:
        raise ContractViolation("dimension must be >= 1")
    if name == "quadratic":
        return _make_quadratic(dimension)
    if name == "smooth-rectifier":
        return _make_smooth_rectifier(dimension)
    if name == "gauss-bump":
        return _make_gauss_bump(dimension)

    floor = RESTRICTED_DEFAULT_R0 if r0 is None else float(r0)
    if name == "exp-abs":
        return _make_radial(
            "exp-abs", dimension, floor,
            g1=_exp_capped1,
            gp1=_exp_capped1,
            g_vec=_exp_capped_vec,
            gp_vec=_exp_capped_vec,
        )
    if name == "power-q":
        if q is None or q <= 0:
            raise ContractViolation("power-q requires parameter q > 0")
        qf = float(q)
        return _make_radial(
            f"power-q(q={qf:g})", dimension, floor,
            g1=lambda rho: rho ** qf,
            gp1=lambda rho: qf * rho ** (qf - 1.0),
            g_vec=lambda rho: rho ** qf,
            gp_vec=lambda rho: qf * rho ** (qf - 1.0),
        )
    if name == "log1p-abs":
        return _make_radial(
            "log1p-abs", dimension, floor,
            g1=lambda rho: math.log1p(rho),
            gp1=lambda rho: 1.0 / (1.0 + rho),
            g_vec=np.log1p,
            gp_vec=lambda rho: 1.0 / (1.0 + rho),
        )
    if name == "loglog1p-abs":
        if floor <= 0.0:
            raise ContractViolation("loglog1p-abs needs r0 > 0 so F is real")
        return _make_radial(
            "loglog1p-abs", dimension, floor,
            g1=lambda rho: math.log(math.log1p(rho)),
            gp1=lambda rho: 1.0 / ((1.0 + rho) * math.log1p(rho)),
            g_vec=lambda rho: np.log(np.log1p(rho)),
            gp_vec=lambda rho: 1.0 / ((1.0 + rho) * np.log1p(rho)),
        )
    raise UnknownObjectiveError(
        f"unknown objective {name!r}; expected one of {CATALOG_NAMES}"
    )


@dataclass(frozen=True)
class ObjectiveSpec:
    """Picklable recipe for a catalog objective (used by configs and workers)."""

    name: str
    dimension: int = 1
    q: float | None = None
    r0: float | None = None

    def build(self) -> Objective:
        return catalog_lookup(self.name, self.dimension, q=self.q, r0=self.r0)

    @property
    def label(self) -> str:
        parts = [self.name]
        if self.q is not None:
            parts.append(f"q={self.q:g}")
        if self.r0 is not None:
            parts.append(f"r0={self.r0:g}")
        parts.append(f"p={self.dimension}")
        return f"{parts[0]}({','.join(parts[1:])})"


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------

NOISE_KINDS = ("zero", "additive-gaussian", "rademacher-radial", "additive-gaussian-statedep")

_SIGMA_EXPR_GLOBALS = {"__builtins__": {}}


def _compile_sigma_expr(expr: str) -> Callable[[np.ndarray], float]:
    """Compile a sigma(theta) expression over a tiny whitelisted namespace.

    Available names: theta (array), norm, abs, exp, log, log1p, sqrt, pi, e.
    """
    code = compile(expr, "<sigma-expr>", "eval")
    base = {
        "norm": np.linalg.norm,
        "abs": np.abs,
        "exp": np.exp,
        "log": np.log,
        "log1p": np.log1p,
        "sqrt": np.sqrt,
        "pi": math.pi,
        "e": math.e,
    }
    for name in code.co_names:
        if name not in base and name != "theta":
            raise ContractViolation(f"sigma expression uses disallowed name {name!r}")

    def fn(theta: np.ndarray) -> float:
        env = dict(base)
        env["theta"] = theta
        return float(eval(code, _SIGMA_EXPR_GLOBALS, env))

    return fn


@dataclass
class NoiseModel:
    """Zero-mean gradient noise with a declared second-moment envelope.

    kinds:
      zero                       sample = grad
      additive-gaussian          sample = grad + sigma * Z,  Z ~ N(0, I_p)
      rademacher-radial          sample = grad + ||theta|| * X * u, X = +-1 fair
      additive-gaussian-statedep sample = grad + sigma(theta) * Z

    The envelope G(theta) = E||sample||^2 is exact for all four kinds:
    ||grad||^2 plus p*sigma^2, ||theta||^2, or p*sigma(theta)^2 respectively.
    ``constants`` holds declared expected-smoothness coefficients (C1, C2, C3)
    when they are declarable independently of the objective.
    """

    kind: str
    dim: int
    sigma: float = 0.0
    sigma_expr: str | None = None
    direction: np.ndarray | None = None
    constants: tuple[float, float, float] | None = field(default=None)
    _sigma_fn: Callable[[np.ndarray], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ContractViolation(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ContractViolation("sigma must be >= 0")
        if self.kind == "rademacher-radial":
            u = self.direction
            if u is None:
                u = np.zeros(self.dim)
                u[0] = 1.0
            u = np.asarray(u, dtype=float)
            nu = float(np.linalg.norm(u))
            if nu == 0.0:
                raise ContractViolation("rademacher direction must be nonzero")
            self.direction = u / nu
        if self.kind == "additive-gaussian-statedep":
            if not self.sigma_expr:
                raise ContractViolation("statedep noise requires sigma_expr")
            self._sigma_fn = _compile_sigma_expr(self.sigma_expr)
        if self.constants is None:
            if self.kind == "zero":
                self.constants = (0.0, 0.0, 1.0)
            elif self.kind == "additive-gaussian":
                self.constants = (self.dim * self.sigma ** 2, 0.0, 1.0)

    @property
    def label(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "additive-gaussian":
            return f"additive-gaussian(sigma={self.sigma:g})"
        if self.kind == "rademacher-radial":
            return "rademacher-radial"
        return f"additive-gaussian-statedep(sigma={self.sigma_expr})"

    def sigma_at(self, theta: np.ndarray) -> float:
        if self.kind == "additive-gaussian":
            return self.sigma
        if self.kind == "additive-gaussian-statedep":
            return self._sigma_fn(np.asarray(theta, dtype=float))
        return 0.0

    def second_moment(self, theta: np.ndarray, grad: np.ndarray) -> float:
        """Exact E||sample||^2 at theta given grad = gradF(theta)."""
        g2 = float(grad @ grad)
        if self.kind == "zero":
            return g2
        if self.kind == "additive-gaussian":
            return g2 + self.dim * self.sigma ** 2
        if self.kind == "rademacher-radial":
            return g2 + float(theta @ theta)
        s = self.sigma_at(theta)
        return g2 + self.dim * s * s

    def envelope(self, objective: Objective) -> Callable[[np.ndarray], float]:
        """The declared envelope G as a function of theta alone."""

        def G(theta: np.ndarray) -> float:
            theta = np.atleast_1d(np.asarray(theta, dtype=float))
            return self.second_moment(theta, objective.grad(theta))

        return G

    def envelope_batch(self, objective: Objective, thetas: np.ndarray) -> np.ndarray:
        """Vectorized declared envelope over a stack of points."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        g2 = objective.grad_norm_batch(thetas) ** 2
        if self.kind == "zero":
            return g2
        if self.kind == "additive-gaussian":
            return g2 + self.dim * self.sigma ** 2
        if self.kind == "rademacher-radial":
            return g2 + np.einsum("ij,ij->i", thetas, thetas)
        sig = np.array([self.sigma_at(t) for t in thetas])
        return g2 + self.dim * sig ** 2

    def sample(self, rng: np.random.Generator, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """One stochastic gradient draw; advances rng by exactly one step's worth."""
        if self.kind == "zero":
            return np.array(grad, dtype=float, copy=True)
        if self.kind == "additive-gaussian":
            return grad + self.sigma * rng.standard_normal(self.dim)
        if self.kind == "rademacher-radial":
            x = 1.0 if rng.integers(0, 2) == 1 else -1.0
            return grad + float(np.linalg.norm(theta)) * x * self.direction
        s = self.sigma_at(theta)
        return grad + s * rng.standard_normal(self.dim)


@dataclass(frozen=True)
class NoiseSpec:
    """Picklable recipe for a noise model."""

    kind: str
    sigma: float = 0.0
    sigma_expr: str | None = None
    direction: tuple[float, ...] | None = None
    constants: tuple[float, float, float] | None = None

    def build(self, dim: int) -> NoiseModel:
        direction = None if self.direction is None else np.asarray(self.direction, dtype=float)
        return NoiseModel(
            kind=self.kind,
            dim=dim,
            sigma=self.sigma,
            sigma_expr=self.sigma_expr,
            direction=direction,
            constants=self.constants,
        )

    @property
    def label(self) -> str:
        if self.kind == "additive-gaussian":
            return f"additive-gaussian(sigma={self.sigma:g})"
        if self.kind == "additive-gaussian-statedep":
            return f"additive-gaussian-statedep(sigma={self.sigma_expr})"
        return self.kind


@dataclass
class StochasticOracle:
    """An objective paired with a noise model; draws unbiased gradient samples."""

    objective: Objective
    noise: NoiseModel

    def __post_init__(self):
        if self.objective.dim != self.noise.dim:
            raise ContractViolation(
                f"objective dimension {self.objective.dim} != noise dimension {self.noise.dim}"
            )

    @property
    def id(self) -> str:
        return f"{self.objective.id}|{self.noise.label}"

    def sample_gradient(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.objective.check_domain(theta)
        return self.noise.sample(rng, theta, self.objective.grad(theta))


def sample_gradient(oracle: StochasticOracle, theta, rng: np.random.Generator) -> np.ndarray:
    """One stochastic gradient draw, advancing rng deterministically."""
    return oracle.sample_gradient(theta, rng)
