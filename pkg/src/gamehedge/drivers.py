"""Nonlinear generators g(t, y, z, k) and their admissibility audits.

A driver is admissible when it is Lipschitz in (y, z) and Lipschitz in the
jump integrand k with weight sqrt(lam_t), so that any k-dependence dies
with the intensity.  Audits probe user closures numerically on grids; the
builtins carry constants computed from their coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AuditFailure, EmptyGrid, InvalidParams
from .lattice import Lattice, MarketParams, StepContext

LIPSCHITZ_SLACK = 1e-9
ROYER_TOL = 1e-9


@dataclass(frozen=True)
class Driver:
    """Generator g with its declared admissibility constant.

    fn(ctx, y, z, k) must vectorize elementwise over numpy arrays and must
    read the intensity from ctx.lam (0 after default).  lambda_constant is
    an upper bound C on the Lipschitz ratio
    |dg| / (|dy| + |dz| + sqrt(lam)|dk|); audits check it, solvers use it
    for the contraction condition C*dt < 1.
    """

    fn: Callable
    lambda_constant: float
    zero_at_zero: bool = False
    label: str = ""

    def __call__(self, ctx: StepContext, y, z, k):
        return self.fn(ctx, y, z, k)

    def shifted(self, offset: Callable) -> "Driver":
        """g + offset(ctx): evaluation-point-free perturbation, same constant."""
        base = self.fn
        return Driver(
            fn=lambda ctx, y, z, k: base(ctx, y, z, k) + offset(ctx),
            lambda_constant=self.lambda_constant,
            zero_at_zero=False,
            label=f"{self.label}+shift" if self.label else "shifted",
        )


def _coefficient_rows(mp: MarketParams):
    r = np.atleast_1d(np.asarray(mp.r, dtype=float))
    lam = np.atleast_1d(np.asarray(mp.lambda_bar, dtype=float))
    n = max(r.shape[0], lam.shape[0])
    r = np.broadcast_to(r, (n,)) if r.shape[0] in (1, n) else r
    lam = np.broadcast_to(lam, (n,)) if lam.shape[0] in (1, n) else lam
    if r.shape != lam.shape:
        raise InvalidParams("r and lambda_bar step sequences must have equal length")
    return r, lam


def _perfect_coefficients(mp: MarketParams):
    """Per-step (r, theta1, jump coefficient theta2*lam) and the constant bound."""
    r, lam = _coefficient_rows(mp)
    th1 = (mp.mu1 - r) / mp.sigma1
    jump = np.where(lam > 0, mp.sigma2 * th1 - mp.mu2 + r, 0.0)
    # |theta2| * sqrt(lam) = |jump| / sqrt(lam) on steps with intensity
    with np.errstate(divide="ignore", invalid="ignore"):
        k_coef = np.where(lam > 0, np.abs(jump) / np.sqrt(np.where(lam > 0, lam, 1.0)), 0.0)
    c = float(np.max(np.maximum.reduce([np.abs(r), np.abs(th1), k_coef])))
    return c


def theta_coefficients(mp: MarketParams, r: float, lam: float) -> tuple[float, float]:
    """Market prices of risk at one step: (theta1, theta2); theta2 = 0 where lam = 0."""
    th1 = (mp.mu1 - r) / mp.sigma1
    th2 = (mp.sigma2 * th1 - mp.mu2 + r) / lam if lam > 0 else 0.0
    return th1, th2


def make_builtin_driver(kind: str, mp: MarketParams, *, borrow_rate: float | None = None,
                        tax_rate: float | None = None) -> Driver:
    """Builtin generators.

    perfect      g = -r y - theta1 z - theta2 k lam  (linear wealth dynamics)
    borrow_lend  perfect + (R - r) (y - phi1 - phi2)^-, borrowing at R >= r
    tax          perfect + rho (phi1 + phi2)^+, rho in (0, 1)

    The portfolio amounts are recovered from the integrands in closed form:
    phi2 = -k, phi1 = (z + sigma2 k) / sigma1, with the k terms active only
    while the intensity is positive.
    """
    s1, s2 = mp.sigma1, mp.sigma2
    r_steps, lam_steps = _coefficient_rows(mp)
    c_perfect = _perfect_coefficients(mp)

    def perfect(ctx, y, z, k):
        th1 = (mp.mu1 - ctx.r) / s1
        jump = (s2 * th1 - mp.mu2 + ctx.r) if ctx.lam > 0 else 0.0
        return -ctx.r * y - th1 * z - jump * k

    if kind == "perfect":
        return Driver(perfect, c_perfect, zero_at_zero=True, label="perfect")

    if kind == "borrow_lend":
        if borrow_rate is None:
            raise InvalidParams("borrow_lend needs borrow_rate")
        rr = float(borrow_rate)
        if np.any(rr < r_steps):
            raise InvalidParams("borrow rate must dominate the lending rate")
        spread = rr - r_steps
        with np.errstate(divide="ignore"):
            k_extra = np.where(
                lam_steps > 0,
                spread * abs(s2 / s1 - 1.0) / np.sqrt(np.where(lam_steps > 0, lam_steps, 1.0)),
                0.0,
            )
        c = c_perfect + float(np.max(np.maximum.reduce([spread, spread / s1, k_extra])))

        def borrow(ctx, y, z, k):
            live = 1.0 if ctx.lam > 0 else 0.0
            phi2 = -k * live
            phi1 = (z + s2 * k * live) / s1
            short = np.maximum(-(y - phi1 - phi2), 0.0)
            return perfect(ctx, y, z, k) + (rr - ctx.r) * short

        return Driver(borrow, c, zero_at_zero=True, label="borrow_lend")

    if kind == "tax":
        if tax_rate is None:
            raise InvalidParams("tax needs tax_rate")
        rho = float(tax_rate)
        if not 0.0 < rho < 1.0:
            raise InvalidParams("tax rate must lie in (0, 1)")
        with np.errstate(divide="ignore"):
            k_extra = np.where(
                lam_steps > 0,
                rho * abs(s2 / s1 - 1.0) / np.sqrt(np.where(lam_steps > 0, lam_steps, 1.0)),
                0.0,
            )
        c = c_perfect + max(rho / s1, float(np.max(k_extra)))

        def tax(ctx, y, z, k):
            live = 1.0 if ctx.lam > 0 else 0.0
            phi2 = -k * live
            phi1 = (z + s2 * k * live) / s1
            invested = np.maximum(phi1 + phi2, 0.0)
            return perfect(ctx, y, z, k) + rho * invested

        return Driver(tax, c, zero_at_zero=True, label="tax")

    raise InvalidParams(f"unknown builtin driver kind: {kind!r}")


@dataclass(frozen=True)
class AuditSpec:
    """Probe grid for numerical admissibility checks."""

    y_range: tuple[float, float] = (-2.0, 2.0)
    z_range: tuple[float, float] = (-2.0, 2.0)
    k_range: tuple[float, float] = (-2.0, 2.0)
    points: int = 5

    def grid(self) -> np.ndarray:
        axes = [np.linspace(*rng, self.points) for rng in (self.y_range, self.z_range, self.k_range)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class AuditReport:
    declared_constant: float
    max_ratio: float
    gamma_min: float | None
    royer_ok: bool
    k_independent_after_default: bool
    max_post_default_k_dependence: float
    worst: dict | None = field(default=None)

    @property
    def lipschitz_ok(self) -> bool:
        return self.max_ratio <= self.declared_constant * (1.0 + LIPSCHITZ_SLACK) + 1e-12

    @property
    def ok(self) -> bool:
        return self.lipschitz_ok and self.royer_ok and self.k_independent_after_default

    def require(self) -> "AuditReport":
        if not self.lipschitz_ok:
            raise AuditFailure(
                f"Lipschitz ratio {self.max_ratio:.6g} exceeds declared "
                f"constant {self.declared_constant:.6g}", probe=self.worst)
        if not self.royer_ok:
            raise AuditFailure(
                f"jump monotonicity fails: gamma_min = {self.gamma_min:.6g} <= -1",
                probe=self.worst)
        if not self.k_independent_after_default:
            raise AuditFailure(
                f"driver depends on k where the intensity is zero "
                f"(max deviation {self.max_post_default_k_dependence:.3g})",
                probe=self.worst)
        return self


def _eval_grid(d: Driver, ctx: StepContext, probes: np.ndarray) -> np.ndarray:
    width = max(ctx.s1.shape[0], 1)
    y = probes[:, 0:1]
    z = probes[:, 1:2]
    k = probes[:, 2:3]
    out = d(ctx, y, z, k)
    out = np.asarray(out, dtype=float)
    return np.broadcast_to(out, (probes.shape[0], width)).copy()


def audit_driver(d: Driver, lattice: Lattice, spec: AuditSpec | None = None) -> AuditReport:
    """Probe d on every step context and report admissibility measurements.

    The Lipschitz ratio is maximized over all probe pairs; the jump
    monotonicity quotient gamma = dg / (dk * lam) is minimized over pairs
    that differ only in k at contexts with positive intensity; at contexts
    with zero intensity those pairs must leave g unchanged.
    """
    spec = spec or AuditSpec()
    probes = spec.grid()
    m = probes.shape[0]
    dy = np.abs(probes[:, None, 0] - probes[None, :, 0])
    dz = np.abs(probes[:, None, 1] - probes[None, :, 1])
    dk = probes[:, None, 2] - probes[None, :, 2]
    same_yz = (dy == 0) & (dz == 0)
    iu = np.triu_indices(m, k=1)

    max_ratio = 0.0
    gamma_min: float | None = None
    max_k_dep = 0.0
    worst: dict | None = None
    g_scale = 0.0

    for step in range(lattice.n_steps):
        statuses = [False]
        if lattice.defaulted_size(step) > 0:
            statuses.append(True)
        for defaulted in statuses:
            ctx = lattice.step_context(step, defaulted)
            vals = _eval_grid(d, ctx, probes)
            g_scale = max(g_scale, float(np.max(np.abs(vals))))
            dg = np.abs(vals[:, None, :] - vals[None, :, :])
            denom = dy + dz + math.sqrt(ctx.lam) * np.abs(dk)

            den = denom[iu]
            num = dg[iu[0], iu[1], :]
            pos = den > 0
            if np.any(pos):
                ratios = num[pos, :] / den[pos][:, None]
                idx = np.unravel_index(np.argmax(ratios), ratios.shape)
                if ratios[idx] > max_ratio:
                    max_ratio = float(ratios[idx])
                    a = iu[0][np.nonzero(pos)[0][idx[0]]]
                    b = iu[1][np.nonzero(pos)[0][idx[0]]]
                    worst = {"t": ctx.t, "defaulted": defaulted,
                             "p1": probes[a].tolist(), "p2": probes[b].tolist(),
                             "ratio": float(ratios[idx])}

            konly = same_yz[iu] & (np.abs(dk[iu]) > 0)
            if np.any(konly):
                num_k = num[konly, :]
                if ctx.lam > 0:
                    signed = (vals[iu[0], :] - vals[iu[1], :])[konly, :]
                    quot = signed / (dk[iu][konly][:, None] * ctx.lam)
                    gmin = float(np.min(quot))
                    if gamma_min is None or gmin < gamma_min:
                        gamma_min = gmin
                else:
                    dep = float(np.max(num_k))
                    if dep > max_k_dep:
                        max_k_dep = dep

    k_free = max_k_dep <= 1e-12 * (1.0 + g_scale)
    royer_ok = gamma_min is None or gamma_min > -1.0 + ROYER_TOL
    return AuditReport(
        declared_constant=d.lambda_constant,
        max_ratio=max_ratio,
        gamma_min=gamma_min,
        royer_ok=royer_ok,
        k_independent_after_default=k_free,
        max_post_default_k_dependence=max_k_dep,
        worst=worst,
    )


@dataclass(frozen=True)
class AmbiguityFamily:
    """Finite grid of controls alpha with a common generator family.

    fn(ctx, y, z, k, alpha) must vectorize in both the state arguments and
    alpha; lambda_constant bounds every member uniformly (and hence the
    upper envelope as well).
    """

    u_grid: tuple[float, ...]
    fn: Callable
    lambda_constant: float
    label: str = ""

    def __post_init__(self):
        if len(self.u_grid) == 0:
            raise EmptyGrid("ambiguity grid is empty")

    def __len__(self) -> int:
        return len(self.u_grid)

    def member(self, index: int) -> Driver:
        alpha = self.u_grid[index]
        return Driver(
            fn=lambda ctx, y, z, k: self.fn(ctx, y, z, k, alpha),
            lambda_constant=self.lambda_constant,
            label=f"{self.label or 'family'}[alpha={alpha!r}]",
        )

    def members(self) -> list[Driver]:
        return [self.member(i) for i in range(len(self.u_grid))]

    def stacked(self, ctx, y, z, k) -> np.ndarray:
        """Values for every alpha, stacked on a new leading axis."""
        vals = [np.asarray(self.fn(ctx, y, z, k, a), dtype=float) for a in self.u_grid]
        shape = np.broadcast_shapes(*[v.shape for v in vals]) if vals else ()
        return np.stack([np.broadcast_to(v, shape) for v in vals], axis=0)

    def sup_driver(self) -> Driver:
        if len(self.u_grid) == 0:
            raise EmptyGrid("ambiguity grid is empty")

        def envelope(ctx, y, z, k):
            return np.max(self.stacked(ctx, y, z, k), axis=0)

        return Driver(envelope, self.lambda_constant,
                      label=f"sup({self.label or 'family'})")

    def argmax(self, ctx, y, z, k) -> np.ndarray:
        """Lowest grid index attaining the envelope, per evaluation point."""
        return np.argmax(self.stacked(ctx, y, z, k), axis=0)


def sup_driver(fam: AmbiguityFamily) -> Driver:
    return fam.sup_driver()


def audit_family(fam: AmbiguityFamily, lattice: Lattice,
                 spec: AuditSpec | None = None) -> list[AuditReport]:
    """Audit every member; the envelope inherits the worst constant."""
    return [audit_driver(d, lattice, spec) for d in fam.members()]
