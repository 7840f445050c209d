"""Super-hedge extraction and pathwise certification.

The portfolio map sends integrands to asset amounts, phi2 = -K and
phi1 = (Z + sigma2 K) / sigma1, and the forward wealth step applies the
generator at the current wealth, which is exactly the inverse of the
backward solver's implicit step.  Dominance of wealth over the value
surface therefore holds path by path up to the solver's fixed-point
residual, and the certification below asserts it at 1e-12.

Stopping rules are node-indexed stop flags: a path stops at the first
flagged node it reaches, and terminal nodes are always flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .bsde import require_contraction
from .drbsde import DrbsdeSolution, PayoffSpec, solve_drbsde
from .drivers import Driver
from .errors import InvalidParams, TooLarge
from .lattice import Lattice, MarketParams, NodeField


@dataclass(frozen=True)
class Strategy:
    """Node-indexed amounts held in the two risky assets."""

    phi1: NodeField
    phi2: NodeField


def extract_strategy(sol: DrbsdeSolution, mp: MarketParams) -> Strategy:
    """Portfolio amounts from the integrands.

    phi2 = -K (zero once the intensity is gone, since K is), and
    phi1 = (Z + sigma2 K) / sigma1.
    """
    s1, s2 = mp.sigma1, mp.sigma2
    phi1 = NodeField([(z + s2 * k) / s1 for z, k in zip(sol.z.alive, sol.k.alive)],
                     [z / s1 for z in sol.z.defaulted])
    phi2 = NodeField([-k for k in sol.k.alive],
                     [np.zeros_like(z) for z in sol.z.defaulted])
    return Strategy(phi1=phi1, phi2=phi2)


def integrands_of(strat: Strategy, mp: MarketParams, step: int, defaulted: bool):
    """Inverse map on one layer: Z = phi1 sigma1 + phi2 sigma2, K = -phi2."""
    p1 = strat.phi1.layer(step, defaulted)
    p2 = strat.phi2.layer(step, defaulted)
    return p1 * mp.sigma1 + p2 * mp.sigma2, -p2


@dataclass(frozen=True)
class StoppingRule:
    """Stop flags plus the barrier surfaces the slacks are measured against."""

    flags: NodeField
    kind: str
    eps: float | None
    xi: NodeField
    zeta: NodeField


def _force_terminal(flags: NodeField, lattice: Lattice) -> NodeField:
    n = lattice.n_steps
    flags.alive[n][:] = True
    flags.defaulted[n][:] = True
    return flags


def stopping_time(sol: DrbsdeSolution, p: PayoffSpec, kind: str,
                  eps: float | None = None) -> StoppingRule:
    """First-hit rules read off the solved surface.

    sigma_star stops where Y equals the upper barrier (exact equality, the
    projection writes the barrier value verbatim), sigma_eps where Y is
    within eps of it, tau_star where Y equals the lower barrier.
    """
    xi, zeta = p.layers(sol.lattice)
    y = sol.y
    if kind == "sigma_star":
        flags = NodeField([ya == za for ya, za in zip(y.alive, zeta.alive)],
                          [yd == zd for yd, zd in zip(y.defaulted, zeta.defaulted)])
    elif kind == "sigma_eps":
        if eps is None or not eps > 0.0:
            raise InvalidParams("sigma_eps needs eps > 0")
        flags = NodeField([ya >= za - eps for ya, za in zip(y.alive, zeta.alive)],
                          [yd >= zd - eps for yd, zd in zip(y.defaulted, zeta.defaulted)])
    elif kind == "tau_star":
        flags = NodeField([ya == xa for ya, xa in zip(y.alive, xi.alive)],
                          [yd == xd for yd, xd in zip(y.defaulted, xi.defaulted)])
    else:
        raise InvalidParams(f"unknown stopping rule kind: {kind!r}")
    return StoppingRule(flags=_force_terminal(flags, sol.lattice), kind=kind,
                        eps=eps, xi=xi, zeta=zeta)


def rule_from_flags(lattice: Lattice, flags: NodeField, p: PayoffSpec,
                    kind: str = "user", eps: float | None = None) -> StoppingRule:
    xi, zeta = p.layers(lattice)
    flags = NodeField([np.asarray(a, dtype=bool).copy() for a in flags.alive],
                      [np.asarray(d, dtype=bool).copy() for d in flags.defaulted])
    return StoppingRule(flags=_force_terminal(flags, lattice), kind=kind,
                        eps=eps, xi=xi, zeta=zeta)


def sigma_bar_rule(sol: DrbsdeSolution, p: PayoffSpec) -> StoppingRule:
    """Stop at the first node whose upper reflecting increment acts.

    There the continuation exceeds the barrier, so Y sits on it; stopping
    then keeps the upper increment at zero along the stopped trajectory,
    which is all the dominance argument needs.
    """
    flags = NodeField([a > 0 for a in sol.dap.alive],
                      [d > 0 for d in sol.dap.defaulted])
    return rule_from_flags(sol.lattice, flags, p, kind="user")


@dataclass
class WealthReport:
    """Per-path outcome of a forward wealth simulation."""

    trajectory: np.ndarray          # (n_paths, n_steps+1)
    stop_step: np.ndarray           # (n_paths,)
    min_slack_xi: np.ndarray        # min over [0, stop] of V - xi
    stop_slack: np.ndarray          # V - zeta at stop (+ eps for sigma_eps rules)
    min_slack_ref: np.ndarray       # min over [0, stop] of V - reference, inf if unused
    violations: int
    tol: float

    @property
    def n_paths(self) -> int:
        return self.trajectory.shape[0]

    @property
    def ok(self) -> bool:
        return self.violations == 0

    @property
    def worst_xi_slack(self) -> float:
        return float(np.min(self.min_slack_xi))

    @property
    def worst_stop_slack(self) -> float:
        return float(np.min(self.stop_slack))

    @property
    def worst_ref_slack(self) -> float:
        return float(np.min(self.min_slack_ref))


def simulate_wealth(x0: float, strat: Strategy, d: Driver, lattice: Lattice,
                    rule: StoppingRule, *, tol: float = 1e-12,
                    reference: NodeField | None = None,
                    max_paths: int = 1 << 20) -> WealthReport:
    """Step the self-financing wealth along every lattice path.

    V' = V - g(t, V, Z, K) dt + Z dW + K dM with (Z, K) read from the
    strategy, each path frozen once its rule fires.  Slacks against the
    rule's barriers are accumulated up to and including the stop node.
    """
    require_contraction(d, lattice)
    mp = lattice.mp
    n = lattice.n_steps
    dt, s = lattice.dt, lattice.sqrt_dt

    j = np.zeros(1, dtype=np.int64)
    dead = np.zeros(1, dtype=bool)
    v = np.full(1, float(x0))
    stopped = np.zeros(1, dtype=bool)
    stop_step = np.full(1, -1, dtype=np.int64)
    stop_slack = np.full(1, np.inf)
    min_xi = np.full(1, np.inf)
    min_ref = np.full(1, np.inf)
    traj = np.full((1, 1), float(x0))

    eps_adj = rule.eps if rule.kind == "sigma_eps" and rule.eps else 0.0

    for k in range(n + 1):
        for defaulted in (False, True):
            sel = np.nonzero(dead == defaulted)[0]
            if sel.size == 0:
                continue
            jj = j[sel]
            act = ~stopped[sel]
            if not act.any():
                continue
            xi_l = rule.xi.layer(k, defaulted)
            zeta_l = rule.zeta.layer(k, defaulted)
            upd = sel[act]
            slack = v[upd] - xi_l[j[upd]]
            min_xi[upd] = np.minimum(min_xi[upd], slack)
            if reference is not None:
                ref_l = reference.layer(k, defaulted)
                min_ref[upd] = np.minimum(min_ref[upd], v[upd] - ref_l[j[upd]])
            fl = rule.flags.layer(k, defaulted)[jj] if k < n else np.ones(sel.size, dtype=bool)
            newly = sel[act & fl]
            if newly.size:
                stopped[newly] = True
                stop_step[newly] = k
                stop_slack[newly] = v[newly] - zeta_l[j[newly]] + eps_adj
        if k == n:
            break

        q = float(lattice.q[k])
        parts = []
        for defaulted in (False, True):
            sel = np.nonzero(dead == defaulted)[0]
            if sel.size == 0:
                continue
            jj = j[sel]
            ctx = lattice.step_context(k, defaulted)
            pctx = replace(ctx, s1=ctx.s1[jj], s2=ctx.s2[jj])
            z_l, k_l = integrands_of(strat, mp, k, defaulted)
            zz, kk = z_l[jj], k_l[jj]
            act = (~stopped[sel]).astype(float)
            gval = d(pctx, v[sel], zz, kk)
            base = v[sel] - gval * dt * act
            zz, kk = zz * act, kk * act
            if not defaulted and q > 0.0:
                dw = np.array([s, -s, 0.0])
                dm = np.array([-q, -q, 1.0 - q])
                dj = np.array([1, 0, 0], dtype=np.int64)
                dd = np.array([False, False, True])
            else:
                dw = np.array([s, -s])
                dm = np.array([0.0, 0.0])
                dj = np.array([1, 0], dtype=np.int64)
                dd = np.array([defaulted, defaulted])
            nb = dw.shape[0]
            rep = np.repeat(np.arange(sel.size), nb)
            br = np.tile(np.arange(nb), sel.size)
            parts.append((
                jj[rep] + dj[br],
                dd[br],
                base[rep] + zz[rep] * dw[br] + kk[rep] * dm[br],
                stopped[sel][rep],
                stop_step[sel][rep],
                stop_slack[sel][rep],
                min_xi[sel][rep],
                min_ref[sel][rep],
                traj[sel][rep],
            ))
        j = np.concatenate([p[0] for p in parts])
        if j.shape[0] > max_paths:
            raise TooLarge(f"path count {j.shape[0]} exceeds {max_paths}")
        dead = np.concatenate([p[1] for p in parts])
        v = np.concatenate([p[2] for p in parts])
        stopped = np.concatenate([p[3] for p in parts])
        stop_step = np.concatenate([p[4] for p in parts])
        stop_slack = np.concatenate([p[5] for p in parts])
        min_xi = np.concatenate([p[6] for p in parts])
        min_ref = np.concatenate([p[7] for p in parts])
        traj = np.hstack([np.vstack([p[8] for p in parts]), v[:, None]])

    violations = int(np.sum((min_xi < -tol) | (stop_slack < -tol)))
    return WealthReport(trajectory=traj, stop_step=stop_step, min_slack_xi=min_xi,
                        stop_slack=stop_slack, min_slack_ref=min_ref,
                        violations=violations, tol=tol)


class BuyerHedge(NamedTuple):
    price: float
    strategy: Strategy
    rule: StoppingRule


def buyer_superhedge(lattice: Lattice, d: Driver, p: PayoffSpec) -> BuyerHedge:
    """Buyer-side hedge through the mirrored problem.

    Solve with barriers (-zeta, -xi); the buyer price is the negative of
    that root value, the strategy is the portfolio map of the mirrored
    integrands, and exercise fires where the mirrored surface touches its
    upper barrier, i.e. the original lower one.
    """
    q = p.reflected(lattice)
    sol = solve_drbsde(lattice, d, q)
    return BuyerHedge(price=-sol.y0,
                      strategy=extract_strategy(sol, lattice.mp),
                      rule=stopping_time(sol, q, "sigma_star"))
