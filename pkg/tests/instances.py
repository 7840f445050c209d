"""Seeded random instance corpus shared by the acceptance suite.

Every generator rejection-samples until the driver audit passes and the
lattice sits inside the comparison region of the driver's constant, so
downstream claims never fail for lack of a contraction.
"""

import dataclasses
import math

import numpy as np

from gamehedge import (
    LatticeParams,
    MarketParams,
    PayoffSpec,
    audit_driver,
    build_lattice,
    comparison_region_ok,
    make_builtin_driver,
)

KINDS = ("perfect", "borrow_lend", "tax")


@dataclasses.dataclass
class Instance:
    lattice: object
    driver: object
    payoff: object
    mp: MarketParams
    kind: str


def draw_market(rng, *, lam_zero_frac=0.25, lam_hi=0.4):
    r = float(rng.uniform(0.0, 0.06))
    sigma1 = float(rng.uniform(0.2, 0.5))
    theta1 = float(rng.uniform(-0.5, 0.5))
    mu1 = r + theta1 * sigma1
    sigma2 = float(rng.uniform(0.1, 0.4))
    if rng.uniform() < lam_zero_frac:
        lam = 0.0
        mu2 = sigma2 * theta1 + r  # theta2 unused when intensity vanishes
    else:
        lam = float(rng.uniform(0.05, lam_hi))
        theta2 = float(rng.uniform(-0.8, 0.8))
        mu2 = sigma2 * theta1 + r - theta2 * lam
    s1_0 = float(rng.uniform(0.5, 2.0))
    return MarketParams(r=r, mu1=mu1, sigma1=sigma1, mu2=mu2, sigma2=sigma2,
                        lambda_bar=lam, s1_0=s1_0, s2_0=1.0)


def draw_driver(rng, mp, kind=None):
    kind = kind or KINDS[int(rng.integers(0, len(KINDS)))]
    if kind == "borrow_lend":
        r_max = float(np.max(np.atleast_1d(mp.r)))
        return make_builtin_driver("borrow_lend", mp,
                                   borrow_rate=r_max + float(rng.uniform(0.0, 0.05))), kind
    if kind == "tax":
        return make_builtin_driver("tax", mp, tax_rate=float(rng.uniform(0.05, 0.3))), kind
    return make_builtin_driver("perfect", mp), kind


def draw_payoff(rng, s1_0, *, gap_lo=0.1, gap_hi=1.0, nonnegative=False):
    gap = float(rng.uniform(gap_lo, gap_hi))
    if nonnegative or rng.uniform() < 0.5:
        a = float(rng.uniform(0.5, 2.0))
        strike = float(rng.uniform(0.7, 1.3)) * s1_0
        b = float(rng.uniform(0.0, 0.5)) if nonnegative else float(rng.uniform(-0.5, 0.5))

        def xi(t, s1, defaulted, a=a, strike=strike, b=b):
            return a * np.maximum(s1 - strike, 0.0) + b
    else:
        a = float(rng.uniform(-2.0, 2.0))
        b = float(rng.uniform(-0.5, 0.5))

        def xi(t, s1, defaulted, a=a, b=b):
            return a * s1 + b

    def zeta(t, s1, defaulted, xi=xi, gap=gap):
        return xi(t, s1, defaulted) + gap

    return PayoffSpec(xi=xi, zeta=zeta)


def random_instance(rng, *, n_lo=2, n_hi=3, kinds=KINDS, lam_zero_frac=0.25,
                    gap_lo=0.1, gap_hi=1.0, nonnegative=False, max_draws=200):
    """One audited instance inside the comparison region."""
    for _ in range(max_draws):
        mp = draw_market(rng, lam_zero_frac=lam_zero_frac)
        n = int(rng.integers(n_lo, n_hi + 1))
        horizon = float(rng.uniform(0.25, 1.0))
        lattice = build_lattice(LatticeParams(horizon=horizon, n_steps=n), mp)
        kind = kinds[int(rng.integers(0, len(kinds)))]
        driver, kind = draw_driver(rng, mp, kind)
        if not comparison_region_ok(lattice, driver.lambda_constant):
            continue
        if not audit_driver(driver, lattice).ok:
            continue
        payoff = draw_payoff(rng, mp.s1_0, gap_lo=gap_lo, gap_hi=gap_hi,
                             nonnegative=nonnegative)
        return Instance(lattice=lattice, driver=driver, payoff=payoff,
                        mp=mp, kind=kind)
    raise RuntimeError("instance rejection sampling exhausted")


def perturbation_pair(rng, *, n_lo=8, n_hi=12, max_draws=200):
    """Driver pair (d1, d1 + time shift) sized for the boundary estimate.

    Short steps relative to the declared constant keep the first-order
    slack of the discrete bound ahead of its second-order defects; the
    declared constant also dominates sqrt(max intensity).
    """
    for _ in range(max_draws):
        mp = draw_market(rng, lam_zero_frac=0.0)  # intensity always active
        n = int(rng.integers(n_lo, n_hi + 1))
        horizon = float(rng.uniform(0.4, 0.6))
        lattice = build_lattice(LatticeParams(horizon=horizon, n_steps=n), mp)
        base, _ = draw_driver(rng, mp)
        lam_max = float(np.max(lattice.lam))
        c = max(base.lambda_constant, math.sqrt(lam_max))
        if not comparison_region_ok(lattice, c):
            continue
        if not audit_driver(base, lattice).ok:
            continue
        d1 = dataclasses.replace(base, lambda_constant=c)
        amp = float(rng.uniform(0.1, 0.6))
        freq = float(rng.uniform(0.3, 4.0))
        off = float(rng.uniform(-0.3, 0.3))
        d2 = d1.shifted(lambda ctx, amp=amp, freq=freq, off=off:
                        amp * math.cos(freq * ctx.t) + off)
        payoff = draw_payoff(rng, mp.s1_0, gap_lo=0.02, gap_hi=0.4)
        return lattice, d1, d2, payoff
    raise RuntimeError("perturbation pair sampling exhausted")


def skorokhod_exact(sol) -> bool:
    """Increments only on contact, never both at once, bitwise."""
    lattice = sol.lattice
    for k in range(lattice.n_steps + 1):
        for defaulted in (False, True):
            da = sol.da.layer(k, defaulted)
            if da.size == 0:
                continue
            dap = sol.dap.layer(k, defaulted)
            y = sol.y.layer(k, defaulted)
            if np.any(da * dap != 0.0):
                return False
            if not np.all(y[da > 0] == sol.xi.layer(k, defaulted)[da > 0]):
                return False
            if not np.all(y[dap > 0] == sol.zeta.layer(k, defaulted)[dap > 0]):
                return False
            if np.any(da < 0) or np.any(dap < 0):
                return False
    return True
