import json
import math
import logging
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr, xlogy

from modules.lab_assets import (
    BRUTE_FORCE_GUARD,
    IDENTITY_TOL,
    MEASURE_TOL,
    OracleSizeError,
    WorldValidationError,
)

"""
ORACLE MODEL MODULE
-------------------
Responsibility: Exact BiGAN theory on finite probability spaces.
Worlds are finite data/latent spaces with marginals and deterministic
encoder/generator tables. From them the module builds the two joint
measures, the optimal discriminator, the exact value, the Jensen-Shannon
form of the objective, inversion failure masses, the l0 autoencoder form,
exhaustive searches for the global optimum, and the generalized variant
with resolution-changing maps g_X / g_Z.
Convention everywhere: 0 * log 0 = 0.
"""

logger = logging.getLogger(__name__)

LOG4 = math.log(4.0)

# m x n nonnegative table summing to 1
JointMeasure = np.ndarray

MapPair = Tuple[Tuple[int, ...], Tuple[int, ...]]


# 1. DOMAIN TYPES
def _as_probability(values: Sequence[float], label: str) -> np.ndarray:
    p = np.asarray(values, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise WorldValidationError(f"{label} must be a non-empty vector.")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise WorldValidationError(f"{label} must be nonnegative and finite.")
    if abs(p.sum() - 1.0) > MEASURE_TOL:
        raise WorldValidationError(f"{label} sums to {p.sum():.15g}, expected 1.")
    return p


def _as_map(values: Sequence[int], length: int, codomain: int, label: str) -> np.ndarray:
    table = np.asarray(values)
    if table.shape != (length,) or not np.issubdtype(table.dtype, np.integer):
        raise WorldValidationError(f"{label} must be a total integer table of length {length}.")
    if np.any(table < 0) or np.any(table >= codomain):
        raise WorldValidationError(f"{label} values must lie in [0, {codomain}).")
    return table.astype(np.int64)


@dataclass
class DiscreteWorld:
    """
    Finite data space (size m) and latent space (size n) with marginals and
    deterministic encoder/generator tables.

    Generalized worlds add resolution maps ``g_x: Ω_X -> Ω'_X`` and
    ``g_z: Ω_Z -> Ω'_Z``; then E maps into Ω'_Z (size ``n_prime``) and G into
    Ω'_X (size ``m_prime``). Plain worlds use identities.
    """
    p_x: np.ndarray
    p_z: np.ndarray
    e_map: np.ndarray
    g_map: np.ndarray
    m_prime: Optional[int] = None
    n_prime: Optional[int] = None
    g_x: Optional[np.ndarray] = None
    g_z: Optional[np.ndarray] = None

    def __post_init__(self):
        self.p_x = _as_probability(self.p_x, "p_x")
        self.p_z = _as_probability(self.p_z, "p_z")
        m, n = self.p_x.size, self.p_z.size
        self.m_prime = int(self.m_prime) if self.m_prime is not None else m
        self.n_prime = int(self.n_prime) if self.n_prime is not None else n

        if self.g_x is None:
            if self.m_prime != m:
                raise WorldValidationError("g_x is required when m_prime differs from m.")
            self.g_x = np.arange(m)
        if self.g_z is None:
            if self.n_prime != n:
                raise WorldValidationError("g_z is required when n_prime differs from n.")
            self.g_z = np.arange(n)
        self.g_x = _as_map(self.g_x, m, self.m_prime, "g_x")
        self.g_z = _as_map(self.g_z, n, self.n_prime, "g_z")
        self.e_map = _as_map(self.e_map, m, self.n_prime, "e_map")
        self.g_map = _as_map(self.g_map, n, self.m_prime, "g_map")

    @property
    def m(self) -> int:
        return self.p_x.size

    @property
    def n(self) -> int:
        return self.p_z.size

    @property
    def support_x(self) -> np.ndarray:
        return self.p_x > 0

    @property
    def support_z(self) -> np.ndarray:
        return self.p_z > 0

    @property
    def is_generalized(self) -> bool:
        return not (
            self.m_prime == self.m and self.n_prime == self.n
            and np.array_equal(self.g_x, np.arange(self.m))
            and np.array_equal(self.g_z, np.arange(self.n))
        )

    def with_maps(self, e_map: Sequence[int], g_map: Sequence[int]) -> "DiscreteWorld":
        return DiscreteWorld(self.p_x, self.p_z, np.asarray(e_map), np.asarray(g_map),
                             self.m_prime, self.n_prime, self.g_x, self.g_z)

    def to_dict(self) -> Dict[str, list]:
        data = {
            "p_x": self.p_x.tolist(), "p_z": self.p_z.tolist(),
            "e_map": self.e_map.tolist(), "g_map": self.g_map.tolist(),
        }
        if self.is_generalized:
            data.update(m_prime=self.m_prime, n_prime=self.n_prime,
                        g_x=self.g_x.tolist(), g_z=self.g_z.tolist())
        return data


@dataclass
class DiscriminatorTable:
    """Values in [0, 1]; NaN (and ``defined`` False) outside the union support."""
    values: np.ndarray
    defined: np.ndarray

    def complement(self) -> "DiscriminatorTable":
        return DiscriminatorTable(np.where(self.defined, 1.0 - self.values, np.nan), self.defined.copy())


@dataclass
class InversionReport:
    x_fail_mass: float
    z_fail_mass: float
    x_failures: List[int] = field(default_factory=list)
    z_failures: List[int] = field(default_factory=list)

    @property
    def inverts(self) -> bool:
        return self.x_fail_mass == 0.0 and self.z_fail_mass == 0.0


@dataclass
class BruteForceResult:
    min_value: float
    argmin: List[MapPair]
    evaluated: int

    @property
    def gap(self) -> float:
        """Distance of the minimum above -log 4."""
        return self.min_value + LOG4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


# 2. MEASURES & DISCRIMINATOR
def joint_measures(world: DiscreteWorld) -> Tuple[JointMeasure, JointMeasure]:
    """P_EX[x, z] = p_X(x) 1[z = E(x)] and P_GZ[x, z] = p_Z(z) 1[x = G(z)]."""
    if world.is_generalized:
        raise WorldValidationError("Generalized worlds need generalized_measures.")
    return generalized_measures(world)


def generalized_measures(world: DiscreteWorld, g_x: Optional[Sequence[int]] = None,
                         g_z: Optional[Sequence[int]] = None) -> Tuple[JointMeasure, JointMeasure]:
    """
    Measures on Ω'_X x Ω'_Z induced through g_X (encoder side) and g_Z
    (generator side). Identity maps reduce this to ``joint_measures``.
    """
    g_x = world.g_x if g_x is None else _as_map(g_x, world.m, world.m_prime, "g_x")
    g_z = world.g_z if g_z is None else _as_map(g_z, world.n, world.n_prime, "g_z")
    p_ex = np.zeros((world.m_prime, world.n_prime))
    p_gz = np.zeros((world.m_prime, world.n_prime))
    np.add.at(p_ex, (g_x, world.e_map), world.p_x)
    np.add.at(p_gz, (world.g_map, g_z), world.p_z)
    return p_ex, p_gz


def optimal_discriminator(p_ex: JointMeasure, p_gz: JointMeasure) -> DiscriminatorTable:
    """f = P_EX / (P_EX + P_GZ) on the union support; undefined elsewhere."""
    total = p_ex + p_gz
    defined = total > 0
    if not defined.any():
        raise WorldValidationError("The union support is empty.")
    values = np.divide(p_ex, total, out=np.full(total.shape, np.nan), where=defined)
    return DiscriminatorTable(values, defined)


def value_of_measures(p_ex: JointMeasure, p_gz: JointMeasure, D: DiscriminatorTable) -> float:
    """Sum P_EX log D + Sum P_GZ log(1 - D); may be -inf."""
    support = (p_ex + p_gz) > 0
    if np.any(support & ~D.defined):
        raise WorldValidationError("Discriminator is undefined on part of the union support.")
    d = D.values[support]
    return float(np.sum(xlogy(p_ex[support], d)) + np.sum(xlogy(p_gz[support], 1.0 - d)))


def value(world: DiscreteWorld, D: DiscriminatorTable) -> float:
    return value_of_measures(*generalized_measures(world), D)


# 3. DIVERGENCES & THE OBJECTIVE
def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(rel_entr(p, q)))


def jensen_shannon(p: np.ndarray, q: np.ndarray) -> float:
    mix = 0.5 * (p + q)
    return 0.5 * kl_divergence(p, mix) + 0.5 * kl_divergence(q, mix)


def ceg_of_measures(p_ex: JointMeasure, p_gz: JointMeasure) -> float:
    """KL(P_EX || M) + KL(P_GZ || M) - log 4, with M the midpoint measure."""
    mix = 0.5 * (p_ex + p_gz)
    return kl_divergence(p_ex, mix) + kl_divergence(p_gz, mix) - LOG4


def ceg(world: DiscreteWorld) -> float:
    return ceg_of_measures(*joint_measures(world))


def generalized_ceg(world: DiscreteWorld, g_x: Optional[Sequence[int]] = None,
                    g_z: Optional[Sequence[int]] = None) -> float:
    return ceg_of_measures(*generalized_measures(world, g_x, g_z))


# 4. INVERSION & THE L0 AUTOENCODER FORM
def check_inversion(world: DiscreteWorld) -> InversionReport:
    """Mass of points where G(E(x)) != x (under p_X) or E(G(z)) != z (under p_Z)."""
    if world.is_generalized:
        return check_generalized_inversion(world)
    xs, zs = np.arange(world.m), np.arange(world.n)
    x_bad = (world.g_map[world.e_map] != xs) & world.support_x
    z_bad = (world.e_map[world.g_map] != zs) & world.support_z
    return InversionReport(
        x_fail_mass=float(world.p_x[x_bad].sum()),
        z_fail_mass=float(world.p_z[z_bad].sum()),
        x_failures=xs[x_bad].tolist(),
        z_failures=zs[z_bad].tolist(),
    )


def check_generalized_inversion(world: DiscreteWorld) -> InversionReport:
    """
    Generalized inversion: every positive-mass x needs a positive-mass z with
    E(x) = g_Z(z) and G(z) = g_X(x); symmetrically for every positive-mass z.
    """
    sx, sz = world.support_x, world.support_z
    # pair[x, z]: E(x) = g_Z(z) and G(z) = g_X(x)
    pair = (world.e_map[:, None] == world.g_z[None, :]) & (world.g_map[None, :] == world.g_x[:, None])
    x_bad = sx & ~(pair & sz[None, :]).any(axis=1)
    z_bad = sz & ~(pair & sx[:, None]).any(axis=0)
    return InversionReport(
        x_fail_mass=float(world.p_x[x_bad].sum()),
        z_fail_mass=float(world.p_z[z_bad].sum()),
        x_failures=np.flatnonzero(x_bad).tolist(),
        z_failures=np.flatnonzero(z_bad).tolist(),
    )


def l0_autoencoder_value(world: DiscreteWorld) -> float:
    """
    The objective at the optimal discriminator, written with inversion
    indicators: only points reconstructed exactly (and landing in the other
    marginal's support) contribute.
    """
    p_ex, p_gz = joint_measures(world)
    f = optimal_discriminator(p_ex, p_gz).values
    xs, zs = np.arange(world.m), np.arange(world.n)

    w_x = world.p_x * (world.support_z[world.e_map] & (world.g_map[world.e_map] == xs))
    w_z = world.p_z * (world.support_x[world.g_map] & (world.e_map[world.g_map] == zs))
    f_x = f[xs, world.e_map]
    f_z = f[world.g_map, zs]
    keep_x, keep_z = w_x > 0, w_z > 0
    return float(np.sum(xlogy(w_x[keep_x], f_x[keep_x])) + np.sum(xlogy(w_z[keep_z], 1.0 - f_z[keep_z])))


# 5. EXHAUSTIVE SEARCH
def _all_maps(length: int, codomain: int) -> np.ndarray:
    return np.array(list(product(range(codomain), repeat=length)), dtype=np.int64).reshape(-1, length)


def _search(p_x: np.ndarray, p_z: np.ndarray, g_x: np.ndarray, g_z: np.ndarray,
            m_prime: int, n_prime: int) -> BruteForceResult:
    m, n = p_x.size, p_z.size
    total = n_prime ** m * m_prime ** n
    if total > BRUTE_FORCE_GUARD:
        raise OracleSizeError(f"{total} map pairs exceed the enumeration guard of {BRUTE_FORCE_GUARD}.")

    e_maps = _all_maps(m, n_prime)
    g_maps = _all_maps(n, m_prime)
    enc = np.zeros((len(e_maps), m_prime, n_prime))
    gen = np.zeros((len(g_maps), m_prime, n_prime))
    for k, e in enumerate(e_maps):
        np.add.at(enc[k], (g_x, e), p_x)
    for k, g in enumerate(g_maps):
        np.add.at(gen[k], (g, g_z), p_z)

    values = np.empty((len(e_maps), len(g_maps)))
    chunk = max(1, 2_000_000 // max(1, len(g_maps) * m_prime * n_prime))
    for start in range(0, len(e_maps), chunk):
        a = enc[start:start + chunk, None]
        b = gen[None]
        mix = 0.5 * (a + b)
        values[start:start + chunk] = rel_entr(a, mix).sum(axis=(2, 3)) + rel_entr(b, mix).sum(axis=(2, 3)) - LOG4

    best = float(values.min())
    hits = np.argwhere(values <= best + MEASURE_TOL)
    argmin = sorted((tuple(e_maps[i].tolist()), tuple(g_maps[j].tolist())) for i, j in hits)
    logger.debug("Brute force over %d pairs: min=%.15f (%d minimizers)", total, best, len(argmin))
    return BruteForceResult(min_value=best, argmin=argmin, evaluated=total)


def brute_force_optimum(m: int, n: int, p_x: Optional[Sequence[float]] = None,
                        p_z: Optional[Sequence[float]] = None) -> BruteForceResult:
    """
    Evaluates the objective at every deterministic (E, G) pair.

    Marginals default to uniform. The argmin set holds every pair within
    1e-12 of the minimum, sorted lexicographically.

    Raises:
        OracleSizeError: more than 10^7 pairs.
    """
    p_x = _as_probability(np.full(m, 1.0 / m) if p_x is None else p_x, "p_x")
    p_z = _as_probability(np.full(n, 1.0 / n) if p_z is None else p_z, "p_z")
    if p_x.size != m or p_z.size != n:
        raise WorldValidationError("Marginal lengths must equal m and n.")
    return _search(p_x, p_z, np.arange(m), np.arange(n), m, n)


def brute_force_generalized(p_x: Sequence[float], p_z: Sequence[float], g_x: Sequence[int],
                            g_z: Sequence[int], m_prime: int, n_prime: int) -> BruteForceResult:
    """Exhaustive optimum of the generalized objective over E: Ω_X -> Ω'_Z and G: Ω_Z -> Ω'_X."""
    p_x = _as_probability(p_x, "p_x")
    p_z = _as_probability(p_z, "p_z")
    g_x = _as_map(g_x, p_x.size, m_prime, "g_x")
    g_z = _as_map(g_z, p_z.size, n_prime, "g_z")
    return _search(p_x, p_z, g_x, g_z, m_prime, n_prime)


# 6. WORLD SOURCES
def random_world(rng: np.random.Generator, max_m: int = 6, max_n: int = 6, zero_prob: float = 0.2) -> DiscreteWorld:
    """
    Random world with m, n <= 6. Marginal entries are zeroed with
    probability ``zero_prob`` (at least one point keeps mass) so that
    almost-everywhere semantics get exercised.
    """
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(1, max_n + 1))

    def marginal(size: int) -> np.ndarray:
        p = rng.random(size) + 1e-3
        p[rng.random(size) < zero_prob] = 0.0
        if not p.any():
            p[rng.integers(size)] = 1.0
        return p / p.sum()

    p_x, p_z = marginal(m), marginal(n)
    return DiscreteWorld(p_x, p_z, rng.integers(0, n, size=m), rng.integers(0, m, size=n))


def load_world(path: str) -> DiscreteWorld:
    """
    Reads a JSON world: ``p_x``, ``p_z``, ``e_map``, ``g_map`` and, for the
    generalized variant, ``m_prime``, ``n_prime``, ``g_x``, ``g_z``.
    """
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise WorldValidationError(f"{path}: invalid JSON ({e}).") from e
    missing = [k for k in ("p_x", "p_z", "e_map", "g_map") if k not in data]
    if missing:
        raise WorldValidationError(f"{path}: missing keys {', '.join(missing)}.")
    unknown = set(data) - {"p_x", "p_z", "e_map", "g_map", "m_prime", "n_prime", "g_x", "g_z"}
    if unknown:
        raise WorldValidationError(f"{path}: unknown keys {', '.join(sorted(unknown))}.")
    return DiscreteWorld(
        p_x=data["p_x"], p_z=data["p_z"], e_map=data["e_map"], g_map=data["g_map"],
        m_prime=data.get("m_prime"), n_prime=data.get("n_prime"),
        g_x=data.get("g_x"), g_z=data.get("g_z"),
    )


# 7. CHECK SUITES
def random_tables(shape: Tuple[int, int], count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((count,) + shape)


def _values_of_tables(p_ex: JointMeasure, p_gz: JointMeasure, tables: np.ndarray) -> np.ndarray:
    support = (p_ex + p_gz) > 0
    d = tables[:, support]
    return np.sum(xlogy(p_ex[support], d), axis=1) + np.sum(xlogy(p_gz[support], 1.0 - d), axis=1)


def _world_errors(world: DiscreteWorld, rng: np.random.Generator, tables: int) -> Dict[str, float]:
    """Per-world residuals of every identity; zero means exact agreement."""
    p_ex, p_gz = joint_measures(world)
    f = optimal_discriminator(p_ex, p_gz)
    f_ge = f.complement()
    c = ceg_of_measures(p_ex, p_gz)
    v_star = value_of_measures(p_ex, p_gz, f)

    candidates = random_tables(p_ex.shape, tables, rng)
    perturbed = np.clip(np.nan_to_num(f.values, nan=0.5) + rng.normal(0.0, 0.05, (tables,) + p_ex.shape), 0.0, 1.0)
    others = _values_of_tables(p_ex, p_gz, np.concatenate([candidates, perturbed]))

    return {
        "f_sum": float(np.max(np.abs(f.values[f.defined] + f_ge.values[f.defined] - 1.0))),
        "value_ceg": abs(v_star - c),
        "l0_ceg": abs(l0_autoencoder_value(world) - c),
        "maximality": float(max(0.0, np.max(others) - v_star)),
        "range": float(max(0.0, -LOG4 - c - IDENTITY_TOL, c - IDENTITY_TOL)),
        "symmetry": abs(c - ceg_of_measures(p_gz, p_ex)),
    }


IDENTITY_CHECKS = (
    ("f_sum_to_one", "f_sum", MEASURE_TOL),
    ("value_equals_ceg", "value_ceg", IDENTITY_TOL),
    ("l0_equals_ceg", "l0_ceg", IDENTITY_TOL),
    ("optimal_is_maximal", "maximality", IDENTITY_TOL),
    ("ceg_in_range", "range", 0.0),
    ("jsd_symmetry", "symmetry", IDENTITY_TOL),
)


def _summarize(errors: List[Dict[str, float]], label: str) -> List[CheckResult]:
    results = []
    for name, key, tol in IDENTITY_CHECKS:
        worst = max(e[key] for e in errors)
        results.append(CheckResult(name, worst <= tol, f"{label}: max residual {worst:.3e} (tol {tol:.0e})"))
    return results


def run_identity_suite(count: int = 1000, seed: int = 0, tables: int = 1000) -> List[CheckResult]:
    """Checks every identity over ``count`` seeded random worlds."""
    rng = np.random.default_rng(seed)
    errors = [_world_errors(random_world(rng), rng, tables) for _ in range(count)]
    return _summarize(errors, f"{count} random worlds (seed {seed})")


def _optimum_checks(result: BruteForceResult, worlds: List[DiscreteWorld], generalized: bool) -> List[CheckResult]:
    attained = abs(result.gap) <= MEASURE_TOL
    checks = [CheckResult(
        "brute_force_minimum",
        result.min_value >= -LOG4 - MEASURE_TOL,
        f"min={result.min_value:.6f} gap={result.gap:.3e} minimizers={len(result.argmin)} evaluated={result.evaluated}",
    )]

    measure_fn = generalized_measures if generalized else joint_measures
    consistent = all(
        attained == bool(np.allclose(*measure_fn(w), rtol=0.0, atol=MEASURE_TOL)) for w in worlds
    )
    checks.append(CheckResult("optimum_iff_equal_measures", consistent,
                              "global minimum -log 4 " + ("attained" if attained else "not attained")))

    if attained:
        reports = [check_inversion(w) for w in worlds]
        worst = max(max(r.x_fail_mass, r.z_fail_mass) for r in reports)
        checks.append(CheckResult("minimizers_invert", worst == 0.0, f"max failure mass {worst:.3e}"))
    else:
        checks.append(CheckResult("minimizers_invert", True, "not applicable (optimum not attained)"))
    return checks


def run_brute_suite(m: int, n: int, p_x: Optional[Sequence[float]] = None,
                    p_z: Optional[Sequence[float]] = None) -> List[CheckResult]:
    result = brute_force_optimum(m, n, p_x, p_z)
    base = DiscreteWorld(np.full(m, 1.0 / m) if p_x is None else p_x,
                         np.full(n, 1.0 / n) if p_z is None else p_z,
                         np.zeros(m, dtype=np.int64), np.zeros(n, dtype=np.int64))
    worlds = [base.with_maps(e, g) for e, g in result.argmin]
    return _optimum_checks(result, worlds, generalized=False)


def run_world_suite(world: DiscreteWorld, seed: int = 0, tables: int = 1000) -> List[CheckResult]:
    """Identity checks on one world, plus the optimum search of its generalized form when it has one."""
    if not world.is_generalized:
        results = _summarize([_world_errors(world, np.random.default_rng(seed), tables)], "world")
        inv = check_inversion(world)
        at_optimum = abs(ceg(world) + LOG4) <= MEASURE_TOL
        results.append(CheckResult(
            "inversion_at_optimum",
            inv.inverts or not at_optimum,
            f"x_fail_mass={inv.x_fail_mass:.6g} z_fail_mass={inv.z_fail_mass:.6g}",
        ))
        return results

    c = generalized_ceg(world)
    results = [CheckResult("generalized_ceg_in_range", -LOG4 - IDENTITY_TOL <= c <= IDENTITY_TOL, f"ceg'={c:.6f}")]
    search = brute_force_generalized(world.p_x, world.p_z, world.g_x, world.g_z, world.m_prime, world.n_prime)
    worlds = [world.with_maps(e, g) for e, g in search.argmin]
    return results + _optimum_checks(search, worlds, generalized=True)
