"""
Stochastic Models

Double-exponential jump-diffusion for the loaned security, log-OU default
intensity for the borrower, their correlated joint simulation and the
Poisson-mixture density of the margin period return.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.special import comb, erfcx, logsumexp
from scipy.stats import norm, poisson

from .core_types import (
    BUSINESS_DAYS_PER_YEAR,
    CreditParams,
    DejdParams,
    SeedDescriptor,
    TransactionSpec,
)
from .errors import DensityTruncationError

logger = logging.getLogger(__name__)

DAY = 1.0 / BUSINESS_DAYS_PER_YEAR
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def jump_density(y: np.ndarray, params: DejdParams) -> np.ndarray:
    """Density of a single log-return jump: up side Exp(eta), down side Exp(theta)."""
    y = np.asarray(y, dtype=float)
    up = params.p_u * params.eta * np.exp(-params.eta * np.where(y >= 0, y, 0.0))
    down = params.q_d * params.theta * np.exp(params.theta * np.where(y < 0, y, 0.0))
    return np.where(y >= 0, up, down)


def dejd_mean_increment(params: DejdParams, dt: float) -> float:
    """Expected log-return over dt, jumps included, no compensator."""
    return params.mu * dt + params.lambda_a * dt * params.mean_jump()


def correlated_diffusion(
    params: DejdParams, dt: float, rho: float, z: np.ndarray, z_a: np.ndarray
) -> np.ndarray:
    """Diffusion part of the asset increment, sharing z with the credit process."""
    return params.sigma_a * np.sqrt(dt) * (rho * z + np.sqrt(1.0 - rho * rho) * z_a)


def sample_jump_sum(
    params: DejdParams, dt: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Sum of a Poisson(lambda_a * dt) number of double-exponential jumps per path."""
    if params.lambda_a == 0.0:
        return np.zeros(size)
    counts = rng.poisson(params.lambda_a * dt, size)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(size)
    up = rng.random(total) < params.p_u
    magnitude = rng.standard_exponential(total)
    sizes = np.where(up, magnitude / params.eta, -magnitude / params.theta)
    owner = np.repeat(np.arange(size), counts)
    return np.bincount(owner, weights=sizes, minlength=size)


def sample_dejd_increment(
    params: DejdParams,
    dt: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """
    Draw log-return increments over dt.

    Args:
        params: Asset dynamics
        dt: Step length in years
        rng: Random stream
        size: Number of draws; a scalar draw when None

    Returns:
        Drift plus Gaussian diffusion plus compound double-exponential jumps
    """
    n = 1 if size is None else size
    z = rng.standard_normal(n)
    out = params.mu * dt + params.sigma_a * np.sqrt(dt) * z + sample_jump_sum(params, dt, n, rng)
    return out[0] if size is None else out


def ou_coefficients(credit: CreditParams, dt: float) -> Tuple[float, float]:
    """Decay factor and Gaussian scale of the exact log-OU transition over dt."""
    if credit.k == 0.0:
        return 1.0, credit.sigma * np.sqrt(dt)
    decay = np.exp(-credit.k * dt)
    scale = credit.sigma * np.sqrt(-np.expm1(-2.0 * credit.k * dt) / (2.0 * credit.k))
    return float(decay), float(scale)


def sample_intensity_step(
    y_prev: np.ndarray, params: CreditParams, dt: float, dW: np.ndarray
) -> np.ndarray:
    """Exact transition of log intensity over dt given a standard normal draw."""
    decay, scale = ou_coefficients(params, dt)
    return params.ybar + (np.asarray(y_prev) - params.ybar) * decay + scale * np.asarray(dW)


@dataclass(frozen=True)
class PathSample:
    """One joint asset/credit path."""

    log_return_path: np.ndarray
    intensity_path: np.ndarray
    default_time: Optional[float]
    mpr_log_return: Optional[float]
    x_at_default: float = 0.0


@dataclass(frozen=True)
class ScenarioSet:
    """
    Haircut-independent state of a path set.

    Any loss at any haircut is a deterministic function of these arrays, so
    reusing one set across haircuts gives common random numbers.
    """

    defaulted: np.ndarray
    tau: np.ndarray
    x_tau: np.ndarray
    mpr_return: np.ndarray
    mpr_days: int
    seed_descriptor: SeedDescriptor

    @property
    def path_count(self) -> int:
        return int(self.defaulted.shape[0])

    def default_rate(self) -> float:
        return float(self.defaulted.mean())

    def mirrored(self) -> "ScenarioSet":
        """Same default times with every log-return negated."""
        return ScenarioSet(
            defaulted=self.defaulted,
            tau=self.tau,
            x_tau=-self.x_tau,
            mpr_return=-self.mpr_return,
            mpr_days=self.mpr_days,
            seed_descriptor=self.seed_descriptor,
        )

    @classmethod
    def concatenate(cls, parts: List["ScenarioSet"], seed_descriptor: SeedDescriptor) -> "ScenarioSet":
        return cls(
            defaulted=np.concatenate([p.defaulted for p in parts]),
            tau=np.concatenate([p.tau for p in parts]),
            x_tau=np.concatenate([p.x_tau for p in parts]),
            mpr_return=np.concatenate([p.mpr_return for p in parts]),
            mpr_days=parts[0].mpr_days,
            seed_descriptor=seed_descriptor,
        )


def _simulate_block(
    dejd: DejdParams,
    credit: Optional[CreditParams],
    txn: TransactionSpec,
    n: int,
    rng: np.random.Generator,
    record: bool = False,
) -> Tuple[ScenarioSet, Optional[Tuple[np.ndarray, np.ndarray]]]:
    # Draw order per step is fixed (z, z_a, jumps) so a longer MPR only appends draws.
    rho = credit.rho if credit is not None else 0.0
    defaulted = np.zeros(n, dtype=bool)
    tau = np.full(n, np.nan)
    x_tau = np.zeros(n)
    increments = intensities = None

    if credit is not None:
        steps = txn.horizon_days
        decay, scale = ou_coefficients(credit, DAY)
        threshold = rng.standard_exponential(n)
        y = np.full(n, credit.y0)
        x = np.zeros(n)
        hazard = np.zeros(n)
        if record:
            increments = np.empty((steps, n))
            intensities = np.empty((steps, n))
        for step in range(steps):
            z = rng.standard_normal(n)
            z_a = rng.standard_normal(n)
            lam = np.exp(y)
            hazard += lam * DAY
            y = credit.ybar + (y - credit.ybar) * decay + scale * z
            dx = dejd.mu * DAY + correlated_diffusion(dejd, DAY, rho, z, z_a)
            dx = dx + sample_jump_sum(dejd, DAY, n, rng)
            x += dx
            if record:
                increments[step] = dx
                intensities[step] = lam
            hit = ~defaulted & (hazard >= threshold)
            if hit.any():
                tau[hit] = (step + 1) * DAY
                x_tau[hit] = x[hit]
                defaulted |= hit

    mpr_return = np.zeros(n)
    for _ in range(txn.mpr_days):
        z = rng.standard_normal(n)
        z_a = rng.standard_normal(n)
        mpr_return += dejd.mu * DAY + correlated_diffusion(dejd, DAY, rho, z, z_a)
        mpr_return += sample_jump_sum(dejd, DAY, n, rng)

    scenarios = ScenarioSet(
        defaulted=defaulted,
        tau=tau,
        x_tau=x_tau,
        mpr_return=mpr_return,
        mpr_days=txn.mpr_days,
        seed_descriptor=SeedDescriptor(seed=0, partitions=1),
    )
    recorded = (increments, intensities) if record else None
    return scenarios, recorded


def sample_joint_path(
    dejd: DejdParams,
    credit: CreditParams,
    txn: TransactionSpec,
    rng: np.random.Generator,
) -> PathSample:
    """
    Simulate one daily joint path to the horizon and its MPR continuation.

    Default happens at the first step whose accumulated intensity exceeds an
    Exp(1) threshold. The shared Brownian draw drives both the log intensity
    and the rho-weighted part of the asset diffusion.
    """
    scenarios, recorded = _simulate_block(dejd, credit, txn, 1, rng, record=True)
    increments, intensities = recorded
    if scenarios.defaulted[0]:
        tau = float(scenarios.tau[0])
        last = int(round(tau * BUSINESS_DAYS_PER_YEAR))
        return PathSample(
            log_return_path=increments[:last, 0],
            intensity_path=intensities[:last, 0],
            default_time=tau,
            mpr_log_return=float(scenarios.mpr_return[0]),
            x_at_default=float(scenarios.x_tau[0]),
        )
    return PathSample(
        log_return_path=increments[:, 0],
        intensity_path=intensities[:, 0],
        default_time=None,
        mpr_log_return=None,
    )


def partition_sizes(n_paths: int, partitions: int) -> List[int]:
    """Split n_paths into near-equal partitions, larger ones first."""
    partitions = max(1, min(partitions, n_paths))
    base, extra = divmod(n_paths, partitions)
    return [base + (1 if i < extra else 0) for i in range(partitions)]


def partition_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for one partition, identical to SeedSequence(seed).spawn()[index]."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _simulate_partition(
    task: Tuple[DejdParams, Optional[CreditParams], TransactionSpec, int, int, int]
) -> ScenarioSet:
    dejd, credit, txn, size, seed, index = task
    scenarios, _ = _simulate_block(dejd, credit, txn, size, partition_stream(seed, index))
    return scenarios


def sample_scenarios(
    dejd: DejdParams,
    credit: Optional[CreditParams],
    txn: TransactionSpec,
    n_paths: int,
    seed: int,
    partitions: int = 16,
    workers: int = 1,
) -> ScenarioSet:
    """
    Simulate n_paths joint scenarios over a deterministic partition layout.

    With ``credit=None`` only the MPR returns are drawn (borrower-independent
    mode) and no path defaults. Output depends on (seed, partitions) only;
    ``workers`` changes wall time, never numbers.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    sizes = partition_sizes(n_paths, partitions)
    tasks = [(dejd, credit, txn, size, seed, i) for i, size in enumerate(sizes)]
    logger.debug(f"Simulating {n_paths} paths in {len(sizes)} partitions on {workers} worker(s)")
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_partition, tasks))
    else:
        parts = [_simulate_partition(task) for task in tasks]
    return ScenarioSet.concatenate(parts, SeedDescriptor(seed=seed, partitions=len(sizes)))


def model_default_probability(
    credit: CreditParams, years: float, n_paths: int = 100_000, seed: int = 0
) -> float:
    """
    Probability of default within ``years`` under the intensity model.

    Closed form when sigma = 0, otherwise the Monte Carlo mean of
    1 - exp(-integrated intensity) on daily steps.
    """
    if credit.sigma == 0.0:
        def intensity(t: float) -> float:
            return float(np.exp(credit.ybar + (credit.y0 - credit.ybar) * np.exp(-credit.k * t)))

        integral, _ = integrate.quad(intensity, 0.0, years)
        return float(-np.expm1(-integral))
    rng = np.random.default_rng(seed)
    steps = max(1, int(round(years * BUSINESS_DAYS_PER_YEAR)))
    dt = years / steps
    y = np.full(n_paths, credit.y0)
    hazard = np.zeros(n_paths)
    for _ in range(steps):
        hazard += np.exp(y) * dt
        y = sample_intensity_step(y, credit, dt, rng.standard_normal(n_paths))
    return float(np.mean(-np.expm1(-hazard)))


# Poisson-mixture density of the log-return over a horizon u.

def poisson_truncation(mean: float, tol: float = 1e-12, max_terms: int = 200) -> Tuple[int, float]:
    """
    Smallest N whose omitted Poisson tail mass is below tol.

    Returns:
        (N, omitted tail mass)

    Raises:
        DensityTruncationError: If the tail is still above tol at max_terms
    """
    if mean == 0.0:
        return 0, 0.0
    for n in range(max_terms + 1):
        tail = float(poisson.sf(n, mean))
        if tail < tol:
            return n, tail
    raise DensityTruncationError(
        f"Poisson tail {tail:.3e} above tolerance {tol:.1e} at {max_terms} terms "
        f"(mean jump count {mean:.3f})"
    )


def kou_weights(n: int, p: float, eta: float, theta: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mixture weights of a sum of n double-exponential jumps.

    The sum is distributed as +Gamma(k, eta) with probability P[k] or as
    -Gamma(k, theta) with probability Q[k], k = 1..n (index 0 unused).
    """
    q = 1.0 - p
    a = eta / (eta + theta)
    b = theta / (eta + theta)
    P = np.zeros(n + 1)
    Q = np.zeros(n + 1)
    for k in range(1, n):
        for i in range(k, n):
            c = comb(n - k - 1, i - k, exact=True) * comb(n, i, exact=True)
            P[k] += c * a ** (i - k) * b ** (n - i) * p**i * q ** (n - i)
            Q[k] += c * a ** (n - i) * b ** (i - k) * p ** (n - i) * q**i
    P[n] = p**n
    Q[n] = q**n
    return P, Q


HH_SPLIT = 2.0
HH_EXTRA_TERMS = 100


def log_hh_table(n_max: int, z: np.ndarray) -> np.ndarray:
    """
    Log of Hh_n(z) = int_z^inf (t - z)^n / n! exp(-t^2/2) dt for n = -1..n_max.

    Row j holds n = j - 1. Uses n Hh_n = Hh_{n-2} - z Hh_{n-1} upward where it
    is stable (z <= 2, scaled by exp(z^2/2) for z > 0) and the continued
    fraction for Hh_n / Hh_{n-1} for larger z, where Hh_n is the minimal
    solution of the recursion.
    """
    z = np.asarray(z, dtype=float).ravel()
    out = np.empty((n_max + 2, z.size))

    neg = z <= 0
    if neg.any():
        zn = z[neg]
        prev = np.exp(-0.5 * zn * zn)
        cur = np.sqrt(2.0 * np.pi) * norm.sf(zn)
        out[0, neg] = -0.5 * zn * zn
        if n_max >= 0:
            out[1, neg] = np.log(cur)
        for j in range(1, n_max + 1):
            prev, cur = cur, (prev - zn * cur) / j
            out[j + 1, neg] = np.log(cur)

    mid = (z > 0) & (z <= HH_SPLIT)
    if mid.any():
        zm = z[mid]
        shift = -0.5 * zm * zm
        prev = np.ones_like(zm)
        cur = np.sqrt(0.5 * np.pi) * erfcx(zm / np.sqrt(2.0))
        out[0, mid] = shift
        if n_max >= 0:
            out[1, mid] = np.log(cur) + shift
        for j in range(1, n_max + 1):
            prev, cur = cur, (prev - zm * cur) / j
            out[j + 1, mid] = np.log(cur) + shift

    far = z > HH_SPLIT
    if far.any():
        zf = z[far]
        shift = -0.5 * zf * zf
        out[0, far] = shift
        if n_max >= 0:
            log_h0 = np.log(np.sqrt(0.5 * np.pi) * erfcx(zf / np.sqrt(2.0)))
            out[1, far] = log_h0 + shift
            top = n_max + HH_EXTRA_TERMS
            ratio = np.zeros_like(zf)
            log_ratios = np.zeros((n_max + 1, zf.size))
            for j in range(top, 0, -1):
                if j <= n_max:
                    log_ratios[j] = np.log(ratio)
                ratio = 1.0 / (zf + j * ratio)
            out[2:, far] = log_h0 + shift + np.cumsum(log_ratios[1:], axis=0)
    return out


def mpr_return_log_density(
    x: np.ndarray,
    dejd: DejdParams,
    u: float,
    tol: float = 1e-12,
    max_terms: int = 200,
) -> np.ndarray:
    """
    Log density of X(u), the log-return over u years.

    Each Poisson term is a Gaussian N(mu*u, sigma_a^2*u) convolved with an
    n-fold double-exponential sum, in closed form through Hh functions.
    """
    if dejd.sigma_a <= 0.0:
        raise DensityTruncationError("the mixture density requires sigma_a > 0")
    x = np.asarray(x, dtype=float)
    shape = x.shape
    d = x.ravel() - dejd.mu * u
    s = dejd.sigma_a * np.sqrt(u)
    mean_jumps = dejd.lambda_a * u
    n_max, _ = poisson_truncation(mean_jumps, tol, max_terms)

    terms = [poisson.logpmf(0, mean_jumps) - LOG_SQRT_2PI - np.log(s) - 0.5 * (d / s) ** 2]
    if n_max > 0:
        se, st = s * dejd.eta, s * dejd.theta
        up_base = 0.5 * se * se - np.log(s) - LOG_SQRT_2PI - dejd.eta * d
        down_base = 0.5 * st * st - np.log(s) - LOG_SQRT_2PI + dejd.theta * d
        up_hh = log_hh_table(n_max - 1, se - d / s)
        down_hh = log_hh_table(n_max - 1, st + d / s)
        for n in range(1, n_max + 1):
            log_pn = poisson.logpmf(n, mean_jumps)
            P, Q = kou_weights(n, dejd.p_u, dejd.eta, dejd.theta)
            for k in range(1, n + 1):
                # Hh_{k-1} sits in row k of the table
                if P[k] > 0:
                    terms.append(log_pn + np.log(P[k]) + k * np.log(se) + up_base + up_hh[k])
                if Q[k] > 0:
                    terms.append(log_pn + np.log(Q[k]) + k * np.log(st) + down_base + down_hh[k])
    return logsumexp(np.vstack(terms), axis=0).reshape(shape)


def mpr_return_density(
    x: np.ndarray, dejd: DejdParams, u: float, tol: float = 1e-12, max_terms: int = 200
) -> np.ndarray:
    return np.exp(mpr_return_log_density(x, dejd, u, tol, max_terms))


@dataclass(frozen=True)
class DensityTable:
    """Density of X(u) on an evaluation grid with its truncation record."""

    grid: np.ndarray
    density: np.ndarray
    terms: int
    tail_mass: float


def mpr_return_distribution_independent(
    dejd: DejdParams,
    u: float,
    grid: np.ndarray,
    tol: float = 1e-12,
    max_terms: int = 200,
) -> DensityTable:
    """Tabulate the density of the log-return over u years on ``grid``."""
    if not u > 0:
        raise ValueError("u must be positive")
    terms, tail = poisson_truncation(dejd.lambda_a * u, tol, max_terms)
    grid = np.asarray(grid, dtype=float)
    return DensityTable(
        grid=grid,
        density=mpr_return_density(grid, dejd, u, tol, max_terms),
        terms=terms,
        tail_mass=tail,
    )
