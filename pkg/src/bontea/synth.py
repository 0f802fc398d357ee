"""Synthetic Gaussian-tail laboratory: exact gradients and bias/variance tables.

The lab draws rewards Z ~ N(0,1) with the bounded score
S_c(Z) = 1{Z >= t_c} - (1 - Phi(t_c)) per threshold t_c, so the target
gradient g = (1/alpha) E[1{Z >= z_alpha} R_tilde_eta(Z) S(Z)] has an exact
quadrature value. ``estimator_bias_variance`` measures any advantage rule's
induced gradient (1/m) sum_i A_i S(Z_i) against that target over many
replications; for the TEA family the raw (uncentered, 1/alpha-weighted)
estimator is measured so the target is the population tail gradient.

The prefix rule is measured on its cross-fitted split-halves form: the tail
vector comes from batch A, the score average from batch B, and the bias is
Rao-Blackwellized over the evaluation split — conditional on A the estimator's
mean is H(eta_hat) = (1/alpha) int_r^inf R_tilde(z) S(z) phi(z) dz, available
in closed form. A control-variate layer (prefix tail moments with exactly
known means, coefficients fit on a pilot block and applied only beyond it)
removes most of the remaining tail-vector noise without biasing the mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, stats
from scipy.special import ndtr

from .advantages import RuleParams, compute_rule
from .errors import DegenerateError, InputError
from .gauss import tail_constants
from .prefixes import cancellation_weights, theory_prefixes
from .tailstats import DEFAULT_EPS_SIGMA, RewardGroup, TailVector, empirical_tail_vector, tail_count

#: Replications are processed in fixed-size blocks; each block draws from its
#: own SeedSequence-derived child stream, so serial and block-parallel runs
#: produce identical results.
BLOCK_SIZE = 4096
#: Pilot replications used to fit control-variate coefficients.
PILOT_SIZE = 50_000
#: Default Monte Carlo prompt-batch grid for the MSE frontier.
DEFAULT_P_GRID = (1, 2048, 65536)


@dataclass(frozen=True)
class SyntheticSpec:
    """Lab configuration: tail level, target N, and score thresholds."""

    alpha: float = 0.25
    n_target: int = 128
    score_thresholds: tuple[float, ...] = (1.0, 1.5)

    def __post_init__(self) -> None:
        if not all(np.isfinite(self.score_thresholds)):
            raise InputError("score thresholds must be finite")
        if not 0.0 < self.alpha < 0.5:
            raise InputError(f"alpha must lie in (0, 1/2), got {self.alpha}")


@dataclass(frozen=True)
class BiasVarianceRow:
    """One (rule, m) measurement: bias vector/norm, variance trace, MSE map."""

    estimator_tag: str
    m: int
    bias_vec: np.ndarray
    bias_norm: float
    variance: float
    mse_at_p: dict[int, float]
    replications: int
    seed: int
    bias_se: np.ndarray
    variance_se: float


@dataclass(frozen=True)
class MseFrontier:
    """Rows per (rule, m) plus the log10 MSE ratio prefix-tea / tea."""

    rows: list[BiasVarianceRow]
    m_grid: tuple[int, ...]
    p_grid: tuple[int, ...]
    ratio_log10: np.ndarray | None


@lru_cache(maxsize=None)
def _spec_constants(spec: SyntheticSpec):
    consts = tail_constants(spec.alpha, spec.n_target)
    thresholds = np.asarray(spec.score_thresholds, dtype=float)
    return consts, thresholds, 1.0 - ndtr(thresholds)


def population_tail_vector(spec: SyntheticSpec) -> TailVector:
    """Population tail vector (z_alpha, lambda_alpha, sqrt(delta_alpha))."""
    consts, _, _ = _spec_constants(spec)
    return TailVector(
        r=consts.z_alpha,
        mu=consts.lambda_alpha,
        sigma=float(np.sqrt(consts.delta_alpha)),
        q=0,
    )


def score_matrix(spec: SyntheticSpec, z: np.ndarray) -> np.ndarray:
    """Centered threshold scores S(z), shape z.shape + (d,)."""
    _, thresholds, sbar = _spec_constants(spec)
    z = np.asarray(z, dtype=float)
    return (z[..., None] >= thresholds) - sbar


def _shaped(z: np.ndarray, r, mu, sigma, c_tilde: float) -> np.ndarray:
    return (z - r) + c_tilde / (2.0 * sigma) * ((z - mu) ** 2 - (r - mu) ** 2)


@lru_cache(maxsize=None)
def true_gradient(spec: SyntheticSpec) -> np.ndarray:
    """Exact target gradient by adaptive quadrature at the population tail."""
    consts, thresholds, sbar = _spec_constants(spec)
    z_a, lam = consts.z_alpha, consts.lambda_alpha
    sdel = float(np.sqrt(consts.delta_alpha))
    out = np.empty(thresholds.size)
    for c, (t, sb) in enumerate(zip(thresholds, sbar)):

        def integrand(z: float) -> float:
            shaped = _shaped(z, z_a, lam, sdel, consts.c_tilde_n)
            return shaped * (float(z >= t) - sb) * stats.norm.pdf(z) / spec.alpha

        interior = [t] if z_a < t < 12.0 else []
        value, _ = integrate.quad(
            integrand, z_a, 12.0, points=interior, epsabs=1e-10, epsrel=1e-12, limit=400
        )
        out[c] = value
    out.setflags(write=False)
    return out


def _h_batch(r: np.ndarray, mu: np.ndarray, sigma: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """H(eta) for batched tail vectors; shape (..., d).

    R_tilde is the quadratic a0 + a1 z + a2 z^2, so the integral against the
    Gaussian density reduces to partial moments: with T(b) the integral of
    R_tilde phi from b to infinity,

        H_c = (1/alpha) [T(max(r, t_c)) - sbar_c T(r)].
    """
    consts, thresholds, sbar = _spec_constants(spec)
    r = np.asarray(r, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    a2 = consts.c_tilde_n / (2.0 * sigma)
    a1 = 1.0 - 2.0 * a2 * mu
    a0 = -r + a2 * (mu**2 - (r - mu) ** 2)

    def t_upper(b: np.ndarray) -> np.ndarray:
        # int_b^inf (a0 + a1 z + a2 z^2) phi(z) dz via Gaussian partial moments
        surv = 1.0 - ndtr(b)
        dens = stats.norm.pdf(b)
        return a0[..., None] * surv + a1[..., None] * dens + a2[..., None] * (surv + b * dens)

    lower = np.maximum(r[..., None], thresholds)
    t_r = (
        a0 * (1.0 - ndtr(r)) + a1 * stats.norm.pdf(r) + a2 * (1.0 - ndtr(r) + r * stats.norm.pdf(r))
    )
    return (t_upper(lower) - sbar * t_r[..., None]) / spec.alpha


def h_population(eta: TailVector, spec: SyntheticSpec) -> np.ndarray:
    """Conditional mean H(eta) = (1/alpha) int_r^inf R_tilde(z) S(z) phi(z) dz.

    Evaluated in closed form through Gaussian partial moments (the integrand
    is a quadratic times the density); tests pin agreement with adaptive
    quadrature. At the population tail vector this equals ``true_gradient``.
    """
    if eta.sigma <= 0:
        raise InputError(f"tail sigma must be positive, got {eta.sigma}")
    return _h_batch(np.float64(eta.r), np.float64(eta.mu), np.float64(eta.sigma), spec)


def cross_fit_gradient(
    group_a: RewardGroup,
    group_b: RewardGroup,
    spec: SyntheticSpec,
    eps_sigma: float = DEFAULT_EPS_SIGMA,
) -> np.ndarray:
    """Tail vector from batch A, shaped-score average over batch B.

    Returns (1/n) sum_i (1/alpha) 1{R_i^B >= r_hat^A} R_tilde_{eta^A}(R_i^B) s_i^B
    with s_i^B taken from ``group_b.scores`` when present, else from the
    threshold scores that ``spec`` defines.
    """
    if len(group_a) != len(group_b):
        raise InputError("cross-fit batches must have equal size")
    consts, _, _ = _spec_constants(spec)
    eta = empirical_tail_vector(group_a, spec.alpha, eps_sigma)
    z_b = group_b.rewards
    shaped = _shaped(z_b, eta.r, eta.mu, eta.sigma, consts.c_tilde_n)
    weights = np.where(z_b >= eta.r, shaped / spec.alpha, 0.0)
    scores = group_b.scores if group_b.scores is not None else score_matrix(spec, z_b)
    return weights @ scores / len(group_b)


# --- vectorized per-block measurement kernels -------------------------------


def _batch_tail_stats(z: np.ndarray, alpha: float, eps_sigma: float):
    """Tail stats per row of z, shape (blocks,): r, mu, sigma."""
    m = z.shape[1]
    q = tail_count(m, alpha)
    top = np.partition(z, m - q, axis=1)[:, m - q :]
    return top.min(axis=1), top.mean(axis=1), np.maximum(top.std(axis=1), eps_sigma)


def _induced_gradient(adv: np.ndarray, z: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """(1/m) sum_i A_i S(z_i) per row; shape (blocks, d)."""
    _, thresholds, sbar = _spec_constants(spec)
    m = z.shape[1]
    total = adv.sum(axis=1)
    cols = [
        (adv * (z >= t)).sum(axis=1) - sb * total for t, sb in zip(thresholds, sbar)
    ]
    return np.stack(cols, axis=1) / m


def _tea_raw_block(z: np.ndarray, spec: SyntheticSpec, eps_sigma: float) -> np.ndarray:
    consts, _, _ = _spec_constants(spec)
    r, mu, sigma = _batch_tail_stats(z, spec.alpha, eps_sigma)
    shaped = _shaped(z, r[:, None], mu[:, None], sigma[:, None], consts.c_tilde_n)
    return np.where(z >= r[:, None], shaped / spec.alpha, 0.0)


def _oracle_block(z: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    consts, _, _ = _spec_constants(spec)
    sdel = float(np.sqrt(consts.delta_alpha))
    shaped = _shaped(z, consts.z_alpha, consts.lambda_alpha, sdel, consts.c_tilde_n)
    return np.where(z >= consts.z_alpha, shaped / spec.alpha, 0.0)


class _PrefixCrossFit:
    """Cross-fitted prefix estimator over split halves, with RB + CV bias path."""

    def __init__(self, m: int, spec: SyntheticSpec, params: RuleParams):
        if m % 2 != 0 or m < 4:
            raise InputError(f"cross-fitted prefix measurement needs even m >= 4, got {m}")
        self.n = m // 2
        self.spec = spec
        self.eps_sigma = params.eps_sigma
        self.sizes = theory_prefixes(self.n, params.j_count, spec.alpha)
        self.weights = np.asarray(cancellation_weights(self.n, self.sizes, params.k))
        consts, thresholds, sbar = _spec_constants(spec)
        self.consts = consts
        # control features: prefix means of 1{z>=z_a}, z 1{z>=z_a}, z^2 1{z>=z_a}
        z_a = consts.z_alpha
        dens = float(stats.norm.pdf(z_a))
        self.control_means = np.array([spec.alpha, dens, spec.alpha + z_a * dens])

    def block(self, rng: np.random.Generator):
        """One block: actual estimator values, RB values, centered controls."""
        spec, consts = self.spec, self.consts
        z_a = rng.standard_normal((BLOCK_SIZE, self.n))
        z_b = rng.standard_normal((BLOCK_SIZE, self.n))
        ind = z_a >= consts.z_alpha
        z_ind = np.where(ind, z_a, 0.0)
        z2_ind = np.where(ind, z_a * z_a, 0.0)
        d = len(spec.score_thresholds)
        actual = np.zeros((BLOCK_SIZE, d))
        rao = np.zeros((BLOCK_SIZE, d))
        controls = np.empty((BLOCK_SIZE, 3 * len(self.sizes)))
        nonzero = np.zeros(BLOCK_SIZE, dtype=bool)
        for j, (w, size) in enumerate(zip(self.weights, self.sizes)):
            r, mu, sigma = _batch_tail_stats(z_a[:, :size], spec.alpha, self.eps_sigma)
            rao += w * _h_batch(r, mu, sigma, spec)
            zb = z_b[:, :size]
            shaped = _shaped(zb, r[:, None], mu[:, None], sigma[:, None], consts.c_tilde_n)
            phi_vals = np.where(zb >= r[:, None], shaped / spec.alpha, 0.0)
            nonzero |= np.any(phi_vals != 0.0, axis=1)
            actual += w * _induced_gradient(phi_vals, zb, spec)
            controls[:, 3 * j] = ind[:, :size].mean(axis=1) - self.control_means[0]
            controls[:, 3 * j + 1] = z_ind[:, :size].mean(axis=1) - self.control_means[1]
            controls[:, 3 * j + 2] = z2_ind[:, :size].mean(axis=1) - self.control_means[2]
        return actual, rao, controls, nonzero


def _prefix_practical_block(
    z: np.ndarray, spec: SyntheticSpec, params: RuleParams, sizes, weights, ratios
) -> np.ndarray:
    """Same-group raw prefix combination C_i = sum_j w_j rho_j A_raw_{i,j}."""
    consts, _, _ = _spec_constants(spec)
    combined = np.zeros_like(z)
    for w, rho, size in zip(weights, ratios, sizes):
        zj = z[:, :size]
        r, mu, sigma = _batch_tail_stats(zj, spec.alpha, params.eps_sigma)
        shaped = _shaped(zj, r[:, None], mu[:, None], sigma[:, None], consts.c_tilde_n)
        combined[:, :size] += w * rho * np.where(zj >= r[:, None], shaped / spec.alpha, 0.0)
    return combined


def default_replications(m: int) -> int:
    """Default replication count: 2e5 up to m = 1024, 5e4 above."""
    return 200_000 if m <= 1024 else 50_000


class _MomentAccumulator:
    """Streaming raw moments per component (block sums, then totals)."""

    def __init__(self, dim: int):
        self.n = 0
        self.sums = np.zeros((4, dim))

    def add(self, values: np.ndarray) -> None:
        self.n += values.shape[0]
        for p in range(4):
            self.sums[p] += (values ** (p + 1)).sum(axis=0)

    def mean(self) -> np.ndarray:
        return self.sums[0] / self.n

    def var(self) -> np.ndarray:
        mean = self.mean()
        return self.sums[1] / self.n - mean**2

    def var_se(self) -> float:
        """se of the variance trace (per-component normal-theory, summed)."""
        mean = self.mean()
        m2 = self.sums[1] / self.n - mean**2
        m4 = (
            self.sums[3] / self.n
            - 4 * mean * self.sums[2] / self.n
            + 6 * mean**2 * self.sums[1] / self.n
            - 3 * mean**4
        )
        var_of_var = np.maximum(m4 - m2**2, 0.0) / self.n
        return float(np.sqrt(var_of_var.sum()))


def _finish_row(
    tag: str,
    m: int,
    bias_vec: np.ndarray,
    bias_se: np.ndarray,
    acc: _MomentAccumulator,
    replications: int,
    seed: int,
    p_grid: tuple[int, ...],
) -> BiasVarianceRow:
    variance = float(acc.var().sum())
    bias_norm = float(np.linalg.norm(bias_vec))
    mse = {int(p): bias_norm**2 + variance / p for p in p_grid}
    bias_vec = bias_vec.copy()
    bias_vec.setflags(write=False)
    return BiasVarianceRow(
        estimator_tag=tag,
        m=m,
        bias_vec=bias_vec,
        bias_norm=bias_norm,
        variance=variance,
        mse_at_p=mse,
        replications=replications,
        seed=seed,
        bias_se=bias_se,
        variance_se=acc.var_se(),
    )


def estimator_bias_variance(
    rule: str,
    spec: SyntheticSpec,
    m: int,
    replications: int | None = None,
    seed: int = 0,
    params: RuleParams | None = None,
    p_grid: tuple[int, ...] = DEFAULT_P_GRID,
) -> BiasVarianceRow:
    """Monte Carlo bias and variance of a rule's induced gradient estimator.

    Draws ``replications`` groups of m standard normals; each group's induced
    gradient is (1/m) sum_i A_i S(Z_i). Tags 'tea' and 'prefix-tea-practical'
    measure the raw (uncentered) estimators so the target is the population
    tail gradient; 'oracle' plugs in the population tail vector; 'prefix-tea'
    measures the cross-fitted split-halves estimator, with variance from the
    actual estimator and bias from the Rao-Blackwellized path (control-variate
    corrected; the pilot block that calibrates the coefficients is excluded
    from the bias mean). Any other registered rule is measured as-is via the
    per-group rule code.

    Raises ``DegenerateError`` when the rule emits all-zero advantages on more
    than 99% of replications.
    """
    if params is None:
        params = RuleParams(alpha=spec.alpha, n_target=spec.n_target)
    if replications is None:
        replications = default_replications(m)
    if replications < 1_000:
        raise InputError(f"need at least 1e3 replications, got {replications}")
    g_true = true_gradient(spec)
    d = len(spec.score_thresholds)
    n_blocks = (replications + BLOCK_SIZE - 1) // BLOCK_SIZE
    streams = np.random.SeedSequence(seed).spawn(n_blocks)
    acc = _MomentAccumulator(d)
    zero_rows = 0

    if rule == "prefix-tea":
        kernel = _PrefixCrossFit(m, spec, params)
        pilot_target = min(PILOT_SIZE, replications // 4)
        use_cv = pilot_target >= 1_000
        pilot_rao: list[np.ndarray] = []
        pilot_ctl: list[np.ndarray] = []
        rao_acc = _MomentAccumulator(d)
        n_pilot = 0
        lam = None
        done = 0
        for stream in streams:
            rng = np.random.default_rng(stream)
            take = min(BLOCK_SIZE, replications - done)
            actual, rao, controls, nonzero = kernel.block(rng)
            actual, rao, controls, nonzero = (
                actual[:take],
                rao[:take],
                controls[:take],
                nonzero[:take],
            )
            acc.add(actual)
            zero_rows += int(take - nonzero.sum())
            if use_cv and lam is None:
                pilot_rao.append(rao)
                pilot_ctl.append(controls)
                n_pilot += take
                if n_pilot >= pilot_target:
                    ctl = np.concatenate(pilot_ctl)
                    rao_all = np.concatenate(pilot_rao)
                    lam, *_ = np.linalg.lstsq(ctl, rao_all - rao_all.mean(axis=0), rcond=None)
            else:
                rao_acc.add(rao - controls @ lam if use_cv else rao)
            done += take
        if rao_acc.n == 0:  # all replications consumed by the pilot
            rao_all = np.concatenate(pilot_rao)
            rao_acc.add(rao_all)
        bias_vec = rao_acc.mean() - g_true
        bias_se = np.sqrt(rao_acc.var() / rao_acc.n)
    else:
        done = 0
        sizes = weights = ratios = None
        if rule == "prefix-tea-practical":
            from .prefixes import build_scheme

            scheme = build_scheme(m, params.k, params.j_count)
            sizes, weights, ratios = scheme.sizes, scheme.weights, scheme.ratios
        for stream in streams:
            rng = np.random.default_rng(stream)
            take = min(BLOCK_SIZE, replications - done)
            z = rng.standard_normal((BLOCK_SIZE, m))[:take]
            if rule == "tea":
                adv = _tea_raw_block(z, spec, params.eps_sigma)
            elif rule == "oracle":
                adv = _oracle_block(z, spec)
            elif rule == "prefix-tea-practical":
                adv = _prefix_practical_block(z, spec, params, sizes, weights, ratios)
            else:
                adv = np.stack(
                    [compute_rule(rule, row, params).values for row in z], axis=0
                )
            zero_rows += int((adv == 0.0).all(axis=1).sum())
            acc.add(_induced_gradient(adv, z, spec))
            done += take
        bias_vec = acc.mean() - g_true
        bias_se = np.sqrt(acc.var() / acc.n)

    if zero_rows > 0.99 * replications:
        raise DegenerateError(
            f"rule {rule!r} emitted all-zero advantages on {zero_rows}/{replications} replications"
        )
    return _finish_row(rule, m, bias_vec, bias_se, acc, replications, seed, p_grid)


def mse_frontier(
    rules: list[str] | tuple[str, ...],
    m_grid: list[int] | tuple[int, ...],
    p_grid: list[int] | tuple[int, ...] = DEFAULT_P_GRID,
    spec: SyntheticSpec = SyntheticSpec(),
    replications: int | None = None,
    seed: int = 0,
    params: RuleParams | None = None,
) -> MseFrontier:
    """Bias/variance rows over a (rule, m) grid plus the prefix/tea MSE ratio.

    Each row draws from a seed derived from (seed, rule index, m index), so
    adding rules or budgets never reshuffles existing rows.
    """
    if not rules or not m_grid or not p_grid:
        raise InputError("rules, m_grid, and p_grid must be nonempty")
    m_grid = tuple(int(m) for m in m_grid)
    p_grid = tuple(int(p) for p in p_grid)
    rows = []
    by_tag: dict[str, dict[int, BiasVarianceRow]] = {}
    for i, rule in enumerate(rules):
        for j, m in enumerate(m_grid):
            row_seed = int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])
            row = estimator_bias_variance(
                rule, spec, m, replications=replications, seed=row_seed, params=params, p_grid=p_grid
            )
            rows.append(row)
            by_tag.setdefault(rule, {})[m] = row
    ratio = None
    if "prefix-tea" in by_tag and "tea" in by_tag:
        ratio = np.empty((len(m_grid), len(p_grid)))
        for a, m in enumerate(m_grid):
            for b, p in enumerate(p_grid):
                ratio[a, b] = np.log10(
                    by_tag["prefix-tea"][m].mse_at_p[p] / by_tag["tea"][m].mse_at_p[p]
                )
    return MseFrontier(rows=rows, m_grid=m_grid, p_grid=p_grid, ratio_log10=ratio)
