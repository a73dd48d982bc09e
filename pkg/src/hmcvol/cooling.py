"""Gaussian cooling over the hybrid barrier and the resulting volume estimator.

Phase ``i`` targets ``exp(-phi/sigma_i^2)``, i.e. ``alpha_i = 1/sigma_i^2``.
Writing ``Z(a) = int_P exp(-a phi)``, the volume is ``Z(0)`` and

    log Z(0) = log Z(alpha_0) + sum_i log E_{alpha_i}[exp((alpha_i - alpha_{i+1}) phi)]

with ``alpha_{K+1} = 0`` after the last phase. ``Z(alpha_0)`` comes from a
Laplace expansion at the minimizer of phi including the ``1/alpha`` term.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .barrier import BarrierParams, MetricState, fd_step, metric, minimize_phi
from .polytope import Polytope
from .sampler import ChainConfig, run_chain


class ScheduleError(RuntimeError):
    """The cooling schedule needs more phases than allowed."""


class PhaseVarianceError(RuntimeError):
    """A phase's ratio estimate is too noisy; raise ``c_k`` (larger k_i)."""


@dataclass
class CoolingConfig:
    epsilon: float = 0.1
    nu: float | None = None
    """Barrier parameter bound; ``None`` means ``alpha0 * n``."""
    c_sigma0: float = 1.0
    c_k: float = 1.0
    max_phases: int = 10_000
    seed: int = 0
    sigma0_sq: float | None = None
    """Explicit starting variance; overrides the ``c_sigma0`` formula."""
    n_batches: int = 10
    max_rel_se: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.nu is not None and not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.c_sigma0 <= 0 or self.c_k <= 0:
            raise ValueError("schedule constants must be positive")
        if self.sigma0_sq is not None and not self.sigma0_sq > 0:
            raise ValueError("sigma0_sq must be positive")
        if self.max_phases < 1:
            raise ValueError("max_phases must be >= 1")
        if self.n_batches < 2:
            raise ValueError("n_batches must be >= 2")


def initial_sigma_sq(cfg: CoolingConfig, n: int) -> float:
    if cfg.sigma0_sq is not None:
        return float(cfg.sigma0_sq)
    eps = cfg.epsilon
    return cfg.c_sigma0 * eps ** 2 * n ** -3.0 * math.log(n / eps) ** -3.0


def sigma_cap(cfg: CoolingConfig, n: int, nu: float) -> float:
    """Variance beyond which the schedule stops: ``(nu/eps) log(n nu/eps)``."""
    eps = cfg.epsilon
    return nu / eps * math.log(n * nu / eps)


def next_sigma_sq(sigma_sq: float, n: int, nu: float) -> float:
    if sigma_sq <= nu / n:
        return sigma_sq * (1.0 + 1.0 / math.sqrt(n))
    return sigma_sq * (1.0 + min(math.sqrt(sigma_sq / nu), 0.5))


def phase_samples(cfg: CoolingConfig, n: int, nu: float, sigma_sq: float) -> int:
    """``k_i``: ``c_k sqrt(n)/eps^2 log(sqrt(n)/eps)`` in the cold regime,
    ``c_k (sqrt(nu)/sigma + 1) eps^{-2} log(n/eps)`` after it."""
    eps = cfg.epsilon
    if sigma_sq <= nu / n:
        k = cfg.c_k * math.sqrt(n) / eps ** 2 * math.log(math.sqrt(n) / eps)
    else:
        k = cfg.c_k * (math.sqrt(nu / sigma_sq) + 1.0) / eps ** 2 * math.log(n / eps)
    return max(int(math.ceil(k)), cfg.n_batches)


def schedule(cfg: CoolingConfig, n: int, nu: float | None = None) -> list[tuple[float, int]]:
    """Phases ``(sigma_i^2, k_i)``; the last entry is the first one above the cap."""
    if nu is None:
        nu = cfg.nu
    if nu is None:
        raise ValueError("nu is required (set CoolingConfig.nu or pass it)")
    sig = initial_sigma_sq(cfg, n)
    cap = sigma_cap(cfg, n, nu)
    out = [(sig, phase_samples(cfg, n, nu, sig))]
    while sig <= cap:
        if len(out) >= cfg.max_phases:
            raise ScheduleError(f"schedule needs more than max_phases={cfg.max_phases} phases")
        sig = next_sigma_sq(sig, n, nu)
        out.append((sig, phase_samples(cfg, n, nu, sig)))
    return out


# ---------------------------------------------------------------------------
# estimator algebra

def log_ratio(phi_values, alpha_from: float, alpha_to: float, weights=None,
              shift: float = 0.0) -> float:
    """``log E[exp((alpha_from - alpha_to) (phi - shift))]`` over the given values.

    ``weights`` (normalized or not) replace the uniform sample average, which
    lets quadrature nodes stand in for MCMC samples.
    """
    z = (alpha_from - alpha_to) * (np.asarray(phi_values, dtype=float) - shift)
    if weights is None:
        return float(logsumexp(z) - math.log(z.size))
    wts = np.asarray(weights, dtype=float)
    return float(logsumexp(z, b=wts) - math.log(wts.sum()))


def telescope(log_z0: float, alphas, log_ratios, shift: float = 0.0) -> float:
    """``log Z(alpha_end)`` from ``log Z(alphas[0])`` and the shifted phase log-ratios.

    ``alphas`` has one more entry than ``log_ratios``; each ratio was computed
    with ``phi - shift``, which is undone here.
    """
    alphas = np.asarray(alphas, dtype=float)
    if len(alphas) != len(log_ratios) + 1:
        raise ValueError("need len(alphas) == len(log_ratios) + 1")
    return float(log_z0 + np.sum(log_ratios) + (alphas[0] - alphas[-1]) * shift)


def laplace_log_integral(params: BarrierParams, state: MetricState | None = None,
                         correction: bool = True) -> tuple[float, MetricState, float]:
    """Laplace approximation of ``log int exp(-alpha phi)``.

    With ``f = alpha phi`` minimized at ``x*`` and ``H = alpha g``,

        Z ~ exp(-f*) (2 pi)^{n/2} det(H)^{-1/2} (1 + C/alpha),
        C = -1/8 phi4_ijkl g^ij g^kl + 1/8 phi3_ijk phi3_lmn g^ij g^kl g^mn
            + 1/12 phi3_ijk phi3_lmn g^il g^jm g^kn,

    where third derivatives of phi are the analytic ``Dg`` and fourth
    derivatives are central differences of it. Returns ``(log Z, state, C)``.
    """
    a = params.alpha
    if not a > 0:
        raise ValueError("Laplace approximation needs alpha > 0")
    st = state if state is not None else minimize_phi(params)
    n = params.n
    log_z = -a * st.phi + 0.5 * n * math.log(2.0 * math.pi / a) - 0.5 * st.logdet_g
    if not correction:
        return log_z, st, 0.0
    f3 = st.dg_basis
    h = fd_step(st, safety=1.0)
    f4 = np.empty((n, n, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        f4[k] = (metric(params, st.x + e, st.lewis.w).dg_basis
                 - metric(params, st.x - e, st.lewis.w).dg_basis) / (2.0 * h)
    f4 = 0.5 * (f4 + f4.transpose(1, 0, 2, 3))
    Hi = st.g_inv
    C = (-np.einsum("ijkl,ij,kl->", f4, Hi, Hi) / 8.0
         + np.einsum("ijk,lmn,ij,kl,mn->", f3, f3, Hi, Hi, Hi) / 8.0
         + np.einsum("ijk,lmn,il,jm,kn->", f3, f3, Hi, Hi, Hi) / 12.0)
    if C / a <= -0.5:
        raise ValueError(f"alpha={a} is too small for the Laplace correction (C={C:.3g})")
    return log_z + math.log1p(C / a), st, float(C)


# ---------------------------------------------------------------------------
# driver

@dataclass
class PhaseRecord:
    index: int
    sigma_sq: float
    alpha: float
    alpha_next: float
    k: int
    log_ratio: float
    rel_se: float
    acceptance_rate: float
    start_x: list
    runtime_s: float


@dataclass
class CoolingTrace:
    config: dict
    chain_config: dict
    polytope: str
    n: int
    nu: float
    log_z0: float
    laplace_correction: float
    phases: list = field(default_factory=list)
    log_volume: float = math.nan
    volume: float = math.nan
    std_error: float = math.nan
    ci95: tuple = (math.nan, math.nan)
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _batch_log_ratios(z: np.ndarray, B: int) -> np.ndarray:
    """Leave-one-batch-out log-means of ``exp(z)``, one per contiguous batch."""
    idx = np.array_split(np.arange(z.size), B)
    out = np.empty(B)
    for b in range(B):
        keep = np.concatenate([idx[j] for j in range(B) if j != b])
        out[b] = logsumexp(z[keep]) - math.log(keep.size)
    return out


def _phase_phi(params: BarrierParams, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    w = None
    for i, x in enumerate(X):
        st = metric(params, x, w)
        w = st.lewis.w
        out[i] = st.phi
    return out


def estimate_volume(cfg: CoolingConfig, P: Polytope, chain_cfg: ChainConfig | None = None,
                    progress=None) -> CoolingTrace:
    """Volume of ``P`` by Gaussian cooling plus a Laplace base integral.

    Phase ``i`` draws ``k_i`` samples at ``alpha_i`` starting from the previous
    phase's final state (the first phase starts at the minimizer of phi).
    Batches of contiguous samples give a jackknife standard error.
    """
    t0 = time.perf_counter()
    chain_cfg = chain_cfg or ChainConfig()
    base = chain_cfg.barrier(P)
    nu = cfg.nu if cfg.nu is not None else base.alpha0 * P.n
    phases = schedule(cfg, P.n, nu)
    alphas = [1.0 / s for s, _ in phases] + [0.0]

    p0 = base.with_alpha(alphas[0])
    log_z0, st0, C = laplace_log_integral(p0)
    shift = st0.phi
    trace = CoolingTrace(config=asdict(cfg), chain_config=asdict(chain_cfg),
                         polytope=P.name, n=P.n, nu=nu, log_z0=log_z0, laplace_correction=C)
    B = cfg.n_batches
    x = st0.x
    ratios = []
    jack = np.zeros(B)
    for i, (sig, k) in enumerate(phases):
        ti = time.perf_counter()
        a, a_next = alphas[i], alphas[i + 1]
        ccfg = replace(chain_cfg, alpha=a, n_samples=k, seed=cfg.seed, chain_index=i)
        X, stats = run_chain(ccfg, P, x0=x)
        z = (a - a_next) * (_phase_phi(base, X) - shift)
        lr = float(logsumexp(z) - math.log(z.size))
        loo = _batch_log_ratios(z, B)
        # relative SE of the ratio from batch means
        bm = np.array([np.mean(np.exp(zb - lr)) for zb in np.array_split(z, B)])
        rel_se = float(np.std(bm, ddof=1) / math.sqrt(B))
        trace.phases.append(PhaseRecord(i, sig, a, a_next, k, lr, rel_se,
                                        float(stats.acceptance_rate), list(map(float, x)),
                                        time.perf_counter() - ti))
        if progress is not None:
            progress(trace.phases[-1])
        if rel_se > cfg.max_rel_se:
            raise PhaseVarianceError(
                f"phase {i} (alpha={a:.4g}) ratio has relative SE {rel_se:.3f} > "
                f"{cfg.max_rel_se}; increase c_k")
        ratios.append(lr)
        jack += loo
        x = np.asarray(stats.extra["final_x"])
    log_vol = telescope(log_z0, alphas, ratios, shift)
    jack_vals = log_z0 + jack + (alphas[0] - alphas[-1]) * shift
    se_log = math.sqrt((B - 1) / B * float(np.sum((jack_vals - jack_vals.mean()) ** 2)))
    trace.log_volume = log_vol
    trace.volume = math.exp(log_vol)
    trace.std_error = trace.volume * se_log
    trace.ci95 = (math.exp(log_vol - 1.96 * se_log), math.exp(log_vol + 1.96 * se_log))
    trace.runtime_s = time.perf_counter() - t0
    return trace


def sample_anneal(cfg: CoolingConfig, P: Polytope, chain_cfg: ChainConfig,
                  alpha_target: float, return_trace: bool = False):
    """Sample ``exp(-alpha_target phi)`` by walking the schedule from the minimizer.

    Each intermediate phase runs only its burn-in and hands its final state on;
    the last phase at ``alpha_target`` returns ``chain_cfg.n_samples`` draws.
    """
    if alpha_target < 0:
        raise ValueError("alpha_target must be nonnegative")
    base = chain_cfg.barrier(P)
    nu = cfg.nu if cfg.nu is not None else base.alpha0 * P.n
    alphas = [1.0 / s for s, _ in schedule(cfg, P.n, nu)]
    alphas = [a for a in alphas if a > alpha_target]
    x = minimize_phi(base).x
    starts = []
    for i, a in enumerate(alphas):
        starts.append(x.copy())
        ccfg = replace(chain_cfg, alpha=a, n_samples=0, seed=cfg.seed, chain_index=i)
        _, stats = run_chain(ccfg, P, x0=x)
        x = np.asarray(stats.extra["final_x"])
    starts.append(x.copy())
    ccfg = replace(chain_cfg, alpha=alpha_target, seed=cfg.seed, chain_index=len(alphas))
    X, stats = run_chain(ccfg, P, x0=x)
    if return_trace:
        return X, stats, starts
    return X
