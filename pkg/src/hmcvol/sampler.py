"""RHMC Markov chain on the hybrid-barrier manifold, plus chain diagnostics."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .barrier import BarrierParams, MetricState, default_p, metric
from .dynamics import PhaseState, integrate
from .polytope import Polytope, find_interior_point, membership


@dataclass
class ChainConfig:
    """Tunables of one RHMC chain.

    ``c=None`` means ``4 sqrt(log m)``; ``delta_scale`` stretches the
    scheduled trajectory time; ``n_burnin=None`` means
    ``10 * ceil(1/delta^2)`` capped at 1e5; ``p=None`` means ``4 - 1/log m``.
    ``max_step`` raises the ODE step count so no step exceeds it; ``anderson``
    is the memory of the accelerated midpoint solve (0 = plain iteration).
    """

    p: float | None = None
    alpha: float = 0.0
    c: float | None = None
    delta_override: float | None = None
    delta_scale: float = 1.0
    n_ode_steps: int = 16
    max_step: float | None = None
    metropolis: bool = True
    seed: int = 0
    n_samples: int = 1000
    n_burnin: int | None = None
    thinning: int = 1
    tol_fp: float = 1e-10
    max_fp_iter: int = 50
    anderson: int = 3
    chain_index: int = 0

    def __post_init__(self):
        if self.c is not None and self.c < 1:
            raise ValueError(f"c must be >= 1, got {self.c}")
        for name in ("n_samples", "thinning", "n_ode_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n_burnin is not None and self.n_burnin < 0:
            raise ValueError("n_burnin must be nonnegative")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.anderson < 0:
            raise ValueError("anderson must be nonnegative")
        if not self.delta_scale > 0:
            raise ValueError("delta_scale must be positive")
        if self.delta_override is not None and self.delta_override < 0:
            raise ValueError("delta_override must be nonnegative")

    def ode_steps(self, delta: float) -> int:
        k = self.n_ode_steps
        if self.max_step is not None and delta > 0:
            k = max(k, math.ceil(delta / self.max_step))
        return k

    def niceness(self, m: int) -> float:
        return self.c if self.c is not None else 4.0 * math.sqrt(math.log(max(m, 2)))

    def barrier(self, P: Polytope) -> BarrierParams:
        return BarrierParams(P, default_p(P.m) if self.p is None else float(self.p), self.alpha)


@dataclass
class ChainStats:
    n_samples: int
    mean: list
    second_moment: list
    ess: list
    ess_second_moment: list
    mean_se: list
    second_moment_se: list
    acceptance_rate: float | None = None
    n_proposals: int = 0
    n_accepted: int = 0
    n_integrator_rejections: int = 0
    mean_energy_error: float | None = None
    max_sv_inf: float | None = None
    nice_violation_fraction: float | None = None
    delta: float | None = None
    c: float | None = None
    alpha: float | None = None
    runtime_s: float | None = None
    ks_statistics: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def step_size(cfg: ChainConfig, m: int, n: int, alpha0: float | None = None) -> float:
    """Trajectory length ``(1/c) min{n^{-1/3}, (n^{1/3}(a sqrt(a0))^{1/3})^{-1},
    (a^{1/2} a0^{1/4} n^{1/4})^{-1}}``; ``delta_override`` wins when set.

    ``alpha0`` defaults to ``(m/n)^{(2/p)/(1+2/p)}`` with the chain's ``p``.
    ``delta_scale`` multiplies the scheduled value (not the override).
    """
    if cfg.delta_override is not None:
        return float(cfg.delta_override)
    if alpha0 is None:
        q = 2.0 / (default_p(m) if cfg.p is None else cfg.p)
        alpha0 = (m / n) ** (q / (1.0 + q))
    c = cfg.niceness(m)
    a = cfg.alpha
    terms = [n ** (-1.0 / 3.0)]
    if a > 0:
        terms.append(1.0 / (n ** (1.0 / 3.0) * (a * math.sqrt(alpha0)) ** (1.0 / 3.0)))
        terms.append(1.0 / (a ** 0.5 * alpha0 ** 0.25 * n ** 0.25))
    delta = min(terms) / c
    return delta if cfg.delta_scale == 1.0 else delta * cfg.delta_scale


def make_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """Counter-based Philox stream; chain ``k`` uses spawn key ``(k,)`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(chain_index),))
    return np.random.Generator(np.random.Philox(ss))


def refresh_momentum(state: MetricState, rng: np.random.Generator) -> np.ndarray:
    """Velocity draw ``L^{-T} z`` with ``g = L L^T``; its covariance is ``g^{-1}``."""
    z = rng.standard_normal(state.g.shape[0])
    return np.linalg.solve(state.g_chol.T, z)


@dataclass(frozen=True, eq=False)
class StepInfo:
    accepted: bool
    delta_H: float
    sv_inf: float
    integrator_rejected: bool
    energy_start: float
    energy_end: float


def rhmc_step(params: BarrierParams, cfg: ChainConfig, delta: float, state: MetricState,
              rng: np.random.Generator) -> tuple[MetricState, StepInfo]:
    """One RHMC transition from ``state``.

    Randomness per step, in order: ``n`` standard normals for the velocity,
    then one uniform for the accept test (drawn even without the filter).
    The canonical momentum is ``g u`` for the velocity ``u ~ N(0, g^{-1})``.
    """
    n = state.g.shape[0]
    z = rng.standard_normal(n)
    u_acc = rng.random()
    velocity = np.linalg.solve(state.g_chol.T, z)
    sv_inf = float(np.max(np.abs(state.A_x @ velocity)))
    momentum = state.g_chol @ z
    res = integrate(params, PhaseState(state.x, momentum), delta, cfg.ode_steps(delta),
                    tol_fp=cfg.tol_fp, max_fp_iter=cfg.max_fp_iter, start_state=state,
                    compiled=state.compiled, anderson=cfg.anderson if state.compiled else 0)
    if res.rejected:
        return state, StepInfo(False, math.inf, sv_inf, True, res.energy_start, res.energy_end)
    dH = res.energy_end - res.energy_start
    if cfg.metropolis:
        accept = dH <= 0 or math.log(u_acc) < -dH
    else:
        accept = True
    new_state = res.end_state if accept else state
    return new_state, StepInfo(accept, dH, sv_inf, False, res.energy_start, res.energy_end)


def run_chain(cfg: ChainConfig, P: Polytope, x0=None, box: tuple | None = None,
              record_energy: bool = False):
    """Run burn-in then ``n_samples * thinning`` transitions; return (samples, stats)."""
    t0 = time.perf_counter()
    params = cfg.barrier(P)
    if x0 is None:
        x0 = find_interior_point(P).x
    state = metric(params, x0)
    delta = step_size(cfg, P.m, P.n, params.alpha0)
    n_burnin = cfg.n_burnin
    if n_burnin is None:
        n_burnin = 0 if delta == 0 else min(10 * math.ceil(1.0 / delta ** 2), 100_000)
    rng = make_rng(cfg.seed, cfg.chain_index)
    c = cfg.niceness(P.m)

    samples = np.empty((cfg.n_samples, P.n))
    n_acc = n_prop = n_int = n_violate = 0
    abs_dH = []
    energies = []
    max_sv = 0.0
    total = n_burnin + cfg.n_samples * cfg.thinning
    k = 0
    for it in range(total):
        state, info = rhmc_step(params, cfg, delta, state, rng)
        n_prop += 1
        n_acc += info.accepted
        n_int += info.integrator_rejected
        n_violate += info.sv_inf > c
        max_sv = max(max_sv, info.sv_inf)
        if not info.integrator_rejected:
            abs_dH.append(abs(info.delta_H))
        if record_energy:
            energies.append((info.energy_start, info.energy_end, info.accepted))
        if it >= n_burnin and (it - n_burnin + 1) % cfg.thinning == 0:
            samples[k] = state.x
            k += 1
    stats_ = diagnostics(samples, box=box) if cfg.n_samples >= 2 else _empty_stats(P.n)
    stats_.acceptance_rate = n_acc / n_prop if n_prop else 1.0
    stats_.n_proposals = n_prop
    stats_.n_accepted = n_acc
    stats_.n_integrator_rejections = n_int
    stats_.mean_energy_error = float(np.mean(abs_dH)) if abs_dH else 0.0
    stats_.max_sv_inf = max_sv
    stats_.nice_violation_fraction = n_violate / n_prop if n_prop else 0.0
    stats_.delta = delta
    stats_.c = c
    stats_.alpha = cfg.alpha
    stats_.runtime_s = time.perf_counter() - t0
    stats_.extra["n_burnin"] = n_burnin
    stats_.extra["final_x"] = state.x.tolist()
    if record_energy:
        stats_.extra["energies"] = energies
    assert all(membership(P, x) for x in samples)
    return samples, stats_


def _empty_stats(n: int) -> ChainStats:
    nan = [math.nan] * n
    return ChainStats(0, nan, nan, nan, nan, nan, nan)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation of a 1-D series via FFT."""
    x = np.asarray(x, dtype=float)
    N = len(x)
    xc = x - x.mean()
    size = 1 << (2 * N - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:N]
    if acov[0] <= 0:
        return np.ones(N)
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """Geyer's initial positive (monotone) sequence estimator."""
    x = np.asarray(x, dtype=float)
    N = len(x)
    if N < 2:
        raise ValueError("need at least 2 samples")
    if np.ptp(x) == 0:
        return 1.0
    rho = autocorrelation(x)
    tau = -1.0
    prev = math.inf
    for k in range(0, N - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    tau = max(tau, 1.0 / math.log10(max(N, 10)))
    return float(N / tau)


def diagnostics(samples, box: tuple | None = None) -> ChainStats:
    """Moments, ESS and standard errors per coordinate.

    ``box=(lower, upper)`` adds Kolmogorov-Smirnov statistics of each marginal
    against the uniform distribution on that interval.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N, n = X.shape
    if N < 2:
        raise ValueError("need at least 2 samples")
    mean = X.mean(axis=0)
    sec = (X ** 2).mean(axis=0)
    ess = [effective_sample_size(X[:, j]) for j in range(n)]
    ess2 = [effective_sample_size(X[:, j] ** 2) for j in range(n)]
    sd = X.std(axis=0, ddof=1)
    sd2 = (X ** 2).std(axis=0, ddof=1)
    mean_se = sd / np.sqrt(ess)
    sec_se = sd2 / np.sqrt(ess2)
    ks = None
    if box is not None:
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in box)
        ks = [float(stats.kstest(X[:, j], "uniform", args=(lo[j], hi[j] - lo[j])).statistic)
              for j in range(n)]
    return ChainStats(N, mean.tolist(), sec.tolist(), ess, ess2, mean_se.tolist(),
                      sec_se.tolist(), ks_statistics=ks)
