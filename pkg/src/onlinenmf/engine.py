"""Run orchestration for batch, exact-online and particle-online estimation."""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import exact, smc
from .params import B_FLOOR, StepSizeSchedule, ThetaParams

log = logging.getLogger(__name__)

ENGINES = ("exact", "smc")


@dataclass
class TraceEntry:
    t: int
    theta: ThetaParams
    stats: object = None
    loglik: float = None


@dataclass
class EstimateTrace:
    """Time-indexed parameter snapshots; ``t`` strictly increases."""

    entries: list = field(default_factory=list)

    def append(self, t, theta, stats=None, loglik=None):
        if self.entries and t <= self.entries[-1].t:
            raise ValueError(f"trace time {t} not after {self.entries[-1].t}")
        self.entries.append(TraceEntry(int(t), theta, stats, loglik))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def final(self):
        return self.entries[-1]

    def times(self):
        return np.array([e.t for e in self.entries], dtype=np.int64)

    def B_path(self):
        return np.stack([e.theta.B for e in self.entries])

    def psi_path(self):
        return np.array([e.theta.psi.as_tuple() for e in self.entries], dtype=np.float64)

    def logliks(self):
        return np.array([np.nan if e.loglik is None else e.loglik for e in self.entries])


@dataclass(frozen=True)
class OnlineConfig:
    engine: str = "exact"
    step_exponent: float = 0.8
    step_offset: int = 0
    burn_in: int = 100
    n_particles: int = 1000
    seed: int = 0
    estimate_B: bool = True
    estimate_psi: bool = True
    trace_every: int = 100
    record_stats: bool = False
    #: None resamples every step; otherwise resample when ESS < threshold * N
    ess_threshold: float = None
    functional_mode: str = "ancestral"
    warmup: int = 100

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.trace_every < 1:
            raise ValueError("trace_every must be positive")
        if self.n_particles < 2:
            raise ValueError("need at least two particles")

    @property
    def schedule(self):
        return StepSizeSchedule(self.step_exponent, self.step_offset)


def init_theta(process, window, M, rng, B=None, psi=None):
    """Data-scaled random start.

    ``B`` entries are uniform on ``[0.5 b, 1.5 b]`` with ``b`` the mean count
    in ``window`` divided by ``K / 2``; ``psi`` defaults to the process's
    neutral parameters.  Either part can be fixed by passing it.
    """
    K = process.K
    if B is None:
        window = np.asarray(window, dtype=np.float64).reshape(-1, M)
        bbar = window.mean() / (K / 2.0) if window.size else 1.0
        bbar = max(bbar, B_FLOOR)
        B = rng.uniform(0.5 * bbar, 1.5 * bbar, size=(M, K))
    if psi is None:
        psi = process.default_params()
    return ThetaParams(B, psi)


def _seed_streams(seed):
    init_ss, run_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(run_ss)


def run_online(stream, process, config=OnlineConfig(), theta_init=None, B_init=None, psi_init=None):
    """Single pass of online EM over ``stream`` (an iterable of count vectors).

    Returns an :class:`EstimateTrace` with the starting parameter at ``t = 0``,
    a snapshot of ``theta_{t+1}`` every ``trace_every`` steps and one for the
    last observation.
    """
    if config.engine == "exact" and not process.finite:
        raise exact.NotEnumerableError(f"exact engine needs a finite process, got {process!r}")
    rng_init, rng_run = _seed_streams(config.seed)
    it = iter(stream)
    if theta_init is None:
        window = []
        if B_init is None:
            window = [np.asarray(y, dtype=np.float64) for y in itertools.islice(it, config.warmup)]
            if not window:
                raise ValueError("cannot initialise B from an empty stream")
            M = window[0].shape[0]
        else:
            M = np.shape(B_init)[0]
        theta_init = init_theta(process, window, M, rng_init, B=B_init, psi=psi_init)
        it = itertools.chain(window, it)

    schedule = config.schedule
    if config.engine == "exact":
        state = exact.exact_online_init(process, theta_init)
        step = exact.exact_online_em_step
    else:
        state = smc.smc_online_init(process, theta_init, config.n_particles, rng_run,
                                    ess_threshold=config.ess_threshold,
                                    functional_mode=config.functional_mode)
        step = smc.smc_online_em_step

    trace = EstimateTrace()
    trace.append(0, theta_init)
    theta = theta_init
    last_recorded = 0
    for y in it:
        state, theta = step(process, state, y, schedule, config.burn_in,
                            config.estimate_B, config.estimate_psi)
        if state.t % config.trace_every == 0:
            trace.append(state.t, theta, state.stats if config.record_stats else None)
            last_recorded = state.t
    if state.t > last_recorded:
        trace.append(state.t, theta, state.stats if config.record_stats else None)
    log.info("online run finished at t=%d (%s engine)", state.t, config.engine)
    return trace


def run_batch(ys, process, iters=25, tol=0.0, seed=0, theta_init=None, B_init=None, psi_init=None,
              estimate_B=True, estimate_psi=True):
    """Batch EM; trace entry ``j`` holds ``theta^(j)`` and its log-likelihood.

    Stops after ``iters`` iterations or once an iteration changes the
    log-likelihood by less than ``tol``.
    """
    if not process.finite:
        raise exact.NotEnumerableError(f"batch EM needs a finite process, got {process!r}")
    ys = [np.asarray(y, dtype=np.float64) for y in ys]
    if theta_init is None:
        rng_init, _ = _seed_streams(seed)
        M = ys[0].shape[0] if ys else np.shape(B_init)[0]
        theta_init = init_theta(process, ys[:100], M, rng_init, B=B_init, psi=psi_init)

    trace = EstimateTrace()
    theta = theta_init
    ll = exact.marginal_loglik(process, theta, ys)
    for j in range(iters):
        new, ll_old = exact.batch_em_iteration(process, theta, ys, estimate_B, estimate_psi)
        trace.append(j, theta, loglik=ll_old)
        theta = new
        ll = exact.marginal_loglik(process, theta, ys)
        if abs(ll - ll_old) < tol:
            trace.append(j + 1, theta, loglik=ll)
            return trace
    trace.append(len(trace), theta, loglik=ll)
    return trace
