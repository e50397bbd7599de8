"""Monte-Carlo thermometry from heterodyne outcomes and Cramer-Rao checks.

Each trial draws ``nu`` outcomes from ``Q_t`` and inverts the Gaussian
family in closed form for the bath ``beta``.  Trial ``k`` uses its own Philox
stream keyed by ``(seed, k)``, so reports do not depend on execution order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .brownian import BrownianParams, default_half_width, delta_l2_closed, q_function, score, trajectory
from .errors import UnstableRegimeError
from .phase_space import DEFAULT_SPACING, PhaseGrid

RNG_ALGORITHM = "Philox-4x64 keyed by SeedSequence([seed, trial])"
MAX_REJECTED = 0.2


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


@dataclass(frozen=True)
class ExperimentConfig:
    params: BrownianParams = field(default_factory=BrownianParams)
    t: float = 10.0
    nu: int = 100
    trials: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.nu < 1:
            raise ValueError("nu must be >= 1")
        if self.trials < 100:
            raise ValueError("trials must be >= 100")
        if not self.t > 0:
            raise ValueError("probe time must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class EstimateReport:
    beta_true: float
    beta_hat_mean: float
    var_beta_hat: float
    crb_classical: float
    crb_quantum: float
    rejected_trials: int
    trials: int
    nu: int
    f_classical: float
    dl2: float
    rng: str = RNG_ALGORITHM

    @property
    def accepted(self) -> int:
        return self.trials - self.rejected_trials

    @property
    def slack(self) -> float:
        """Statistical allowance ``3 / sqrt(trials)``."""
        return 3.0 / math.sqrt(self.trials)

    @property
    def quantum_product(self) -> float:
        """``var * nu * dl2``; the quantum bound asserts this is at least one."""
        return self.var_beta_hat * self.nu * self.dl2

    def bias_in_se(self) -> float:
        se = math.sqrt(self.var_beta_hat / self.accepted)
        return (self.beta_hat_mean - self.beta_true) / se

    def quantum_bound_ok(self) -> bool:
        return self.quantum_product >= 1.0 - self.slack

    def ordering_ok(self) -> bool:
        return (self.crb_quantum <= self.crb_classical + 1e-12
                and self.crb_classical <= self.var_beta_hat * (1.0 + self.slack))

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(accepted=self.accepted, quantum_product=self.quantum_product,
                   quantum_bound_ok=self.quantum_bound_ok(), ordering_ok=self.ordering_ok())
        return out


def sample_outcomes(params: BrownianParams, t: float, nu: int, rng: np.random.Generator) -> np.ndarray:
    """``nu`` heterodyne outcomes ``alpha_t + u`` with ``Re u, Im u ~ N(0, (1 + nbar(t))/2)``."""
    if not t > 0:
        raise ValueError("probe time must be > 0")
    tp = trajectory(params, t)
    sd = math.sqrt(0.5 * (1.0 + tp.nbar_t))
    z = rng.standard_normal((2, int(nu)))
    return tp.alpha_t + sd * (z[0] + 1j * z[1])


def estimate_beta(samples, params: BrownianParams, t: float) -> float | None:
    """Closed-form MLE of ``beta``; ``None`` when the implied ``nbar_inf`` is not positive."""
    samples = np.atleast_1d(np.asarray(samples, dtype=complex))
    if samples.size < 1:
        raise ValueError("need at least one sample")
    tp = trajectory(params, t)
    e = math.exp(-params.gamma * t)
    sigma = float(np.mean(np.abs(samples - tp.alpha_t) ** 2))
    n_inf = (sigma - 1.0 - params.nbar0 * e) / (1.0 - e)
    if not n_inf > 0:
        return None
    return math.log1p(1.0 / n_inf) / params.omega0


def classical_fisher_grid(params: BrownianParams, t: float, spacing: float = DEFAULT_SPACING) -> float:
    """``sum w L^2 Q`` on the default grid around ``alpha_t``."""
    tp = trajectory(params, t)
    grid = PhaseGrid.square(tp.alpha_t, default_half_width(tp) + 2.0, spacing)
    sc = score(params, t, grid.points)
    return grid.integrate(sc**2 * q_function(params, t, grid.points))


def _report(beta_true, estimates, trials, nu, f_cl, dl2):
    good = np.array([b for b in estimates if b is not None], dtype=float)
    rejected = trials - good.size
    if rejected > MAX_REJECTED * trials:
        raise UnstableRegimeError(f"{rejected} of {trials} trials rejected (> {MAX_REJECTED:.0%})")
    return EstimateReport(
        beta_true=float(beta_true),
        beta_hat_mean=float(good.mean()),
        var_beta_hat=float(good.var(ddof=1)),
        crb_classical=1.0 / (nu * f_cl),
        crb_quantum=1.0 / (nu * dl2),
        rejected_trials=int(rejected),
        trials=int(trials),
        nu=int(nu),
        f_classical=float(f_cl),
        dl2=float(dl2),
    )


def run_experiment(config: ExperimentConfig) -> EstimateReport:
    p, t = config.params, config.t
    est = [estimate_beta(sample_outcomes(p, t, config.nu, trial_rng(config.seed, k)), p, t)
           for k in range(config.trials)]
    return _report(p.beta, est, config.trials, config.nu, classical_fisher_grid(p, t), delta_l2_closed(p, t))


def grid_experiment(q_of: Callable[[float], np.ndarray], grid: PhaseGrid, beta_true: float, dl2: float,
                    nu: int, trials: int, seed: int = 0, width: float | None = None,
                    n_beta: int = 401) -> EstimateReport:
    """Binned-outcome MLE for an arbitrary ``beta -> Q`` family tabulated on ``grid``.

    Outcomes are grid cells drawn with probability ``w Q / sum w Q``.  The
    log-likelihood is tabulated on ``n_beta`` points of
    ``beta_true +- width`` and refined by a parabola through the maximum;
    maxima on the table edge are rejections.
    """
    if width is None:
        width = min(0.5 * beta_true, 8.0 / math.sqrt(nu * dl2)) if dl2 > 0 else 0.5 * beta_true
    betas = np.linspace(beta_true - width, beta_true + width, n_beta)

    def probs(b):
        q = np.clip(q_of(b), 0.0, None)
        return q / q.sum()

    p_true = probs(beta_true)
    support = p_true > 0
    log_p = np.array([np.log(np.clip(probs(b)[support], 1e-300, None)) for b in betas])
    d = 1e-4 * beta_true
    dlog = (np.log(probs(beta_true - d)[support]) - np.log(probs(beta_true + d)[support])) / (2 * d)
    f_cl = float(np.sum(p_true[support] * dlog**2))
    step = betas[1] - betas[0]
    est = []
    for k in range(trials):
        counts = trial_rng(seed, k).multinomial(nu, p_true[support] / p_true[support].sum())
        ll = log_p @ counts
        j = int(np.argmax(ll))
        if j == 0 or j == n_beta - 1:
            est.append(None)
            continue
        den = ll[j - 1] - 2 * ll[j] + ll[j + 1]
        shift = 0.5 * (ll[j - 1] - ll[j + 1]) / den if den < 0 else 0.0
        est.append(betas[j] + shift * step)
    return _report(beta_true, est, trials, nu, f_cl, dl2)
