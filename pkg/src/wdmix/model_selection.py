"""Automatic choice of the number of components by message-length descent.

A mixture is started with many components and trimmed by a component-wise
EM: after each component's expectation pass its proportion is recomputed
with a minimum-support threshold, components whose support falls below half
their parameter count are annihilated, and once the message length
stabilises the weakest surviving component is removed by force.  The model
with the shortest message length over all stages wins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import em_fixed, em_weighted
from .core import (
    AnnihilationEvent,
    CovarianceShape,
    Dataset,
    FitReport,
    GaussianComponent,
    MixtureModel,
    Responsibilities,
    WeightMode,
    WeightState,
    as_dataset,
    floored_covariance,
)
from .densities import mahalanobis_sq, normalize_log_responsibilities
from .errors import AllAnnihilated, DimensionMismatch, EmptyInput, NoActiveComponents
from .initialization import (
    kmeans,
    knn_kernel_weights,
    model_from_labels,
    pipeline_gamma_priors,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MmlConfig:
    """Knobs for the selection run.

    ``epsilon`` is the relative message-length change that ends a stage;
    ``max_outer_iter`` caps the total number of component-wise sweeps across
    the whole run.  ``assignment_rates`` picks which gamma rates feed the
    assignment step: "carried" reuses the rates produced by the latest
    weight-posterior step, "prior" always uses the initial priors.
    """

    k_high: int
    k_low: int = 1
    epsilon: float = 1e-5
    max_outer_iter: int = 2000
    weight_mode: WeightMode = WeightMode.RANDOM
    assignment_rates: str = "carried"

    def __post_init__(self):
        if not 1 <= self.k_low <= self.k_high:
            raise DimensionMismatch("need 1 <= k_low <= k_high")
        if self.epsilon < 0.0 or self.max_outer_iter < 0:
            raise DimensionMismatch("epsilon and max_outer_iter must be non-negative")
        if self.assignment_rates not in ("carried", "prior"):
            raise DimensionMismatch("assignment_rates must be 'carried' or 'prior'")
        mode = WeightMode(self.weight_mode)
        object.__setattr__(self, "weight_mode", mode)


@dataclass
class MmlState:
    """Mutable bookkeeping for one selection run (mostly for introspection)."""

    active: list
    message_length: float = np.inf
    best_length: float = np.inf
    best_model: MixtureModel | None = None
    best_weights: WeightState | None = None
    best_responsibilities: Responsibilities | None = None


def truncated_proportions(responsibility_sums, free_params: int) -> np.ndarray:
    """Proportion update with a minimum-support threshold.

    Each component's responsibility column sum is reduced by half its
    parameter count and clipped at zero before normalisation, so components
    whose support cannot pay for their own parameters receive exactly zero
    proportion.  Raises AllAnnihilated when every component is below the
    threshold.
    """
    s = np.asarray(responsibility_sums, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise EmptyInput("responsibility sums must be a non-empty vector")
    trimmed = np.maximum(0.0, s - 0.5 * free_params)
    total = float(trimmed.sum())
    if total <= 0.0:
        raise AllAnnihilated("every component fell below the minimum support")
    return trimmed / total


def message_length(data, model: MixtureModel, responsibilities: Responsibilities, weight_state: WeightState) -> float:
    """Two-part code length of the mixture given the current posteriors.

    Components with zero proportion are excluded everywhere.  The data part
    is the expected complete-data objective; the parameter part charges
    half the parameter count per surviving component at resolution n/12.
    """
    data = as_dataset(data)
    pis = model.proportions
    active = pis > 0.0
    kplus = int(np.count_nonzero(active))
    if kplus == 0:
        raise NoActiveComponents("model has no component with positive proportion")
    if responsibilities.k != model.n_components:
        raise DimensionMismatch("responsibilities do not match the model's component count")
    if weight_state.mode == WeightMode.FIXED:
        q_value = em_fixed.expected_complete_loglik(data, model, responsibilities, weight_state)
    else:
        q_value = em_weighted.expected_complete_loglik(data, model, responsibilities, weight_state)
    m = model.free_params_per_component
    n = data.n
    return (
        0.5 * m * float(np.sum(np.log(pis[active])))
        - q_value
        + 0.5 * kplus * (m + 1) * (1.0 + np.log(n / 12.0))
    )


class _SelectionEngine:
    """Shared caches for one selection run: one column per component."""

    def __init__(self, data, config, weights, covariance_shape, seed, initial_model, restarts, q, bandwidth):
        self.data = data
        self.cfg = config
        X = data.points
        self.X = X
        self.n, self.d = X.shape
        self.shape = CovarianceShape(covariance_shape)
        if initial_model is None:
            labels, _ = kmeans(X, config.k_high, restarts=restarts, seed=seed)
            initial_model = model_from_labels(X, labels, self.shape)
        self.k_total = initial_model.n_components
        self.m = initial_model.free_params_per_component
        if self.n <= config.k_high * self.m / 2.0:
            warnings.warn(
                f"only {self.n} points for k_high={config.k_high} components "
                f"({self.m} parameters each); selection may be unstable",
                stacklevel=3,
            )
        self.comps = list(initial_model.components)
        self.pis = np.array(initial_model.proportions, dtype=np.float64)
        self.active = [k for k in range(self.k_total) if self.pis[k] > 0.0]
        self.global_scale = float(np.trace(np.atleast_2d(np.cov(X.T, bias=True)))) / self.d
        self.maha = np.empty((self.n, self.k_total))
        self.log_dets = np.empty(self.k_total)
        for k in range(self.k_total):
            self._refresh_component(k)
        self.half = 0.5 * self.d

        if config.weight_mode == WeightMode.RANDOM:
            if weights is None:
                kernel = knn_kernel_weights(X, q=min(q, self.n - 1), bandwidth=bandwidth)
                alpha, beta = pipeline_gamma_priors(kernel)
            elif isinstance(weights, WeightState):
                alpha, beta = weights.prior_alpha, weights.prior_beta
            else:
                alpha, beta = (np.asarray(a, dtype=np.float64) for a in weights)
            self.prior_state = WeightState.random_prior(alpha, beta)
            self.alpha0 = self.prior_state.prior_alpha
            self.beta0 = self.prior_state.prior_beta
            self.post_a = self.alpha0 + self.half
            self.gl_prior = gammaln(self.alpha0 + self.half) - gammaln(self.alpha0)
            self.gl_post = gammaln(self.post_a + self.half) - gammaln(self.post_a)
            # Rates feeding the assignment step; start at the priors and are
            # overwritten by each weight-posterior step in "carried" mode.
            self.ez_b = np.tile(self.beta0[:, None], (1, self.k_total))
            self.carried_ready = False
        else:
            if weights is None:
                w = knn_kernel_weights(X, q=min(q, self.n - 1), bandwidth=bandwidth)
            elif isinstance(weights, WeightState):
                w = weights.fixed_w
            else:
                w = np.asarray(weights, dtype=np.float64)
            self.fixed_w = w
            self.log_w_half_d = 0.5 * self.d * np.log(w)

    # -- cache upkeep -----------------------------------------------------

    def _refresh_component(self, k: int) -> None:
        self.maha[:, k] = mahalanobis_sq(self.X, self.comps[k])
        self.log_dets[k] = self.comps[k].log_det

    # -- expectation pieces ----------------------------------------------

    def _assignment_eta(self, act: np.ndarray) -> np.ndarray:
        maha = self.maha[:, act]
        log_dets = self.log_dets[act]
        if self.cfg.weight_mode == WeightMode.FIXED:
            lp = (
                self.log_w_half_d[:, None]
                - self.half * _LOG_2PI
                - 0.5 * log_dets[None, :]
                - 0.5 * self.fixed_w[:, None] * maha
            )
        else:
            if self.cfg.assignment_rates == "carried" and self.carried_ready:
                aa, gl = self.post_a, self.gl_post
                bb = self.ez_b[:, act]
            else:
                aa, gl = self.alpha0, self.gl_prior
                bb = np.broadcast_to(self.beta0[:, None], maha.shape)
            lp = (
                gl[:, None]
                - 0.5 * log_dets[None, :]
                - self.half * (_LOG_2PI + np.log(bb))
                - (aa[:, None] + self.half) * np.log1p(maha / (2.0 * bb))
            )
        with np.errstate(divide="ignore"):
            log_pi = np.log(self.pis[act])
        return normalize_log_responsibilities(lp + log_pi[None, :])

    def _posterior_wbar(self, act: np.ndarray) -> np.ndarray:
        if self.cfg.weight_mode == WeightMode.FIXED:
            return np.broadcast_to(self.fixed_w[:, None], (self.n, act.size))
        return self.post_a[:, None] / (self.beta0[:, None] + 0.5 * self.maha[:, act])

    # -- one component-wise sweep ----------------------------------------

    def sweep(self, sweep_index: int, log: list) -> None:
        for k in list(self.active):
            act = np.array(self.active)
            eta = self._assignment_eta(act)
            if self.cfg.weight_mode == WeightMode.RANDOM:
                b_cur = self.beta0[:, None] + 0.5 * self.maha[:, act]
                wbar = self.post_a[:, None] / b_cur
                if self.cfg.assignment_rates == "carried":
                    self.ez_b[:, act] = b_cur
                    self.carried_ready = True
            else:
                wbar = np.broadcast_to(self.fixed_w[:, None], eta.shape)
            sums = eta.sum(axis=0)
            new_pis = truncated_proportions(sums, self.m)
            pos = self.active.index(k)
            old_pi = float(self.pis[k])
            self.pis[k] = new_pis[pos]
            if self.pis[k] > 0.0:
                omega = eta[:, pos] * wbar[:, pos]
                mu = omega @ self.X / omega.sum()
                diff = self.X - mu
                if self.shape == CovarianceShape.DIAGONAL:
                    cov = omega @ (diff * diff) / sums[pos]
                else:
                    cov = (diff * omega[:, None]).T @ diff / sums[pos]
                self.comps[k] = GaussianComponent(mu, floored_covariance(cov, self.global_scale))
                self._refresh_component(k)
            else:
                log.append(AnnihilationEvent(sweep_index, k, old_pi))
                self.active.remove(k)
                if not self.active:
                    raise AllAnnihilated("the final surviving component lost support")
            self._renormalize()

    def _renormalize(self) -> None:
        act = np.array(self.active)
        total = float(self.pis[act].sum())
        mask = np.ones(self.k_total, dtype=bool)
        mask[act] = False
        self.pis[mask] = 0.0
        self.pis[act] /= total

    # -- measurement ------------------------------------------------------

    def snapshot(self):
        """Active-components model plus matching posteriors, ready to report."""
        act = np.array(self.active)
        comps = tuple(self.comps[k] for k in act)
        pis = self.pis[act] / self.pis[act].sum()
        model = MixtureModel(comps, pis, self.shape)
        eta = Responsibilities(self._assignment_eta(act))
        if self.cfg.weight_mode == WeightMode.FIXED:
            ws = WeightState.fixed(self.fixed_w)
        else:
            b_cur = self.beta0[:, None] + 0.5 * self.maha[:, act]
            ws = self.prior_state.with_posterior(self.post_a, b_cur)
            ws = ws.with_marginal(np.sum(eta.matrix * ws.post_mean, axis=1))
        return model, eta, ws

    def measure(self) -> tuple:
        model, eta, ws = self.snapshot()
        return message_length(self.data, model, eta, ws), model, eta, ws


def select_model(
    data,
    config: MmlConfig,
    weights=None,
    covariance_shape=CovarianceShape.FULL,
    seed=None,
    initial_model=None,
    restarts: int = 10,
    q: int = 20,
    bandwidth: float = 100.0,
) -> FitReport:
    """Search component counts from ``k_high`` down to ``k_low``.

    ``weights`` may be ``None`` (kernel weights are computed from the data
    with ``q`` and ``bandwidth``), an ``(alpha, beta)`` pair for random
    mode, a plain vector for fixed mode, or a ready :class:`WeightState`.
    The report's objective trace holds the message length after every
    sweep; the returned model is the checkpoint with the shortest length.
    """
    data = as_dataset(data)
    engine = _SelectionEngine(
        data, config, weights, covariance_shape, seed, initial_model, restarts, q, bandwidth
    )
    state = MmlState(active=engine.active)
    trace: list[float] = []
    kplus_hist: list[int] = []
    checkpoint_lengths: list[float] = []
    ann_log: list[AnnihilationEvent] = []
    sweeps = 0
    converged = True
    stop = False

    while len(engine.active) >= config.k_low and not stop:
        len_prev = None
        while True:
            if sweeps >= config.max_outer_iter:
                converged = False
                stop = True
                break
            try:
                engine.sweep(sweeps, ann_log)
            except AllAnnihilated:
                if state.best_model is None:
                    raise
                converged = False
                stop = True
                break
            current, model, eta, ws = engine.measure()
            trace.append(current)
            kplus_hist.append(len(engine.active))
            sweeps += 1
            state.message_length = current
            if len_prev is not None and abs(current - len_prev) < config.epsilon * max(
                abs(len_prev), 1e-300
            ):
                break
            len_prev = current
        if stop:
            break
        checkpoint_lengths.append(current)
        if current < state.best_length:
            state.best_length = current
            state.best_model = model
            state.best_responsibilities = eta
            state.best_weights = ws
        if len(engine.active) > config.k_low:
            act = np.array(engine.active)
            k_star = int(act[int(np.argmin(engine.pis[act]))])
            ann_log.append(AnnihilationEvent(sweeps, k_star, float(engine.pis[k_star])))
            engine.active.remove(k_star)
            engine._renormalize()
        else:
            break

    if state.best_model is None:
        # Budget ran out before any stage converged; report the current state.
        length, model, eta, ws = engine.measure()
        state.best_length = length
        state.best_model = model
        state.best_responsibilities = eta
        state.best_weights = ws
        checkpoint_lengths.append(length)

    return FitReport(
        objective_trace=tuple(trace),
        final_model=state.best_model,
        final_responsibilities=state.best_responsibilities,
        final_weights=state.best_weights,
        iterations=sweeps,
        converged=converged,
        annihilation_log=tuple(ann_log),
        kplus_history=tuple(kplus_hist),
        checkpoint_lengths=tuple(checkpoint_lengths),
        best_length=state.best_length,
    )
