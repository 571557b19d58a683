import logging
from dataclasses import dataclass, field, replace

import numpy as np

from constants import (DEFAULT_KAPPA, DEFAULT_MU, DEFAULT_Q_MIN, DEFAULT_Q_RATIO,
                       DEFAULT_RHO, DEFAULT_RHO_ABS)
from errors import (DomainError, FunnelViolationError, ParameterError,
                    TubeViolationError)
from tubes import Funnel, TubeParams, synthesize_stt
from workspace import ra_task_of_triplet

logger = logging.getLogger(__name__)


# ----------------------------------------
# Configuration
# ----------------------------------------
@dataclass(frozen=True)
class FunnelPolicy:
    """How stage funnels are anchored on the tracking error measured at a switch."""
    q_ratio: float = DEFAULT_Q_RATIO
    q_min: float = DEFAULT_Q_MIN
    mu: float = DEFAULT_MU
    rho: float = DEFAULT_RHO
    rho_abs: float = DEFAULT_RHO_ABS

    def __post_init__(self):
        if not (self.q_ratio > 0 and self.q_min > 0 and self.mu > 0 and self.rho >= 0 and self.rho_abs > 0):
            raise ParameterError(f"invalid funnel policy {self}")

    def anchor(self, error):
        """Per-dimension funnels whose initial half-width strictly covers |error|."""
        funnels = []
        for err in np.abs(np.asarray(error, dtype=float)):
            p_raw = err * (1.0 + self.rho) + self.rho_abs
            q = max(self.q_ratio * p_raw, self.q_min)
            funnels.append(Funnel(max(p_raw, q), q, self.mu))
        return tuple(funnels)


@dataclass(frozen=True)
class StageConfig:
    kappa: tuple  # one entry per stage: scalar or per-dimension tuple
    stage_count: int
    dimension: int
    funnel: FunnelPolicy = field(default_factory=FunnelPolicy)

    def __post_init__(self):
        if self.stage_count < 1 or self.dimension < 1:
            raise ParameterError(f"stage count and dimension must be positive ({self.stage_count}, {self.dimension})")
        if len(self.kappa) != self.stage_count:
            raise ParameterError(f"expected {self.stage_count} gains, got {len(self.kappa)}")
        for k in range(1, self.stage_count + 1):
            gains = self.gain(k)
            if gains.shape != (self.dimension,) or np.any(gains <= 0):
                raise ParameterError(f"stage {k} gain must be positive (scalar or length {self.dimension})")

    def gain(self, k):
        """Per-dimension gain vector of stage k (1-based)."""
        g = np.asarray(self.kappa[k - 1], dtype=float)
        return np.full(self.dimension, float(g)) if g.ndim == 0 else g

    @classmethod
    def from_dict(cls, block, stage_count, dimension):
        block = dict(block or {})
        kappa = block.get("kappa", DEFAULT_KAPPA)
        if not isinstance(kappa, list):
            kappa = [kappa] * stage_count
        kappa = tuple(tuple(k) if isinstance(k, list) else float(k) for k in kappa)
        return cls(kappa, stage_count, dimension, FunnelPolicy(**block.get("funnel", {})))


# ----------------------------------------
# Stage recursion
# ----------------------------------------
@dataclass(frozen=True)
class StageFrame:
    stage: int
    reference: np.ndarray  # tube midpoint for stage 1, r_k otherwise
    e: np.ndarray
    eps: np.ndarray
    xi: np.ndarray
    output: np.ndarray


def normalized_error_stage1(x1, lower, upper, t=None):
    x1, lower, upper = (np.asarray(v, dtype=float) for v in (x1, lower, upper))
    if np.any(upper <= lower):
        raise ParameterError(f"degenerate tube bounds {lower.tolist()}..{upper.tolist()}")
    e = (2.0 * x1 - upper - lower) / (upper - lower)
    bad = np.flatnonzero(np.abs(e) >= 1.0)
    if bad.size:
        i = int(bad[0])
        raise TubeViolationError(f"output leaves the tube in dimension {i} (e={e[i]:.6f})",
                                 stage=1, dimension=i, time=t, value=float(e[i]))
    return e


def normalized_error_stagek(xk, reference, halfwidths, stage=2, t=None):
    xk, reference, halfwidths = (np.asarray(v, dtype=float) for v in (xk, reference, halfwidths))
    if np.any(halfwidths <= 0):
        raise ParameterError(f"funnel half-widths must be positive, got {halfwidths.tolist()}")
    e = (xk - reference) / halfwidths
    bad = np.flatnonzero(np.abs(e) >= 1.0)
    if bad.size:
        i = int(bad[0])
        raise FunnelViolationError(f"stage {stage} leaves its funnel in dimension {i} (e={e[i]:.6f})",
                                   stage=stage, dimension=i, time=t, value=float(e[i]))
    return e


def _check_domain(e):
    e = np.asarray(e, dtype=float)
    if np.any(np.abs(e) >= 1.0):
        raise DomainError(f"normalized error outside (-1, 1): {e.tolist()}")
    return e


def transform_error(e):
    e = _check_domain(e)
    return np.log((1.0 + e) / (1.0 - e))


def gain_matrix(e, widths):
    e = _check_domain(e)
    widths = np.asarray(widths, dtype=float)
    if np.any(widths <= 0):
        raise DomainError(f"gain widths must be positive, got {widths.tolist()}")
    return np.diag(4.0 / (widths * (1.0 - e * e)))


def stage_control(eps, xi, kappa):
    return -np.asarray(kappa, dtype=float) * np.diag(xi) * np.asarray(eps, dtype=float)


def _frame(stage, reference, e, widths, kappa):
    eps = transform_error(e)
    xi = gain_matrix(e, widths)
    return StageFrame(stage, reference, e, eps, xi, stage_control(eps, xi, kappa))


def _stages(xbar, cfg):
    x = np.asarray(xbar, dtype=float).reshape(cfg.stage_count, cfg.dimension)
    return [x[k] for k in range(cfg.stage_count)]


# ----------------------------------------
# Hybrid state
# ----------------------------------------
@dataclass
class HybridState:
    switcher_state: object  # initial automaton state or triplet state tuple
    triplet_index: int
    active_tube: object
    switch_time: float
    funnels: tuple = ()  # stages 2..N, each a tuple of per-dimension Funnel


def compute_control(xbar, t, hs, cfg):
    """
    Closed-form input for the full state at time t. Returns (u, frames).
    Only the measured state, the active tube and the stage funnels enter the law.
    """
    xs = _stages(xbar, cfg)
    tau = t - hs.switch_time
    lower, upper = hs.active_tube.bounds_at(tau)
    e1 = normalized_error_stage1(xs[0], lower, upper, t)
    frames = [_frame(1, (lower + upper) / 2.0, e1, upper - lower, cfg.gain(1))]

    for k in range(2, cfg.stage_count + 1):
        r = frames[-1].output
        halfwidths = np.array([f(tau) for f in hs.funnels[k - 2]])
        ek = normalized_error_stagek(xs[k - 1], r, halfwidths, k, t)
        frames.append(_frame(k, r, ek, halfwidths, cfg.gain(k)))
    return frames[-1].output, frames


def anchor_funnels(xbar, tube, cfg):
    """Funnels for stages 2..N from the tracking errors at local time 0 of `tube`."""
    xs = _stages(xbar, cfg)
    lower, upper = tube.bounds_at(0.0)
    e1 = normalized_error_stage1(xs[0], lower, upper)
    r = _frame(1, (lower + upper) / 2.0, e1, upper - lower, cfg.gain(1)).output
    funnels = []
    for k in range(2, cfg.stage_count + 1):
        stage_funnels = cfg.funnel.anchor(xs[k - 1] - r)
        funnels.append(stage_funnels)
        halfwidths = np.array([f.p for f in stage_funnels])
        ek = normalized_error_stagek(xs[k - 1], r, halfwidths, k)
        r = _frame(k, r, ek, halfwidths, cfg.gain(k)).output
    return tuple(funnels)


class HybridController:
    """
    Switching policy over the triplet chain: one tube-following controller per
    reach-avoid task, with the clock reset and a new tube synthesized whenever
    the output reaches the current target.
    """

    def __init__(self, switcher, workspace, stage_config, tube_params=None, tube_overrides=None):
        if workspace.dimension != stage_config.dimension:
            raise ParameterError(f"workspace dimension {workspace.dimension} does not match "
                                 f"controller dimension {stage_config.dimension}")
        self.switcher = switcher
        self.workspace = workspace
        self.config = stage_config
        self.tube_params = tube_params or TubeParams()
        self.tube_overrides = dict(tube_overrides or {})
        self.tasks = {t.states: ra_task_of_triplet(t, workspace) for t in switcher.distinct_triplets()}

    def task_of(self, index):
        return self.tasks[self.switcher.triplets[index].states]

    def params_of(self, index):
        return self.tube_overrides.get(self.switcher.triplets[index].name(), self.tube_params)

    def _enter(self, index, xbar, t):
        y = _stages(xbar, self.config)[0]
        tube = synthesize_stt(self.task_of(index), y, self.params_of(index))
        funnels = anchor_funnels(xbar, tube, self.config)
        return HybridState(self.switcher.triplets[index].states, index, tube, float(t), funnels)

    def initialize(self, xbar, t0=0.0):
        hs = self._enter(0, xbar, t0)
        logger.info(f"Controller starts on triplet ({self.switcher.triplets[0].name()}) at t={t0:.3f}")
        return hs

    def step(self, hs, xbar, t):
        """
        One evaluation of the switching policy. Returns (u, state, event, frames);
        `event` is None unless the guard fired.
        """
        y = _stages(xbar, self.config)[0]
        index = hs.triplet_index
        event = None
        core = self.params_of(index).switch_core
        if self.task_of(index).in_target(y, core):
            nxt = self.switcher.next_index(index)
            hs = self._enter(nxt, xbar, t)
            event = {"time": float(t), "from_index": index, "to_index": nxt,
                     "triplet": self.switcher.triplets[nxt].name(),
                     "label": self.switcher.triplets[index].label_out, "entry": y.tolist()}
            logger.info(f"Switch at t={t:.3f}: ({self.switcher.triplets[index].name()}) -> "
                        f"({self.switcher.triplets[nxt].name()})")
        u, frames = compute_control(xbar, t, hs, self.config)
        return u, hs, event, frames


def hybrid_step(hs, xbar, t, controller):
    return controller.step(hs, xbar, t)


def with_kappa(cfg, stage, kappa):
    """Copy of `cfg` with the gain of one stage replaced."""
    gains = list(cfg.kappa)
    gains[stage - 1] = kappa
    return replace(cfg, kappa=tuple(gains))
