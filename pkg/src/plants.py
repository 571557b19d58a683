import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
import sympy

from constants import DEFAULT_DISTURBANCE_AMPLITUDE
from errors import (ConfigError, DomainError, NumericBlowupError, OutOfDomainError,
                    ParameterError, PreconditionError, SimulationAborted,
                    SynthesisError, ViolationError)

logger = logging.getLogger(__name__)


# ----------------------------------------
# Plant descriptors
# ----------------------------------------
@dataclass(frozen=True)
class PlantDescriptor:
    name: str
    stage_count: int
    dimension: int
    params: dict
    derivative: Callable  # (t, state, u, w) -> state derivative
    w_max: float = 0.0
    controllability_note: str = ""

    def __post_init__(self):
        if self.stage_count < 1 or self.dimension < 1:
            raise ConfigError(f"plant {self.name}: stage count and dimension must be positive")
        if self.w_max < 0:
            raise ConfigError(f"plant {self.name}: disturbance bound must be non-negative")

    @property
    def state_size(self):
        return self.stage_count * self.dimension

    def output_of(self, state):
        return np.asarray(state, dtype=float)[:self.dimension]


# ----------------------------------------
# 2R manipulator
# ----------------------------------------
MANIPULATOR_DEFAULTS = {"m": 1.0, "l": 1.0, "g": 9.81, "variant": "printed"}


def mass_matrix_2r(theta2, params):
    m, l = params["m"], params["l"]
    c2 = math.cos(theta2)
    lower_left = 1.0 / 3.0 + c2 / 2.0 if params.get("variant") == "symmetric" else c2 / 2.0
    return m * l * l * np.array([[5.0 / 3.0 + c2, 1.0 / 3.0 + c2 / 2.0],
                                 [lower_left, 1.0 / 3.0]])


def manipulator_2r_derivative(state, tau, d, params):
    """(theta, theta_dot) -> (theta_dot, theta_ddot) with M theta_ddot = tau + d - C - G."""
    theta1, theta2, dtheta1, dtheta2 = (float(v) for v in state)
    m, l, g = params["m"], params["l"], params["g"]
    s2 = math.sin(theta2)
    c1, c12 = math.cos(theta1), math.cos(theta1 + theta2)
    second = 0.5 * dtheta1 ** 2 if params.get("variant") == "symmetric" else 0.5 * dtheta2 ** 2
    coriolis = m * l * l * s2 * np.array([-0.5 * dtheta2 ** 2 - dtheta1 * dtheta2, second])
    gravity = m * g * l * np.array([1.5 * c1 + 0.5 * c12, 0.5 * c12])
    rhs = np.asarray(tau, dtype=float) + np.asarray(d, dtype=float) - coriolis - gravity
    accel = np.linalg.solve(mass_matrix_2r(theta2, params), rhs)
    return np.array([dtheta1, dtheta2, accel[0], accel[1]])


def gravity_torque_2r(theta, params):
    c1, c12 = math.cos(theta[0]), math.cos(theta[0] + theta[1])
    return params["m"] * params["g"] * params["l"] * np.array([1.5 * c1 + 0.5 * c12, 0.5 * c12])


def mechanical_energy_2r(state, params):
    """Kinetic plus potential energy of the symmetric-inertia model."""
    theta1, theta2, dtheta1, dtheta2 = (float(v) for v in state)
    qd = np.array([dtheta1, dtheta2])
    inertia = mass_matrix_2r(theta2, {**params, "variant": "symmetric"})
    potential = params["m"] * params["g"] * params["l"] * (1.5 * math.sin(theta1) + 0.5 * math.sin(theta1 + theta2))
    return 0.5 * float(qd @ inertia @ qd) + potential


def _manipulator_2r(params, w_max):
    params = {**MANIPULATOR_DEFAULTS, **params}
    for key in ("m", "l"):
        if not params[key] > 0:
            raise ConfigError(f"manipulator parameter '{key}' must be positive, got {params[key]}")
    if params["variant"] not in ("printed", "symmetric"):
        raise ConfigError(f"unknown manipulator variant '{params['variant']}'")

    def derivative(t, state, u, w):
        w = np.asarray(w, dtype=float)
        dx = manipulator_2r_derivative(state, u, w[2:], params)
        dx[:2] += w[:2]
        return dx

    return PlantDescriptor("manipulator_2r", 2, 2, params, derivative, w_max,
                           "mass matrix is uniformly positive definite for the default link parameters")


# ----------------------------------------
# Omnidirectional robot
# ----------------------------------------
OMNI_DEFAULTS = {"R": 0.05, "L": 0.2, "B": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]}


def omni_geometry(L):
    c, s = math.cos(math.pi / 6.0), math.sin(math.pi / 6.0)
    return np.array([[0.0, -1.0, L],
                     [c, s, L],
                     [-c, -s, L]])


def rotation_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def omni_wheel_map(params):
    """Constant matrix taking wheel inputs to body-frame velocities."""
    geometry = omni_geometry(params["L"])
    b_t = np.asarray(params["B"], dtype=float).T
    return np.linalg.solve(geometry, np.linalg.solve(b_t, params["R"] * np.eye(3)))


def omni_robot_derivative(state, u, params, wheel_map=None):
    wheel_map = omni_wheel_map(params) if wheel_map is None else wheel_map
    return rotation_z(float(state[2])) @ wheel_map @ np.asarray(u, dtype=float)


def _omni_robot(params, w_max):
    params = {**OMNI_DEFAULTS, **params}
    for key in ("R", "L"):
        if not params[key] > 0:
            raise ConfigError(f"omni robot parameter '{key}' must be positive, got {params[key]}")
    b = np.asarray(params["B"], dtype=float)
    if b.shape != (3, 3):
        raise ConfigError(f"omni robot B must be 3x3, got shape {b.shape}")
    for name, mat in (("geometry", omni_geometry(params["L"])), ("B", b)):
        if abs(np.linalg.det(mat)) < 1e-9:
            raise ConfigError(f"omni robot {name} matrix is singular")
    wheel_map = omni_wheel_map(params)

    def derivative(t, state, u, w):
        return omni_robot_derivative(state, u, params, wheel_map) + np.asarray(w, dtype=float)

    return PlantDescriptor("omni_robot", 1, 3, params, derivative, w_max,
                           "wheel map is constant and invertible, so the input gain is rotation times a fixed matrix")


# ----------------------------------------
# Expression-defined strict-feedback plants
# ----------------------------------------
_FUNCTIONS = {"sin": sympy.sin, "cos": sympy.cos, "tan": sympy.tan, "exp": sympy.exp, "log": sympy.log,
              "sqrt": sympy.sqrt, "tanh": sympy.tanh, "abs": sympy.Abs}
_CONSTANTS = {"pi": sympy.pi, "e": sympy.E}
_CALLS = (sympy.sin, sympy.cos, sympy.tan, sympy.exp, sympy.log, sympy.tanh, sympy.Abs)
# sympify evaluates its input; dunder names, attribute access and containers never reach it
_FORBIDDEN = re.compile(r"__|\.\s*[A-Za-z_]|[\[\]{};:=@'\"\\]|lambda")


def compile_expression(text, symbols):
    """Parse an expression over the declared `symbols` into a sympy expression."""
    text = str(text)
    if _FORBIDDEN.search(text):
        raise ConfigError(f"unsupported syntax in '{text}'")
    namespace = {**_FUNCTIONS, **_CONSTANTS, **{name: sympy.Symbol(name) for name in symbols}}
    try:
        expr = sympy.sympify(text, locals=namespace)
    except (sympy.SympifyError, SyntaxError, TypeError, ValueError) as e:
        raise ConfigError(f"cannot parse expression '{text}': {e}") from e
    if not isinstance(expr, sympy.Expr):
        raise ConfigError(f"'{text}' is not an arithmetic expression")
    unknown = sorted(str(s) for s in expr.free_symbols if str(s) not in symbols)
    if unknown:
        raise ConfigError(f"unknown symbol(s) {unknown} in '{text}'")
    calls = expr.atoms(sympy.Function)
    if any(not isinstance(f, _CALLS) for f in calls) or expr.has(sympy.I):
        raise ConfigError(f"unsupported function or constant in '{text}'")
    return expr


def state_symbols(stages, dimension):
    return [f"x{k}_{i}" for k in range(1, stages + 1) for i in range(1, dimension + 1)]


def _gain_block(raw, k, n, symbols):
    if raw == "identity":
        return sympy.eye(n)
    if not isinstance(raw, list) or len(raw) != n or any(not isinstance(r, list) or len(r) != n for r in raw):
        raise ConfigError(f"g for stage {k} must be an {n}x{n} list or 'identity'")
    return sympy.Matrix([[compile_expression(e, symbols) for e in row] for row in raw])


def generic_strict_feedback(block):
    """Plant from per-stage f (length n) and g (n x n) expressions over x1_1..xN_n."""
    stages = block.get("stages")
    n = block.get("dimension")
    if not isinstance(stages, int) or not isinstance(n, int) or stages < 1 or n < 1:
        raise ConfigError("generic plant needs positive integer 'stages' and 'dimension'")
    raw_f, raw_g = block.get("f"), block.get("g")
    if not isinstance(raw_f, list) or len(raw_f) != stages or not isinstance(raw_g, list) or len(raw_g) != stages:
        raise ConfigError(f"generic plant needs {stages} f and g entries")

    x = sympy.symbols(state_symbols(stages, n))
    fs, gs = [], []
    for k in range(1, stages + 1):
        allowed = set(state_symbols(k, n))
        if not isinstance(raw_f[k - 1], list) or len(raw_f[k - 1]) != n:
            raise ConfigError(f"f for stage {k} must list {n} expressions")
        f = sympy.Matrix([compile_expression(e, allowed) for e in raw_f[k - 1]])
        g = _gain_block(raw_g[k - 1], k, n, allowed)
        fs.append(sympy.lambdify(x, f, "numpy"))
        gs.append(sympy.lambdify(x, g, "numpy"))

    def derivative(t, state, u, w):
        xs = np.asarray(state, dtype=float)
        drive = np.concatenate([xs[n:], np.asarray(u, dtype=float)])
        out = np.empty(stages * n)
        for k in range(stages):
            f = np.asarray(fs[k](*xs), dtype=float).reshape(n)
            g = np.asarray(gs[k](*xs), dtype=float).reshape(n, n)
            out[k * n:(k + 1) * n] = f + g @ drive[k * n:(k + 1) * n]
        return out + np.asarray(w, dtype=float)

    return PlantDescriptor(block.get("name", "generic"), stages, n, {"f": raw_f, "g": raw_g}, derivative,
                           float(block.get("w_max", 0.0)),
                           "g symmetric part assumed positive definite on the workspace")


def build_plant(block):
    block = dict(block or {})
    kind = block.get("type")
    params = dict(block.get("params", {}))
    w_max = float(block.get("disturbance", {}).get("amplitude", 0.0))
    if kind == "manipulator_2r":
        plant = _manipulator_2r(params, w_max)
    elif kind == "omni_robot":
        plant = _omni_robot(params, w_max)
    elif kind == "generic":
        plant = generic_strict_feedback({**params, "w_max": w_max})
    else:
        raise ConfigError(f"unknown plant type '{kind}'")
    logger.info(f"Plant {plant.name}: N={plant.stage_count}, n={plant.dimension}")
    return plant


# ----------------------------------------
# Disturbances
# ----------------------------------------
@dataclass
class DisturbanceModel:
    kind: str = "zero"
    amplitude: float = 0.0
    size: int = 1
    seed: int = None
    frequency: float = 1.0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("zero", "uniform", "sinusoidal"):
            raise ConfigError(f"unknown disturbance kind '{self.kind}'")
        if self.amplitude < 0:
            raise ConfigError(f"disturbance amplitude must be non-negative, got {self.amplitude}")
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def from_dict(cls, block, size, seed=None):
        block = dict(block or {})
        kind = block.get("kind", "zero")
        amplitude = block.get("amplitude", DEFAULT_DISTURBANCE_AMPLITUDE if kind != "zero" else 0.0)
        return cls(kind, float(amplitude), size, block.get("seed", seed), float(block.get("frequency", 1.0)))

    def sample(self, t):
        if self.kind == "zero" or self.amplitude == 0.0:
            return np.zeros(self.size)
        if self.kind == "uniform":
            return self.rng.uniform(-self.amplitude, self.amplitude, self.size)
        phases = 2.0 * math.pi * np.arange(self.size) / self.size
        return self.amplitude * np.sin(self.frequency * t + phases)


# ----------------------------------------
# Integration
# ----------------------------------------
def integrate_step(derivative, state, t, dt):
    """Classical fourth-order Runge-Kutta step of x' = derivative(t, x)."""
    if not dt > 0:
        raise ParameterError(f"integration step must be positive, got {dt}")
    x = np.asarray(state, dtype=float)
    k1 = _finite(derivative(t, x), "k1", t)
    k2 = _finite(derivative(t + dt / 2.0, x + dt * k1 / 2.0), "k2", t)
    k3 = _finite(derivative(t + dt / 2.0, x + dt * k2 / 2.0), "k3", t)
    k4 = _finite(derivative(t + dt, x + dt * k3), "k4", t)
    return _finite(x + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0, "update", t)


def _finite(v, tag, t):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericBlowupError(f"non-finite value in RK4 {tag} at t={t:.6f}", stage_tag=tag)
    return v


# ----------------------------------------
# Simulation
# ----------------------------------------
@dataclass
class SimTrace:
    stage_count: int
    dimension: int
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    triplet_index: list = field(default_factory=list)
    max_abs_e: list = field(default_factory=list)
    disturbances: list = field(default_factory=list)
    events: list = field(default_factory=list)
    tubes: list = field(default_factory=list)  # active tube after start and after each switch

    def record(self, t, x, y, u, hs, frames, w):
        lo, hi = hs.active_tube.bounds_at(t - hs.switch_time)
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=float))
        self.outputs.append(np.array(y, dtype=float))
        self.controls.append(np.array(u, dtype=float))
        self.lower.append(lo)
        self.upper.append(hi)
        self.triplet_index.append(hs.triplet_index)
        self.max_abs_e.append([float(np.max(np.abs(f.e))) for f in frames])
        self.disturbances.append(np.array(w, dtype=float))

    def __len__(self):
        return len(self.times)


def trace_frame(trace):
    """One row per sample; columns t, x*, y*, u*, w*, gamma_L*, gamma_U*, triplet_index, max_abs_e_stage*."""
    n, N = trace.dimension, trace.stage_count
    columns = (["t"] + [f"x{k}_{i}" for k in range(1, N + 1) for i in range(1, n + 1)]
               + [f"y_{i}" for i in range(1, n + 1)] + [f"u_{i}" for i in range(1, n + 1)]
               + [f"w_{j}" for j in range(1, N * n + 1)]
               + [f"gamma_L_{i}" for i in range(1, n + 1)] + [f"gamma_U_{i}" for i in range(1, n + 1)]
               + ["triplet_index"] + [f"max_abs_e_stage{k}" for k in range(1, N + 1)])
    if not len(trace):
        return pd.DataFrame(columns=columns)
    data = np.column_stack([np.array(trace.times), np.array(trace.states), np.array(trace.outputs),
                            np.array(trace.controls), np.array(trace.disturbances),
                            np.array(trace.lower), np.array(trace.upper),
                            np.array(trace.triplet_index, dtype=float), np.array(trace.max_abs_e)])
    df = pd.DataFrame(data, columns=columns)
    df["triplet_index"] = df["triplet_index"].astype(int)
    return df


def plot_axis_frames(frame, dimension):
    """Per-output-dimension series (t, y_i, gamma_L_i, gamma_U_i)."""
    return {i: frame[["t", f"y_{i}", f"gamma_L_{i}", f"gamma_U_{i}"]].copy() for i in range(1, dimension + 1)}


def simulate(plant, controller, x0, horizon, dt, disturbance=None, t0=0.0):
    """
    Closed loop with the input held constant over each step. Runtime errors are
    re-raised as SimulationAborted carrying the samples recorded so far.
    """
    if not dt > 0 or horizon < 0:
        raise ParameterError(f"need dt > 0 and horizon >= 0 (dt={dt}, horizon={horizon})")
    x = np.asarray(x0, dtype=float)
    if x.shape != (plant.state_size,):
        raise ConfigError(f"initial state has {x.size} entries, plant {plant.name} needs {plant.state_size}")
    disturbance = disturbance or DisturbanceModel(size=plant.state_size)
    steps = int(round(horizon / dt))
    trace = SimTrace(plant.stage_count, plant.dimension)
    logger.info(f"Simulating {plant.name} for {horizon}s at dt={dt} ({steps} steps)")

    try:
        hs = controller.initialize(x, t0)
        trace.tubes.append(hs.active_tube)
        for k in range(steps + 1):
            t = t0 + k * dt
            u, hs, event, frames = controller.step(hs, x, t)
            w = disturbance.sample(t)
            trace.record(t, x, plant.output_of(x), u, hs, frames, w)
            if event is not None:
                trace.events.append(event)
                trace.tubes.append(hs.active_tube)
            if k == steps:
                break
            x = integrate_step(lambda s, z: plant.derivative(s, z, u, w), x, t, dt)
    except (ViolationError, SynthesisError, NumericBlowupError, PreconditionError, DomainError) as e:
        logger.error(f"Simulation stopped after {len(trace)} samples: {e}", exc_info=True)
        raise SimulationAborted(e, trace) from e

    logger.info(f"Simulation finished: {len(trace)} samples, {len(trace.events)} switch event(s)")
    return trace


# ----------------------------------------
# Trace monitoring
# ----------------------------------------
def collapse_word(labels):
    """Finite word from per-sample labels: (label, first sample index) with repeats merged."""
    word = []
    for k, label in enumerate(labels):
        if not word or word[-1][0] != label:
            word.append((label, k))
    return word


def trace_monitor(trace, workspace, switcher, required_visits=1):
    """
    Offline check of a recorded trace: target visit counts, consistency of the
    labels with the active triplet, unsafe-label occurrences and the largest
    normalized error per stage. Findings are reported, never raised.
    """
    frame = trace if isinstance(trace, pd.DataFrame) else trace_frame(trace)
    n = workspace.dimension
    ys = frame[[f"y_{i}" for i in range(1, n + 1)]].to_numpy()
    times = frame["t"].to_numpy()
    indices = frame["triplet_index"].to_numpy().astype(int)

    labels = []
    for y in ys:
        try:
            labels.append(workspace.label_of(y))
        except OutOfDomainError:
            labels.append("")
    word = collapse_word(labels)

    trips = switcher.triplets
    targets = sorted({t.label_out for t in switcher.cyclic_order})
    allowed_anywhere = set().union(*({t.label_in, t.label_out, *t.self_labels} for t in trips))
    visits = {p: sum(1 for label, _ in word if label == p) for p in targets}

    unsafe = None
    out_of_domain = None
    inconsistent = None
    for k, (label, index) in enumerate(zip(labels, indices)):
        if label == "" and out_of_domain is None:
            out_of_domain = {"time": float(times[k]), "sample": k}
        if label not in allowed_anywhere and unsafe is None:
            unsafe = {"time": float(times[k]), "sample": k, "label": label}
        t = trips[index] if 0 <= index < len(trips) else None
        if inconsistent is None and (t is None or label not in {t.label_in, t.label_out, *t.self_labels}):
            inconsistent = {"time": float(times[k]), "sample": k, "label": label, "triplet_index": int(index)}

    bad_switch = None
    for k in range(1, len(indices)):
        if indices[k] != indices[k - 1] and indices[k] != switcher.next_index(int(indices[k - 1])):
            bad_switch = {"time": float(times[k]), "from_index": int(indices[k - 1]), "to_index": int(indices[k])}
            break

    stage_columns = sorted(c for c in frame.columns if c.startswith("max_abs_e_stage"))
    sup_e = {c.replace("max_abs_e_", ""): float(frame[c].max()) if len(frame) else 0.0 for c in stage_columns}

    report = {
        "samples": int(len(frame)),
        "word": [label for label, _ in word],
        "visits": visits,
        "required_visits": int(required_visits),
        "order_consistent": inconsistent is None and bad_switch is None,
        "first_inconsistency": inconsistent,
        "bad_switch": bad_switch,
        "unsafe_occurrence": unsafe,
        "out_of_domain": out_of_domain,
        "sup_abs_e": sup_e,
    }
    report["passed"] = (unsafe is None and out_of_domain is None and report["order_consistent"]
                        and all(v >= required_visits for v in visits.values()))
    return report
