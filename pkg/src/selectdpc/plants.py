"""Deterministic benchmark simulators.

All nonlinear plants integrate with fixed-step RK4, saturate the input before
integrating, and return the measurement taken *after* the step, so a
recorded row ``(u_t, y_t)`` pairs an input with the output it produced.
The LTI plant follows the textbook ``y = Cx + Du`` read-out of the current
state instead; both are valid input-output behaviours for the Hankel
machinery.

Canonical physical parameters live in ``configs/plants.toml``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import scipy.linalg

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class PlantSpec:
    name: str
    n: int
    m: int
    p: int
    dt: float
    u_low: np.ndarray
    u_high: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        lo = np.asarray(self.u_low, dtype=float).ravel()
        hi = np.asarray(self.u_high, dtype=float).ravel()
        if lo.size != self.m or hi.size != self.m or np.any(lo > hi):
            raise ValueError("input limits must be ordered, one pair per channel")
        object.__setattr__(self, "u_low", lo)
        object.__setattr__(self, "u_high", hi)


def rk4(f, x, u, dt, substeps=1):
    h = dt / substeps
    for _ in range(substeps):
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


class Plant:
    """Common state handling: reset, saturation, optional measurement noise."""

    spec: PlantSpec
    x_init: np.ndarray

    def __init__(self, noise_std: float = 0.0, seed: int | None = None):
        self.noise_std = float(noise_std)
        self._noise_rng = np.random.default_rng(seed)
        self.x = np.array(self.x_init, dtype=float)
        self.k = 0

    def reset(self, x0=None, perturbation: float = 0.0, seed: int | None = None) -> np.ndarray:
        """Return to ``x0`` (default: the documented initial state).

        ``perturbation`` adds a seeded uniform offset of that half-width to
        every state component.
        """
        self.x = np.array(self.x_init if x0 is None else x0, dtype=float)
        if perturbation:
            rng = np.random.default_rng(seed)
            self.x = self.x + rng.uniform(-perturbation, perturbation, self.x.shape)
        self.k = 0
        if seed is not None:
            self._noise_rng = np.random.default_rng([seed, 1])
        return self.measure()

    def saturate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        return np.clip(u, self.spec.u_low, self.spec.u_high)

    def _noisy(self, y):
        if self.noise_std > 0:
            y = y + self._noise_rng.normal(0.0, self.noise_std, y.shape)
        return y

    def measure(self) -> np.ndarray:
        return self._noisy(self.output(self.x))

    def output(self, x) -> np.ndarray:
        raise NotImplementedError

    def step(self, u) -> np.ndarray:
        raise NotImplementedError


# -- LTI -------------------------------------------------------------------

def input_scaling(spec: PlantSpec) -> tuple[np.ndarray, np.ndarray]:
    """Centre and half-range that map ``[-1, 1]`` onto the input box; unbounded channels get (0, 1)."""
    lo, hi = np.asarray(spec.u_low, dtype=float), np.asarray(spec.u_high, dtype=float)
    fin = np.isfinite(lo) & np.isfinite(hi)
    mid, half = np.zeros_like(lo), np.ones_like(lo)
    mid[fin] = 0.5 * (lo[fin] + hi[fin])
    half[fin] = 0.5 * (hi[fin] - lo[fin])
    return mid, half


def lti_step(A, B, C, D_ff, state, u):
    """One step of ``x' = Ax + Bu``, ``y = Cx + Du``; returns ``(x', y)``."""
    A, B, C, D_ff = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C, D_ff))
    x = np.atleast_1d(np.asarray(state, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return A @ x + B @ u, C @ x + D_ff @ u


def random_lti(n: int, m: int, p: int, seed: int = 0, spectral_radius: float = 0.9,
               feedthrough: bool = False):
    """Seeded random stable LTI system with controllable (A, B) and observable (A, C)."""
    rng = np.random.default_rng(seed)
    while True:
        A = rng.standard_normal((n, n))
        A *= spectral_radius / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        D = rng.standard_normal((p, m)) if feedthrough else np.zeros((p, m))
        ctrb = np.hstack([np.linalg.matrix_power(A, i) @ B for i in range(n)])
        obsv = np.vstack([C @ np.linalg.matrix_power(A, i) for i in range(n)])
        if np.linalg.matrix_rank(ctrb) == n and np.linalg.matrix_rank(obsv) == n:
            return A, B, C, D


class LTIPlant(Plant):
    def __init__(self, A, B, C, D=None, x0=None, u_limit: float = np.inf, dt: float = 1.0, **kw):
        self.A, self.B, self.C = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C))
        n, m = self.B.shape
        p = self.C.shape[0]
        self.D = np.zeros((p, m)) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
        self.spec = PlantSpec("lti", n, m, p, dt, np.full(m, -u_limit), np.full(m, u_limit))
        self.x_init = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        super().__init__(**kw)

    def output(self, x, u=None):
        u = np.zeros(self.spec.m) if u is None else u
        return self.C @ x + self.D @ u

    def step(self, u):
        u = self.saturate(u)
        self.x, y = lti_step(self.A, self.B, self.C, self.D, self.x, u)
        self.k += 1
        return self._noisy(y)


# -- cart-pole ---------------------------------------------------------------

class CartPole(Plant):
    """Cart with a point-mass pendulum; ``theta = 0`` is upright, ``pi`` hanging.

    State ``[x, theta, x_dot, theta_dot]``; measurement
    ``[x, sin theta, cos theta, x_dot, theta_dot]``; input is the horizontal
    force on the cart (N).
    """

    def __init__(self, M=1.0, m_p=0.1, l=0.5, g=9.81, dt=0.02, cart_damping=0.0,
                 pole_damping=0.0, force_limit=10.0, substeps=1, x0=None, **kw):
        self.M, self.m_p, self.l, self.g = M, m_p, l, g
        self.cart_damping, self.pole_damping = cart_damping, pole_damping
        self.substeps = substeps
        self.spec = PlantSpec("cartpole", 4, 1, 5, dt, [-force_limit], [force_limit],
                              dict(M=M, m_p=m_p, l=l, g=g, cart_damping=cart_damping,
                                   pole_damping=pole_damping))
        self.x_init = np.array([0.0, math.pi, 0.0, 0.0]) if x0 is None else np.asarray(x0, float)
        super().__init__(**kw)

    def deriv(self, s, u):
        _, th, xd, thd = s
        M, m, l, g = self.M, self.m_p, self.l, self.g
        F = u[0] - self.cart_damping * xd
        sn, cs = math.sin(th), math.cos(th)
        # (M+m) xdd + m l cos(th) thdd = F + m l thd² sin(th)
        # cos(th) xdd + l thdd         = g sin(th) - b thd / (m l)
        a11, a12, a21, a22 = M + m, m * l * cs, cs, l
        b1 = F + m * l * thd * thd * sn
        b2 = g * sn - self.pole_damping * thd / (m * l)
        det = a11 * a22 - a12 * a21
        xdd = (b1 * a22 - a12 * b2) / det
        thdd = (a11 * b2 - a21 * b1) / det
        return np.array([xd, thd, xdd, thdd])

    def output(self, s):
        return np.array([s[0], math.sin(s[1]), math.cos(s[1]), s[2], s[3]])

    def step(self, u):
        u = self.saturate(u)
        self.x = rk4(self.deriv, self.x, u, self.spec.dt, self.substeps)
        self.k += 1
        return self.measure()

    def energy(self, s=None) -> float:
        """Total mechanical energy of cart and pendulum."""
        x, th, xd, thd = self.x if s is None else s
        m, l = self.m_p, self.l
        vx = xd + l * math.cos(th) * thd
        vz = -l * math.sin(th) * thd
        return 0.5 * self.M * xd ** 2 + 0.5 * m * (vx ** 2 + vz ** 2) + m * self.g * l * math.cos(th)

    def pendulum_energy(self, s=None) -> float:
        """Pendulum energy about the pivot; equals ``m g l`` at upright rest."""
        _, th, _, thd = self.x if s is None else s
        return 0.5 * self.m_p * self.l ** 2 * thd ** 2 + self.m_p * self.g * self.l * math.cos(th)


def wrap_angle(th):
    return (np.asarray(th) + np.pi) % (2 * np.pi) - np.pi


def upright_error(y) -> np.ndarray:
    """Angle to upright from cart-pole measurements (uses sin/cos channels)."""
    y = np.atleast_2d(y)
    return np.abs(np.arctan2(y[:, 1], y[:, 2]))


@dataclass(frozen=True)
class SwingUpGains:
    k_energy: float = 40.0
    k_x: float = 1.0
    k_v: float = 1.5
    force_limit: float = 10.0


def energy_swingup_policy(plant: CartPole, state, gains: SwingUpGains = SwingUpGains()) -> float:
    """Energy-pumping force plus a cart-centering PD term, saturated.

    ``u = k_e (E - E_up) theta_dot cos(theta) - k_x x - k_v x_dot`` with the
    pendulum energy ``E`` measured about the pivot (``E_up = m g l``).  With
    ``theta = 0`` upright this drives ``E`` towards ``E_up``.
    """
    x, th, xd, thd = state
    E = plant.pendulum_energy(state)
    E_up = plant.m_p * plant.g * plant.l
    u = gains.k_energy * (E - E_up) * thd * math.cos(th) - gains.k_x * x - gains.k_v * xd
    return float(np.clip(u, -gains.force_limit, gains.force_limit))


def linearize(plant: Plant, x_eq, u_eq, h: float = 1e-6):
    """Central-difference Jacobians of one sampled step ``x' = F(x, u)``."""
    x_eq = np.asarray(x_eq, dtype=float)
    u_eq = np.asarray(u_eq, dtype=float)
    F = lambda x, u: rk4(plant.deriv, x, u, plant.spec.dt, getattr(plant, "substeps", 1))
    n, m = x_eq.size, u_eq.size
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    for i in range(n):
        e = np.zeros(n); e[i] = h
        A[:, i] = (F(x_eq + e, u_eq) - F(x_eq - e, u_eq)) / (2 * h)
    for i in range(m):
        e = np.zeros(m); e[i] = h
        B[:, i] = (F(x_eq, u_eq + e) - F(x_eq, u_eq - e)) / (2 * h)
    return A, B


def balance_gain(plant: CartPole, q_diag=(1.0, 10.0, 1.0, 1.0), r: float = 0.1) -> np.ndarray:
    """Discrete LQR gain ``K`` (``u = -K x``) about the upright equilibrium."""
    A, B = linearize(plant, np.zeros(4), np.zeros(1))
    Qm, Rm = np.diag(q_diag), np.atleast_2d(r)
    S = scipy.linalg.solve_discrete_are(A, B, Qm, Rm)
    return np.linalg.solve(Rm + B.T @ S @ B, B.T @ S @ A)


# -- reacher ---------------------------------------------------------------

class Reacher(Plant):
    """Planar two-link arm (uniform rods, horizontal plane, no gravity).

    State ``[q1, q2, q1_dot, q2_dot]``; measurement
    ``[sin q1, cos q1, sin q2, cos q2, ee_x, ee_y, q1_dot, q2_dot]``.
    """

    def __init__(self, l1=0.1, l2=0.1, m1=0.1, m2=0.1, damping=0.005, dt=0.02,
                 torque_limit=0.01, substeps=2, x0=None, **kw):
        self.l1, self.l2, self.m1, self.m2 = l1, l2, m1, m2
        self.damping = damping
        self.substeps = substeps
        self.spec = PlantSpec("reacher", 4, 2, 8, dt, [-torque_limit] * 2, [torque_limit] * 2,
                              dict(l1=l1, l2=l2, m1=m1, m2=m2, damping=damping))
        self.x_init = np.zeros(4) if x0 is None else np.asarray(x0, float)
        super().__init__(**kw)

    def mass_matrix(self, q2):
        l1, l2, m1, m2 = self.l1, self.l2, self.m1, self.m2
        I1, I2 = m1 * l1 ** 2 / 12, m2 * l2 ** 2 / 12
        lc2 = l2 / 2
        c2 = math.cos(q2)
        a = I1 + I2 + m1 * (l1 / 2) ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * c2)
        b = I2 + m2 * (lc2 ** 2 + l1 * lc2 * c2)
        d = I2 + m2 * lc2 ** 2
        return np.array([[a, b], [b, d]])

    def deriv(self, s, u):
        _, q2, w1, w2 = s
        h = self.m2 * self.l1 * (self.l2 / 2) * math.sin(q2)
        coriolis = np.array([-h * (2 * w1 * w2 + w2 * w2), h * w1 * w1])
        tau = u - self.damping * np.array([w1, w2]) - coriolis
        acc = np.linalg.solve(self.mass_matrix(q2), tau)
        return np.array([w1, w2, acc[0], acc[1]])

    def end_effector(self, s):
        q1, q2 = s[0], s[1]
        return np.array([self.l1 * math.cos(q1) + self.l2 * math.cos(q1 + q2),
                         self.l1 * math.sin(q1) + self.l2 * math.sin(q1 + q2)])

    def kinetic_energy(self, s=None) -> float:
        s = self.x if s is None else s
        w = s[2:]
        return float(0.5 * w @ self.mass_matrix(s[1]) @ w)

    def output(self, s):
        ee = self.end_effector(s)
        return np.array([math.sin(s[0]), math.cos(s[0]), math.sin(s[1]), math.cos(s[1]),
                         ee[0], ee[1], s[2], s[3]])

    def step(self, u):
        u = self.saturate(u)
        self.x = rk4(self.deriv, self.x, u, self.spec.dt, self.substeps)
        self.k += 1
        return self.measure()


# -- rocket ----------------------------------------------------------------

class Rocket(Plant):
    """Planar vertical-takeoff / vertical-landing rocket.

    State ``[x, z, phi, x_dot, z_dot, phi_dot]`` with ``phi = 0`` upright and
    positive counter-clockwise.  Inputs are normalised to ``[-1, 1]``:

    * ``u[0]`` main-engine throttle, thrust ``m g (1 + u[0])`` so that zero
      input hovers;
    * ``u[1]`` engine gimbal, angle ``gimbal_max * u[1]``;
    * ``u[2]`` side thruster at the nose, lateral force ``side_max * u[2]``.

    Measurement ``[x, z, x_dot, z_dot, phi, phi_dot]``.
    """

    def __init__(self, mass=1.0, inertia=2.0, g=9.81, engine_arm=0.5, nose_arm=0.5,
                 gimbal_max=0.3, side_max=1.0, drag=0.0, dt=0.05, substeps=1, x0=None, **kw):
        self.mass, self.inertia, self.g = mass, inertia, g
        self.engine_arm, self.nose_arm = engine_arm, nose_arm
        self.gimbal_max, self.side_max, self.drag = gimbal_max, side_max, drag
        self.substeps = substeps
        self.spec = PlantSpec("rocket", 6, 3, 6, dt, [-1.0] * 3, [1.0] * 3,
                              dict(mass=mass, inertia=inertia, g=g, engine_arm=engine_arm,
                                   nose_arm=nose_arm, gimbal_max=gimbal_max, side_max=side_max))
        self.x_init = np.zeros(6) if x0 is None else np.asarray(x0, float)
        super().__init__(**kw)

    def deriv(self, s, u):
        _, _, phi, xd, zd, phid = s
        thrust = self.mass * self.g * (1.0 + u[0])
        delta = self.gimbal_max * u[1]
        side = self.side_max * u[2]
        # main thrust along the body axis rotated by the gimbal; side force normal to the body
        fx = -thrust * math.sin(phi + delta) + side * math.cos(phi)
        fz = thrust * math.cos(phi + delta) + side * math.sin(phi)
        torque = -self.engine_arm * thrust * math.sin(delta) - self.nose_arm * side
        return np.array([xd, zd, phid,
                         fx / self.mass - self.drag * xd,
                         fz / self.mass - self.g - self.drag * zd,
                         torque / self.inertia])

    def output(self, s):
        return np.array([s[0], s[1], s[3], s[4], s[2], s[5]])

    def step(self, u):
        u = self.saturate(u)
        self.x = rk4(self.deriv, self.x, u, self.spec.dt, self.substeps)
        self.k += 1
        return self.measure()


# -- registry --------------------------------------------------------------

PLANTS = {"cartpole": CartPole, "reacher": Reacher, "rocket": Rocket}


def plant_defaults() -> dict:
    text = resources.files("selectdpc.configs").joinpath("plants.toml").read_text()
    return tomllib.loads(text)


def make_plant(name: str, **overrides) -> Plant:
    """Instantiate a named plant with the canonical parameters plus overrides."""
    if name not in PLANTS:
        raise KeyError(f"unknown plant {name!r}; known: {sorted(PLANTS)}")
    params = dict(plant_defaults().get(name, {}))
    params.pop("version", None)
    params.update(overrides)
    return PLANTS[name](**params)
