"""Open-loop data collection, swing-up demonstrations and holdout episodes."""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from ..plants import CartPole, Plant, SwingUpGains, balance_gain, energy_swingup_policy, input_scaling, \
    linearize, make_plant, wrap_angle
from ..trajectory_data import Dataset, extract_trajectories


def sample_initial_state(plant: Plant, rng: np.random.Generator, low=None, high=None) -> np.ndarray:
    """Uniform draw from the box ``[low, high]``; the plant's default state when no box is given."""
    if low is None and high is None:
        return np.array(plant.x_init, dtype=float)
    low = np.asarray(plant.x_init if low is None else low, dtype=float)
    high = np.asarray(plant.x_init if high is None else high, dtype=float)
    if low.shape != plant.x_init.shape or high.shape != plant.x_init.shape:
        raise ValueError(f"initial-state box must have {plant.x_init.size} entries")
    if np.any(high < low):
        raise ValueError("initial-state box has high < low")
    return rng.uniform(low, high)


def _blown(y, blowup: float) -> bool:
    return not np.all(np.isfinite(y)) or np.max(np.abs(y)) > blowup


def excitation_inputs(rng: np.random.Generator, steps: int, m: int, a: float, b: float) -> np.ndarray:
    """Normalised inputs ``u_t = a u_{t-1} + b n_t`` with ``n_t ~ U(-1, 1)`` and ``u_{-1} = 0``.

    The recursion is clipped to ``[-1, 1]`` so a random walk rests on the input
    limit instead of winding up beyond it.
    """
    u = np.zeros((steps, m))
    prev = np.zeros(m)
    for t in range(steps):
        prev = np.clip(a * prev + b * rng.uniform(-1.0, 1.0, m), -1.0, 1.0)
        u[t] = prev
    return u


def run_open_loop(plant: Plant, x0, inputs, blowup: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``inputs`` from ``x0``; stop before the first blown-up measurement."""
    plant.reset(x0)
    us, ys = [], []
    for u in inputs:
        u = plant.saturate(u)
        y = plant.step(u)
        if _blown(y, blowup):
            break
        us.append(u)
        ys.append(y)
    m, p = plant.spec.m, plant.spec.p
    return np.reshape(us, (-1, m)), np.reshape(ys, (-1, p))


def generate_data(plant: Plant | str, policy: str, episodes: int, steps: int, a: float, b: float,
                  seed: int, T_p: int, T_f: int, init_low=None, init_high=None,
                  blowup: float = np.inf) -> Dataset:
    """Excite ``plant`` with the first-order input recursion and cut the episodes into windows.

    ``policy`` only labels the data; the recursion is fully set by ``(a, b)``.
    Episodes are truncated at a blow-up and dropped when shorter than one
    window.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must lie in [0, 1]")
    if b < 0:
        raise ValueError("b must be non-negative")
    if episodes < 1 or steps < 1:
        raise ValueError("episodes and steps must be positive")
    plant = make_plant(plant) if isinstance(plant, str) else plant
    mid, half = input_scaling(plant.spec)
    ss = np.random.SeedSequence(seed)
    records = []
    for child in ss.spawn(episodes):
        rng = np.random.default_rng(child)
        x0 = sample_initial_state(plant, rng, init_low, init_high)
        u = mid + half * excitation_inputs(rng, steps, plant.spec.m, a, b)
        records.append(run_open_loop(plant, x0, u, blowup))
    meta = dict(env=plant.spec.name, dt=plant.spec.dt, policy=policy, a=a, b=b, seed=seed)
    return extract_trajectories(records, T_p, T_f, meta=meta)


# -- cart-pole demonstrations ------------------------------------------------

def swingup_episode(plant: CartPole, rng: np.random.Generator, steps: int, gains: SwingUpGains = SwingUpGains(),
                    dither: float = 0.5, catch_angle: float = 0.4, init_spread: float = 0.2,
                    K: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Energy-pumping swing-up with an LQR catch near upright and uniform force dither.

    The start is hanging with the cart position and angle perturbed by up to
    ``init_spread``.  ``catch_angle=0`` disables the catch.
    """
    K = balance_gain(plant) if K is None else K
    x0 = np.array([rng.uniform(-init_spread, init_spread),
                   math.pi + rng.uniform(-init_spread, init_spread), 0.0, 0.0])
    plant.reset(x0)
    us, ys = [], []
    for _ in range(steps):
        s = plant.x.copy()
        th = float(wrap_angle(s[1]))
        if abs(th) < catch_angle:
            u = float(-(K @ np.array([s[0], th, s[2], s[3]]))[0])
        else:
            u = energy_swingup_policy(plant, s, gains)
        u = plant.saturate([u + dither * rng.uniform(-1.0, 1.0)])
        ys.append(plant.step(u))
        us.append(u)
    return np.array(us), np.array(ys)


def generate_demonstrations(count: int, seed: int, T_p: int, T_f: int, steps: int = 250,
                            plant: CartPole | None = None, gains: SwingUpGains = SwingUpGains(),
                            dither: float = 0.5) -> Dataset:
    """Dithered swing-ups from perturbed hanging starts, one episode per demonstration."""
    if count < 1:
        raise ValueError("count must be >= 1")
    plant = plant or make_plant("cartpole")
    K = balance_gain(plant)
    records = [swingup_episode(plant, np.random.default_rng(child), steps, gains, dither, K=K)
               for child in np.random.SeedSequence(seed).spawn(count)]
    meta = dict(env="cartpole", dt=plant.spec.dt, policy="demonstrations", seed=seed)
    return extract_trajectories(records, T_p, T_f, meta=meta)


# -- holdout ---------------------------------------------------------------

def _lqr(A, B, q=1.0, r=1.0):
    Qm = q * np.eye(A.shape[0])
    Rm = r * np.eye(B.shape[1])
    S = scipy.linalg.solve_discrete_are(A, B, Qm, Rm)
    return np.linalg.solve(Rm + B.T @ S @ B, B.T @ S @ A)


def holdout_episode(plant: Plant | str, steps: int, seed: int, init_low=None, init_high=None,
                    detune: float = 0.5, dither: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """One closed-loop episode under a deliberately weak controller.

    Cart-pole runs the energy pump with its energy gain scaled by ``detune``
    and no catch; other plants run a discrete LQR about their rest point with the
    gain scaled by ``detune``.  Uniform dither of ``dither`` times the input
    half-range keeps the episode exciting.
    """
    plant = make_plant(plant) if isinstance(plant, str) else plant
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    mid, half = input_scaling(plant.spec)
    x0 = sample_initial_state(plant, rng, init_low, init_high)
    plant.reset(x0)
    if isinstance(plant, CartPole):
        g = SwingUpGains()
        g = SwingUpGains(g.k_energy * detune, g.k_x, g.k_v, g.force_limit)
        law = lambda s: np.array([energy_swingup_policy(plant, s, g)])
    else:
        x_eq = np.zeros_like(plant.x_init)
        A, B = linearize(plant, x_eq, mid)
        K = detune * _lqr(A, B)
        law = lambda s: mid - K @ (s - x_eq)
    us, ys = [], []
    for _ in range(steps):
        u = plant.saturate(law(plant.x.copy()) + dither * half * rng.uniform(-1.0, 1.0, plant.spec.m))
        ys.append(plant.step(u))
        us.append(u)
    return np.array(us), np.array(ys)


def holdout_dataset(plant, steps: int, seed: int, T_p: int, T_f: int, **kw) -> Dataset:
    u, y = holdout_episode(plant, steps, seed, **kw)
    ds = extract_trajectories([(u, y)], T_p, T_f, meta=dict(policy="holdout", seed=seed))
    ds.episode_ids = np.full(ds.n_d, -1 - seed)
    return ds


def from_config(cfg) -> Dataset:
    """The training dataset described by an :class:`ExperimentConfig`."""
    d = cfg.data
    plant = make_plant(cfg.plant.name, **cfg.plant.overrides)
    if d.policy == "demonstrations":
        if cfg.plant.name != "cartpole":
            raise ValueError("demonstrations are only defined for the cart-pole")
        return generate_demonstrations(d.episodes, d.seed, cfg.dpc.T_p, cfg.dpc.T_f, d.steps, plant)
    return generate_data(plant, d.policy, d.episodes, d.steps, d.a, d.b, d.seed, cfg.dpc.T_p,
                         cfg.dpc.T_f, d.init_low, d.init_high, cfg.run.blowup)
