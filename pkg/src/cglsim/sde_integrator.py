"""Time stepping of the Galerkin-truncated stochastic CGL system.

The linear part (1 + i alpha) Laplacian is diagonal in Fourier space and is
integrated exactly by an exponential propagator; the cubic/drift terms are
treated explicitly with a two-stage exponential corrector (the second stage
restores second-order accuracy of the deterministic flow, which the
single-stage rule cannot deliver at acceptance tolerances).  Noise enters
per mode: additive channels map Wiener channels onto eigenmodes, one scalar
channel drives the multiplicative part.

All ensemble operations are vectorized over paths; reductions run in a
fixed order so results are independent of worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import CoefficientSet, check_conditions, ConditionError
from .measures import EmpiricalMeasure
from .noise import NoiseBank, WienerSampler
from .torus_spectral import (
    BlowUpError,
    SpectralField,
    TorusGrid,
    cubic_term_coeffs,
    galerkin_mask,
    sobolev_norm_sq_coeffs,
)

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "step",
    "solve_path",
    "solve_ensemble",
    "EnsembleResult",
    "pullback_bounded_solution",
    "PullbackResult",
    "PullbackNotConverged",
    "contraction_test",
    "time_increment_modulus",
]


@dataclass(frozen=True)
class IntegratorConfig:
    """Discretization parameters for one run."""

    dt: float
    scheme: str = "exponential_euler"
    galerkin_n: Optional[int] = None        # None: all lattice modes
    blow_up_threshold: float = 1e6          # guard on ||u||_{L^2}
    cubic_enabled: bool = True              # diagnostic switch (OU oracle)
    save_points: int = 200                  # target number of stored states

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in ("exponential_euler", "semi_implicit_euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (self.blow_up_threshold > 0):
            raise ValueError("blow_up_threshold must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list                     # SpectralField at stored times
    running_sup_L2: float
    path_id: tuple


class PullbackNotConverged(RuntimeError):
    def __init__(self, message, gaps=None, depths=None):
        super().__init__(message)
        self.gaps = gaps
        self.depths = depths


def _phi_functions(z):
    """phi1(z) = (e^z - 1)/z and phi2(z) = (e^z - 1 - z)/z^2, stable near 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(zs) / zs)
    phi2 = np.where(small, 0.5 + z / 6.0 + z * z / 24.0,
                    (np.expm1(zs) - zs) / (zs * zs))
    return phi1, phi2


class _Stepper:
    """Precomputed per-(grid, config, family) stepping kernel.

    Operates on raw coefficient arrays with a leading path axis.
    """

    def __init__(self, cset: CoefficientSet, config: IntegratorConfig):
        grid = cset.grid
        self.cset = cset
        self.config = config
        self.grid = grid
        n = config.galerkin_n if config.galerkin_n is not None else grid.n_modes
        if not (1 <= n <= grid.n_modes):
            raise ValueError(
                f"galerkin_n must lie in [1, {grid.n_modes}], got {n}")
        self.galerkin_n = n
        self.mask = galerkin_mask(grid, n)
        self.mask_full = bool(self.mask.all())
        dt = config.dt
        z = -(1.0 + 1j * cset.alpha) * grid.eigenvalues * dt
        self.propagator = np.exp(z)
        self.phi1, self.phi2 = _phi_functions(z)
        self.semi_implicit_div = 1.0 - z
        # noise layout: channel 0 multiplicative, then (re, im) per additive mode
        self.n_add = min(cset.g.n_additive, n)
        self.n_channels = 1 + 2 * self.n_add
        self.amp_scale = 1.0 / math.sqrt(2.0 * grid.volume)
        self.noise_off = _noise_is_zero(cset)
        # oscillations unresolved by dt fall back to midpoint evaluation
        self.midpoint = cset.epsilon < 10.0 * dt

    def drift(self, t: float, U: np.ndarray) -> np.ndarray:
        cset = self.cset
        out = cset.f_eps(t, U)
        if self.config.cubic_enabled:
            out = out - (cset.gamma_eps(t) + 1j * cset.beta) \
                * cubic_term_coeffs(self.grid, U)
        if not self.mask_full:
            out = np.where(self.mask, out, 0.0)
        return out

    def advance(self, U: np.ndarray, t: float, dW: Optional[np.ndarray]):
        """One step from t to t + dt; dW has shape (n_paths, n_channels)."""
        dt = self.config.dt
        if self.midpoint:
            t1 = t2 = t + dt / 2.0
        else:
            t1, t2 = t, t + dt
        n1 = self.drift(t1, U)
        if self.config.scheme == "exponential_euler":
            ustar = self.propagator * U + self.phi1 * dt * n1
            n2 = self.drift(t2, ustar)
            out = ustar + self.phi2 * dt * (n2 - n1)
        else:
            out = U + dt * n1
        if not self.noise_off and dW is not None:
            out = out + self._noise_increment(t1, U, dW)
        if self.config.scheme == "semi_implicit_euler":
            out = out / self.semi_implicit_div
        if not self.mask_full:
            # out-of-band content can only enter through the input state
            out = np.where(self.mask, out, 0.0)
        out[..., 0] = 0.0
        return out

    def _noise_increment(self, t: float, U: np.ndarray, dW: np.ndarray):
        cset = self.cset
        inc = np.zeros_like(U)
        sig = cset.sigma_eps(t)[: self.n_add]
        cplx = dW[..., 1: 1 + self.n_add] + 1j * dW[..., 1 + self.n_add:]
        inc[..., 1: 1 + self.n_add] = sig * self.amp_scale * cplx
        mult = cset.mult_eps(t)
        if mult != 0.0:
            inc = inc + mult * U * dW[..., :1]
        return inc

    def l2_norms(self, U: np.ndarray) -> np.ndarray:
        return np.sqrt(sobolev_norm_sq_coeffs(self.grid, U, 0))


def _noise_is_zero(cset: CoefficientSet) -> bool:
    return all(
        np.all(cset.g.sigma(t) == 0.0) and cset.g.mult_scale(t) == 0.0
        for t in (0.0, 0.377, 1.93))


_CHUNK = 256   # noise table steps fetched per block


def _run(steppers: Sequence[_Stepper], states, s: float, n_steps: int,
         samplers, callback: Callable, blow_up="raise"):
    """March coupled systems over n_steps; all systems share the noise.

    ``states`` is a list of (n_paths, n_lattice) arrays, one per stepper.
    ``samplers`` is a list of WienerSampler, one per path, whose base step
    must equal dt.  ``callback(i, t, states, norms)`` fires after every
    step with the per-path max L^2 norm over systems already computed.
    Returns a boolean per-path blow-up mask (all False when blow_up="raise").
    """
    dt = steppers[0].config.dt
    n_paths = states[0].shape[0]
    n_ch = max(st.n_channels for st in steppers)
    need_noise = not all(st.noise_off for st in steppers)
    if need_noise:
        for smp in samplers:
            if abs(smp.base_step - dt) > 1e-12 * max(1.0, dt):
                raise ValueError(
                    f"sampler base_step {smp.base_step} != dt {dt}")
        j_start = samplers[0]._cell_index(s)
    for k, st in enumerate(steppers):
        if not st.mask_full:
            states[k] = np.where(st.mask, states[k], 0.0)
    blown = np.zeros(n_paths, dtype=bool)
    threshold = min(st.config.blow_up_threshold for st in steppers)

    for a in range(0, n_steps, _CHUNK):
        b = min(n_steps, a + _CHUNK)
        if need_noise:
            table = np.empty((n_paths, n_ch, b - a))
            for p, smp in enumerate(samplers):
                table[p] = smp.increment_table(
                    j_start + a, b - a, channels=range(n_ch))
        for i in range(a, b):
            t = s + i * dt
            for k, st in enumerate(steppers):
                dW = table[:, : st.n_channels, i - a] if need_noise else None
                states[k] = st.advance(states[k], t, dW)
            norms = steppers[0].l2_norms(states[0])
            for k in range(1, len(steppers)):
                norms = np.maximum(norms, steppers[k].l2_norms(states[k]))
            bad = ~np.isfinite(norms) | (norms > threshold)
            if bad.any():
                if blow_up == "raise":
                    raise BlowUpError(
                        f"solution norm exceeded {threshold} "
                        f"at t = {t + dt:.6g}", time=t + dt)
                newly = bad & ~blown
                if newly.any():
                    blown |= bad
                    for k in range(len(steppers)):
                        states[k][blown] = 0.0
            callback(i + 1, t + dt, states, norms)
    return blown


def _as_coeff_batch(init, grid: TorusGrid, n_paths: int) -> np.ndarray:
    if isinstance(init, SpectralField):
        return np.tile(init.coeffs, (n_paths, 1))
    init = np.asarray(init, dtype=complex)
    if init.ndim == 1:
        return np.tile(init, (n_paths, 1))
    if init.shape != (n_paths, grid.n_lattice):
        raise ValueError(f"bad initial state shape {init.shape}")
    return init.copy()


# -- public operations -------------------------------------------------------

def step(state: SpectralField, t: float, dt: float, cset: CoefficientSet,
         increment: Optional[np.ndarray] = None,
         config: Optional[IntegratorConfig] = None) -> SpectralField:
    """Advance a single state by one step of size dt.

    ``increment`` holds per-channel Wiener increments for this step
    (layout: multiplicative channel first, then re/im per additive mode);
    omit it for deterministic stepping.
    """
    if config is None:
        config = IntegratorConfig(dt=dt)
    elif abs(config.dt - dt) > 1e-15:
        raise ValueError("config.dt does not match dt")
    st = _Stepper(cset, config)
    U = state.coeffs[None, :].copy()
    dW = None
    if increment is not None:
        increment = np.asarray(increment, dtype=float)
        if increment.shape != (st.n_channels,):
            raise ValueError(
                f"increment must have shape ({st.n_channels},), "
                f"got {increment.shape}")
        dW = increment[None, :]
    out = st.advance(U, t, dW)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("blow-up within a single step", time=t + dt)
    return SpectralField(state.grid, out[0])


def solve_path(init: SpectralField, s: float, horizon_T: float,
               config: IntegratorConfig, cset: CoefficientSet,
               sampler: WienerSampler, store_every: Optional[int] = None,
               check: bool = True) -> Trajectory:
    """Integrate one path over [s, s + horizon_T].

    Pathwise deterministic given (sampler seed, init, config).  The running
    L^2 sup is tracked every step; states are stored every ``store_every``
    steps (default: about ``config.save_points`` states).
    """
    if check:
        report = check_conditions(cset)
        if report.margins["gamma_floor"] <= 0:
            raise ConditionError(
                "gamma floor margin "
                f"{report.margins['gamma_floor']:.4g} <= 0")
    st = _Stepper(cset, config)
    n_steps = _step_count(horizon_T, config.dt)
    stride = store_every or max(1, math.ceil(n_steps / config.save_points))

    U0 = _as_coeff_batch(init, cset.grid, 1)
    times = [s]
    states = [SpectralField(cset.grid, U0[0].copy())]
    sup = {"v": st.l2_norms(U0)[0]}

    def cb(i, t, batch, norms):
        sup["v"] = max(sup["v"], norms[0])
        if i % stride == 0 or i == n_steps:
            times.append(t)
            states.append(SpectralField(cset.grid, batch[0][0].copy()))

    _run([st], [U0], s, n_steps, [sampler], cb)
    return Trajectory(times=np.array(times), states=states,
                      running_sup_L2=float(sup["v"]),
                      path_id=(sampler.seed,))


def _step_count(T: float, dt: float) -> int:
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"horizon {T} is not a multiple of dt {dt}")
    if n < 1:
        raise ValueError("horizon must cover at least one step")
    return n


@dataclass
class EnsembleResult:
    times: np.ndarray                 # save times
    measures: list                    # EmpiricalMeasure per save time
    moments: dict                     # moment table, see solve_ensemble
    n_blown: int
    base_seed: int


def solve_ensemble(init, s: float, T: float, config: IntegratorConfig,
                   cset: CoefficientSet, n_paths: int, base_seed: int,
                   save_times=None) -> EnsembleResult:
    """Monte Carlo ensemble of n_paths independent paths.

    ``init`` is a SpectralField (shared deterministic IC) or a callable
    ``init(rng, grid) -> SpectralField`` drawn per path.  The moment table
    holds Monte Carlo estimates of E sup ||u||^{2p} for p in {1, 2},
    E int ||u||_1^2 dt and E int gamma ||u||_{L^4}^4 dt (the L^4 integral
    is accumulated at save resolution).
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    st = _Stepper(cset, config)
    grid = cset.grid
    n_steps = _step_count(T, config.dt)
    if save_times is None:
        stride = max(1, math.ceil(n_steps / config.save_points))
        save_steps = set(range(stride, n_steps + 1, stride)) | {n_steps}
    else:
        save_steps = {_step_count(t - s, config.dt) for t in save_times
                      if t > s}

    if callable(init):
        fields = []
        for p in range(n_paths):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=base_seed,
                                       spawn_key=(0xA5, p)))
            fields.append(init(rng, grid))
        U = np.stack([f.coeffs for f in fields])
    else:
        U = _as_coeff_batch(init, grid, n_paths)

    bank = NoiseBank(base_seed, st.n_channels, config.dt)
    samplers = [bank.sampler(p) for p in range(n_paths)]

    sup_l2 = st.l2_norms(U)
    int_h1 = np.zeros(n_paths)
    int_l4 = np.zeros(n_paths)
    times, measures = [], []
    dt = config.dt
    last_save = {"t": s}
    from .torus_spectral import to_physical

    def cb(i, t, batch, norms):
        W = batch[0]
        np.maximum(sup_l2, norms, out=sup_l2)
        # in-place accumulation; plain += would rebind the closure name
        np.add(int_h1, sobolev_norm_sq_coeffs(grid, W, 1) * dt, out=int_h1)
        if i in save_steps:
            vals = to_physical(grid, W)
            l4 = (np.abs(vals) ** 4).reshape(n_paths, -1).sum(axis=1) \
                * grid.cell_volume
            np.add(int_l4, cset.gamma_eps(t) * l4 * (t - last_save["t"]),
                   out=int_l4)
            last_save["t"] = t
            times.append(t)
            measures.append(W.copy())

    blown = _run([st], [U], s, n_steps, samplers, cb, blow_up="mask")
    n_blown = int(blown.sum())
    if n_blown > max(1, n_paths // 100):
        raise BlowUpError(
            f"{n_blown}/{n_paths} paths blew up (limit 1%)")
    keep = ~blown
    order = np.argsort(times)
    times = np.array(times)[order]
    measures = [EmpiricalMeasure.from_coeffs(grid, measures[i][keep])
                for i in order]

    ks = keep
    moments = {
        "E_sup_l2_sq": float((sup_l2[ks] ** 2).mean()),
        "E_sup_l2_4": float((sup_l2[ks] ** 4).mean()),
        "E_int_h1_sq": float(int_h1[ks].mean()),
        "E_int_gamma_l4_4": float(int_l4[ks].mean()),
    }
    return EnsembleResult(times=times, measures=measures, moments=moments,
                          n_blown=n_blown, base_seed=base_seed)


@dataclass
class PullbackResult:
    eval_times: np.ndarray
    measures: list                    # EmpiricalMeasure per eval time
    depths: list
    gaps: list                        # consecutive-depth mean-square gaps
    a_priori_bound: np.ndarray        # certified contraction tail per eval time
    converged: bool


def pullback_bounded_solution(cset: CoefficientSet, eval_times,
                              config: IntegratorConfig, noise: NoiseBank,
                              n_paths: int, depth_schedule=(2, 4, 8, 16),
                              tol: float = 1e-6) -> PullbackResult:
    """Bounded-solution law by pullback: solve from (-n, 0) along one path.

    For each depth n the ensemble is restarted from the zero field at
    t = -n and integrated over the same per-path noise; the scheme stops
    when consecutive depths agree in mean square at every eval time.
    Requires gap1 = lambda_* - lambda_f - L_g^2/2 > 0.
    """
    report = check_conditions(cset)
    report.require("gamma_floor", "gap1")
    depth_schedule = list(depth_schedule)
    if any(b <= a for a, b in zip(depth_schedule, depth_schedule[1:])):
        raise ValueError("depth_schedule must be increasing")
    eval_times = np.asarray(sorted(eval_times), dtype=float)
    t_max = float(eval_times[-1])
    gap1 = report.margins["gap1"]

    st = _Stepper(cset, config)
    grid = cset.grid
    samplers = [noise.sampler(p) for p in range(n_paths)]
    prev = None
    prev_depth = None
    gaps = []
    depths_run = []
    result_states = None
    norm_at_prev_depth = 0.0

    for depth in depth_schedule:
        s0 = -float(depth)
        n_steps = _step_count(t_max - s0, config.dt)
        save_steps = {_step_count(t - s0, config.dt): t for t in eval_times
                      if t > s0 + 1e-12}
        snap = {}
        mark = {_step_count(-float(prev_depth) - s0, config.dt)} \
            if prev_depth is not None else set()
        cross = {"v": 0.0}

        def cb(i, t, batch, norms):
            if i in save_steps:
                snap[save_steps[i]] = batch[0].copy()
            if i in mark:
                cross["v"] = float(
                    (sobolev_norm_sq_coeffs(grid, batch[0], 0)).mean())

        U = np.zeros((n_paths, grid.n_lattice), dtype=complex)
        _run([st], [U], s0, n_steps, samplers, cb)
        states = np.stack([snap[t] for t in eval_times])
        depths_run.append(depth)
        if prev is not None:
            diff = states - prev
            gap = float(max(
                sobolev_norm_sq_coeffs(grid, d, 0).mean() for d in diff))
            gaps.append(gap)
            norm_at_prev_depth = cross["v"]
            if gap < tol:
                result_states = states
                break
        prev = states
        prev_depth = depth
    else:
        raise PullbackNotConverged(
            f"pullback gaps {gaps} did not reach tol {tol} "
            f"within depths {depths_run}", gaps=gaps, depths=depths_run)

    bound = np.exp(-gap1 * (eval_times + prev_depth)) * norm_at_prev_depth
    measures = [EmpiricalMeasure.from_coeffs(grid, result_states[i])
                for i in range(len(eval_times))]
    return PullbackResult(eval_times=eval_times, measures=measures,
                          depths=depths_run, gaps=gaps,
                          a_priori_bound=bound, converged=True)


def contraction_test(cset: CoefficientSet, config: IntegratorConfig,
                     noise: NoiseBank, ic_pairs, horizon: float,
                     n_paths: int = 256) -> dict:
    """Square-mean contraction rate between coupled solutions.

    Couples each pair of initial conditions on the same Wiener path and
    fits the decay slope of log E ||u1 - u2||^2 over the horizon.  The
    certified rate is -(2 lambda_* - 2 lambda_f - L_g^2); the fitted slope
    should not exceed it (the cubic term only helps).
    """
    report = check_conditions(cset)
    report.require("gamma_floor", "gap1")
    st = _Stepper(cset, config)
    grid = cset.grid
    n_steps = _step_count(horizon, config.dt)
    stride = max(1, math.ceil(n_steps / config.save_points))

    rows = []
    for z1, z2 in ic_pairs:
        rows.append((np.tile(z1.coeffs, (n_paths, 1)),
                     np.tile(z2.coeffs, (n_paths, 1))))
    U1 = np.concatenate([r[0] for r in rows])
    U2 = np.concatenate([r[1] for r in rows])
    total = U1.shape[0]
    samplers = [noise.sampler(p) for p in range(total)]

    times = [0.0]
    msq = [float(sobolev_norm_sq_coeffs(grid, U1 - U2, 0).mean())]

    def cb(i, t, batch, norms):
        if i % stride == 0 or i == n_steps:
            times.append(t)
            msq.append(float(
                sobolev_norm_sq_coeffs(grid, batch[0] - batch[1], 0).mean()))

    _run([st, st], [U1, U2], 0.0, n_steps, samplers, cb)
    times = np.array(times)
    msq = np.array(msq)

    # drop the machine-zero tail before fitting
    alive = msq > max(msq[0] * 1e-24, 1e-300)
    if alive.sum() < 3:
        raise RuntimeError("difference hit machine zero immediately; "
                           "shorten the horizon or separate the ICs")
    slope = np.polyfit(times[alive], np.log(msq[alive]), 1)[0]
    predicted = -(2.0 * grid.lambda_star - 2.0 * cset.lambda_f
                  - cset.L_g ** 2)
    return {
        "measured_slope": float(slope),
        "predicted_rate": float(predicted),
        "times": times,
        "mean_square_gap": msq,
    }


def time_increment_modulus(trajectories, delta_grid) -> dict:
    """E int ||u - u_step||^2 dt for piecewise-constant delta-step freezes.

    ``trajectories`` must share a uniform stored-time grid fine enough
    that every delta is a multiple of the storage step.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    t = trajectories[0].times
    dt_store = float(t[1] - t[0])
    grid = trajectories[0].states[0].grid
    stacks = [np.stack([f.coeffs for f in tr.states]) for tr in trajectories]
    table = {}
    for delta in delta_grid:
        k = round(delta / dt_store)
        if k < 1 or abs(k * dt_store - delta) > 1e-9:
            raise ValueError(
                f"delta {delta} is not a multiple of the stored step "
                f"{dt_store}")
        vals = []
        for S in stacks:
            anchors = (np.arange(len(t)) // k) * k
            diff = S - S[anchors]
            vals.append(
                (sobolev_norm_sq_coeffs(grid, diff, 0)).sum() * dt_store)
        table[float(delta)] = float(np.mean(vals))
    return table
