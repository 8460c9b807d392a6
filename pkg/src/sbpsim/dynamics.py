"""Right-hand side assembly, exact-phase Strang stepping, conserved
quantities, and trajectory generation.

The equation integrated is

    i u_t + Lap u = coeff * [ (K * |u|^2) u - |u|^(2/d) u ]

with K the Bopp-Podolsky kernel (coeff=1 physical, coeff=0 free flow).
Both nonlinear terms are real multiplicative potentials, so the nonlinear
substep integrates exactly: |u| is invariant while the potential acts,
hence u <- exp(-i dt V[u]) u with V frozen is the exact flow of the
nonlinear part.  Strang composition with the exact free flow gives a
mass-conserving scheme with O(dt^2) global error.

No dealiasing filter is applied: the power nonlinearity is non-polynomial
in d=3, so the 2/3 rule would not make products exact anyway.  Resolution
adequacy is instead monitored through the top-octave spectral tail, and
box adequacy through a preflight envelope rule plus a boundary-mass
monitor that aborts the run when mass reaches the box edge.

Snapshot emission is decoupled from stepping: the integrator hands
immutable field copies to the diagnostics sink in time order and never
reads anything back, so a consumer may process them concurrently without
affecting the trajectory.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from . import backend
from .bpkernel import build_multiplier, convolve_real
from .grid import (
    PHYSICAL,
    ComplexField,
    _workers,
    fft,
    field_from_function,
    make_grid,
    norms,
    spectral_tail_fraction,
    weighted_sobolev_norm,
)

BOUNDARY_MASS_LIMIT = 1e-6
SPECTRAL_TAIL_LIMIT = 1e-8
BOUNDARY_BAND_CELLS = 2
ENVELOPE_QUANTILE = 1.0 - 1e-5  # mass quantile defining radii in the box rule


def gamma_default(dim):
    """Regularity index 1/2 + (d^2+4)/(4d): 3/2 in 2D, 19/12 in 3D."""
    return 0.5 + (dim**2 + 4.0) / (4.0 * dim)


def gamma_bounds(dim):
    """Admissible open interval (d/2, 1 + 2/d) for the regularity index."""
    return dim / 2.0, 1.0 + 2.0 / dim


@dataclass(frozen=True)
class SimConfig:
    dim: int
    n: int
    box: float
    eps: float
    dt: float
    t_end: float
    gamma: float | None = None
    family: str = "gaussian"
    width: float = 1.0
    center: tuple = ()
    modulation: tuple = ()
    snapshot_path: str | None = None
    snapshot_stride: int = 0
    snapshots_per_octave: int = 0
    seed: int = 0
    nonlin_coeff: float = 1.0
    diagnostics_start: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if not self.eps > 0:
            raise ValueError("initial-data size eps must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        lo, hi = gamma_bounds(self.dim)
        g = self.gamma_value
        if not (lo < g < hi):
            raise ValueError(
                f"gamma {g} outside the admissible interval ({lo}, {hi})"
            )
        if self.family == "gaussian" and not self.width > 0:
            raise ValueError("gaussian family needs positive width")
        if self.family not in ("gaussian", "snapshot"):
            raise ValueError(f"unknown data family {self.family!r}")
        if self.family == "snapshot" and not self.snapshot_path:
            raise ValueError("snapshot family needs snapshot_path")

    @property
    def gamma_value(self):
        return gamma_default(self.dim) if self.gamma is None else self.gamma

    def grid(self):
        return make_grid(self.dim, self.n, self.box)


@dataclass
class SimState:
    u: ComplexField
    t: float
    step_count: int
    theta: np.ndarray  # accumulated phase integral on the frequency grid
    theta_t: float  # time through which theta is current
    mass0: float
    energy0: float


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    linf: float
    sobolev: float
    weighted: float
    boundary_mass: float
    spectral_tail: float
    d_norm: float = np.nan
    e_norm: float = np.nan
    x_norm: float = np.nan
    bridge_ratio: float = np.nan
    i_norms: tuple = ()


def prepare_initial_data(config):
    """Build the data-family member and rescale to the prescribed size.

    The weighted Sobolev norm is homogeneous, so a single scaling makes
    ||u0||_{H^{gamma,gamma}} equal eps exactly.
    """
    grid = config.grid()
    if config.family == "gaussian":
        w = config.width
        center = list(config.center) + [0.0] * (config.dim - len(config.center))
        mod = list(config.modulation) + [0.0] * (config.dim - len(config.modulation))

        def fn(*axes):
            r2 = sum((a - c) ** 2 for a, c in zip(axes, center))
            phase = sum(v * a for v, a in zip(mod, axes))
            return np.exp(-r2 / (2.0 * w * w)) * np.exp(1j * phase)

        u = field_from_function(grid, fn)
    else:
        from .fieldio import read_field

        u = read_field(config.snapshot_path)
        if u.grid != grid:
            raise ValueError("snapshot grid does not match the configuration")
    norm = weighted_sobolev_norm(u, config.gamma_value)
    if norm == 0:
        raise ValueError("degenerate initial data (zero norm)")
    u.values *= config.eps / norm
    return u


def nonlinear_potential(u, multiplier, coeff=1.0):
    """V[u] = coeff * ((K*|u|^2) - |u|^(2/d)) as a real field."""
    g = u.grid
    rho = np.empty(g.shape, dtype=np.float64)
    backend.abs2(u.values.reshape(-1), rho.reshape(-1))
    conv = convolve_real(multiplier, rho)
    if g.dim == 2:
        power = np.sqrt(rho)
    else:
        power = np.cbrt(rho)
    return ComplexField(g, (coeff * (conv - power)).astype(complex), PHYSICAL)


def conserved_quantities(u, multiplier, coeff=1.0):
    """Mass ||u||_L2^2 and the Hamiltonian

        E[u] = int |grad u|^2 + coeff*( 1/2 int (K*|u|^2)|u|^2
                                        - d/(d+1) int |u|^(2+2/d) ),

    whose variation in conj(u) reproduces the right-hand side.
    """
    g = u.grid
    vhat = fft(u)
    cell_xi = g.dxi**g.dim
    kinetic = float(np.sum(g.xi_squared * np.abs(vhat.values) ** 2) * cell_xi)
    rho = (u.values.real**2 + u.values.imag**2).astype(np.float64)
    conv = convolve_real(multiplier, rho)
    cell = g.cell_volume
    hartree = 0.5 * float(np.sum(conv * rho)) * cell
    p = 1.0 + 1.0 / g.dim  # |u|^(2+2/d) = rho^(1+1/d)
    power = -(g.dim / (g.dim + 1.0)) * float(np.sum(rho**p)) * cell
    mass = float(np.sum(rho)) * cell
    return mass, kinetic + coeff * (hartree + power)


class Stepper:
    """Strang splitting with exact substeps; owns per-run scratch state."""

    def __init__(self, grid, multiplier, dt, coeff=1.0):
        self.grid = grid
        self.multiplier = multiplier
        self.dt = dt
        self.coeff = coeff
        self.half_phase = np.exp(-0.5j * dt * grid.xi_squared)
        self.full_phase = self.half_phase**2
        self._rho = np.empty(grid.shape, dtype=np.float64)

    def _free(self, values, phase):
        # the centered-box sign factors cancel around a diagonal multiplier,
        # so the raw DFT pair suffices here
        work = sfft.fftn(values, workers=_workers())
        work *= phase
        return sfft.ifftn(work, workers=_workers(), overwrite_x=True)

    def _kick(self, values, dt):
        flat = values.reshape(-1)
        backend.abs2(flat, self._rho.reshape(-1))
        conv = convolve_real(self.multiplier, self._rho)
        backend.nonlinear_phase(
            flat, conv.reshape(-1), dt, self.coeff, self.grid.dim
        )

    def step(self, values, nsteps=1):
        """Advance nsteps; consecutive half-steps of the free flow fuse
        into full steps, so the cost is one FFT pair plus one padded
        convolution per step."""
        if nsteps < 1:
            return values
        out = self._free(values, self.half_phase)
        self._kick(out, self.dt)
        for _ in range(nsteps - 1):
            out = self._free(out, self.full_phase)
            self._kick(out, self.dt)
        out = self._free(out, self.half_phase)
        if not np.all(np.isfinite(out.view(np.float64))):
            raise FloatingPointError("non-finite field during stepping")
        return out


def step_strang(state, dt, multiplier, coeff=1.0):
    """Single Strang step as a pure function on a SimState (convenience
    wrapper over Stepper for tests and small studies)."""
    stepper = Stepper(state.u.grid, multiplier, dt, coeff)
    vals = stepper.step(state.u.values.copy(), 1)
    return dataclasses.replace(
        state,
        u=ComplexField(state.u.grid, vals, PHYSICAL),
        t=state.t + dt,
        step_count=state.step_count + 1,
    )


def boundary_mass_fraction(u, band_cells=BOUNDARY_BAND_CELLS):
    """Mass fraction in the outermost band of cells along any axis."""
    g = u.grid
    margin = band_cells * g.h
    mask = np.zeros(g.shape, dtype=bool)
    for ax in range(g.dim):
        shape = [1] * g.dim
        shape[ax] = g.n
        mask |= np.abs(g.axis_x).reshape(shape) > (g.length / 2.0 - margin)
    p2 = u.values.real**2 + u.values.imag**2
    total = p2.sum()
    if total == 0:
        return 0.0
    return float(p2[mask].sum() / total)


def radial_quantile(weights, radii, q):
    """Radius enclosing the q mass-quantile of the nonnegative weights."""
    order = np.argsort(radii.reshape(-1))
    w = weights.reshape(-1)[order]
    c = np.cumsum(w)
    if c[-1] == 0:
        return 0.0
    idx = int(np.searchsorted(c, q * c[-1]))
    return float(radii.reshape(-1)[order][min(idx, len(order) - 1)])


class PreflightError(ValueError):
    """Configuration rejected before stepping begins."""


def preflight(config, u0):
    """Box and resolution adequacy checks.

    Box rule: L/2 must exceed the data's envelope radius plus the group
    velocity 2*xi_q of its fast quantile times t_end, so the free-spreading
    envelope stays inside the box.  Resolution rule: the top-octave energy
    fraction of the data must be below SPECTRAL_TAIL_LIMIT.
    """
    g = u0.grid
    p2 = u0.values.real**2 + u0.values.imag**2
    x_radius = radial_quantile(p2, np.sqrt(g.r_squared), ENVELOPE_QUANTILE)
    vhat = fft(u0)
    q2 = np.abs(vhat.values) ** 2
    xi_radius = radial_quantile(q2, g.xi_norm, ENVELOPE_QUANTILE)
    required_half = x_radius + 2.0 * xi_radius * config.t_end
    if g.length / 2.0 < required_half:
        raise PreflightError(
            f"box too small for t_end={config.t_end}: need L >= "
            f"{2.0 * required_half:.1f}, have {g.length}"
        )
    tail = spectral_tail_fraction(vhat)
    if tail > SPECTRAL_TAIL_LIMIT:
        raise PreflightError(
            f"initial data under-resolved: top-octave fraction {tail:.2e} "
            f"> {SPECTRAL_TAIL_LIMIT:.0e}"
        )
    return {"x_radius": x_radius, "xi_radius": xi_radius, "tail": tail}


def snapshot_times(config):
    """Snapshot schedule in units of whole steps.

    snapshot_stride emits every k-th step; snapshots_per_octave emits a
    log-spaced schedule from diagnostics_start (plus t=0 and t_end), with
    times rounded to the step grid.  Both may be combined.
    """
    nsteps = int(round(config.t_end / config.dt))
    steps = {0, nsteps}
    if config.snapshot_stride > 0:
        steps.update(range(0, nsteps + 1, config.snapshot_stride))
    if config.snapshots_per_octave > 0 and config.t_end > config.diagnostics_start:
        t0 = config.diagnostics_start
        count = int(
            np.ceil(np.log2(config.t_end / t0) * config.snapshots_per_octave)
        )
        for k in range(count + 1):
            t = t0 * 2.0 ** (k / config.snapshots_per_octave)
            s = int(round(min(t, config.t_end) / config.dt))
            steps.add(min(s, nsteps))
    start_step = int(round(config.diagnostics_start / config.dt))
    steps.add(min(start_step, nsteps))
    return sorted(steps)


@dataclass
class Trajectory:
    config: SimConfig
    records: list
    snapshots: dict  # time -> ComplexField (physical space)
    theta: np.ndarray
    theta_t: float
    preflight_report: dict
    aborted: str | None = None
    final_state: SimState | None = None

    def snapshot_at(self, t):
        key = min(self.snapshots, key=lambda s: abs(s - t))
        if abs(key - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[key]


def run(config, keep_fields=True, on_snapshot=None, initial_state=None):
    """Integrate from t=0 (or a checkpoint state) to t_end.

    Emits a DiagnosticsRecord at every scheduled snapshot, accumulates the
    scattering phase integral for t >= diagnostics_start, and aborts if
    the boundary-mass monitor trips.  Determinism: fixed config and seed
    reproduce the trajectory bit for bit (single-threaded transforms).
    """
    from .diagnostics import accumulate_phase_pair, bootstrap_norms, profile

    grid = config.grid()
    mult = build_multiplier(grid, mode="sampled", pad_factor=2)
    if initial_state is None:
        u0 = prepare_initial_data(config)
        pf = preflight(config, u0)
        theta = np.zeros(grid.shape, dtype=np.float64)
        state = None
        u_vals = u0.values.copy()
        t_now = 0.0
        step_now = 0
        theta_t = config.diagnostics_start
        mass0, energy0 = conserved_quantities(u0, mult, config.nonlin_coeff)
    else:
        state = initial_state
        pf = {"resumed": True}
        u_vals = state.u.values.copy()
        t_now = state.t
        step_now = state.step_count
        theta = state.theta.copy()
        theta_t = state.theta_t
        mass0, energy0 = state.mass0, state.energy0

    stepper = Stepper(grid, mult, config.dt, config.nonlin_coeff)
    schedule = [s for s in snapshot_times(config) if s >= step_now]
    records = []
    snapshots = {}
    traj = Trajectory(
        config=config,
        records=records,
        snapshots=snapshots,
        theta=theta,
        theta_t=theta_t,
        preflight_report=pf,
    )
    prev_profile = None
    if initial_state is not None and t_now >= config.diagnostics_start:
        prev_profile = profile(ComplexField(grid, u_vals.copy(), PHYSICAL), t_now)

    def emit(t, vals):
        nonlocal prev_profile
        u = ComplexField(grid, vals.copy(), PHYSICAL)
        mass, energy = conserved_quantities(u, mult, config.nonlin_coeff)
        rep = norms(u, config.gamma_value)
        rec = DiagnosticsRecord(
            t=t,
            mass=mass,
            energy=energy,
            linf=rep.linf,
            sobolev=rep.sobolev_gamma,
            weighted=rep.weighted_gamma,
            boundary_mass=boundary_mass_fraction(u),
            spectral_tail=spectral_tail_fraction(u),
        )
        if t >= config.diagnostics_start:
            snap = profile(u, t)
            if prev_profile is not None:
                accumulate_phase_pair(
                    traj, prev_profile, snap, config.nonlin_coeff
                )
            prev_profile = snap
            d, e, bridge = bootstrap_norms(
                u, t, config.eps, config.gamma_value, snap=snap
            )
            rec.d_norm = d
            rec.e_norm = e
            prev_x = records[-1].x_norm if records else np.nan
            rec.x_norm = (
                d + e if np.isnan(prev_x) else max(prev_x, d + e)
            )
            rec.bridge_ratio = bridge
        records.append(rec)
        if keep_fields:
            snapshots[t] = u
        if on_snapshot is not None:
            on_snapshot(rec, u)
        if rec.boundary_mass > BOUNDARY_MASS_LIMIT:
            raise RunAbort(
                f"box too small: boundary mass {rec.boundary_mass:.2e} at t={t}"
            )

    try:
        if step_now == 0 or initial_state is not None:
            emit(t_now, u_vals)
        for target in schedule:
            if target <= step_now:
                continue
            u_vals = stepper.step(u_vals, target - step_now)
            step_now = target
            t_now = step_now * config.dt
            emit(t_now, u_vals)
    except RunAbort as exc:
        traj.aborted = str(exc)
        raise

    traj.final_state = SimState(
        u=ComplexField(grid, u_vals, PHYSICAL),
        t=t_now,
        step_count=step_now,
        theta=traj.theta,
        theta_t=traj.theta_t,
        mass0=mass0,
        energy0=energy0,
    )
    return traj


class RunAbort(RuntimeError):
    """Numerical abort during stepping (boundary monitor, NaN guard)."""
