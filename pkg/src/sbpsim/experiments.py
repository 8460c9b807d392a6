"""Preset execution: runs, verdict JSON, and CSV artifacts.

Every runner returns a verdict dict (schema sbpsim-verdict-1) and writes
its machine-readable artifacts into the preset's output directory.  All
numeric output is serialized via repr, so fixed inputs give byte-identical
files.  A run owns its output directory exclusively through a lockfile.
"""

import csv
import json
import os
from pathlib import Path

import numpy as np

from . import __version__, backend
from .bpkernel import (
    analytic_transform,
    build_multiplier,
    convolve,
    export_multiplier_csv,
    kernel_profile,
    lemma1_report,
)
from .config import serialize_config
from .diagnostics import (
    FrequencyKernel,
    asymptotic_comparison,
    decay_fit,
    dyadic_cauchy,
    extract_W,
    nonlinear_symbol,
    profile,
    profile_ode_residual,
)
from .dynamics import (
    SimConfig,
    Stepper,
    build_multiplier as _bm,  # noqa: F401  (re-export guard)
    conserved_quantities,
    gamma_default,
    nonlinear_potential,
    prepare_initial_data,
    run,
)
from .fieldio import write_field
from .grid import (
    ComplexField,
    apply_multiplier,
    field_from_function,
    l2_norm,
    make_grid,
    random_smooth_field,
)
from .presets import get_preset
from .propagator import J_power, galilean_J, mdfm_factorization_check

SERIES_COLUMNS = (
    "t", "mass", "energy", "linf", "sobolev", "weighted", "boundary_mass",
)
RECORD_COLUMNS = SERIES_COLUMNS + (
    "spectral_tail", "d_norm", "e_norm", "x_norm", "bridge_ratio",
    "i1", "i2", "i3", "i4",
)


class OutputLock:
    """Exclusive ownership of an output directory for one run."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another run: {self.path}"
            ) from None
        return self

    def __exit__(self, *exc):
        os.close(self._fd)
        self.path.unlink(missing_ok=True)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_verdict(path, verdict):
    with open(path, "w") as fh:
        json.dump(verdict, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _check(name, value, op, threshold):
    ops = {
        "<=": lambda v, t: v <= t,
        ">=": lambda v, t: v >= t,
        "<": lambda v, t: v < t,
        "in": lambda v, t: t[0] <= v <= t[1],
        "==": lambda v, t: v == t,
    }
    ok = bool(ops[op](value, threshold))
    thr = list(threshold) if isinstance(threshold, tuple) else threshold
    return {"name": name, "value": value, "op": op, "threshold": thr, "pass": ok}


def _verdict(preset_name, checks, extra=None):
    verdict = {
        "schema": "sbpsim-verdict-1",
        "version": __version__,
        "backend": backend.BACKEND,
        "preset": preset_name,
        "criterion": get_preset(preset_name).criterion,
        "checks": checks,
        "pass": all(c["pass"] for c in checks),
    }
    if extra:
        verdict.update(extra)
    return verdict


def _series_rows(records):
    return [
        [r.t, r.mass, r.energy, r.linf, r.sobolev, r.weighted, r.boundary_mass]
        for r in records
    ]


def _record_rows(records):
    rows = []
    for r in records:
        i_norms = list(r.i_norms) + [np.nan] * (4 - len(r.i_norms))
        rows.append(
            [r.t, r.mass, r.energy, r.linf, r.sobolev, r.weighted,
             r.boundary_mass, r.spectral_tail, r.d_norm, r.e_norm,
             r.x_norm, r.bridge_ratio] + i_norms
        )
    return rows


def _write_run_artifacts(out, traj):
    write_csv(out / "series.csv", SERIES_COLUMNS, _series_rows(traj.records))
    write_csv(out / "records.csv", RECORD_COLUMNS, _record_rows(traj.records))
    with open(out / "config.txt", "w") as fh:
        fh.write(serialize_config(traj.config))


# --------------------------------------------------------------------------
# criterion 1: operator identities
# --------------------------------------------------------------------------

def run_ops_identities(out_dir, seed=7):
    preset = get_preset("ops-identities")
    thr = preset.thresholds
    p = preset.params
    checks = []

    for label in ("j_route_2d", "j_route_3d"):
        spec = p[label]
        dim = 2 if label.endswith("2d") else 3
        grid = make_grid(dim, spec["n"], spec["box"])
        u = random_smooth_field(
            grid, seed=seed, band_fraction=spec["band"],
            envelope_width=spec["envelope"],
        )
        worst = 0.0
        for t in spec["times"]:
            direct = galilean_J(u, t, "direct")
            gauge = galilean_J(u, t, "gauge")
            scale = max(l2_norm(c) for c in direct)
            dev = max(
                l2_norm(ComplexField(grid, a.values - b.values))
                for a, b in zip(direct, gauge)
            )
            worst = max(worst, dev / scale)
        checks.append(_check(label, worst, "<=", thr["j_route_rel"]))

    for label in ("j_power_2d", "j_power_3d"):
        spec = p[label]
        dim = 2 if label.endswith("2d") else 3
        grid = make_grid(dim, spec["n"], spec["box"])
        c0, w = spec["center"], spec["width"]
        u = field_from_function(
            grid,
            lambda *axes: np.exp(
                -sum((a - c0) ** 2 for a in axes) / (2.0 * w * w)
            ),
        )
        gamma = gamma_default(dim)
        a = J_power(u, spec["t"], gamma, "gauge")
        b = J_power(u, spec["t"], gamma, "weight")
        rel = l2_norm(ComplexField(grid, a.values - b.values)) / l2_norm(a)
        checks.append(_check(label, rel, "<=", thr["j_power_rel"]))

    for label in ("mdfm_2d", "mdfm_3d"):
        spec = p[label]
        dim = 2 if label.endswith("2d") else 3
        grid = make_grid(dim, spec["n"], spec["box"])
        w = spec["width"]
        u = field_from_function(
            grid,
            lambda *axes: np.exp(-sum(a**2 for a in axes) / (2.0 * w * w)),
        )
        dev = mdfm_factorization_check(u, spec["t"])
        checks.append(_check(label, dev, "<=", thr["mdfm_rel"]))

    out = Path(out_dir)
    verdict = _verdict("ops-identities", checks, {"seed": seed})
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# criterion 2: free-flow exactness
# --------------------------------------------------------------------------

def run_free_flow(out_dir):
    preset = get_preset("free-flow-exact")
    config = preset.config
    traj = run(config, keep_fields=True)
    grid = config.grid()
    u0 = prepare_initial_data(config)
    amp = complex(u0.values[(grid.n // 2,) * grid.dim])
    w = config.width
    q = w * w + 2j * config.t_end
    exact = field_from_function(
        grid,
        lambda *axes: amp
        * (w * w / q) ** (grid.dim / 2.0)
        * np.exp(-sum(a**2 for a in axes) / (2.0 * q)),
    )
    final = traj.snapshot_at(config.t_end)
    rel = l2_norm(ComplexField(grid, final.values - exact.values)) / l2_norm(exact)
    checks = [_check("free_gaussian_rel_l2", rel, "<=", preset.thresholds["rel_l2"])]
    out = Path(out_dir)
    _write_run_artifacts(out, traj)
    verdict = _verdict("free-flow-exact", checks)
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# criterion 3: conservation
# --------------------------------------------------------------------------

def variational_oracle_deviation(dim=2, n=64, box=32.0, seed=5, coeff=1.0):
    """Central finite difference of the energy against the assembled
    right-hand side: validates the 1/2 and d/(d+1) coefficients."""
    grid = make_grid(dim, n, box)
    mult = build_multiplier(grid, mode="sampled", pad_factor=2)
    u = random_smooth_field(grid, seed=seed, band_fraction=0.25,
                            envelope_width=box / 10.0)
    u.values *= 0.5
    v = random_smooth_field(grid, seed=seed + 1, band_fraction=0.25,
                            envelope_width=box / 10.0)

    def energy(values):
        return conserved_quantities(
            ComplexField(grid, values), mult, coeff
        )[1]

    s = 1e-5
    fd = (energy(u.values + s * v.values) - energy(u.values - s * v.values)) / (2 * s)
    lap = apply_multiplier(u, -grid.xi_squared)
    pot = nonlinear_potential(u, mult, coeff)
    rhs = -lap.values + pot.values.real * u.values
    inner = 2.0 * float(
        np.sum((rhs * np.conj(v.values)).real) * grid.cell_volume
    )
    return abs(fd - inner) / max(abs(fd), abs(inner))


def energy_drift_order(params):
    """Peak relative energy drift at dt and dt/2; returns their ratio."""
    drifts = []
    for dt in (params["dt"], params["dt"] / 2.0):
        stride = int(round(0.2 / dt))
        config = SimConfig(
            dim=params["dim"], n=params["n"], box=params["box"],
            eps=params["eps"], dt=dt, t_end=params["t_end"],
            width=params["width"], snapshot_stride=stride,
        )
        traj = run(config, keep_fields=False)
        e0 = traj.records[0].energy
        drift = max(abs(r.energy - e0) for r in traj.records[1:]) / abs(e0)
        drifts.append(drift)
    return drifts[0] / drifts[1], drifts


def run_conservation(out_dir):
    preset = get_preset("conservation")
    thr = preset.thresholds
    checks = []

    oracle_dev = variational_oracle_deviation()
    checks.append(
        _check("variational_oracle", oracle_dev, "<=", thr["variational_oracle"])
    )

    traj = run(preset.config, keep_fields=False)
    m0 = traj.records[0].mass
    drift = max(abs(r.mass - m0) for r in traj.records[1:]) / m0
    checks.append(_check("mass_drift_1e4_steps", drift, "<=", thr["mass_drift"]))

    ratio, drifts = energy_drift_order(preset.params["energy_order"])
    checks.append(
        _check(
            "energy_drift_order", ratio, "in",
            (thr["energy_order_low"], thr["energy_order_high"]),
        )
    )

    out = Path(out_dir)
    _write_run_artifacts(out, traj)
    verdict = _verdict(
        "conservation", checks,
        {"energy_drifts": drifts, "steps": traj.records[-1].t / preset.config.dt},
    )
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# criterion 4: kernel correctness
# --------------------------------------------------------------------------

def direct_convolution(grid, density_values):
    """O(N^2) double-loop convolution oracle."""
    axes = np.meshgrid(*([grid.axis_x] * grid.dim), indexing="ij")
    out = np.zeros(grid.shape)
    it = np.nditer(density_values, flags=["multi_index"])
    for val in it:
        shifted = sum(
            (a - a[it.multi_index]) ** 2 for a in axes
        )
        out += float(val.real) * kernel_profile(np.sqrt(shifted))
    return out * grid.cell_volume


def run_kernel_check(out_dir):
    preset = get_preset("kernel-correctness")
    thr = preset.thresholds
    p = preset.params
    checks = []
    out = Path(out_dir)

    spec = p["conv"]
    grid = make_grid(spec["dim"], spec["n"], spec["box"])
    rng = np.random.default_rng(spec["seed"])
    density = ComplexField(grid, rng.random(grid.shape).astype(complex))
    mult = build_multiplier(grid, mode="sampled", pad_factor=2)
    fast = convolve(mult, density).values.real
    direct = direct_convolution(grid, density.values)
    rel = float(np.abs(fast - direct).max() / np.abs(direct).max())
    checks.append(_check("conv_vs_direct", rel, "<=", thr["conv_vs_direct"]))

    spec = p["band"]
    grid = make_grid(2, spec["n"], spec["box"])
    sampled = build_multiplier(grid, mode="sampled", pad_factor=2)
    analytic = build_multiplier(grid, mode="analytic", pad_factor=2)
    xi1 = sampled.padded_frequencies()
    ax = np.meshgrid(xi1, xi1, indexing="ij")
    xin = np.sqrt(sum(a**2 for a in ax))
    band = (xin >= spec["lo"]) & (xin <= grid.xi_max / 2.0)
    dev = np.abs(sampled.table[band] - analytic.table[band]) / np.abs(
        analytic.table[band]
    )
    band_dev = float(dev.max())
    checks.append(_check("band_rel_dev", band_dev, "<=", thr["band_rel_dev"]))
    export_multiplier_csv(sampled, out / "multiplier_sampled.csv")
    export_multiplier_csv(analytic, out / "multiplier_analytic.csv")

    spec = p["lemma1"]
    rep_cauchy = lemma1_report(spec["p_cauchy"], spec["boxes"], dim=2)
    change = rep_cauchy["relative_changes"][0]
    checks.append(_check("lemma1_p25_change", change, "<", thr["lemma1_p25_change"]))

    rep_log = lemma1_report(2.0, spec["boxes"], dim=2)
    inc = rep_log["sq_increments"][0]
    expect = rep_log["sq_increments_expected"][0]
    log_dev = abs(inc - expect) / expect
    checks.append(
        _check("lemma1_log_trend_rel", log_dev, "<=", thr["lemma1_log_trend_rel"])
    )
    rep_sup = lemma1_report(np.inf, spec["boxes"], dim=2)
    checks.append(_check("lemma1_sup", rep_sup["rows"][0]["norm"], "==", 1.0))

    rows = [
        (r["box"], rep["p"], r["norm"])
        for rep in (rep_cauchy, rep_log)
        for r in rep["rows"]
    ]
    write_csv(out / "lemma1_norms.csv", ("box", "p", "norm"), rows)
    verdict = _verdict("kernel-correctness", checks)
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# criterion 5: sharp decay
# --------------------------------------------------------------------------

def run_decay(out_dir, dim=2):
    name = "decay-2d" if dim == 2 else "decay-3d"
    preset = get_preset(name)
    config = preset.config
    traj = run(config, keep_fields=False)
    records = [r for r in traj.records if r.t >= 1.0]
    ts = np.array([r.t for r in records])
    linfs = np.array([r.linf for r in records])
    slope_full, _, stderr_full = decay_fit(ts, linfs)

    t_hi = config.t_end
    t_lo = t_hi / 10.0 ** preset.params["fit_window_decades"]
    sel = ts >= t_lo * (1 - 1e-9)
    slope, intercept, stderr = decay_fit(ts[sel], linfs[sel])
    checks = [
        _check(
            "decay_slope", slope, "in",
            (preset.thresholds["slope_low"], preset.thresholds["slope_high"]),
        )
    ]
    out = Path(out_dir)
    _write_run_artifacts(out, traj)
    verdict = _verdict(
        name,
        checks,
        {
            "slope_fit_window": [t_lo, t_hi],
            "slope": slope,
            "slope_stderr": stderr,
            "slope_full_window": slope_full,
            "slope_full_stderr": stderr_full,
            "expected_rate": -dim / 2.0,
        },
    )
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# criterion 6: modified scattering
# --------------------------------------------------------------------------

def run_scattering(out_dir):
    preset = get_preset("scattering-2d")
    config = preset.config
    traj = run(config, keep_fields=True)
    out = Path(out_dir)

    dyadic = preset.params["dyadic"]
    cauchy_rows = dyadic_cauchy(traj, dyadic)
    g_diffs = [r["g_diff"] for r in cauchy_rows]
    f_diffs = [r["f_diff"] for r in cauchy_rows]
    decreasing = all(b < a for a, b in zip(g_diffs, g_diffs[1:]))
    beats_raw = all(g < f for g, f in zip(g_diffs, f_diffs))

    result = extract_W(traj)
    compare_rows = asymptotic_comparison(traj, result, preset.params["compare_times"])
    scaled = [r["scaled_linf_dev"] for r in compare_rows]
    compare_decreasing = all(b < a for a, b in zip(scaled, scaled[1:]))

    checks = [
        _check("g_dyadic_strictly_decreasing", int(decreasing), "==", 1),
        _check("g_beats_raw_profile", int(beats_raw), "==", 1),
        _check("asymptotic_dev_decreasing", int(compare_decreasing), "==", 1),
    ]

    _write_run_artifacts(out, traj)
    write_csv(
        out / "dyadic_cauchy.csv",
        ("t", "g_diff", "f_diff"),
        [(r["t"], r["g_diff"], r["f_diff"]) for r in cauchy_rows],
    )
    write_csv(
        out / "asymptotic_compare.csv",
        ("t", "scaled_linf_dev", "scaled_linf_u"),
        [(r["t"], r["scaled_linf_dev"], r["scaled_linf_u"]) for r in compare_rows],
    )
    write_csv(
        out / "w_convergence.csv",
        ("t", "g_dist", "f_dist"),
        [(r["t"], r["g_dist"], r["f_dist"]) for r in result.convergence],
    )
    write_field(out / "w.fld", result.w, time=max(traj.snapshots))
    snapdir = out / "snapshots"
    snapdir.mkdir(exist_ok=True)
    for t in sorted(set(dyadic) | {2.0 * max(dyadic), max(traj.snapshots)}):
        u = traj.snapshot_at(t)
        write_field(snapdir / f"t{t:08.3f}.fld", u, time=t)

    verdict = _verdict(
        "scattering-2d",
        checks,
        {
            "dyadic_cauchy": cauchy_rows,
            "asymptotic_compare": compare_rows,
            "w_convergence": result.convergence,
            "w_fit_exponent": result.fit_exponent,
            "cauchy_flag": result.cauchy,
        },
    )
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# criterion 7: profile-equation residual
# --------------------------------------------------------------------------

def run_residual(out_dir):
    preset = get_preset("residual-2d")
    config = preset.config
    traj = run(config, keep_fields=True)
    fkernel = FrequencyKernel(config.grid())
    t0 = preset.params["t_probe"]
    delta = preset.params["delta"]

    residuals = {}
    retained = {}
    for d in (delta, delta / 2.0):
        snaps = [profile(traj.snapshot_at(t), t) for t in (t0 - d, t0, t0 + d)]
        residuals[d], retained[d] = profile_ode_residual(
            snaps[0], snaps[1], snaps[2], fkernel, config.nonlin_coeff
        )
    ratio = residuals[delta] / residuals[delta / 2.0]
    fraction = residuals[delta / 2.0] / retained[delta / 2.0]

    thr = preset.thresholds
    checks = [
        _check("residual_ratio", ratio, "in", (thr["ratio_low"], thr["ratio_high"])),
        _check("residual_fraction", fraction, "<=", thr["residual_fraction"]),
    ]
    out = Path(out_dir)
    _write_run_artifacts(out, traj)
    write_csv(
        out / "residuals.csv",
        ("delta", "residual", "largest_retained"),
        [(d, residuals[d], retained[d]) for d in sorted(residuals)],
    )
    verdict = _verdict(
        "residual-2d", checks,
        {"residuals": {repr(k): v for k, v in residuals.items()}},
    )
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# criterion 8: determinism
# --------------------------------------------------------------------------

def run_determinism(out_dir):
    preset = get_preset("determinism")
    out = Path(out_dir)
    digests = []
    for tag in ("a", "b"):
        sub = out / tag
        sub.mkdir(parents=True, exist_ok=True)
        traj = run(preset.config, keep_fields=True)
        _write_run_artifacts(sub, traj)
        final = traj.snapshot_at(preset.config.t_end)
        write_field(sub / "final.fld", final, time=preset.config.t_end)
        blob = b"".join(
            (sub / name).read_bytes()
            for name in ("series.csv", "records.csv", "final.fld")
        )
        digests.append(blob)
    identical = digests[0] == digests[1]
    checks = [_check("byte_identical_reruns", int(identical), "==", 1)]
    verdict = _verdict("determinism", checks)
    write_verdict(out / "verdict.json", verdict)
    return verdict


# --------------------------------------------------------------------------
# generic run + compare
# --------------------------------------------------------------------------

def run_simulation(config, out_dir, checkpoint_every=0):
    """The `run` subcommand: integrate and persist the trajectory."""
    from .fieldio import write_checkpoint

    out = Path(out_dir)
    traj = run(config, keep_fields=False)
    _write_run_artifacts(out, traj)
    write_checkpoint(out / "final.ckpt", config, traj.final_state)
    write_field(out / "final.fld", traj.final_state.u, time=traj.final_state.t)
    verdict = {
        "schema": "sbpsim-verdict-1",
        "version": __version__,
        "backend": backend.BACKEND,
        "preset": "run",
        "checks": [],
        "pass": True,
        "t_final": traj.final_state.t,
        "records": len(traj.records),
    }
    write_verdict(out / "verdict.json", verdict)
    return verdict


def run_compare(run_dir, out_dir):
    """The `compare` subcommand: evaluate the asymptotic field stored in a
    scattering run directory against its own snapshots."""
    from .fieldio import read_field

    src = Path(run_dir)
    out = Path(out_dir)
    w = read_field(src / "w.fld")
    snaps = sorted((src / "snapshots").glob("t*.fld"))
    if not snaps:
        raise FileNotFoundError(f"no snapshots under {src}")
    grid = None
    rows = []
    from .diagnostics import asymptotic_field

    fkernel = None
    for path in snaps:
        u = read_field(path)
        if grid is None:
            grid = u.grid
            fkernel = FrequencyKernel(grid)
            nw = nonlinear_symbol(w.values, fkernel)
        t = u.time
        if t < 1.0:
            continue
        ua = asymptotic_field(w, nw, t, grid)
        dev = float(np.abs(u.values - ua.values).max())
        rows.append((t, t ** (grid.dim / 2.0) * dev))
    write_csv(out / "compare.csv", ("t", "scaled_linf_dev"), rows)
    scaled = [r[1] for r in rows]
    decreasing = all(b < a for a, b in zip(scaled, scaled[1:]))
    verdict = {
        "schema": "sbpsim-verdict-1",
        "version": __version__,
        "backend": backend.BACKEND,
        "preset": "compare",
        "checks": [_check("asymptotic_dev_decreasing", int(decreasing), "==", 1)],
        "rows": rows,
    }
    verdict["pass"] = all(c["pass"] for c in verdict["checks"])
    write_verdict(out / "verdict.json", verdict)
    return verdict


RUNNERS = {
    "ops-identities": run_ops_identities,
    "free-flow-exact": run_free_flow,
    "conservation": run_conservation,
    "kernel-correctness": run_kernel_check,
    "decay-2d": lambda out: run_decay(out, dim=2),
    "decay-3d": lambda out: run_decay(out, dim=3),
    "scattering-2d": run_scattering,
    "residual-2d": run_residual,
    "determinism": run_determinism,
}


def run_preset(name, out_dir):
    runner = RUNNERS.get(name)
    if runner is None:
        raise KeyError(f"no runner for preset {name!r}")
    with OutputLock(out_dir):
        return runner(Path(out_dir))


def run_all(out_root):
    """Execute every acceptance preset and aggregate a single verdict."""
    out_root = Path(out_root)
    verdicts = {}
    for name in RUNNERS:
        verdicts[name] = run_preset(name, out_root / name)
    aggregate = {
        "schema": "sbpsim-verdict-1",
        "version": __version__,
        "backend": backend.BACKEND,
        "preset": "acceptance",
        "results": {
            name: {"criterion": v.get("criterion"), "pass": v["pass"]}
            for name, v in verdicts.items()
        },
        "pass": all(v["pass"] for v in verdicts.values()),
    }
    write_verdict(out_root / "acceptance.json", aggregate)
    return aggregate, verdicts
