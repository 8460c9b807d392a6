"""Experiment presets, one per acceptance criterion.

Thresholds are data here, not constants in the check code, so tolerance
changes are reviewable in one place.  Each preset names the criterion it
implements; the experiment runners in experiments.py consume these.
"""

from dataclasses import dataclass, field

from .dynamics import SimConfig


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    criterion: str
    description: str
    config: SimConfig | None = None
    thresholds: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)


PRESETS = {}


def _register(preset):
    PRESETS[preset.name] = preset
    return preset


_register(
    ExperimentPreset(
        name="ops-identities",
        criterion="1",
        description=(
            "Operator identity suite: Galilean-route equality, fractional "
            "|J|^gamma two-route agreement, and the gauge-dilation-Fourier "
            "factorization of the free flow."
        ),
        thresholds={
            "j_route_rel": 1e-10,
            "j_power_rel": 1e-5,
            "mdfm_rel": 1e-6,
        },
        params={
            "j_route_2d": {"n": 256, "box": 64.0, "envelope": 2.5, "band": 0.2,
                            "times": (1.0, 2.0, 5.0)},
            "j_route_3d": {"n": 128, "box": 32.0, "envelope": 1.5, "band": 0.1,
                            "times": (1.0, 2.0)},
            "j_power_2d": {"n": 256, "box": 64.0, "width": 2.0, "center": 8.0,
                            "t": 2.0},
            "j_power_3d": {"n": 64, "box": 40.0, "width": 1.8, "center": 5.0,
                            "t": 2.0},
            "mdfm_2d": {"n": 256, "box": 64.0, "width": 2.0, "t": 2.0},
            "mdfm_3d": {"n": 64, "box": 32.0, "width": 1.5, "t": 2.0},
        },
    )
)

_register(
    ExperimentPreset(
        name="free-flow-exact",
        criterion="2",
        description=(
            "Stepper with the potential disabled against the closed-form "
            "spreading Gaussian at t=1."
        ),
        config=SimConfig(
            dim=2, n=256, box=32.0, eps=0.5, dt=0.05, t_end=1.0,
            width=1.0, nonlin_coeff=0.0, snapshot_stride=20,
        ),
        thresholds={"rel_l2": 1e-8},
    )
)

_register(
    ExperimentPreset(
        name="conservation",
        criterion="3",
        description=(
            "Mass drift over 1e4 Strang steps, the variational-derivative "
            "oracle for the energy functional, and the O(dt^2) energy-drift "
            "order under step halving."
        ),
        config=SimConfig(
            dim=2, n=128, box=32.0, eps=0.3, dt=2e-4, t_end=2.0,
            width=1.5, snapshot_stride=5000,
        ),
        thresholds={
            "mass_drift": 1e-10,
            "variational_oracle": 1e-5,
            "energy_order_low": 3.5,
            "energy_order_high": 4.5,
        },
        params={
            "energy_order": {"dim": 2, "n": 128, "box": 32.0, "eps": 2.0,
                              "width": 1.5, "t_end": 2.0, "dt": 0.01},
        },
    )
)

_register(
    ExperimentPreset(
        name="kernel-correctness",
        criterion="4",
        description=(
            "Padded-FFT convolution against the direct-sum oracle, sampled "
            "against analytic multiplier in the mid band, and the L^p box-"
            "norm behaviour of the kernel."
        ),
        thresholds={
            "conv_vs_direct": 1e-12,
            "band_rel_dev": 1e-3,
            "lemma1_p25_change": 5e-3,
            "lemma1_log_trend_rel": 0.05,
        },
        params={
            "conv": {"dim": 2, "n": 16, "box": 8.0, "seed": 11},
            "band": {"n": 256, "box": 64.0, "lo": 0.5},
            "lemma1": {"p_cauchy": 2.5, "boxes": (32.0, 64.0)},
        },
    )
)

_register(
    ExperimentPreset(
        name="decay-2d",
        criterion="5",
        description=(
            "Sharp-decay fit in 2D: log-log slope of the sup norm over the "
            "final decade of a small-data run to t=50."
        ),
        config=SimConfig(
            dim=2, n=512, box=384.0, eps=0.1, dt=0.05, t_end=50.0,
            width=2.1, snapshot_stride=10,
        ),
        thresholds={"slope_low": -1.1, "slope_high": -0.9},
        params={"fit_window_decades": 1.0},
    )
)

_register(
    ExperimentPreset(
        name="decay-3d",
        criterion="5",
        description=(
            "Sharp-decay fit in 3D at n=64 to t=20.  The stated resolution "
            "cannot both contain the free-spreading envelope and resolve "
            "data narrow enough to decay inside the window; the preset runs "
            "the best feasible geometry and reports the measured slope."
        ),
        config=SimConfig(
            dim=3, n=64, box=96.0, eps=0.1, dt=0.01, t_end=20.0,
            width=4.5, snapshot_stride=25,
        ),
        thresholds={"slope_low": -1.65, "slope_high": -1.35},
        params={"fit_window_decades": 1.0},
    )
)

_register(
    ExperimentPreset(
        name="scattering-2d",
        criterion="6",
        description=(
            "Modified scattering on the 2D decay geometry at eps=0.3: "
            "corrected-profile dyadic Cauchy differences decrease and beat "
            "the raw-profile differences, and the explicit asymptotic "
            "field converges in scaled sup norm."
        ),
        config=SimConfig(
            dim=2, n=512, box=384.0, eps=0.3, dt=0.02, t_end=50.0,
            width=2.1, snapshots_per_octave=16,
        ),
        thresholds={},
        params={"dyadic": (2.0, 4.0, 8.0, 16.0), "compare_times": (2.0, 4.0, 8.0, 16.0)},
    )
)

_register(
    ExperimentPreset(
        name="residual-2d",
        criterion="7",
        description=(
            "Profile-equation residual: centered-difference convergence "
            "ratio under snapshot-spacing halving and smallness against the "
            "retained terms."
        ),
        config=SimConfig(
            dim=2, n=256, box=128.0, eps=0.5, dt=0.005, t_end=4.4,
            width=1.5, snapshot_stride=32,
        ),
        thresholds={
            "ratio_low": 3.5,
            "ratio_high": 4.5,
            "residual_fraction": 0.05,
        },
        params={"t_probe": 4.0, "delta": 0.32},
    )
)

_register(
    ExperimentPreset(
        name="determinism",
        criterion="8",
        description="Repeated runs with fixed seeds produce byte-identical artifacts.",
        config=SimConfig(
            dim=2, n=64, box=32.0, eps=0.3, dt=0.01, t_end=2.0,
            width=1.5, snapshot_stride=50, seed=7,
        ),
        thresholds={},
    )
)


def get_preset(name):
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r} (known: {known})")
    return PRESETS[name]
