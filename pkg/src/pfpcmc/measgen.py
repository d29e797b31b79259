"""Measurement matrices, low-observability masks and measurement noise.

Each row of the measurement matrix is one non-slack bus,
``[Re v, Im v, |v|, Re s, Im s]`` in per-unit.  The observed set ``psi`` is
stored as an ``(K, 2)`` integer array of ``(row, col)`` pairs in row-major
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .netmodel import NetworkCase, LinearPowerFlowModel, build_admittance, build_linear_model, solve_ac_power_flow

__all__ = [
    "COLUMNS",
    "NoiseSpec",
    "MaskSampler",
    "StratifiedSampler",
    "UniformSampler",
    "MeasurementMatrix",
    "Scenario",
    "build_measurement_matrix",
    "apply_fad_mask",
    "add_noise",
    "make_scenario",
]

COLUMNS = ("re_v", "im_v", "abs_v", "re_s", "im_s")
M_COLS = len(COLUMNS)


@dataclass(frozen=True)
class NoiseSpec:
    """Relative Gaussian noise levels (standard deviation / |true value|).

    Defaults follow common SCADA accuracy classes: 0.1% on voltage
    magnitude, 0.5% on phasor components, 1% on power injections.
    """

    phasor: float = 0.005
    magnitude: float = 0.001
    power: float = 0.01

    def __post_init__(self):
        if min(self.phasor, self.magnitude, self.power) < 0:
            raise ValueError("noise standard deviations must be nonnegative")

    def per_column(self) -> np.ndarray:
        return np.array([self.phasor, self.phasor, self.magnitude, self.power, self.power])

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0)


def build_measurement_matrix(v: np.ndarray, s: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    s = np.asarray(s, dtype=complex)
    if v.ndim != 1 or v.shape != s.shape:
        raise ValueError(f"voltage/injection shapes differ: {v.shape} vs {s.shape}")
    return np.column_stack([v.real, v.imag, np.abs(v), s.real, s.imag])


class MaskSampler:
    """Strategy interface: pick ``count`` observed entries of an ``n x 5`` matrix."""

    def sample(self, n: int, count: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class UniformSampler(MaskSampler):
    def sample(self, n, count, rng):
        return np.sort(rng.choice(n * M_COLS, size=count, replace=False))


@dataclass(frozen=True)
class StratifiedSampler(MaskSampler):
    """One guaranteed entry per column, the rest drawn with column weights.

    Field devices report magnitudes and powers far more often than phasor
    components, hence the default 2:1 weighting of columns 3-5 over 1-2.
    """

    weights: tuple = (1.0, 1.0, 2.0, 2.0, 2.0)

    def sample(self, n, count, rng):
        total = n * M_COLS
        chosen = np.zeros(total, dtype=bool)
        if count >= M_COLS:
            rows = rng.integers(0, n, size=M_COLS)
            chosen[rows * M_COLS + np.arange(M_COLS)] = True
        rest = count - int(chosen.sum())
        if rest > 0:
            pool = np.flatnonzero(~chosen)
            w = np.asarray(self.weights, dtype=float)[pool % M_COLS]
            pick = rng.choice(pool, size=rest, replace=False, p=w / w.sum())
            chosen[pick] = True
        return np.flatnonzero(chosen)


def apply_fad_mask(
    n: int,
    fad: float,
    seed: int,
    sampler: MaskSampler | None = None,
) -> np.ndarray:
    """Observed index pairs covering ``round(fad * 5n)`` entries.

    ``n`` may also be a measurement matrix, in which case its row count is used.
    """
    if not isinstance(n, (int, np.integer)):
        n = np.asarray(n).shape[0]
    if not 0.0 < fad <= 1.0:
        raise ValueError(f"fad must lie in (0, 1], got {fad}")
    total = n * M_COLS
    count = int(np.floor(fad * total + 0.5))
    count = min(max(count, 1), total)
    if count == total:
        flat = np.arange(total)
    else:
        flat = (sampler or StratifiedSampler()).sample(n, count, np.random.default_rng(seed))
    flat = np.sort(flat)
    return np.column_stack([flat // M_COLS, flat % M_COLS])


def add_noise(M: np.ndarray, psi: np.ndarray, noise: NoiseSpec, seed: int) -> np.ndarray:
    """Noisy copies of the observed entries, in ``psi`` order."""
    std = noise.per_column()
    if np.any(std < 0):
        raise ValueError("noise standard deviations must be nonnegative")
    rng = np.random.default_rng([seed, 0x6E6F697365])  # separate stream from the mask
    rows, cols = psi[:, 0], psi[:, 1]
    true = M[rows, cols]
    return true + std[cols] * np.abs(true) * rng.standard_normal(len(true))


@dataclass
class MeasurementMatrix:
    ground_truth: np.ndarray  # noise-free n x 5, evaluation only
    psi: np.ndarray  # (K, 2)
    values: np.ndarray  # noisy observed values, aligned with psi
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    fad: float = 1.0

    @property
    def n(self) -> int:
        return self.ground_truth.shape[0]

    @property
    def observed(self) -> np.ndarray:
        """n x 5 matrix with observed values and NaN elsewhere."""
        out = np.full(self.ground_truth.shape, np.nan)
        out[self.psi[:, 0], self.psi[:, 1]] = self.values
        return out

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros(self.ground_truth.shape, dtype=bool)
        out[self.psi[:, 0], self.psi[:, 1]] = True
        return out

    def noise_std(self) -> np.ndarray:
        """Nominal absolute noise std of each observed entry (from the readings)."""
        return self.noise.per_column()[self.psi[:, 1]] * np.abs(self.values)

    def to_json(self) -> str:
        return json.dumps(
            {
                "fad": self.fad,
                "seed": self.seed,
                "noise_spec": {
                    "phasor": self.noise.phasor,
                    "magnitude": self.noise.magnitude,
                    "power": self.noise.power,
                },
                "n": self.n,
                "psi": self.psi.tolist(),
                "observed": self.values.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str, ground_truth: np.ndarray | None = None) -> "MeasurementMatrix":
        d = json.loads(text)
        psi = np.asarray(d["psi"], dtype=int).reshape(-1, 2)
        n = int(d.get("n", psi[:, 0].max() + 1))
        gt = ground_truth if ground_truth is not None else np.full((n, M_COLS), np.nan)
        return cls(
            ground_truth=gt,
            psi=psi,
            values=np.asarray(d["observed"], dtype=float),
            noise=NoiseSpec(**d["noise_spec"]),
            seed=int(d["seed"]),
            fad=float(d["fad"]),
        )


@dataclass
class Scenario:
    """Everything an estimator needs: the feeder, its linear model and the data.

    ``s0`` is the (noisy) slack-bus injection measurement, or None when the
    substation is unmetered.
    """

    case: NetworkCase
    lpf: LinearPowerFlowModel
    meas: MeasurementMatrix
    v_true: np.ndarray
    s0: complex | None
    s0_true: complex

    @property
    def n(self) -> int:
        return self.meas.n


def make_scenario(
    case: NetworkCase,
    fad: float = 0.32,
    seed: int = 0,
    noise: NoiseSpec | None = None,
    sampler: MaskSampler | None = None,
    slack_metered: bool = True,
    loading: float = 1.0,
) -> Scenario:
    """Solve the AC oracle, build M, mask it at ``fad`` and add noise."""
    noise = NoiseSpec() if noise is None else noise
    if loading != 1.0:
        case = case.scaled(loading)
    part = build_admittance(case)
    lpf = build_linear_model(part, case.v0)
    ac = solve_ac_power_flow(case, part)
    M = build_measurement_matrix(ac.v, ac.s)
    psi = apply_fad_mask(M.shape[0], fad, seed, sampler)
    values = add_noise(M, psi, noise, seed)
    meas = MeasurementMatrix(M, psi, values, noise, seed, fad)
    s0 = None
    if slack_metered:
        rng = np.random.default_rng([seed, 0x736C61636B])
        e = noise.power * rng.standard_normal(2)
        s0 = complex(ac.s0.real * (1 + e[0]), ac.s0.imag * (1 + e[1]))
    return Scenario(case=case, lpf=lpf, meas=meas, v_true=ac.v, s0=s0, s0_true=ac.s0)
