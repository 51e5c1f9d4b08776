"""
Linear weighted-least-squares state estimation over rectangular bus voltages.

The state is interleaved by sorted bus id: (e1, f1, e2, f2, ...). A complex
coefficient a+jb becomes the real block [[a, -b], [b, a]].
"""

import cmath
import logging
import math
import time
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from config.settings import PMU_SETTINGS, SE_SETTINGS
from src.models.grid import (GridModel, MeasurementDescriptor, PmuPlacement,
                             current_coefficients)
from src.utils.errors import UnknownNodeError, UnobservableError

logger = logging.getLogger(__name__)


class StateVector:
    def __init__(self, bus_ids: Sequence[int], values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (2 * len(bus_ids),):
            raise ValueError(f"State of {len(bus_ids)} buses needs {2 * len(bus_ids)} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("State values must be finite")
        self.bus_ids = list(bus_ids)
        self.values = values


    @classmethod
    def from_voltages(cls, grid: GridModel, voltages: Dict[int, complex]) -> 'StateVector':
        values = []
        for bus in grid.bus_ids:
            v = voltages[bus]
            values.extend((v.real, v.imag))
        return cls(grid.bus_ids, np.array(values))


    def voltage(self, bus: int) -> complex:
        if bus not in self.bus_ids:
            raise UnknownNodeError(f"Bus {bus} is not in the state")
        i = self.bus_ids.index(bus)
        return complex(self.values[2 * i], self.values[2 * i + 1])


    def voltages(self) -> Dict[int, complex]:
        return {bus: self.voltage(bus) for bus in self.bus_ids}


    def __len__(self):
        return len(self.values)


    def __repr__(self):
        return f"StateVector({len(self.bus_ids)} buses)"


class MeasurementModel:
    """Design matrix H with diagonal weights, two rows per phasor"""

    def __init__(self, rows: List[Tuple[MeasurementDescriptor, str]], H: np.ndarray,
                 weights: np.ndarray, bus_ids: Sequence[int]):
        weights = np.asarray(weights, dtype=float)
        if H.shape != (len(rows), 2 * len(bus_ids)):
            raise ValueError("H shape does not match rows and state")
        if weights.shape != (len(rows),) or np.any(weights <= 0):
            raise ValueError("Weights must be positive, one per row")
        self.rows = rows
        self.H = H
        self.weights = weights
        self.bus_ids = list(bus_ids)


    @property
    def descriptors(self) -> List[MeasurementDescriptor]:
        return [d for d, part in self.rows if part == 're']


    def with_weights(self, weights: np.ndarray) -> 'MeasurementModel':
        return MeasurementModel(self.rows, self.H, weights, self.bus_ids)


    def measurement_vector(self, phasors: Dict[MeasurementDescriptor, complex]) -> np.ndarray:
        """z in row order from measured phasors"""
        z = np.empty(len(self.rows))
        for k, (descriptor, part) in enumerate(self.rows):
            value = phasors[descriptor]
            z[k] = value.real if part == 're' else value.imag
        return z


    def __repr__(self):
        return f"MeasurementModel({self.H.shape[0]} rows x {self.H.shape[1]} states)"


def _place(H: np.ndarray, row: int, col: int, coef: complex):
    H[row, col] += coef.real
    H[row, col + 1] -= coef.imag
    H[row + 1, col] += coef.imag
    H[row + 1, col + 1] += coef.real


def build_measurement_matrix(grid: GridModel,
                             placement: Union[PmuPlacement, Sequence[MeasurementDescriptor]],
                             include_shunts: bool = True,
                             sigmas: Optional[Sequence[float]] = None) -> MeasurementModel:
    """H for every descriptor of the placement, in placement order"""
    descriptors = placement.descriptors() if isinstance(placement, PmuPlacement) else list(placement)
    n = len(grid.bus_ids)
    H = np.zeros((2 * len(descriptors), 2 * n))
    rows = []

    for k, descriptor in enumerate(descriptors):
        row = 2 * k
        col = 2 * grid.bus_index(descriptor.node)
        if descriptor.is_voltage:
            _place(H, row, col, 1 + 0j)
        else:
            branch = grid.branch(*descriptor.branch)
            c_self, c_other, other = current_coefficients(branch, descriptor.node, include_shunts)
            _place(H, row, col, c_self)
            _place(H, row, 2 * grid.bus_index(other), c_other)
        rows.extend([(descriptor, 're'), (descriptor, 'im')])

    if sigmas is None:
        weights = np.ones(len(rows))
    else:
        sigmas = np.asarray(sigmas, dtype=float)
        if sigmas.shape != (len(descriptors),):
            raise ValueError("One sigma per descriptor is required")
        weights = np.repeat(1.0 / sigmas ** 2, 2)
    return MeasurementModel(rows, H, weights, grid.bus_ids)


def wls_solve(model: MeasurementModel, z: np.ndarray) -> Tuple[StateVector, np.ndarray]:
    """argmin (z - Hx)' W (z - Hx) via QR of sqrt(W) H"""
    z = np.asarray(z, dtype=float)
    m, n = model.H.shape
    if z.shape != (m,):
        raise ValueError(f"Measurement vector needs {m} entries, got {z.shape}")

    root = np.sqrt(model.weights)
    A = model.H * root[:, None]
    b = z * root
    Q, R = linalg.qr(A, mode='economic')
    diag = np.abs(np.diag(R))
    tol = SE_SETTINGS['pivot_tolerance'] * (diag.max() if diag.size else 1.0)
    small = np.flatnonzero(diag <= tol)
    if m < n or small.size:
        pivot = int(small[0]) if small.size else m
        rank, _ = observability_rank(model)
        raise UnobservableError(
            f"Normal matrix is singular: zero pivot at state index {pivot}, rank {rank} < {n}",
            pivot=pivot, rank=rank)

    x = linalg.solve_triangular(R, Q.T @ b)
    return StateVector(model.bus_ids, x), z - model.H @ x


def observability_rank(model: MeasurementModel) -> Tuple[int, bool]:
    """Numerical rank of H and whether it covers the whole state"""
    s = linalg.svdvals(model.H)
    if s.size == 0 or s[0] == 0:
        rank = 0
    else:
        rank = int(np.count_nonzero(s > SE_SETTINGS['rank_tolerance'] * s[0]))
    return rank, rank == model.H.shape[1]


def timed_estimate(model: MeasurementModel, z: np.ndarray) -> Tuple[StateVector, np.ndarray, float]:
    """wls_solve plus its wall-clock duration in seconds"""
    start = time.perf_counter()
    x, residuals = wls_solve(model, z)
    return x, residuals, time.perf_counter() - start


def weighted_residual_norm(model: MeasurementModel, residuals: np.ndarray) -> float:
    """r' W r"""
    return float(np.sum(model.weights * residuals ** 2))


def weights_from_noise(model: MeasurementModel, relative_sigma: float, z: np.ndarray,
                       layout: str = 'positive') -> MeasurementModel:
    """1/sigma^2 weights for emulator noise proportional to phasor magnitude.

    Averaging the three phase phasors into a positive-sequence value divides
    the variance by three. Zero noise gives uniform weights.
    """
    if relative_sigma <= 0:
        return model.with_weights(np.ones(len(model.rows)))

    width = PMU_SETTINGS['phasor_layouts'][layout]
    effective = relative_sigma / math.sqrt(width) if layout == 'phase' else relative_sigma
    magnitudes = np.hypot(z[0::2], z[1::2])
    sigmas = effective * np.maximum(magnitudes, np.finfo(float).tiny)
    return model.with_weights(np.repeat(1.0 / sigmas ** 2, 2))


def estimate_report(x: StateVector) -> List[Dict[str, float]]:
    """Per-bus rows: e, f, |V|, angle in degrees"""
    rows = []
    for bus in x.bus_ids:
        v = x.voltage(bus)
        rows.append({
            'bus': bus,
            'e': v.real,
            'f': v.imag,
            'magnitude': abs(v),
            'angle': math.degrees(cmath.phase(v)),
        })
    return rows
