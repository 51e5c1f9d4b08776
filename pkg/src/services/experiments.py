"""
Experiment runners behind the CLI: bandwidth table, latency campaign and
state-estimation campaign.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from config.settings import FRAME_CONFIGS, GRID_SETTINGS, NETSIM_SETTINGS
from src.models.frames import FIXED16, FLOAT32
from src.models.grid import GridModel, build_placement
from src.models.pmu import NoiseModel, Scenario
from src.services.codec import data_frame_size
from src.services.estimator import (StateVector, build_measurement_matrix,
                                    observability_rank, timed_estimate,
                                    weighted_residual_norm, weights_from_noise)
from src.services.netsim import (LatencyCdf, LatencyRecord, LinkConfig,
                                 bandwidth_saving, dependability, stream_bandwidth)
from src.services.pipeline import MonitoringPipeline
from src.utils.errors import ConfigError, UnobservableError

logger = logging.getLogger(__name__)

FORMATS = {'fixed': FIXED16, 'float': FLOAT32}


def frame_bytes(config: str, fmt: str, blocks: int) -> int:
    if config not in FRAME_CONFIGS:
        raise ConfigError(f"Unknown frame configuration {config!r}; expected one of {sorted(FRAME_CONFIGS)}")
    if fmt not in FORMATS:
        raise ConfigError(f"Unknown format {fmt!r}; expected one of {sorted(FORMATS)}")
    return data_frame_size(blocks, FRAME_CONFIGS[config]['phasors'], FORMATS[fmt])


def bandwidth_table(overhead: int = NETSIM_SETTINGS['http_overhead_bytes'],
                    rate: int = NETSIM_SETTINGS['rate'],
                    configs: Sequence[str] = ('A', 'B'),
                    formats: Sequence[str] = ('fixed', 'float'),
                    pmus: int = NETSIM_SETTINGS['pmus_per_node']) -> List[Dict]:
    """Node uplink bandwidth: one aggregated stream (local) vs one stream per PMU (remote)"""
    rows = []
    for config in configs:
        for fmt in formats:
            local_frame = frame_bytes(config, fmt, pmus)
            remote_frame = frame_bytes(config, fmt, 1)
            local = stream_bandwidth(local_frame, rate, overhead, 1)
            remote = stream_bandwidth(remote_frame, rate, overhead, pmus)
            saving = bandwidth_saving(local, remote) if remote > 0 else 0.0
            rows.append({'config': config, 'format': fmt, 'placement': 'local',
                         'frame_bytes': local_frame, 'bps': local, 'saving_pct': saving})
            rows.append({'config': config, 'format': fmt, 'placement': 'remote',
                         'frame_bytes': remote_frame, 'bps': remote, 'saving_pct': saving})
    return rows


class LatencyReport:
    def __init__(self, records: List[LatencyRecord], partial: int, pipeline: MonitoringPipeline,
                 thresholds_ms: Sequence[float] = NETSIM_SETTINGS['dependability_thresholds_ms']):
        if not records:
            raise ValueError("Latency campaign produced no complete aggregates")
        self.records = records
        self.partial = partial
        self.pipeline = pipeline
        self.cdf = LatencyCdf(records)
        self.dependability = {ms: dependability(records, ms / 1000) for ms in thresholds_ms}


    def __repr__(self):
        return f"LatencyReport({self.cdf}, partial={self.partial})"


def run_latency_campaign(grid: GridModel, scenario: Scenario, links: LinkConfig,
                         mode: str = 'local', node: int = 2, config: str = 'A', fmt: str = 'float',
                         trials: int = 2500, seed: int = 0, rate: Optional[int] = None) -> LatencyReport:
    """Stream trials reporting periods from one node's PMUs to the application"""
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    frame_bytes(config, fmt, 1)
    pipeline = MonitoringPipeline(
        grid, scenario, links, nodes=[node], mode=mode, rate=rate or links.rate,
        wire_format=FORMATS[fmt], layout=FRAME_CONFIGS[config]['layout'], seed=seed)
    app = pipeline.run(trials)
    logger.info("latency campaign %s: %d records, %d partial", mode, len(app.records), app.partial)
    return LatencyReport(app.records, app.partial, pipeline)


class SeReport:
    def __init__(self, estimates: List[StateVector], residual_norms: List[float],
                 timings: List[float], rank: int, rows: int):
        self.estimates = estimates
        self.residual_norms = residual_norms
        self.timings = timings
        self.rank = rank
        self.rows = rows


    @property
    def estimate(self) -> StateVector:
        """Mean estimate across trials"""
        values = np.mean([x.values for x in self.estimates], axis=0)
        return StateVector(self.estimates[0].bus_ids, values)


    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.timings)) * 1000


    @property
    def std_ms(self) -> float:
        return float(np.std(self.timings)) * 1000


    @property
    def mean_residual_norm(self) -> float:
        return float(np.mean(self.residual_norms))


    def __repr__(self):
        return f"SeReport({len(self.estimates)} trials, {self.mean_ms:.3f} ± {self.std_ms:.3f} ms)"


def run_se_campaign(grid: GridModel, scenario: Scenario, links: LinkConfig,
                    nodes: Sequence[int] = GRID_SETTINGS['monitored_nodes'],
                    noise: float = 0.0, trials: int = 1, seed: int = 0,
                    include_shunts: bool = True) -> SeReport:
    """Estimate the state from every complete aggregate delivered to the application"""
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    placement = build_placement(grid, nodes, GRID_SETTINGS['channels_per_pmu'])
    model = build_measurement_matrix(grid, placement, include_shunts=include_shunts)
    rank, observable = observability_rank(model)
    if not observable:
        raise UnobservableError(
            f"Placement {sorted(placement.monitored_nodes)} is unobservable: rank {rank} < {model.H.shape[1]}",
            rank=rank)

    pipeline = MonitoringPipeline(
        grid, scenario, links, nodes=nodes, mode='remote', wire_format=None, layout='positive',
        noise=NoiseModel(phasor=noise) if noise > 0 else None, seed=seed,
        representation='key_value', output_mode='key_value')
    app = pipeline.run(trials)
    if not app.received:
        raise ValueError("No complete measurement sets reached the application")

    estimates, norms, timings = [], [], []
    for item in app.received:
        z = model.measurement_vector(pipeline.measured_phasors(item))
        weighted = weights_from_noise(model, noise, z)
        x, residuals, elapsed = timed_estimate(weighted, z)
        estimates.append(x)
        norms.append(weighted_residual_norm(weighted, residuals))
        timings.append(elapsed)
    return SeReport(estimates, norms, timings, rank, model.H.shape[0])
