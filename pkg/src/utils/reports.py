import csv
from pathlib import Path
from typing import Dict, List, Sequence


def _writer(path: Path, header: Sequence[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = path.open('w', newline='')
    writer = csv.writer(fh)
    writer.writerow(header)
    return fh, writer


def write_latency_csv(records, path) -> Path:
    path = Path(path)
    fh, writer = _writer(path, ['latency_ms'])
    with fh:
        for record in records:
            writer.writerow([f"{record.latency * 1000:.6f}"])
    return path


def write_cdf_csv(cdf, path) -> Path:
    path = Path(path)
    fh, writer = _writer(path, ['latency_ms', 'cum_fraction'])
    with fh:
        for latency, fraction in cdf.points():
            writer.writerow([f"{latency * 1000:.6f}", f"{fraction:.6f}"])
    return path


def write_bandwidth_csv(rows: List[Dict], path) -> Path:
    path = Path(path)
    fh, writer = _writer(path, ['config', 'format', 'placement', 'bps', 'saving_pct'])
    with fh:
        for row in rows:
            writer.writerow([row['config'], row['format'], row['placement'], row['bps'], f"{row['saving_pct']:.1f}"])
    return path


def write_estimate_csv(rows: List[Dict], path) -> Path:
    path = Path(path)
    fh, writer = _writer(path, ['bus', 'e', 'f', '|V|', 'angle'])
    with fh:
        for row in rows:
            writer.writerow([row['bus'], f"{row['e']:.9f}", f"{row['f']:.9f}",
                             f"{row['magnitude']:.9f}", f"{row['angle']:.6f}"])
    return path


def write_timing_csv(mean_ms: float, std_ms: float, trials: int, path) -> Path:
    path = Path(path)
    fh, writer = _writer(path, ['mean_ms', 'std_ms', 'trials'])
    with fh:
        writer.writerow([f"{mean_ms:.6f}", f"{std_ms:.6f}", trials])
    return path
