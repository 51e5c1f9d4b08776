"""
Discrete-event transport: links with sampled delays, byte-counted overhead,
and the latency/bandwidth measurement helpers.

Simulated time is in seconds from the start of the scenario's first second.
"""

import heapq
import json
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config.settings import NETSIM_SETTINGS
from src.models.frames import Timestamp
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class ConstantDelay:
    def __init__(self, d: float):
        if d < 0:
            raise ConfigError("Constant delay must be non-negative")
        self.d = d


    def sample(self, rng: np.random.Generator) -> float:
        return self.d


    def mean(self) -> float:
        return self.d


    def can_be_zero(self) -> bool:
        return self.d == 0


    def __repr__(self):
        return f"ConstantDelay({self.d * 1000:g} ms)"


class UniformDelay:
    def __init__(self, a: float, b: float):
        if a < 0 or b < a:
            raise ConfigError("Uniform delay needs 0 <= a <= b")
        self.a = a
        self.b = b


    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.a, self.b))


    def mean(self) -> float:
        return (self.a + self.b) / 2


    def can_be_zero(self) -> bool:
        return self.a == 0


    def __repr__(self):
        return f"UniformDelay({self.a * 1000:g}-{self.b * 1000:g} ms)"


class ShiftedLognormalDelay:
    """shift + lognormal(mu, sigma), all in seconds"""

    def __init__(self, shift: float, mu: float, sigma: float):
        if shift < 0 or sigma < 0:
            raise ConfigError("Lognormal delay needs shift >= 0 and sigma >= 0")
        self.shift = shift
        self.mu = mu
        self.sigma = sigma


    def sample(self, rng: np.random.Generator) -> float:
        return self.shift + float(rng.lognormal(self.mu, self.sigma))


    def mean(self) -> float:
        return self.shift + math.exp(self.mu + self.sigma ** 2 / 2)


    def can_be_zero(self) -> bool:
        # lognormal draws are strictly positive
        return False


    def __repr__(self):
        return f"ShiftedLognormalDelay(shift={self.shift * 1000:g} ms, mu={self.mu}, sigma={self.sigma})"


DELAY_MODELS = {
    'constant': (ConstantDelay, ('d',)),
    'uniform': (UniformDelay, ('a', 'b')),
    'shifted_lognormal': (ShiftedLognormalDelay, ('shift', 'mu', 'sigma')),
}


def delay_model_from_dict(spec: Dict):
    model = spec.get('model')
    if model not in DELAY_MODELS:
        raise ConfigError(f"Unknown delay model {model!r}; expected one of {sorted(DELAY_MODELS)}")
    cls, params = DELAY_MODELS[model]
    missing = [p for p in params if p not in spec]
    if missing:
        raise ConfigError(f"Delay model {model!r} is missing {missing}")
    return cls(*(float(spec[p]) for p in params))


class LinkModel:
    def __init__(self, name: str, delay, overhead: int = 0, loss: float = 0.0, fifo: bool = True):
        if overhead < 0:
            raise ConfigError(f"Link {name}: overhead must be non-negative")
        if not 0.0 <= loss <= 1.0:
            raise ConfigError(f"Link {name}: loss probability must be in [0, 1]")

        self.name = name
        self.delay = delay
        self.overhead = overhead
        self.loss = loss
        self.fifo = fifo


    def __repr__(self):
        return f"LinkModel({self.name}: {self.delay}, +{self.overhead} B, loss={self.loss}, fifo={self.fifo})"


class Message:
    def __init__(self, src: str, dst: str, payload: bytes, sent_at: float = 0.0, meta: Optional[Dict[str, Any]] = None):
        if not payload:
            raise ValueError("Message payload cannot be empty")
        self.src = src
        self.dst = dst
        self.payload = payload
        self.sent_at = sent_at
        self.meta = meta or {}


    def __repr__(self):
        return f"Message({self.src} -> {self.dst}, {len(self.payload)} B @ {self.sent_at:.6f})"


class LogEntry(NamedTuple):
    time: float
    kind: str
    link: str
    src: str
    dst: str
    size: int


class LinkConfig:
    """Parsed link calibration file"""

    def __init__(self, links: Dict[str, LinkModel], rate: int, overhead_bytes: int,
                 cvo_processing: float, wait_timeout: Optional[float]):
        self.links = links
        self.rate = rate
        self.overhead_bytes = overhead_bytes
        self.cvo_processing = cvo_processing
        self.wait_timeout = wait_timeout


    def link(self, name: str) -> LinkModel:
        if name not in self.links:
            raise ConfigError(f"Link configuration has no link {name!r}")
        return self.links[name]


    def check_positive_path(self, names: Sequence[str]):
        """Reject a path whose end-to-end delay could be zero"""
        if self.cvo_processing > 0:
            return
        if all(self.link(n).delay.can_be_zero() for n in names):
            raise ConfigError(f"Links {list(names)} and the CVO processing delay are all zero; "
                              f"latency must be positive")


def parse_link_config(data: Dict) -> LinkConfig:
    if 'links' not in data or not isinstance(data['links'], dict):
        raise ConfigError("Link configuration needs a 'links' object")
    links = {}
    for name, spec in data['links'].items():
        if 'delay' not in spec:
            raise ConfigError(f"Link {name} has no delay model")
        links[name] = LinkModel(
            name,
            delay_model_from_dict(spec['delay']),
            overhead=int(spec.get('overhead', 0)),
            loss=float(spec.get('loss', 0.0)),
            fifo=bool(spec.get('fifo', True)),
        )
    return LinkConfig(
        links,
        rate=int(data.get('rate', NETSIM_SETTINGS['rate'])),
        overhead_bytes=int(data.get('overhead_bytes', NETSIM_SETTINGS['http_overhead_bytes'])),
        cvo_processing=float(data.get('cvo_processing', 0.0)),
        wait_timeout=data.get('wait_timeout'),
    )


def load_link_config(path) -> LinkConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_link_config(data)


def constant_link_config(delay: float = 0.001, overhead: int = 0, names: Sequence[str] = ()) -> LinkConfig:
    """All links with the same constant delay"""
    links = {n: LinkModel(n, ConstantDelay(delay), overhead=overhead) for n in names}
    return LinkConfig(links, NETSIM_SETTINGS['rate'], overhead, 0.0, None)


class Simulator:
    """Single event loop ordered by (time, insertion sequence)"""

    def __init__(self, links: Optional[Dict[str, LinkModel]] = None,
                 seed: Optional[np.random.SeedSequence] = None):
        self.now = 0.0
        self.links: Dict[str, LinkModel] = {}
        self.event_log: List[LogEntry] = []
        self.bytes_sent: Dict[str, int] = {}
        self.messages_sent: Dict[str, int] = {}
        self.dropped: List[Message] = []
        self._queue: List[Tuple[float, int, Callable, tuple]] = []
        self._seq = 0
        self._rngs: Dict[str, np.random.Generator] = {}
        self._last_delivery: Dict[str, float] = {}

        links = links or {}
        seed = seed if seed is not None else np.random.SeedSequence()
        # one stream per link, spawned in sorted name order
        for name, child in zip(sorted(links), seed.spawn(len(links))):
            self.add_link(links[name], np.random.default_rng(child))


    def add_link(self, link: LinkModel, rng: Optional[np.random.Generator] = None):
        self.links[link.name] = link
        self._rngs[link.name] = rng if rng is not None else np.random.default_rng()
        self.bytes_sent.setdefault(link.name, 0)
        self.messages_sent.setdefault(link.name, 0)


    def schedule(self, at: float, callback: Callable, *args):
        if at < self.now:
            raise ValueError(f"Cannot schedule in the past ({at} < {self.now})")
        heapq.heappush(self._queue, (at, self._seq, callback, args))
        self._seq += 1


    def send(self, link_name: str, message: Message, on_deliver: Callable[[Message], None]) -> Optional[float]:
        """Schedule delivery over a link; None when the message is lost"""
        if link_name not in self.links:
            raise ConfigError(f"Unknown link {link_name!r}")
        link = self.links[link_name]
        rng = self._rngs[link_name]
        size = len(message.payload) + link.overhead
        message.sent_at = self.now
        self.bytes_sent[link_name] += size
        self.messages_sent[link_name] += 1

        if link.loss > 0 and rng.random() < link.loss:
            self.dropped.append(message)
            self.event_log.append(LogEntry(self.now, 'drop', link_name, message.src, message.dst, size))
            logger.debug("dropped %s on %s", message, link_name)
            return None

        at = self.now + link.delay.sample(rng)
        if link.fifo:
            at = max(at, self._last_delivery.get(link_name, at))
            self._last_delivery[link_name] = at
        self.event_log.append(LogEntry(self.now, 'send', link_name, message.src, message.dst, size))
        self.schedule(at, self._deliver, link_name, message, on_deliver)
        return at


    def _deliver(self, link_name: str, message: Message, on_deliver: Callable[[Message], None]):
        self.event_log.append(LogEntry(self.now, 'deliver', link_name, message.src, message.dst,
                                       len(message.payload)))
        on_deliver(message)


    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, callback, args = heapq.heappop(self._queue)
        self.now = at
        callback(*args)
        return True


    def run(self, until: Optional[float] = None) -> int:
        """Process events (up to and including until); returns how many ran"""
        count = 0
        while self._queue and (until is None or self._queue[0][0] <= until):
            self.step()
            count += 1
        if until is not None and until > self.now:
            self.now = until
        return count


    @property
    def pending(self) -> int:
        return len(self._queue)


    def __repr__(self):
        return f"Simulator(t={self.now:.6f}, {len(self.links)} links, {len(self._queue)} pending)"


class LatencyRecord(NamedTuple):
    """Frame timestamp to application receipt"""
    timestamp: Timestamp
    receipt: float
    latency: float

    @classmethod
    def measure(cls, timestamp: Timestamp, receipt: float, origin_soc: int) -> 'LatencyRecord':
        latency = receipt - timestamp.elapsed_since(origin_soc)
        if latency <= 0:
            raise ValueError(f"Non-positive latency for {timestamp}: {latency}")
        return cls(timestamp, receipt, latency)


def _latencies(records: Sequence) -> np.ndarray:
    if len(records) == 0:
        raise ValueError("No latency records")
    values = [r.latency if isinstance(r, LatencyRecord) else float(r) for r in records]
    return np.asarray(values, dtype=float)


class LatencyCdf:
    """Empirical distribution of latencies (seconds)"""

    def __init__(self, records: Sequence):
        self.values = np.sort(_latencies(records))
        self.fractions = np.arange(1, len(self.values) + 1) / len(self.values)


    def at(self, x: float) -> float:
        """Fraction of records with latency <= x"""
        return float(np.searchsorted(self.values, x, side='right')) / len(self.values)


    @property
    def min(self) -> float:
        return float(self.values[0])


    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


    @property
    def max(self) -> float:
        return float(self.values[-1])


    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.values.tolist(), self.fractions.tolist()))


    def __len__(self):
        return len(self.values)


    def __repr__(self):
        return (f"LatencyCdf(n={len(self)}, min={self.min * 1000:.1f} ms, "
                f"mean={self.mean * 1000:.1f} ms, max={self.max * 1000:.1f} ms)")


def latency_cdf(records: Sequence) -> LatencyCdf:
    return LatencyCdf(records)


def dependability(records: Sequence, threshold: float) -> float:
    """Percent of records with latency <= threshold seconds"""
    values = _latencies(records)
    return 100.0 * float(np.count_nonzero(values <= threshold)) / len(values)


def latency_quantiles(records: Sequence, probs: Sequence[float]) -> np.ndarray:
    return np.quantile(_latencies(records), probs)


def stochastic_dominance(faster: Sequence, slower: Sequence,
                         probs: Sequence[float] = NETSIM_SETTINGS['dominance_quantiles']) -> bool:
    """True when faster's latency quantiles never exceed slower's"""
    return bool(np.all(latency_quantiles(faster, probs) <= latency_quantiles(slower, probs)))


def stream_bandwidth(frame_bytes: int, rate: float, overhead: int, streams: int) -> int:
    """Bits per second of streams identical frame streams"""
    if min(frame_bytes, rate, overhead, streams) < 0:
        raise ValueError("Bandwidth inputs must be non-negative")
    return int(streams * (frame_bytes + overhead) * rate * 8)


def bandwidth_saving(local_bps: float, remote_bps: float) -> float:
    """Percent saved by the local deployment, one decimal"""
    if remote_bps <= 0:
        raise ValueError("remote bandwidth must be positive")
    return round(100.0 * (1.0 - local_bps / remote_bps), 1)


def implied_overhead(bps: float, frame_bytes: int, rate: float, streams: int) -> float:
    """Per-message overhead that makes stream_bandwidth produce bps"""
    return bps / (streams * rate * 8) - frame_bytes
