"""
Random-search dataset generation, `.csd` persistence and splits.

File layout: a `# csd-version 1` header, then one tab-separated record per line
    id  pool  duty  netlist_array  valid  efficiency  v_out_avg
with floats printed to 17 significant digits (`nan` for undefined efficiency).
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from app.core.circuit import (
    KIND_ORDER,
    N_DEVICES,
    N_PORTS,
    ComponentPool,
    Topology,
    canonicalize,
    structural_screen,
    topology_from_groups,
)
from app.core.encoding import EncodingMode, encode_topology, parse_topology
from app.core.errors import FormatError, MalformedTopology, ParseError
from app.core.simulator import oracle
from app.core.workers import parallel_map
from app.schemas.config import DUTY_CYCLES, DataConfig, SimConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_PREFIX = "# csd-version "
N_FIELDS = 7
_BATCH = 256

PoolSampler = Callable[[np.random.Generator], ComponentPool]


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    id: int
    pool: ComponentPool
    duty: float
    netlist_array: str
    valid: int
    efficiency: float  # NaN when invalid
    v_out_avg: float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.pool == other.pool
            and self.duty == other.duty
            and self.netlist_array == other.netlist_array
            and self.valid == other.valid
            and _same_float(self.efficiency, other.efficiency)
            and _same_float(self.v_out_avg, other.v_out_avg)
        )

    def __hash__(self) -> int:
        return hash((self.id, self.netlist_array, self.duty))

    def topology(self) -> Topology:
        return parse_topology(self.netlist_array, self.pool, EncodingMode.ARRAY)

    def netlist(self, mode: EncodingMode) -> str:
        if EncodingMode(mode) is EncodingMode.ARRAY:
            return self.netlist_array
        return encode_topology(self.topology(), mode)


def _same_float(a: float, b: float) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")

    @classmethod
    def from_config(cls, cfg: DataConfig) -> "SplitSpec":
        return cls(cfg.train_fraction, cfg.val_fraction, cfg.test_fraction, cfg.split_seed)


# ==================== Sampling ====================


def sample_pool(rng: np.random.Generator) -> ComponentPool:
    """Each of the 5 slots uniform over the 4 kinds."""
    return ComponentPool(tuple(KIND_ORDER[int(i)] for i in rng.integers(0, len(KIND_ORDER), size=N_DEVICES)))


def sample_duty(rng: np.random.Generator) -> float:
    return DUTY_CYCLES[int(rng.integers(0, len(DUTY_CYCLES)))]


def random_topology(pool: ComponentPool, rng: np.random.Generator, alpha: float = 1.5) -> Topology:
    """Chinese-restaurant partition of the 13 ports visited in random order."""
    nets: list[list[int]] = []
    for port in rng.permutation(N_PORTS):
        weights = np.array([len(net) for net in nets] + [alpha], dtype=float)
        choice = int(rng.choice(len(weights), p=weights / weights.sum()))
        if choice == len(nets):
            nets.append([int(port)])
        else:
            nets[choice].append(int(port))
    return topology_from_groups(pool, nets)


def screen_connected_fraction(n: int, seed: int, alpha: float = 1.5) -> float:
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n):
        t = random_topology(sample_pool(rng), rng, alpha)
        hits += structural_screen(t).connected
    return hits / n


@dataclass(frozen=True)
class _Draw:
    pool: ComponentPool
    duty: float
    topology: Topology


@dataclass(frozen=True)
class Label:
    valid: int
    efficiency: float
    v_out_avg: float
    reason: str
    connected: bool


def _draw(seed: int, attempt: int, alpha: float, pool_sampler: Optional[PoolSampler]) -> _Draw:
    rng = np.random.default_rng([seed, attempt])
    pool = pool_sampler(rng) if pool_sampler is not None else sample_pool(rng)
    duty = sample_duty(rng)
    return _Draw(pool, duty, random_topology(pool, rng, alpha))


def label_topology(item: tuple[Topology, float], sim: SimConfig, screen: bool = True) -> Label:
    """Oracle label with the structural screen as fast path."""
    t, duty = item
    connected = structural_screen(t).connected
    if screen and not connected:
        return Label(0, math.nan, 0.0, "screen: IN and OUT not connected", False)
    result = oracle(t, duty, sim)
    v_out = result.sim.v_out_avg if result.sim is not None else math.nan
    return Label(int(result.valid), result.efficiency, v_out, result.reason, connected)


def generate_dataset(
    n: int,
    sim: SimConfig,
    data: DataConfig,
    pool_sampler: Optional[PoolSampler] = None,
    threads: int = 0,
) -> Iterator[DatasetRecord]:
    """Stream n labeled records; reproducible from (data.seed, n, configs) alone."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seen: set[tuple[bytes, float]] = set()
    attempt = 0
    emitted = 0
    stats = {"valid": 0, "connected": 0, "dedup_skipped": 0}
    while emitted < n:
        batch: list[_Draw] = []
        while len(batch) < min(_BATCH, n - emitted):
            draw = _draw(data.seed, attempt, data.alpha, pool_sampler)
            attempt += 1
            if data.dedup:
                key = (canonicalize(draw.topology), draw.duty)
                if key in seen:
                    stats["dedup_skipped"] += 1
                    continue
                seen.add(key)
            batch.append(draw)
        labels = parallel_map(
            label_topology, [(d.topology, d.duty) for d in batch],
            threads=threads, desc="labeling", sim=sim, screen=data.screen,
        )
        for draw, label in zip(batch, labels):
            if label.reason and not label.valid and label.reason.startswith("numerical"):
                log_data = {"event": "numerical-failure", "record": emitted, "reason": label.reason}
                logger.warning(json.dumps(log_data))
            stats["valid"] += label.valid
            stats["connected"] += label.connected
            yield DatasetRecord(
                id=emitted,
                pool=draw.pool,
                duty=draw.duty,
                netlist_array=encode_topology(draw.topology, EncodingMode.ARRAY),
                valid=label.valid,
                efficiency=label.efficiency if label.valid else math.nan,
                v_out_avg=label.v_out_avg,
            )
            emitted += 1

    log_data = {
        "event": "dataset",
        "records": emitted,
        "attempts": attempt,
        "valid_fraction": stats["valid"] / emitted,
        "screen_connected_fraction": stats["connected"] / emitted,
        "dedup_skipped": stats["dedup_skipped"],
    }
    logger.info(json.dumps(log_data))


# ==================== Persistence ====================


def _fmt(x: float) -> str:
    return format(x, ".17g")


def format_record(record: DatasetRecord) -> str:
    return "\t".join([
        str(record.id),
        str(record.pool),
        _fmt(record.duty),
        record.netlist_array,
        str(record.valid),
        _fmt(record.efficiency),
        _fmt(record.v_out_avg),
    ])


def parse_record(line: str, lineno: int) -> DatasetRecord:
    fields = line.split("\t")
    if len(fields) != N_FIELDS:
        raise FormatError(f"expected {N_FIELDS} fields, got {len(fields)}", lineno)
    try:
        record = DatasetRecord(
            id=int(fields[0]),
            pool=ComponentPool.parse(fields[1]),
            duty=float(fields[2]),
            netlist_array=fields[3],
            valid=int(fields[4]),
            efficiency=float(fields[5]),
            v_out_avg=float(fields[6]),
        )
    except (ValueError, ParseError, MalformedTopology) as e:
        raise FormatError(str(e), lineno) from None
    if record.id < 0 or record.valid not in (0, 1):
        raise FormatError("id must be non-negative and valid must be 0 or 1", lineno)
    if record.valid and not 0.0 < record.efficiency <= 1.0:
        raise FormatError("valid record needs efficiency in (0, 1]", lineno)
    try:
        record.topology()
    except ParseError as e:
        raise FormatError(f"netlist does not parse: {e}", lineno) from None
    return record


def write_records(path: Path, records: Iterable[DatasetRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{HEADER_PREFIX}{FORMAT_VERSION}\n")
        for record in records:
            f.write(format_record(record) + "\n")
            count += 1
    return count


def read_records(path: Path) -> list[DatasetRecord]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(HEADER_PREFIX):
        raise FormatError("missing csd-version header", 1)
    try:
        version = int(lines[0][len(HEADER_PREFIX):])
    except ValueError:
        raise FormatError("bad csd-version header", 1) from None
    if version > FORMAT_VERSION:
        raise FormatError(f"file version {version} is newer than supported version {FORMAT_VERSION}", 1)
    return [parse_record(line, lineno) for lineno, line in enumerate(lines[1:], start=2)]


# ==================== Splits ====================


def split_unit(record_id: int, seed: int) -> float:
    digest = hashlib.blake2b(f"{seed}:{record_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0 ** 64


def split(records: Iterable[DatasetRecord], spec: SplitSpec) -> tuple[list[DatasetRecord], ...]:
    train, val, test = [], [], []
    for record in records:
        u = split_unit(record.id, spec.seed)
        if u < spec.train:
            train.append(record)
        elif u < spec.train + spec.val:
            val.append(record)
        else:
            test.append(record)
    return train, val, test
