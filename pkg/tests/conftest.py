import math

import numpy as np
import pytest

from app.core.circuit import ComponentPool
from app.core.dataset import DatasetRecord
from app.core.encoding import EncodingMode, parse_topology
from app.schemas.config import DataConfig, ModelConfig, SimConfig, TrainConfig

# Every device shorted onto ground, IN tied to OUT: a plain R_in / R_load divider
DIVIDER_POOL = "C,C,C,C,C"
DIVIDER_NETLIST = "C0 0 0 ; C1 0 0 ; C2 0 0 ; C3 0 0 ; C4 0 0 ; OUT IN"

# Synchronous buck: Sa from IN to the switch node, Sb to ground, L into OUT
BUCK_POOL = "C,L,Sa,Sb,C"
BUCK_NETLIST = "C0 OUT 0 ; L0 n1 OUT ; Sa0 IN n1 ; Sb0 n1 0 ; C1 0 0"

# No device path between IN and OUT
OPEN_POOL = "C,L,Sa,Sb,C"
OPEN_NETLIST = "C0 IN n1 ; L0 n1 n2 ; Sa0 n3 n4 ; Sb0 n5 n6 ; C1 OUT 0"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sim_cfg():
    """Default harness with a lighter load so the buck settles within a few hundred periods."""
    return SimConfig(r_load=5.0)


@pytest.fixture
def divider():
    pool = ComponentPool.parse(DIVIDER_POOL)
    return parse_topology(DIVIDER_NETLIST, pool, EncodingMode.ARRAY)


@pytest.fixture
def buck():
    pool = ComponentPool.parse(BUCK_POOL)
    return parse_topology(BUCK_NETLIST, pool, EncodingMode.ARRAY)


@pytest.fixture
def open_circuit():
    pool = ComponentPool.parse(OPEN_POOL)
    return parse_topology(OPEN_NETLIST, pool, EncodingMode.ARRAY)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(d_model=16, n_layers=1, n_heads=2, clf_dim=16, clf_heads=2, clf_hidden=8)


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig(batch_size=4, clf_epochs=2, lm_epochs=2, refine_epochs=1, rollout_batch=2,
                       eval_samples=0, lr=1e-3, seed=7)


def make_record(record_id: int, pool: str, netlist: str, valid: int, duty: float = 0.5,
                efficiency: float = math.nan, v_out: float = 0.0) -> DatasetRecord:
    return DatasetRecord(
        id=record_id,
        pool=ComponentPool.parse(pool),
        duty=duty,
        netlist_array=netlist,
        valid=valid,
        efficiency=efficiency if valid else math.nan,
        v_out_avg=v_out,
    )


@pytest.fixture
def tiny_corpus():
    """Twelve records alternating the buck (valid) and the open circuit (invalid)."""
    records = []
    for i in range(12):
        if i % 2 == 0:
            records.append(make_record(i, BUCK_POOL, BUCK_NETLIST, 1, efficiency=0.97, v_out=49.0))
        else:
            records.append(make_record(i, OPEN_POOL, OPEN_NETLIST, 0))
    return records


@pytest.fixture
def small_data_cfg():
    return DataConfig(n=20, seed=3, encoding="array")
