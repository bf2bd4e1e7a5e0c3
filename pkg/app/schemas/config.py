from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

DUTY_CYCLES: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)

FULL_SCALE_LR = 0.95e-5
FULL_SCALE_N_UNIQUE = 1000


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SimConfig(_Section):
    c_dev: float = Field(default=10e-6, gt=0)
    l_dev: float = Field(default=100e-6, gt=0)
    r_in: float = Field(default=0.1, gt=0)
    r_load: float = Field(default=50.0, gt=0)
    c_out: float = Field(default=10e-6, gt=0)
    v_in: float = Field(default=100.0, gt=0)
    f_sw: float = Field(default=1e6, gt=0)
    r_on: float = Field(default=0.05, gt=0)
    r_off: float = Field(default=1e6, gt=0)
    g_min: float = Field(default=1e-9, ge=0)
    steps_per_period: int = Field(default=100, ge=10)
    max_periods: int = Field(default=40000, ge=1)
    min_periods: int = Field(default=50, ge=1)
    ss_tol: float = Field(default=1e-4, gt=0)
    settle_periods: int = Field(default=5, ge=1)
    report_periods: int = Field(default=10, ge=1)
    stepper: Literal["period", "exact"] = "period"

    # oracle thresholds
    min_output_power: float = Field(default=0.01, ge=0)
    min_efficiency: float = Field(default=0.001, ge=0, le=1)
    min_output_voltage: float = Field(default=1.0, ge=0)

    @property
    def step(self) -> float:
        return 1.0 / (self.f_sw * self.steps_per_period)


class ModelConfig(_Section):
    d_model: int = Field(default=64, ge=4)
    n_layers: int = Field(default=2, ge=1)
    n_heads: int = Field(default=4, ge=1)
    max_len: int = Field(default=96, ge=8)
    dropout: float = Field(default=0.0, ge=0, lt=1)
    init_std: float = Field(default=0.02, gt=0)
    clf_dim: int = Field(default=64, ge=4)
    clf_layers: int = Field(default=1, ge=0)
    clf_heads: int = Field(default=4, ge=1)
    clf_hidden: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _heads_divide(self) -> "ModelConfig":
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.clf_dim % self.clf_heads:
            raise ValueError("clf_dim must be divisible by clf_heads")
        return self


class TrainConfig(_Section):
    preset: Literal["desk", "full"] = "desk"
    lr: float = Field(default=3e-4, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.95, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    batch_size: int = Field(default=16, ge=1)
    clf_epochs: int = Field(default=20, ge=0)
    lm_epochs: int = Field(default=10, ge=0)
    refine_epochs: int = Field(default=2, ge=0)
    max_steps: int = Field(default=0, ge=0)  # 0 = no cap
    seed: int = 42
    grad_clip: float = Field(default=1.0, gt=0)
    tau_mode: Literal["fixed", "exp-anneal"] = "fixed"
    tau0: float = Field(default=1.0, gt=0)
    tau_min: float = Field(default=0.3, gt=0)
    tau_decay: float = Field(default=0.999, gt=0, le=1)
    loss_weighting: Literal["learned", "nll_only"] = "learned"
    s1_init: float = 0.0
    s2_init: float = 0.0
    rollout_batch: int = Field(default=8, ge=1)
    eval_samples: int = Field(default=100, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("preset") == "full" and "lr" not in data:
            data = {**data, "lr": FULL_SCALE_LR}
        return data

    @model_validator(mode="after")
    def _tau_range(self) -> "TrainConfig":
        if self.tau_min > self.tau0:
            raise ValueError("tau_min must not exceed tau0")
        return self

    def tau_at(self, step: int) -> float:
        if self.tau_mode == "fixed":
            return self.tau0
        return max(self.tau_min, self.tau0 * self.tau_decay ** step)


class DecodeConfig(_Section):
    temperature: float = Field(default=1.0, gt=0)
    top_k: int = Field(default=40, ge=1)
    top_p: float = Field(default=0.95, gt=0, le=1)
    max_len: int = Field(default=96, ge=1)
    seed: int = 0


class DataConfig(_Section):
    path: Optional[str] = None  # corpus read by train-clf, train-lm, refine, ablate and stats
    n: int = Field(default=1000, ge=1)
    seed: int = 0
    dedup: bool = False
    alpha: float = Field(default=1.5, gt=0)
    encoding: Literal["nl", "array"] = "nl"
    train_fraction: float = Field(default=0.8, ge=0, le=1)
    val_fraction: float = Field(default=0.1, ge=0, le=1)
    test_fraction: float = Field(default=0.1, ge=0, le=1)
    split_seed: int = 0
    screen: bool = True

    @model_validator(mode="after")
    def _fractions_sum(self) -> "DataConfig":
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, expected 1")
        return self


class EvalConfig(_Section):
    n_unique: int = Field(default=200, ge=1)
    max_attempts_factor: int = Field(default=50, ge=1)
    threshold: float = Field(default=0.6, ge=0, le=1)
    hist_bins: int = Field(default=20, ge=1)
    batch: int = Field(default=32, ge=1)
    seed: int = 0

    @property
    def max_attempts(self) -> int:
        return self.n_unique * self.max_attempts_factor


class RunConfig(_Section):
    threads: int = Field(default=0, ge=0)  # 0 = all cores
    metrics_log: str = "metrics.tsv"
    force: bool = False
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"


SECTIONS: dict[str, type[_Section]] = {
    "sim": SimConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "decode": DecodeConfig,
    "data": DataConfig,
    "eval": EvalConfig,
    "run": RunConfig,
}
