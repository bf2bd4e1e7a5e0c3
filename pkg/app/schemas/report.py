from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

REPORT_VERSION = 1

# column header -> EvalReport field
REPORT_COLUMNS: dict[str, str] = {
    "model": "label",
    "E(f_valid)": "e_fvalid",
    "E(f_S_valid)": "e_fsvalid",
    "E(f_S_eff)": "e_fseff",
    "rho": "rho",
    "n_unique": "n_unique",
    "n_attempts": "n_attempts",
    "n_unparseable": "n_unparseable",
    "n_duplicates": "n_duplicates",
    "budget_exhausted": "budget_exhausted",
    "t_stat": "t_stat",
    "p_value": "p_value",
}


class EvalReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str = "model"
    e_fvalid: float = Field(ge=0, le=1)
    e_fsvalid: float = Field(ge=0, le=1)
    e_fseff: float = Field(ge=0, le=1)
    rho: float
    n_unique: int = Field(ge=0)
    n_attempts: int = Field(ge=0)
    n_unparseable: int = Field(default=0, ge=0)
    n_duplicates: int = Field(default=0, ge=0)
    budget_exhausted: bool = False
    t_stat: Optional[float] = None  # None when the groups are degenerate
    p_value: Optional[float] = None

    @model_validator(mode="after")
    def _rho_consistent(self) -> "EvalReport":
        if self.n_unique > 0 and abs(self.rho * self.n_unique - self.n_attempts) > 1e-9 * self.n_attempts:
            raise ValueError("rho must equal n_attempts / n_unique")
        return self


class HistogramBin(BaseModel):
    lo: float
    hi: float
    n_valid: int = Field(ge=0)
    n_invalid: int = Field(ge=0)
