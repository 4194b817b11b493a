from typing import Any, Dict, Tuple

K = int
Beta = float
Gamma = float
Rho = float
PolicyName = str
RhoSource = str

SweepKey = Tuple[K, Beta, Gamma, Rho, PolicyName, RhoSource]
RawSweepResults = Dict[SweepKey, "SweepCellResult"]

RunReport = Dict[str, Any]

STATUS_OK = "ok"
STATUS_FAILED = "failed"

RHO_GRID = "grid"
RHO_MODEL = "model"

MEASUREMENTS = [
    "status",
    "wall_seconds",
    "eps",
    "t1",
    "t2",
    "rho_model",
    "failed",
    "q_gpu",
    "q_cpu",
    "imbalance",
    "error",
]


class SweepCellResult:
    measurements: Dict[str, Any]

    def __init__(self, measurements: Dict[str, Any]) -> None:
        self.measurements = measurements

    @property
    def ok(self) -> bool:
        return self.measurements.get("status") == STATUS_OK

    def describe_json(self) -> Dict[str, Any]:
        return {name: self.measurements.get(name) for name in MEASUREMENTS}

    def raw(self) -> Dict[str, Any]:
        return self.measurements

    def __eq__(self, __value: object) -> bool:
        if not isinstance(__value, SweepCellResult):
            return False

        return self.describe_json() == __value.describe_json()
