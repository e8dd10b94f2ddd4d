from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional
import re

Label = Literal["bonafide", "attack"]


class ScoredSample(BaseModel):
    score: float = Field(ge=0.0, le=1.0)
    label: Label
    pai_type: str = ""
    dataset_id: str = ""

    @model_validator(mode="after")
    def validate_pai(self) -> "ScoredSample":
        if self.label == "attack" and not self.pai_type.strip():
            raise ValueError("attack samples must carry a pai_type")
        if self.label == "bonafide" and self.pai_type:
            raise ValueError("bonafide samples carry no pai_type")
        return self


class DetPoint(BaseModel):
    threshold: float
    apcer: float
    bpcer: float


class DetCurve(BaseModel):
    points: List[DetPoint]

    @model_validator(mode="after")
    def validate_monotone(self) -> "DetCurve":
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.threshold <= prev.threshold:
                raise ValueError("DET thresholds must increase strictly")
            if cur.apcer < prev.apcer or cur.bpcer > prev.bpcer:
                raise ValueError("DET curve must have non-decreasing APCER and non-increasing BPCER")
        return self


ThresholdSource = Literal["fixed", "held-out split", "evaluated set"]


class MetricsReport(BaseModel):
    threshold: float
    # where the operating threshold was chosen; "evaluated set" makes every rate optimistic
    threshold_source: Optional[ThresholdSource] = None
    apcer_overall: float = Field(ge=0.0, le=100.0)
    apcer_per_pai: Dict[str, float]
    apcer_worst_pai: float = Field(ge=0.0, le=100.0)
    bpcer: float = Field(ge=0.0, le=100.0)
    acer: float = Field(ge=0.0, le=100.0)
    counts: Dict[str, int]
    eer: Optional[float] = None
    auc: Optional[float] = None

    @field_validator("apcer_per_pai")
    def validate_rates(cls, v: Dict[str, float]) -> Dict[str, float]:
        for tag, rate in v.items():
            if not 0.0 <= rate <= 100.0:
                raise ValueError(f"APCER for {tag} outside [0, 100]: {rate}")
        return v

    @model_validator(mode="after")
    def validate_acer(self) -> "MetricsReport":
        if self.acer != (self.apcer_overall + self.bpcer) / 2:
            raise ValueError("acer must equal the mean of apcer_overall and bpcer")
        return self


class ThresholdPolicy(BaseModel):
    kind: Literal["bpcer", "eer", "fixed"]
    value: Optional[float] = None

    @model_validator(mode="after")
    def validate_value(self) -> "ThresholdPolicy":
        if self.kind == "bpcer" and (self.value is None or not 0.0 <= self.value <= 100.0):
            raise ValueError("bpcer policy needs a target percentage in [0, 100]")
        if self.kind == "fixed" and (self.value is None or not 0.0 <= self.value <= 1.0):
            raise ValueError("fixed policy needs a threshold in [0, 1]")
        return self

    @classmethod
    def parse(cls, text: str) -> "ThresholdPolicy":
        """Parse 'bpcer:0.1', 'fixed:0.5' or 'eer'."""
        match = re.fullmatch(r"\s*(bpcer|eer|fixed)\s*(?::\s*([0-9.eE+-]+))?\s*", text)
        if not match:
            raise ValueError(f"Invalid threshold policy '{text}'. Use bpcer:<percent>, fixed:<t> or eer")
        kind, value = match.group(1), match.group(2)
        return cls(kind=kind, value=float(value) if value is not None else None)

    def __str__(self) -> str:
        return self.kind if self.value is None else f"{self.kind}:{self.value:g}"


class FoldSpec(BaseModel):
    k: int = Field(ge=2)
    seed: int
    folds: List[List[int]]

    @model_validator(mode="after")
    def validate_partition(self) -> "FoldSpec":
        if len(self.folds) != self.k:
            raise ValueError(f"expected {self.k} folds, got {len(self.folds)}")
        flat = [i for fold in self.folds for i in fold]
        if len(flat) != len(set(flat)):
            raise ValueError("folds overlap")
        return self

    def train_indices(self, fold: int) -> List[int]:
        return sorted(i for f, idx in enumerate(self.folds) if f != fold for i in idx)


class FoldResult(BaseModel):
    fold: int
    report: MetricsReport
