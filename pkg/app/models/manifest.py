from pydantic import BaseModel, field_validator, model_validator
from typing import Literal, Optional, Tuple
import re

MANIFEST_COLUMNS = ["path", "label", "pai_type", "dataset_id", "subject_id"]
REQUIRED_COLUMNS = ["path", "label", "pai_type", "dataset_id"]


class ManifestEntry(BaseModel):
    path: str
    label: Literal["bonafide", "attack"]
    pai_type: str = ""
    dataset_id: str
    subject_id: Optional[str] = None

    @field_validator("path", "dataset_id")
    def validate_not_empty(cls, v: str) -> str:
        if not v or not v.strip():
            raise ValueError("must not be empty")
        return v.strip()

    @field_validator("pai_type", "dataset_id")
    def validate_tag(cls, v: str) -> str:
        if v and not re.match(r"^[a-zA-Z0-9_-]+$", v):
            raise ValueError(
                f"Invalid tag '{v}'. Only letters, numbers, '_', and '-' are allowed."
            )
        return v

    @field_validator("subject_id", mode="before")
    def empty_subject_is_none(cls, v: Optional[str]) -> Optional[str]:
        return v or None

    @model_validator(mode="after")
    def validate_label_pai(self) -> "ManifestEntry":
        if self.label == "attack" and not self.pai_type:
            raise ValueError("attack entries need a pai_type")
        if self.label == "bonafide" and self.pai_type:
            raise ValueError("bonafide entries must leave pai_type empty")
        return self

    @property
    def is_attack(self) -> bool:
        return self.label == "attack"


class SyntheticSpec(BaseModel):
    """Procedural stand-in for a fingerprint dataset: smooth ridges vs. ridges with a spoof overlay."""

    image_size: int = 64
    bonafide_count: int = 16
    attack_counts: dict[str, int] = {"PH": 8, "PL": 8}
    seed: int = 0
    dataset_id: str = "SYN"
    ridge_cycles: Tuple[float, float] = (4.0, 8.0)
    tint: Tuple[float, float, float] = (1.0, 0.85, 0.75)
    attack_brightness: float = 0.15
    noise_amplitude: float = 0.12

    @field_validator("image_size", "bonafide_count")
    def validate_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be positive")
        return v

    @field_validator("attack_counts")
    def validate_attack_counts(cls, v: dict[str, int]) -> dict[str, int]:
        if not v:
            raise ValueError("at least one PAI type is required")
        for tag, count in v.items():
            if not re.match(r"^[a-zA-Z0-9_-]+$", tag) or count < 1:
                raise ValueError(f"Invalid PAI entry '{tag}': {count}")
        return v

    @field_validator("tint")
    def validate_tint(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if not all(0.0 < c <= 1.0 for c in v):
            raise ValueError("tint channels must lie in (0, 1]")
        return v

    @property
    def total(self) -> int:
        return self.bonafide_count + sum(self.attack_counts.values())

