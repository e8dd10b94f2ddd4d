from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Literal, Optional, Tuple

CONFIG_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class EncoderConfig(_Section):
    image_size: int = Field(256, gt=0)
    patch_size: int = Field(4, gt=0)
    embed_dim: int = Field(48, gt=0)
    stage_depths: List[int] = [2, 2, 2]
    heads_per_stage: List[int] = [3, 6, 12]
    window_size: int = Field(8, gt=0)
    mlp_ratio: float = Field(4.0, gt=0)
    tau_init: float = Field(0.1, ge=0.01)

    @field_validator("stage_depths", "heads_per_stage")
    def validate_positive_list(cls, v: List[int]) -> List[int]:
        if not v or any(d < 1 for d in v):
            raise ValueError("must be a non-empty list of positive integers")
        return v

    @model_validator(mode="after")
    def validate_geometry(self) -> "EncoderConfig":
        if len(self.stage_depths) != len(self.heads_per_stage):
            raise ValueError("stage_depths and heads_per_stage must have the same length")
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        for stage, (grid, dim, heads) in enumerate(
            zip(self.stage_grids, self.stage_dims, self.heads_per_stage)
        ):
            if grid % self.window_size:
                raise ValueError(
                    f"stage {stage} token grid {grid} is not divisible by window {self.window_size}"
                )
            if dim % heads:
                raise ValueError(f"stage {stage} width {dim} is not divisible by {heads} heads")
        return self

    @property
    def num_stages(self) -> int:
        return len(self.stage_depths)

    @property
    def stage_grids(self) -> List[int]:
        grid = self.image_size // self.patch_size
        return [grid // (2**s) for s in range(self.num_stages)]

    @property
    def stage_dims(self) -> List[int]:
        return [self.embed_dim * (2**s) for s in range(self.num_stages)]


class DfnConfig(_Section):
    filters: int = Field(4, ge=1)
    reduction: int = Field(4, ge=1)


class DecoderConfig(_Section):
    blocks_per_level: int = Field(2, ge=1)
    gate_reduction: int = Field(4, ge=1)
    spatial_kernel: int = Field(7, ge=1)

    @field_validator("spatial_kernel")
    def validate_odd_kernel(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("spatial_kernel must be odd")
        return v


class HeadConfig(_Section):
    widths: List[int] = [64, 32]
    gru_hidden: int = Field(16, ge=1)
    reduction: int = Field(4, ge=1)
    conv_kernel: int = Field(3, ge=1)
    spatial_kernel: int = Field(7, ge=1)

    @field_validator("conv_kernel", "spatial_kernel")
    def validate_odd_kernel(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        return v

    @field_validator("widths")
    def validate_widths(cls, v: List[int]) -> List[int]:
        if not v or any(w < 1 for w in v):
            raise ValueError("widths must be a non-empty list of positive integers")
        return v

    @property
    def embedding_dim(self) -> int:
        return self.widths[-1]


class LossConfig(_Section):
    alpha: float = Field(0.25, gt=0, lt=1)
    gamma: float = Field(2.0, ge=0)
    margin: float = Field(1.0, gt=0)
    lambda_: float = Field(0.5, ge=0, alias="lambda")
    focal_variant: Literal["verbatim", "standard"] = "verbatim"
    mode: Literal["combined", "focal", "bce"] = "combined"
    pair_strategy: Literal["balanced", "all"] = "balanced"
    pair_cap: int = Field(32, ge=1)
    prob_clamp: float = Field(1e-7, gt=0, lt=0.5)


class OptimConfig(_Section):
    lr: float = Field(1e-3, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    warmup_fraction: float = Field(0.05, ge=0, lt=1)

    @field_validator("betas")
    def validate_betas(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0 <= b < 1 for b in v):
            raise ValueError("betas must lie in [0, 1)")
        return v


class TrainingConfig(_Section):
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(8, ge=2)
    seed: int = 0
    hflip: bool = False


class EvaluationConfig(_Section):
    threshold_policy: str = "bpcer:0.1"
    k: int = Field(5, ge=2)
    holdout_fraction: float = Field(0.2, gt=0, lt=1)
    det_points: Optional[int] = Field(None, ge=2)

    @field_validator("threshold_policy")
    def validate_policy(cls, v: str) -> str:
        from app.models.metrics import ThresholdPolicy

        ThresholdPolicy.parse(v)
        return v


class RunConfig(_Section):
    version: Literal[1] = CONFIG_VERSION
    encoder: EncoderConfig = EncoderConfig()
    dfn: DfnConfig = DfnConfig()
    decoder: DecoderConfig = DecoderConfig()
    head: HeadConfig = HeadConfig()
    loss: LossConfig = LossConfig()
    optim: OptimConfig = OptimConfig()
    training: TrainingConfig = TrainingConfig()
    evaluation: EvaluationConfig = EvaluationConfig()

    @model_validator(mode="after")
    def validate_cross_module(self) -> "RunConfig":
        bottleneck = self.encoder.stage_dims[-1]
        if bottleneck % self.dfn.reduction:
            raise ValueError(
                f"dfn.reduction {self.dfn.reduction} does not divide bottleneck width {bottleneck}"
            )
        for dim in self.encoder.stage_dims[1:]:
            if dim % 2:
                raise ValueError(f"decoder cannot halve odd width {dim}")
        for dim in self.decoder_dims:
            if dim % self.decoder.gate_reduction:
                raise ValueError(
                    f"decoder.gate_reduction {self.decoder.gate_reduction} does not divide level width {dim}"
                )
        for width in self.head.widths:
            if width % self.head.reduction:
                raise ValueError(
                    f"head.reduction {self.head.reduction} does not divide head width {width}"
                )
        return self

    @property
    def decoder_dims(self) -> List[int]:
        """Level widths from the deepest decoder level to the shallowest."""
        return list(reversed(self.encoder.stage_dims[:-1]))

    @classmethod
    def default(cls) -> "RunConfig":
        return cls()

    @classmethod
    def toy(cls) -> "RunConfig":
        return cls(
            encoder=EncoderConfig(
                image_size=64,
                patch_size=4,
                embed_dim=16,
                stage_depths=[2, 2],
                heads_per_stage=[2, 4],
                window_size=4,
                mlp_ratio=2.0,
            ),
        )

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)
