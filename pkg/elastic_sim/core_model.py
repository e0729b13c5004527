from enum import Enum
from pydantic import BaseModel, Field, computed_field
from typing import List

from .errors import DomainError
from .schemas import ModelSpec


class SublayerKind(str, Enum):
    ATT = "ATT"
    MLP = "MLP"


class Sublayer(BaseModel):
    """One pipeline-partitionable unit: the attention or the MLP half of a layer."""

    kind: SublayerKind
    layer_index: int
    param_count: int
    activation_bytes: int = Field(description="Bytes per sample of the tensor leaving this sublayer.")

    model_config = {"frozen": True}

    @property
    def name(self) -> str:
        return f"{self.kind.value}{self.layer_index}"


class SublayerSeq(BaseModel):
    """Active sublayers in original order plus the size of the frozen prefix."""

    model: ModelSpec
    frozen_layers: int
    sublayers: List[Sublayer]
    frozen_block_size: int = Field(description="S_frozen, parameters of layers [0, frozen_layers).")

    model_config = {"frozen": True}

    def __len__(self) -> int:
        return len(self.sublayers)

    @computed_field
    @property
    def active_params(self) -> int:
        return sum(s.param_count for s in self.sublayers)

    @property
    def input_activation_bytes(self) -> int:
        """Bytes per sample entering the first active sublayer."""
        return self.model.activation_bytes_per_sample[self.frozen_layers]


def m_partition(model: ModelSpec, L_frozen: int) -> SublayerSeq:
    """
    Splits layers [L_frozen, L) into one ATT and one MLP sublayer each.

    Partition cuts are only ever placed between whole blocks, so a residual tensor
    never crosses more device hops than the block boundary it already crosses.
    """
    if L_frozen < 0 or L_frozen > model.layer_count:
        raise DomainError(f"L_frozen={L_frozen} outside [0, {model.layer_count}]")

    sublayers: List[Sublayer] = []
    for i in range(L_frozen, model.layer_count):
        out_bytes = model.activation_bytes_per_sample[i + 1]
        sublayers.append(Sublayer(kind=SublayerKind.ATT, layer_index=i,
                                  param_count=model.attention_params[i], activation_bytes=out_bytes))
        sublayers.append(Sublayer(kind=SublayerKind.MLP, layer_index=i,
                                  param_count=model.mlp_params[i], activation_bytes=out_bytes))

    return SublayerSeq(
        model=model,
        frozen_layers=L_frozen,
        sublayers=sublayers,
        frozen_block_size=model.prefix_params(L_frozen),
    )
