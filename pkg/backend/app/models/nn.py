# app/models/nn.py
import hashlib

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.exceptions import InvalidArchitectureError, ModelError


class Architecture(BaseModel):
    """
    Feed-forward layout: (input, hidden..., output).
    Hidden layers use ReLU, the output layer softmax.
    """
    model_config = ConfigDict(frozen=True)

    layer_sizes: tuple[int, ...]

    @field_validator("layer_sizes")
    @classmethod
    def _check_sizes(cls, sizes: tuple[int, ...]) -> tuple[int, ...]:
        if len(sizes) < 2:
            raise InvalidArchitectureError(f"need at least input and output sizes, got {list(sizes)}")
        if any(s <= 0 for s in sizes):
            raise InvalidArchitectureError(f"layer sizes must be positive, got {list(sizes)}")
        return sizes

    @classmethod
    def mlp(cls, n_inputs: int, hidden: tuple[int, ...] | list[int], n_classes: int = 10) -> "Architecture":
        return cls(layer_sizes=(n_inputs, *hidden, n_classes))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(n_in, n_out) per layer."""
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_shapes())

    def __str__(self) -> str:
        return "-".join(str(s) for s in self.layer_sizes)


class ModelParams(BaseModel):
    """
    Flat float64 parameter vector. Per layer: W as (n_out, n_in) row-major,
    then b. Immutable once built.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    arch: Architecture
    weights: np.ndarray

    @field_validator("weights", mode="before")
    @classmethod
    def _as_float64(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64, copy=True).reshape(-1)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_vector(self) -> "ModelParams":
        if self.weights.shape[0] != self.arch.n_params:
            raise ModelError(
                f"weight vector has {self.weights.shape[0]} values, architecture {self.arch} needs {self.arch.n_params}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ModelError("model parameters contain NaN or Inf")
        return self

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Read-only (W, b) views, W shaped (n_out, n_in)."""
        out = []
        offset = 0
        for n_in, n_out in self.arch.layer_shapes():
            w = self.weights[offset:offset + n_in * n_out].reshape(n_out, n_in)
            offset += n_in * n_out
            b = self.weights[offset:offset + n_out]
            offset += n_out
            out.append((w, b))
        return out

    def digest(self) -> str:
        """sha256 of the canonical bytes, i.e. the cid this model gets in the store."""
        from app.services.nnmodel import serialize
        return hashlib.sha256(serialize(self)).hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.arch == other.arch and self.weights.tobytes() == other.weights.tobytes()

    def __hash__(self) -> int:
        return hash((self.arch, self.weights.tobytes()))


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rounds: int = Field(default=5, gt=0)
    epochs_per_round: int = Field(default=1, gt=0)
    batch_size: int = Field(default=32, gt=0)
    learning_rate: float = Field(default=0.01, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)


class EvalResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    loss: float = Field(ge=0)
    accuracy: float = Field(ge=0, le=1)
