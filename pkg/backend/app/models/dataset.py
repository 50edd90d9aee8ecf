# app/models/dataset.py
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.exceptions import DataError

NUM_CLASSES = 10


class Dataset(BaseModel):
    """
    Labeled images. `images` is (n, d) float64 in [0, 1]; `labels` is (n,) int64
    in 0..9; `index` holds each row's position in the set it was carved from.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    images: np.ndarray
    labels: np.ndarray
    index: np.ndarray | None = None
    provenance: str = ""

    @field_validator("images", mode="before")
    @classmethod
    def _images_2d(cls, value) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise DataError(f"images must be a 2-D array, got shape {arr.shape}")
        return arr

    @field_validator("labels", "index", mode="before")
    @classmethod
    def _as_int64(cls, value):
        if value is None:
            return None
        return np.asarray(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="before")
    @classmethod
    def _default_index(cls, data):
        if isinstance(data, dict) and data.get("index") is None and "images" in data:
            data = {**data, "index": np.arange(len(data["images"]), dtype=np.int64)}
        return data

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        n = self.images.shape[0]
        if self.labels.shape[0] != n:
            raise DataError(f"{n} images but {self.labels.shape[0]} labels")
        if n and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DataError(f"labels must lie in 0..{NUM_CLASSES - 1}")
        if self.index.shape[0] != n:
            raise DataError("index length differs from sample count")
        return self

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.images.shape[1])

    def take(self, rows: np.ndarray, provenance: str) -> "Dataset":
        """Rows selected by position; `index` keeps pointing at the original rows."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            images=self.images[rows],
            labels=self.labels[rows],
            index=self.index[rows],
            provenance=provenance,
        )

    def with_labels(self, labels: np.ndarray, provenance: str) -> "Dataset":
        return Dataset(images=self.images, labels=labels, index=self.index, provenance=provenance)


# ==========================================
# SPLIT SPECS
# ==========================================

class EqualRandom(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["equal"] = "equal"
    n_clients: int = Field(ge=2)

    @property
    def client_count(self) -> int:
        return self.n_clients

    def __str__(self) -> str:
        return f"equal({self.n_clients})"


class RatioRandom(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["ratio"] = "ratio"
    ratios: tuple[int, ...]

    @field_validator("ratios")
    @classmethod
    def _positive(cls, ratios: tuple[int, ...]) -> tuple[int, ...]:
        if not ratios:
            raise ValueError("ratios must not be empty")
        if any(r <= 0 for r in ratios):
            raise ValueError(f"ratios must be positive integers, got {list(ratios)}")
        return ratios

    @property
    def client_count(self) -> int:
        return len(self.ratios)

    def __str__(self) -> str:
        return "ratio(" + ":".join(str(r) for r in self.ratios) + ")"


class WithFlip(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["flip"] = "flip"
    base: "SplitSpec"
    flip_probs: tuple[float, ...]

    @model_validator(mode="after")
    def _check(self) -> "WithFlip":
        if len(self.flip_probs) != self.base.client_count:
            raise ValueError(
                f"{len(self.flip_probs)} flip probabilities for {self.base.client_count} clients"
            )
        if any(not 0.0 <= p <= 1.0 for p in self.flip_probs):
            raise ValueError("flip probabilities must lie in [0, 1]")
        return self

    @property
    def client_count(self) -> int:
        return self.base.client_count

    def __str__(self) -> str:
        return f"{self.base}+flip(" + ",".join(f"{p:g}" for p in self.flip_probs) + ")"


SplitSpec = Annotated[Union[EqualRandom, RatioRandom, WithFlip], Field(discriminator="kind")]
WithFlip.model_rebuild()
