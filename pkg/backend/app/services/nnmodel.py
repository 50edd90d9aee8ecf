# app/services/nnmodel.py
"""
Feed-forward classifier: seeded init, mini-batch SGD, evaluation and the
canonical byte format that defines model CIDs.

Byte format (little-endian):
  [version: u8 = 1]
  [layer_count: u32]                 number of layer sizes, >= 2
  [layer_size: u32] x layer_count
  [weights: f64] x n_params          layout of ModelParams.weights
"""
import logging
import math
import struct

import numpy as np
import torch
import torch.nn.functional as F

from app.exceptions import (
    DimensionMismatchError,
    InvalidArchitectureError,
    MalformedModelBytesError,
    TrainingDivergedError,
)
from app.models.dataset import Dataset
from app.models.nn import Architecture, EvalResult, ModelParams, TrainingConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
EVAL_CHUNK = 8192


# ==========================================
# 1. INIT
# ==========================================

def init_model(arch: Architecture, seed: int) -> ModelParams:
    """Glorot-uniform weights (bound sqrt(6/(n_in+n_out))), zero biases."""
    if not isinstance(arch, Architecture):
        raise InvalidArchitectureError(f"expected an Architecture, got {type(arch).__name__}")
    rng = np.random.default_rng(seed)
    parts = []
    for n_in, n_out in arch.layer_shapes():
        bound = math.sqrt(6.0 / (n_in + n_out))
        parts.append(rng.uniform(-bound, bound, size=(n_out, n_in)).reshape(-1))
        parts.append(np.zeros(n_out, dtype=np.float64))
    return ModelParams(arch=arch, weights=np.concatenate(parts))


# ==========================================
# 2. FORWARD / LOSS
# ==========================================

def _forward(flat: torch.Tensor, arch: Architecture, x: torch.Tensor) -> torch.Tensor:
    """Logits for a batch; `flat` is the parameter vector as a float64 tensor."""
    h = x
    offset = 0
    shapes = arch.layer_shapes()
    for i, (n_in, n_out) in enumerate(shapes):
        w = flat[offset:offset + n_in * n_out].view(n_out, n_in)
        offset += n_in * n_out
        b = flat[offset:offset + n_out]
        offset += n_out
        h = F.linear(h, w, b)
        if i < len(shapes) - 1:
            h = torch.relu(h)
    return h


def _check_dims(params: ModelParams, data: Dataset) -> None:
    if len(data) and data.n_features != params.arch.n_inputs:
        raise DimensionMismatchError(
            f"data has {data.n_features} features, model {params.arch} expects {params.arch.n_inputs}"
        )
    if len(data) and int(data.labels.max()) >= params.arch.n_classes:
        raise DimensionMismatchError(
            f"label {int(data.labels.max())} out of range for {params.arch.n_classes} output classes"
        )


def loss_and_gradient(params: ModelParams, images: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its analytic gradient w.r.t. the flat vector."""
    flat = torch.tensor(params.weights, dtype=torch.float64, requires_grad=True)
    x = torch.as_tensor(np.asarray(images, dtype=np.float64))
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    loss = F.cross_entropy(_forward(flat, params.arch, x), y)
    loss.backward()
    return float(loss.item()), flat.grad.numpy().copy()


# ==========================================
# 3. TRAIN
# ==========================================

def train_local(params: ModelParams, data: Dataset, cfg: TrainingConfig, round_seed: int) -> ModelParams:
    """
    Runs cfg.epochs_per_round epochs of mini-batch SGD on mean cross-entropy.
    Batch order is a permutation drawn from `round_seed`. `params` is untouched.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    _check_dims(params, data)

    rng = np.random.default_rng(round_seed)
    flat = torch.tensor(params.weights, dtype=torch.float64, requires_grad=True)
    x_all = torch.as_tensor(data.images)
    y_all = torch.as_tensor(data.labels)
    lr = cfg.learning_rate
    n = len(data)

    for epoch in range(cfg.epochs_per_round):
        order = torch.as_tensor(rng.permutation(n))
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss = F.cross_entropy(_forward(flat, params.arch, x_all[batch]), y_all[batch])
            loss.backward()
            with torch.no_grad():
                flat.sub_(lr * flat.grad)
                flat.grad.zero_()
            if not torch.isfinite(loss) or not bool(torch.isfinite(flat).all()):
                raise TrainingDivergedError(
                    f"non-finite value during SGD (epoch {epoch + 1}, batch starting at {start})"
                )
        logger.debug("epoch %d done on %s: last batch loss %.6f", epoch + 1, data.provenance or "dataset", loss.item())

    return ModelParams(arch=params.arch, weights=flat.detach().numpy().copy())


# ==========================================
# 4. EVALUATE
# ==========================================

def evaluate(params: ModelParams, data: Dataset) -> EvalResult:
    """Mean cross-entropy (nats) and argmax accuracy; ties go to the lowest class index."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    _check_dims(params, data)

    flat = torch.tensor(params.weights, dtype=torch.float64)
    losses = []
    correct = 0
    with torch.no_grad():
        for start in range(0, len(data), EVAL_CHUNK):
            x = torch.as_tensor(data.images[start:start + EVAL_CHUNK])
            y = torch.as_tensor(data.labels[start:start + EVAL_CHUNK])
            logits = _forward(flat, params.arch, x)
            losses.append(F.cross_entropy(logits, y, reduction="none").numpy())
            # np.argmax returns the first maximal index
            predicted = np.argmax(logits.numpy(), axis=1)
            correct += int(np.sum(predicted == data.labels[start:start + EVAL_CHUNK]))

    loss = float(np.sum(np.concatenate(losses)) / len(data))
    return EvalResult(loss=max(loss, 0.0), accuracy=correct / len(data))


# ==========================================
# 5. CANONICAL BYTES
# ==========================================

def serialize(params: ModelParams) -> bytes:
    sizes = params.arch.layer_sizes
    header = struct.pack(f"<BI{len(sizes)}I", FORMAT_VERSION, len(sizes), *sizes)
    return header + params.weights.astype("<f8", copy=False).tobytes()


def deserialize(data: bytes) -> ModelParams:
    if len(data) < 5:
        raise MalformedModelBytesError(f"header needs at least 5 bytes, got {len(data)}")
    version, count = struct.unpack_from("<BI", data, 0)
    if version != FORMAT_VERSION:
        raise MalformedModelBytesError(f"unsupported format version {version}")
    if count < 2:
        raise MalformedModelBytesError(f"layer count {count} is below 2")
    offset = 5
    if len(data) < offset + 4 * count:
        raise MalformedModelBytesError("truncated header: layer sizes missing")
    sizes = struct.unpack_from(f"<{count}I", data, offset)
    offset += 4 * count
    if any(s == 0 for s in sizes):
        raise MalformedModelBytesError(f"zero layer size in header {list(sizes)}")
    arch = Architecture(layer_sizes=sizes)

    expected = arch.n_params * 8
    payload = len(data) - offset
    if payload < expected:
        raise MalformedModelBytesError(f"truncated payload: {payload} of {expected} bytes")
    if payload > expected:
        raise MalformedModelBytesError(f"{payload - expected} trailing bytes after the weights")
    weights = np.frombuffer(data, dtype="<f8", count=arch.n_params, offset=offset).astype(np.float64)
    if not np.all(np.isfinite(weights)):
        raise MalformedModelBytesError("non-finite value in serialized weights")
    return ModelParams(arch=arch, weights=weights)
