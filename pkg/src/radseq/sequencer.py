"""Two-column radiomic sequencer: architecture specs, model, forward/backward.

A column is a stack of conv / relu / max-pool layers ending in a flatten and a
fully-connected layer. Every column sees the same input image; the column
outputs are concatenated (in column order) into the radiomic sequence, which
the classifier head maps to class probabilities::

    image --> column 0 --+
                         +--> concat = radiomic sequence --> fc, relu, fc, softmax
    image --> column 1 --+
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Union

import numpy as np

from . import kernels as K
from .errors import DimensionError, ValidationError

# -- layer descriptors ---------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    kind: str = field(default="conv", init=False)


@dataclass(frozen=True)
class ReLU:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class MaxPool:
    window: int = 3
    stride: int = 2
    kind: str = field(default="pool", init=False)


@dataclass(frozen=True)
class Flatten:
    # expected flattened width; None means "whatever the shapes give"
    width: int | None = None
    kind: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class Dense:
    width: int
    kind: str = field(default="fc", init=False)


Layer = Union[Conv, ReLU, MaxPool, Flatten, Dense]
_LAYER_TYPES = {"conv": Conv, "relu": ReLU, "pool": MaxPool, "flatten": Flatten, "fc": Dense}

CONVS_PER_COLUMN = 5


@dataclass(frozen=True)
class ColumnSpec:
    layers: tuple[Layer, ...]

    @property
    def terminal_width(self) -> int:
        return [l for l in self.layers if isinstance(l, Dense)][-1].width

    @property
    def conv_layers(self) -> list[Conv]:
        return [l for l in self.layers if isinstance(l, Conv)]


@dataclass(frozen=True)
class SequencerSpec:
    columns: tuple[ColumnSpec, ...]
    input_channels: int = 3
    input_h: int = 128
    input_w: int = 128
    merge: str = "concat"

    @property
    def column_count(self) -> int:
        return len(self.columns)

    @property
    def sequence_length(self) -> int:
        return sum(c.terminal_width for c in self.columns)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.input_channels, self.input_h, self.input_w)


@dataclass(frozen=True)
class HeadSpec:
    hidden_width: int = 1024
    class_count: int = 2


def spec_to_dict(spec: SequencerSpec, head: HeadSpec) -> dict:
    def layer(l):
        d = {"kind": l.kind}
        d.update({k: v for k, v in l.__dict__.items() if k != "kind"})
        return d

    return {
        "sequencer": {
            "column_count": spec.column_count,
            "input_channels": spec.input_channels,
            "input_h": spec.input_h,
            "input_w": spec.input_w,
            "merge": spec.merge,
            "columns": [[layer(l) for l in c.layers] for c in spec.columns],
        },
        "head": {"hidden_width": head.hidden_width, "class_count": head.class_count},
    }


def spec_from_dict(d: dict) -> tuple[SequencerSpec, HeadSpec]:
    try:
        s = d["sequencer"]
        columns = []
        for col in s["columns"]:
            layers = []
            for ld in col:
                ld = dict(ld)
                cls = _LAYER_TYPES[ld.pop("kind")]
                layers.append(cls(**ld))
            columns.append(ColumnSpec(tuple(layers)))
        spec = SequencerSpec(
            columns=tuple(columns),
            input_channels=s["input_channels"],
            input_h=s["input_h"],
            input_w=s["input_w"],
            merge=s["merge"],
        )
        if s.get("column_count", spec.column_count) != spec.column_count:
            raise ValidationError("column_count disagrees with the number of columns")
        head = HeadSpec(**d["head"])
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed spec block: {e!r}") from e
    return spec, head


def _column(c1: int, c2: int, c3: int, c4: int, c5: int, flat: int | None, width: int) -> ColumnSpec:
    return ColumnSpec(
        (
            Conv(c1, 7, stride=2, pad=0), ReLU(), MaxPool(3, 2),
            Conv(c2, 5, stride=1, pad=2), ReLU(), MaxPool(3, 2),
            Conv(c3, 3, stride=1, pad=1), ReLU(),
            Conv(c4, 3, stride=1, pad=1), ReLU(),
            Conv(c5, 5, stride=1, pad=2), ReLU(), MaxPool(3, 2),
            Flatten(flat),
            Dense(width), ReLU(),
        )
    )


def paper_default_spec() -> tuple[SequencerSpec, HeadSpec]:
    """Full-size architecture: two columns of 96@7x7, 256@5x5, 384@3x3,
    384@3x3, 256@5x5 convolutions and an 8192-wide fully-connected layer,
    on 3 x 128 x 128 input. Sequence length 16384."""
    col = _column(96, 256, 384, 384, 256, 256 * 6 * 6, 8192)
    return SequencerSpec((col, col), 3, 128, 128), HeadSpec(1024, 2)


def reduced_spec() -> tuple[SequencerSpec, HeadSpec]:
    """Same topology at desk scale (36 x 36 input, 64-wide columns)."""
    col = _column(8, 16, 24, 24, 16, 16, 64)
    return SequencerSpec((col, col), 3, 36, 36), HeadSpec(16, 2)


# -- validation ------------------------------------------------------------------


def _trace_column(spec: SequencerSpec, ci: int, col: ColumnSpec) -> list[tuple[int, ...]]:
    """Shape entering each layer, plus the final output shape. Raises on the first bad layer."""
    shape: tuple[int, ...] = spec.input_shape
    shapes = [shape]
    seen_dense = False
    convs = 0
    for li, layer in enumerate(col.layers):
        where = f"column {ci} layer {li} ({layer.kind})"
        if isinstance(layer, Conv):
            if len(shape) != 3:
                raise ValidationError(f"{where}: convolution after flatten")
            try:
                p = K.ConvParams(shape[0], layer.out_channels, layer.kernel, layer.kernel, layer.stride, layer.pad)
                shape = (layer.out_channels, *p.output_hw(shape[1], shape[2]))
            except ValidationError as e:
                raise ValidationError(f"{where}: {e}") from None
            convs += 1
        elif isinstance(layer, MaxPool):
            if len(shape) != 3:
                raise ValidationError(f"{where}: pooling after flatten")
            if layer.window > shape[1] or layer.window > shape[2]:
                raise ValidationError(f"{where}: window {layer.window} exceeds map {shape[1]}x{shape[2]}")
            shape = (shape[0], K.output_extent(shape[1], layer.window, layer.stride),
                     K.output_extent(shape[2], layer.window, layer.stride))
        elif isinstance(layer, Flatten):
            if len(shape) != 3:
                raise ValidationError(f"{where}: input is already flat")
            width = shape[0] * shape[1] * shape[2]
            if layer.width is not None and layer.width != width:
                raise ValidationError(
                    f"{where}: declared width {layer.width} but incoming {shape} flattens to {width}"
                )
            shape = (width,)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise ValidationError(f"{where}: fully-connected layer needs flattened input")
            if layer.width < 1:
                raise ValidationError(f"{where}: width must be positive")
            shape = (layer.width,)
            seen_dense = True
        elif isinstance(layer, ReLU):
            pass
        else:
            raise ValidationError(f"{where}: unknown layer")
        shapes.append(shape)
    if convs != CONVS_PER_COLUMN:
        raise ValidationError(f"column {ci}: expected {CONVS_PER_COLUMN} conv layers, found {convs}")
    if not seen_dense or not isinstance(
        [l for l in col.layers if not isinstance(l, ReLU)][-1], Dense
    ):
        raise ValidationError(f"column {ci}: must end in a fully-connected layer")
    return shapes


def _column_shapes(spec: SequencerSpec) -> list[list[tuple[int, ...]]]:
    if spec.column_count < 1:
        raise ValidationError("a sequencer needs at least one column")
    if spec.merge != "concat":
        raise ValidationError(f"unsupported merge rule {spec.merge!r}")
    if min(spec.input_shape) < 1:
        raise ValidationError(f"input shape {spec.input_shape} must be positive")
    return [_trace_column(spec, ci, col) for ci, col in enumerate(spec.columns)]


def validate(spec: SequencerSpec, head: HeadSpec) -> list[list[tuple[int, ...]]]:
    """Check the whole architecture; returns the shape entering each column layer."""
    if head.hidden_width < 1 or head.class_count < 2:
        raise ValidationError("head needs hidden_width >= 1 and class_count >= 2")
    return _column_shapes(spec)


# -- model -----------------------------------------------------------------------


@dataclass
class _Step:
    layer: Layer
    name: str | None  # parameter prefix for conv / fc
    conv: K.ConvParams | None = None


@dataclass
class SequencerModel:
    spec: SequencerSpec
    head: HeadSpec
    seed: int
    params: dict[str, np.ndarray]
    dtype: np.dtype = np.dtype(np.float32)
    # per-column input hook (None = identity); not serialized
    preprocess: list[Callable[[np.ndarray], np.ndarray] | None] = field(default_factory=list)
    # bumped on every parameter update; forward caches remember it
    version: int = 0

    def __post_init__(self):
        self.plans = _plans(self.spec)
        if not self.preprocess:
            self.preprocess = [None] * self.spec.column_count

    @property
    def sequence_length(self) -> int:
        return self.spec.sequence_length

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "SequencerModel":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return SequencerModel(self.spec, self.head, self.seed, params, np.dtype(dtype), list(self.preprocess))


def _plans(spec: SequencerSpec) -> list[list[_Step]]:
    shapes = _column_shapes(spec)
    plans = []
    for ci, col in enumerate(spec.columns):
        plan, nconv, nfc = [], 0, 0
        for li, layer in enumerate(col.layers):
            if isinstance(layer, Conv):
                nconv += 1
                cin = shapes[ci][li][0]
                p = K.ConvParams(cin, layer.out_channels, layer.kernel, layer.kernel, layer.stride, layer.pad)
                plan.append(_Step(layer, f"col{ci}.conv{nconv}", p))
            elif isinstance(layer, Dense):
                nfc += 1
                plan.append(_Step(layer, f"col{ci}.fc{nfc}"))
            else:
                plan.append(_Step(layer, None))
        plans.append(plan)
    return plans


def parameter_shapes(spec: SequencerSpec, head: HeadSpec) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; the order is also the initialization order."""
    shapes = validate(spec, head)
    out: dict[str, tuple[int, ...]] = {}
    for ci, plan in enumerate(_plans(spec)):
        for li, step in enumerate(plan):
            if step.conv is not None:
                out[f"{step.name}.weight"] = step.conv.weight_shape
                out[f"{step.name}.bias"] = (step.conv.out_channels,)
            elif isinstance(step.layer, Dense):
                out[f"{step.name}.weight"] = (step.layer.width, shapes[ci][li][0])
                out[f"{step.name}.bias"] = (step.layer.width,)
    out["head.fc1.weight"] = (head.hidden_width, spec.sequence_length)
    out["head.fc1.bias"] = (head.hidden_width,)
    out["head.fc2.weight"] = (head.class_count, head.hidden_width)
    out["head.fc2.bias"] = (head.class_count,)
    return out


def build(spec: SequencerSpec, head: HeadSpec, seed: int = 0, dtype=np.float32) -> SequencerModel:
    """Allocate and initialize all parameters.

    Biases start at zero; weights are drawn from N(0, 2 / fan_in). Values are
    always drawn in float32 and then cast, so a float64 build holds exactly
    the same numbers as the float32 build with the same seed.
    """
    shapes = parameter_shapes(spec, head)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:]))
        w = rng.standard_normal(shape, dtype=np.float32)
        w *= np.float32(np.sqrt(2.0 / fan_in))
        params[name] = w if np.dtype(dtype) == np.float32 else w.astype(dtype)
    return SequencerModel(spec, head, seed, params, np.dtype(dtype))


# -- forward / backward --------------------------------------------------------------


class ForwardCache(NamedTuple):
    model_id: int
    version: int
    batch_shape: tuple[int, ...]
    # per column, per layer: (batched layer input, pool argmax or None)
    columns: list[list[tuple[np.ndarray, np.ndarray | None]]]
    sequences: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray


class ForwardResult(NamedTuple):
    sequences: np.ndarray
    probabilities: np.ndarray
    cache: ForwardCache


def _check_batch(model: SequencerModel, batch: np.ndarray):
    if batch.ndim != 4 or batch.shape[1:] != model.spec.input_shape:
        raise DimensionError(
            f"expected batch N x {' x '.join(map(str, model.spec.input_shape))}, got {batch.shape}"
        )


def _run_column(model: SequencerModel, ci: int, x: np.ndarray, record: list | None) -> np.ndarray:
    """One column on one image (C x H x W)."""
    hook = model.preprocess[ci]
    if hook is not None:
        x = hook(x)
    P = model.params
    for step in model.plans[ci]:
        aux = None
        inp = x
        layer = step.layer
        if step.conv is not None:
            x = K.conv2d_forward(x, P[f"{step.name}.weight"], P[f"{step.name}.bias"], step.conv)
        elif isinstance(layer, ReLU):
            x = K.relu(x)
        elif isinstance(layer, MaxPool):
            x, aux = K.maxpool2d(x, layer.window, layer.stride)
        elif isinstance(layer, Flatten):
            x = x.reshape(-1)
        else:
            x = K.linear(x[None], P[f"{step.name}.weight"], P[f"{step.name}.bias"])[0]
        if record is not None:
            record.append((inp, aux))
    return x


def _sequences(model: SequencerModel, batch: np.ndarray, records=None) -> np.ndarray:
    batch = np.asarray(batch, dtype=model.dtype)
    n = batch.shape[0]
    seq = np.empty((n, model.sequence_length), dtype=model.dtype)
    # samples go through the columns one at a time so every row is independent
    # of batch composition (BLAS picks different paths for 1-row products)
    for i in range(n):
        parts = []
        for ci in range(model.spec.column_count):
            rec = records[ci][i] if records is not None else None
            parts.append(_run_column(model, ci, batch[i], rec))
        seq[i] = np.concatenate(parts)
    return seq


def _head(model: SequencerModel, seq: np.ndarray):
    P = model.params
    pre = np.empty((seq.shape[0], model.head.hidden_width), dtype=model.dtype)
    logits = np.empty((seq.shape[0], model.head.class_count), dtype=model.dtype)
    for i in range(seq.shape[0]):
        pre[i] = K.linear(seq[i : i + 1], P["head.fc1.weight"], P["head.fc1.bias"])[0]
        logits[i] = K.linear(K.relu(pre[i : i + 1]), P["head.fc2.weight"], P["head.fc2.bias"])[0]
    return pre, K.relu(pre), logits


def forward(model: SequencerModel, batch: np.ndarray) -> ForwardResult:
    """Run both columns and the head on an ``N x C x H x W`` batch."""
    batch = np.asarray(batch)
    _check_batch(model, batch)
    n = batch.shape[0]
    records = [[[] for _ in range(n)] for _ in range(model.spec.column_count)]
    seq = _sequences(model, batch, records)
    pre, hidden, logits = _head(model, seq)
    columns = []
    for ci in range(model.spec.column_count):
        layers = []
        for li in range(len(model.plans[ci])):
            inp = np.stack([records[ci][i][li][0] for i in range(n)])
            aux = records[ci][0][li][1]
            if aux is not None:
                aux = np.stack([records[ci][i][li][1] for i in range(n)])
            layers.append((inp, aux))
        columns.append(layers)
    cache = ForwardCache(id(model), model.version, batch.shape, columns, seq, pre, hidden, logits)
    return ForwardResult(seq, K.softmax(logits), cache)


def backward(model: SequencerModel, cache: ForwardCache, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every parameter given d(loss)/d(logits) from a matching forward."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise ValidationError("forward cache is stale or belongs to a different model")
    n = cache.batch_shape[0]
    if grad_logits.shape != (n, model.head.class_count):
        raise DimensionError(f"grad_logits shape {grad_logits.shape} != {(n, model.head.class_count)}")
    grad_logits = np.asarray(grad_logits, dtype=model.dtype)
    P = model.params
    grads: dict[str, np.ndarray] = {}

    dh, grads["head.fc2.weight"], grads["head.fc2.bias"] = K.linear_backward(
        grad_logits, cache.hidden, P["head.fc2.weight"]
    )
    dh = K.relu_backward(dh, cache.hidden_pre)
    dseq, grads["head.fc1.weight"], grads["head.fc1.bias"] = K.linear_backward(
        dh, cache.sequences, P["head.fc1.weight"]
    )

    offset = 0
    for ci, plan in enumerate(model.plans):
        width = model.spec.columns[ci].terminal_width
        g = dseq[:, offset : offset + width]
        offset += width
        for li in range(len(plan) - 1, -1, -1):
            step = plan[li]
            inp, aux = cache.columns[ci][li]
            layer = step.layer
            if step.conv is not None:
                g, grads[f"{step.name}.weight"], grads[f"{step.name}.bias"] = K.conv2d_backward(
                    g, inp, P[f"{step.name}.weight"], step.conv, input_grad=li > 0
                )
            elif isinstance(layer, ReLU):
                g = K.relu_backward(g, inp)
            elif isinstance(layer, MaxPool):
                g = K.maxpool2d_backward(g, aux, inp.shape)
            elif isinstance(layer, Flatten):
                g = g.reshape(inp.shape)
            else:
                g, grads[f"{step.name}.weight"], grads[f"{step.name}.bias"] = K.linear_backward(
                    g, inp, P[f"{step.name}.weight"]
                )
    return {name: grads[name] for name in P}


def extract_sequence(model: SequencerModel, image: np.ndarray) -> np.ndarray:
    """Radiomic sequence of one ``C x H x W`` image (the head is not applied)."""
    image = np.asarray(image)
    if image.shape != model.spec.input_shape:
        raise DimensionError(f"expected image {model.spec.input_shape}, got {image.shape}")
    return _sequences(model, image[None])[0]


def predict_proba(model: SequencerModel, batch: np.ndarray) -> np.ndarray:
    """Class probabilities without keeping a backward cache."""
    batch = np.asarray(batch)
    _check_batch(model, batch)
    return K.softmax(_head(model, _sequences(model, batch))[2])
