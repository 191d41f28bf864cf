"""Layer-graph representation and execution.

A ``ModelSpec`` is a DAG of ``LayerSpec`` nodes over named entry points
("image" and, for the brake/throttle network, "motor"). Shapes are inferred
before execution; a ``Model`` instantiates one layer object per node with
seeded parameters and runs topological-order forwards and reverse-order
backwards. Nodes feeding several consumers receive the sum of the incoming
gradients.

Specs serialize to a line-oriented text form used inside checkpoints::

    conedrive-model v1
    input image 3x64x64
    node conv1 conv in=image out_depth=8 kernel=5 stride=2
    ...
    output head
"""
from __future__ import annotations

from dataclasses import dataclass
from time import perf_counter_ns

import numpy as np

from . import layers as L
from .errors import GraphError, ShapeError
from .tensor import DEFAULT_DTYPE

TEXT_HEADER = "conedrive-model v1"

# Hyper-parameter names, in canonical serialization order, per layer kind.
KIND_HYPER: dict[str, tuple[tuple[str, type], ...]] = {
    "conv": (("out_depth", int), ("kernel", int), ("stride", int)),
    "batchnorm": (),
    "relu": (),
    "maxpool": (("window", int), ("stride", int)),
    "flatten": (),
    "linear": (("out_features", int),),
    "clamp_scale": (("lo", float), ("hi", float)),
    "scaled_sigmoid": (("scale", float),),
    "softmax_head": (("classes", int),),
    "concat": (),
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    hyper: tuple[tuple[str, int | float], ...] = ()

    def __post_init__(self):
        if self.kind not in KIND_HYPER:
            raise GraphError(
                f"unknown layer kind '{self.kind}'; valid kinds: "
                f"{sorted(KIND_HYPER)}"
            )
        want = KIND_HYPER[self.kind]
        got = dict(self.hyper)
        if set(got) != {name for name, _ in want}:
            raise GraphError(
                f"layer kind '{self.kind}' takes hyper-params "
                f"{[name for name, _ in want]}, got {sorted(got)}"
            )
        coerced = tuple((name, typ(got[name])) for name, typ in want)
        object.__setattr__(self, "hyper", coerced)

    def __getitem__(self, key: str):
        for name, value in self.hyper:
            if name == key:
                return value
        raise KeyError(key)


def spec(kind: str, **hyper) -> LayerSpec:
    return LayerSpec(kind, tuple(hyper.items()))


@dataclass(frozen=True)
class NodeSpec:
    name: str
    layer: LayerSpec
    inputs: tuple[str, ...]


@dataclass(frozen=True)
class ModelSpec:
    """Named entry points (batchless shapes), nodes, and the single exit node."""

    inputs: tuple[tuple[str, tuple[int, ...]], ...]
    nodes: tuple[NodeSpec, ...]
    output: str

    def __post_init__(self):
        input_names = [n for n, _ in self.inputs]
        node_names = [n.name for n in self.nodes]
        seen = set()
        for name in input_names + node_names:
            if name in seen:
                raise GraphError(f"duplicate graph name '{name}'")
            seen.add(name)
        if not self.nodes:
            raise GraphError("model has no nodes")
        if self.output not in set(node_names):
            raise GraphError(f"output node '{self.output}' is not defined")
        known = set(input_names)
        order = self.topo_order()
        for node in order:
            known.add(node.name)
        for node in self.nodes:
            if not node.inputs:
                raise GraphError(f"node '{node.name}' has no inputs")
            arity = len(node.inputs)
            if node.layer.kind == "concat":
                if arity < 2:
                    raise GraphError(f"concat node '{node.name}' needs >= 2 inputs")
            elif arity != 1:
                raise GraphError(
                    f"node '{node.name}' ({node.layer.kind}) takes exactly one input"
                )

    def input_shape(self, name: str) -> tuple[int, ...]:
        for n, shape in self.inputs:
            if n == name:
                return shape
        raise GraphError(f"unknown graph input '{name}'")

    def topo_order(self) -> tuple[NodeSpec, ...]:
        """Kahn topological order; rejects cycles and unreachable nodes."""
        ready = {name for name, _ in self.inputs}
        by_name = {n.name: n for n in self.nodes}
        for node in self.nodes:
            for src in node.inputs:
                if src not in by_name and src not in ready:
                    raise GraphError(
                        f"node '{node.name}' references unknown input '{src}'"
                    )
        pending = list(self.nodes)
        order: list[NodeSpec] = []
        while pending:
            progressed = False
            remaining = []
            for node in pending:
                if all(src in ready for src in node.inputs):
                    order.append(node)
                    ready.add(node.name)
                    progressed = True
                else:
                    remaining.append(node)
            pending = remaining
            if not progressed:
                names = sorted(n.name for n in pending)
                raise GraphError(f"graph has a cycle or unreachable nodes: {names}")
        return tuple(order)

    def infer_shapes(self) -> dict[str, tuple[int, ...]]:
        """Batchless output shape per node; raises on any inconsistency."""
        shapes: dict[str, tuple[int, ...]] = dict(self.inputs)
        for node in self.topo_order():
            ins = [shapes[src] for src in node.inputs]
            shapes[node.name] = _infer_node(node, ins)
        return shapes

    def parameter_count(self) -> int:
        """Closed-form trainable parameter count (running stats excluded)."""
        shapes = self.infer_shapes()
        total = 0
        for node in self.nodes:
            kind = node.layer.kind
            in_shape = shapes[node.inputs[0]]
            if kind == "conv":
                od, k = node.layer["out_depth"], node.layer["kernel"]
                total += od * in_shape[0] * k * k + od
            elif kind == "batchnorm":
                total += 2 * in_shape[0]
            elif kind == "linear":
                total += node.layer["out_features"] * (in_shape[0] + 1)
            elif kind == "softmax_head":
                total += node.layer["classes"] * (in_shape[0] + 1)
        return total

    def to_text(self) -> str:
        lines = [TEXT_HEADER]
        for name, shape in self.inputs:
            lines.append(f"input {name} {'x'.join(str(d) for d in shape)}")
        for node in self.nodes:
            parts = [f"node {node.name} {node.layer.kind}",
                     f"in={','.join(node.inputs)}"]
            for key, value in node.layer.hyper:
                parts.append(f"{key}={value!r}" if isinstance(value, float)
                             else f"{key}={value}")
            lines.append(" ".join(parts))
        lines.append(f"output {self.output}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "ModelSpec":
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("#")]
        if not lines or lines[0] != TEXT_HEADER:
            raise GraphError(
                f"model text must start with '{TEXT_HEADER}', got "
                f"{lines[0] if lines else '(empty)'!r}"
            )
        inputs: list[tuple[str, tuple[int, ...]]] = []
        nodes: list[NodeSpec] = []
        output = None
        for lineno, line in enumerate(lines[1:], start=2):
            tokens = line.split()
            tag = tokens[0]
            try:
                if tag == "input":
                    name, dims = tokens[1], tokens[2]
                    inputs.append((name, tuple(int(d) for d in dims.split("x"))))
                elif tag == "node":
                    name, kind = tokens[1], tokens[2]
                    kv = dict(tok.split("=", 1) for tok in tokens[3:])
                    srcs = tuple(kv.pop("in").split(","))
                    types = dict(KIND_HYPER.get(kind, ()))
                    hyper = tuple(
                        (key, types.get(key, float)(value)) for key, value in kv.items()
                    )
                    nodes.append(NodeSpec(name, LayerSpec(kind, hyper), srcs))
                elif tag == "output":
                    output = tokens[1]
                else:
                    raise GraphError(f"unknown directive '{tag}'")
            except (IndexError, KeyError, ValueError) as exc:
                raise GraphError(f"malformed model text at line {lineno}: {line!r}") from exc
        if output is None:
            raise GraphError("model text is missing an 'output' line")
        return ModelSpec(tuple(inputs), tuple(nodes), output)


def _infer_node(node: NodeSpec, ins: list[tuple[int, ...]]) -> tuple[int, ...]:
    kind = node.layer.kind
    first = ins[0]

    def need(ndim: int):
        if len(first) != ndim:
            raise GraphError(
                f"node '{node.name}' ({kind}) expects a rank-{ndim} input, "
                f"got shape {first}"
            )

    if kind == "conv":
        need(3)
        c, h, w = first
        k, s = node.layer["kernel"], node.layer["stride"]
        if k > h or k > w:
            raise GraphError(
                f"node '{node.name}': kernel {k}x{k} larger than input {h}x{w}"
            )
        return (node.layer["out_depth"], L.conv_out_extent(h, k, s),
                L.conv_out_extent(w, k, s))
    if kind == "batchnorm":
        need(3)
        return first
    if kind == "maxpool":
        need(3)
        c, h, w = first
        k, s = node.layer["window"], node.layer["stride"]
        if k > h or k > w:
            raise GraphError(
                f"node '{node.name}': pool window {k}x{k} larger than input {h}x{w}"
            )
        return (c, L.conv_out_extent(h, k, s), L.conv_out_extent(w, k, s))
    if kind in ("relu", "clamp_scale", "scaled_sigmoid"):
        return first
    if kind == "flatten":
        return (int(np.prod(first)),)
    if kind in ("linear", "softmax_head"):
        need(1)
        out = node.layer["out_features" if kind == "linear" else "classes"]
        return (out,)
    if kind == "concat":
        for shape in ins:
            if len(shape) != 1:
                raise GraphError(
                    f"node '{node.name}': concat expects flat inputs, got {shape}"
                )
        return (sum(shape[0] for shape in ins),)
    raise GraphError(f"unknown layer kind '{kind}'")


def _instantiate(node: NodeSpec, in_shapes: list[tuple[int, ...]],
                 rng: np.random.Generator, dtype) -> L.Layer:
    kind = node.layer.kind
    first = in_shapes[0]
    if kind == "conv":
        return L.Conv2d(first[0], node.layer["out_depth"], node.layer["kernel"],
                        node.layer["stride"], rng, dtype)
    if kind == "batchnorm":
        return L.BatchNorm2d(first[0], dtype=dtype)
    if kind == "relu":
        return L.ReLU()
    if kind == "maxpool":
        return L.MaxPool2d(node.layer["window"], node.layer["stride"])
    if kind == "flatten":
        return L.Flatten()
    if kind == "linear":
        return L.Linear(first[0], node.layer["out_features"], rng, dtype)
    if kind == "softmax_head":
        return L.SoftmaxHead(first[0], node.layer["classes"], rng, dtype)
    if kind == "clamp_scale":
        return L.ClampScale(node.layer["lo"], node.layer["hi"])
    if kind == "scaled_sigmoid":
        return L.ScaledSigmoid(node.layer["scale"])
    if kind == "concat":
        return L.Concat()
    raise GraphError(f"unknown layer kind '{kind}'")


class Model:
    """An instantiated ModelSpec: seeded parameters plus execution state.

    A single instance must not run concurrent training-mode forwards (the
    per-layer caches are mutable); clones may run eval forwards in parallel.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.spec = spec
        self.seed = int(seed)
        self.dtype = dtype
        self.epoch = 0
        self.shapes = spec.infer_shapes()
        self.order = spec.topo_order()
        rng = np.random.default_rng(seed)
        self.layers: dict[str, L.Layer] = {}
        for node in self.order:
            in_shapes = [self.shapes[src] for src in node.inputs]
            self.layers[node.name] = _instantiate(node, in_shapes, rng, dtype)
        self._trained_forward = False

    def parameters(self) -> list[tuple[str, "L.Param"]]:
        out = []
        for node in self.order:
            for p in self.layers[node.name].params():
                out.append((node.name, p))
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def output_kind(self) -> str:
        by_name = {n.name: n for n in self.spec.nodes}
        return by_name[self.output_node().name].layer.kind

    def output_node(self) -> NodeSpec:
        for node in self.spec.nodes:
            if node.name == self.spec.output:
                return node
        raise GraphError("output node vanished")  # unreachable

    def node_names(self) -> list[str]:
        return [n.name for n in self.order]

    def _check_inputs(self, inputs: dict[str, np.ndarray]) -> int:
        want = {name for name, _ in self.spec.inputs}
        got = set(inputs)
        if got != want:
            missing = sorted(want - got)
            extra = sorted(got - want)
            detail = []
            if missing:
                detail.append(f"missing named input(s) {missing}")
            if extra:
                detail.append(f"unexpected input(s) {extra}")
            raise GraphError("; ".join(detail))
        batch = None
        for name, shape in self.spec.inputs:
            arr = inputs[name]
            if arr.ndim != len(shape) + 1 or tuple(arr.shape[1:]) != shape:
                raise ShapeError(
                    f"input '{name}' has shape {arr.shape}, expected "
                    f"(batch, {', '.join(str(d) for d in shape)})"
                )
            if batch is None:
                batch = arr.shape[0]
            elif arr.shape[0] != batch:
                raise ShapeError(
                    f"input '{name}' batch {arr.shape[0]} differs from {batch}"
                )
        return batch

    def forward(self, inputs, mode: str, capture: dict | None = None,
                order: tuple[NodeSpec, ...] | None = None,
                timings: dict[str, int] | None = None) -> np.ndarray:
        """Evaluate the graph; ``mode`` is 'train' or 'eval'.

        ``capture`` (a dict) collects copies of named node outputs.
        ``order`` substitutes an alternative legal topological order.
        ``timings`` collects per-node wall-clock nanoseconds.
        """
        if mode not in ("train", "eval"):
            raise GraphError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        if not isinstance(inputs, dict):
            if len(self.spec.inputs) != 1:
                raise GraphError(
                    "this model has multiple named inputs; pass a dict"
                )
            inputs = {self.spec.inputs[0][0]: inputs}
        self._check_inputs(inputs)
        run_order = self.order if order is None else self._validate_order(order)
        values: dict[str, np.ndarray] = dict(inputs)
        for node in run_order:
            layer = self.layers[node.name]
            args = [values[src] for src in node.inputs]
            x = args if isinstance(layer, L.Concat) else args[0]
            try:
                if timings is not None:
                    t0 = perf_counter_ns()
                    out = layer.forward(x, train)
                    timings[node.name] = perf_counter_ns() - t0
                else:
                    out = layer.forward(x, train)
            except ShapeError as exc:
                raise ShapeError(f"node '{node.name}': {exc}") from exc
            expect = self.shapes[node.name]
            if tuple(out.shape[1:]) != expect:
                raise ShapeError(
                    f"node '{node.name}' produced shape {out.shape}, "
                    f"inference said (batch, {', '.join(str(d) for d in expect)})"
                )
            values[node.name] = out
            if capture is not None and node.name in capture:
                capture[node.name] = out.copy()
        self._trained_forward = train
        self._input_names = list(inputs)
        return values[self.spec.output]

    def _validate_order(self, order) -> tuple[NodeSpec, ...]:
        if sorted(n.name for n in order) != sorted(n.name for n in self.order):
            raise GraphError("alternative order must contain exactly the graph nodes")
        ready = {name for name, _ in self.spec.inputs}
        for node in order:
            if not all(src in ready for src in node.inputs):
                raise GraphError(f"order is not topological at node '{node.name}'")
            ready.add(node.name)
        return tuple(order)

    def backward(self, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        """Reverse-topological gradient pass; returns gradients w.r.t. inputs.

        Parameter gradients accumulate into each layer's ``Param.grad``.
        """
        if not self._trained_forward:
            raise GraphError("backward requires a preceding training-mode forward")
        grads: dict[str, np.ndarray] = {self.spec.output: grad_out}
        for node in reversed(self.order):
            g = grads.pop(node.name, None)
            if g is None:
                continue
            layer = self.layers[node.name]
            gi = layer.backward(g)
            parts = gi if isinstance(layer, L.Concat) else [gi]
            for src, part in zip(node.inputs, parts):
                if src in grads:
                    grads[src] = grads[src] + part
                else:
                    grads[src] = part
        return {name: grads.get(name) for name in self._input_names}

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        """(qualified name, tensor) pairs in topological order, for checkpoints."""
        out = []
        for node in self.order:
            for name, value in self.layers[node.name].state():
                out.append((f"{node.name}/{name}", value))
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for node in self.order:
            prefix = f"{node.name}/"
            local = {
                name[len(prefix):]: value
                for name, value in tensors.items()
                if name.startswith(prefix)
            }
            layer = self.layers[node.name]
            want = {name for name, _ in layer.state()}
            if want - set(local):
                raise ShapeError(
                    f"checkpoint missing tensors {sorted(want - set(local))} "
                    f"for node '{node.name}'"
                )
            if local:
                layer.load_state(local)
