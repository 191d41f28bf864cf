"""The named model zoo: discrete steering, real-value steering, brake/throttle.

Every conv block is conv -> batchnorm -> relu -> maxpool(2x2, stride 2);
block kernels clamp to the available spatial extent and a block's pool is
emitted only when the 2x2 window still fits, so each architecture also
instantiates cleanly on miniature inputs (64x64 training runs, 16x16
gradient-check clones) and on aggressive stride configurations from the
grid search.
"""
from __future__ import annotations

from .errors import GraphError
from .graph import ModelSpec, NodeSpec, spec

POOL = 2

DISCRETE_NAMES = ("1CL-1FC", "2CL-1FC", "1CL-2FC", "2CL-2FC", "3CL-2FC")
REALVALUE_NAMES = ("3CL-2FC", "3CL-3FC", "4CL-3FC")

_CONV_STACKS = {
    1: ((5, 2, 8),),
    2: ((5, 2, 8), (5, 2, 16)),
    3: ((5, 2, 8), (5, 2, 16), (3, 1, 32)),
    4: ((5, 2, 8), (5, 2, 16), (3, 1, 32), (3, 1, 48)),
}

_DISCRETE_SHAPE = {
    "1CL-1FC": (1, ()),
    "2CL-1FC": (2, ()),
    "1CL-2FC": (1, (100,)),
    "2CL-2FC": (2, (100,)),
    "3CL-2FC": (3, (100,)),
}

_REALVALUE_HIDDEN = {
    "3CL-2FC": (100,),
    "3CL-3FC": (1024, 100),
    "4CL-3FC": (1024, 100),
}

STEERING_BOUNDS = (-90.0, 90.0)
BRAKE_THROTTLE_SCALE = 256.0


def _conv_stack(nodes: list[NodeSpec], src: str, hw: int,
                filters, strides, depths) -> tuple[str, int, int]:
    """Emit conv blocks; returns (last node, spatial extent, channels)."""
    channels = None
    for i, (k, s, d) in enumerate(zip(filters, strides, depths), start=1):
        k = min(k, hw)
        nodes.append(NodeSpec(f"conv{i}", spec("conv", out_depth=d, kernel=k, stride=s),
                              (src,)))
        hw = (hw - k) // s + 1
        nodes.append(NodeSpec(f"bn{i}", spec("batchnorm"), (f"conv{i}",)))
        nodes.append(NodeSpec(f"relu{i}", spec("relu"), (f"bn{i}",)))
        src = f"relu{i}"
        if hw >= POOL:
            nodes.append(NodeSpec(f"pool{i}", spec("maxpool", window=POOL, stride=POOL),
                                  (src,)))
            hw = (hw - POOL) // POOL + 1
            src = f"pool{i}"
        channels = d
    return src, hw, channels


def _fc_stack(nodes: list[NodeSpec], src: str, hidden) -> str:
    for i, width in enumerate(hidden, start=1):
        nodes.append(NodeSpec(f"fc{i}", spec("linear", out_features=width), (src,)))
        nodes.append(NodeSpec(f"fc{i}_relu", spec("relu"), (f"fc{i}",)))
        src = f"fc{i}_relu"
    return src


def make_discrete_model(name: str, input_hw: int = 256,
                        in_channels: int = 3) -> ModelSpec:
    """Three-way steering classifier; output node emits class logits."""
    if name not in _DISCRETE_SHAPE:
        raise GraphError(
            f"unknown discrete architecture '{name}'; valid names: "
            f"{list(DISCRETE_NAMES)}"
        )
    n_conv, hidden = _DISCRETE_SHAPE[name]
    stack = _CONV_STACKS[n_conv]
    nodes: list[NodeSpec] = []
    src, _, _ = _conv_stack(nodes, "image",  input_hw,
                            [k for k, _, _ in stack],
                            [s for _, s, _ in stack],
                            [d for _, _, d in stack])
    nodes.append(NodeSpec("flat", spec("flatten"), (src,)))
    src = _fc_stack(nodes, "flat", hidden)
    nodes.append(NodeSpec("head", spec("softmax_head", classes=3), (src,)))
    return ModelSpec(
        inputs=(("image", (in_channels, input_hw, input_hw)),),
        nodes=tuple(nodes),
        output="head",
    )


def make_realvalue_model(name: str, filters=None, strides=None,
                         input_hw: int = 256, in_channels: int = 3) -> ModelSpec:
    """Real-value steering regressor: single output clamped to +/-90 degrees."""
    if name not in _REALVALUE_HIDDEN:
        raise GraphError(
            f"unknown real-value architecture '{name}'; valid names: "
            f"{list(REALVALUE_NAMES)}"
        )
    n_conv = 4 if name.startswith("4CL") else 3
    stack = _CONV_STACKS[n_conv]
    default_filters = [k for k, _, _ in stack]
    default_strides = [s for _, s, _ in stack]
    depths = [d for _, _, d in stack]
    filters = default_filters if filters is None else list(filters)
    strides = default_strides if strides is None else list(strides)
    if len(filters) != n_conv or len(strides) != n_conv:
        raise GraphError(
            f"'{name}' has {n_conv} conv layers; got {len(filters)} filters "
            f"and {len(strides)} strides"
        )
    nodes: list[NodeSpec] = []
    src, _, _ = _conv_stack(nodes, "image", input_hw, filters, strides, depths)
    nodes.append(NodeSpec("flat", spec("flatten"), (src,)))
    src = _fc_stack(nodes, "flat", _REALVALUE_HIDDEN[name])
    nodes.append(NodeSpec("out_linear", spec("linear", out_features=1), (src,)))
    nodes.append(NodeSpec("clamp", spec("clamp_scale", lo=STEERING_BOUNDS[0],
                                        hi=STEERING_BOUNDS[1]), ("out_linear",)))
    return ModelSpec(
        inputs=(("image", (in_channels, input_hw, input_hw)),),
        nodes=tuple(nodes),
        output="clamp",
    )


def make_brake_throttle_model(input_hw: int = 256, in_channels: int = 3,
                              filters=None, strides=None) -> ModelSpec:
    """Multi-parent DAG: image conv features concatenated with the scaled
    (left, right) motor-speed pair ahead of the controller FC layers; the
    two-node output passes through a sigmoid scaled to the 0..256 range."""
    stack = _CONV_STACKS[4]
    depths = [d for _, _, d in stack]
    filters = [k for k, _, _ in stack] if filters is None else list(filters)
    strides = [s for _, s, _ in stack] if strides is None else list(strides)
    if len(filters) != 4 or len(strides) != 4:
        raise GraphError(
            f"brake/throttle stack has 4 conv layers; got {len(filters)} "
            f"filters and {len(strides)} strides"
        )
    nodes: list[NodeSpec] = []
    src, _, _ = _conv_stack(nodes, "image", input_hw, filters, strides, depths)
    nodes.append(NodeSpec("flat", spec("flatten"), (src,)))
    nodes.append(NodeSpec("join", spec("concat"), ("flat", "motor")))
    src = _fc_stack(nodes, "join", (1024, 100))
    nodes.append(NodeSpec("out_linear", spec("linear", out_features=2), (src,)))
    nodes.append(NodeSpec("out_sigmoid",
                          spec("scaled_sigmoid", scale=BRAKE_THROTTLE_SCALE),
                          ("out_linear",)))
    return ModelSpec(
        inputs=(("image", (in_channels, input_hw, input_hw)), ("motor", (2,))),
        nodes=tuple(nodes),
        output="out_sigmoid",
    )


def zoo_specs(input_hw: int = 256):
    """Every named architecture at the given input size, for sweep tests."""
    out = {}
    for name in DISCRETE_NAMES:
        out[f"discrete/{name}"] = make_discrete_model(name, input_hw)
    for name in REALVALUE_NAMES:
        out[f"real/{name}"] = make_realvalue_model(name, input_hw=input_hw)
    out["brake_throttle"] = make_brake_throttle_model(input_hw)
    return out


def expand_double_compressed(pair, n_conv: int = 4) -> list[int]:
    """Expand a compressed (a, b) configuration: first half a, second half b.

    (7, 5) with four conv layers means two 7x7 filters then two 5x5 filters.
    """
    a, b = pair
    half = n_conv // 2
    return [a] * half + [b] * (n_conv - half)
