"""Gated dilated causal convolution network for load disaggregation

The inputs pass through a time-distributed dense layer and a stack of gated
blocks. The dense output and every block output are concatenated into skip
features, a tanh dense head turns them into one mask per load, and each
prediction is the mask times the input channel holding the disaggregated
quantity.
"""

import logging
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, ShapeError
from .numcore import (
    DilatedCausalConv,
    TimeDistributedDense,
    activation,
    activation_backward,
    as_sequence,
    dropout,
    dropout_backward,
    parameter_count,
)

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_WIDTHS = (512, 256, 256, 128, 128, 256, 256, 256, 512)
DEFAULT_DILATIONS = tuple(2**layer for layer in range(9))


@dataclass(frozen=True)
class NetworkConfig:
    """Topology of the network

    The default stack has a receptive field of 512 samples.
    """

    input_channels: int = 1
    output_loads: int = 1
    block_widths: tuple = DEFAULT_BLOCK_WIDTHS
    filter_length: int = 2
    dilation_schedule: tuple = DEFAULT_DILATIONS
    dropout_rate: float = 0.10
    input_dense_width: int = 512
    mask_input_channel: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_widths", tuple(self.block_widths))
        object.__setattr__(self, "dilation_schedule", tuple(self.dilation_schedule))
        self.validate()

    def validate(self):
        if len(self.block_widths) != len(self.dilation_schedule):
            raise ConfigError(
                "network.dilation_schedule: has"
                f" {len(self.dilation_schedule)} entries, but block_widths has"
                f" {len(self.block_widths)}"
            )
        for name in ("input_channels", "output_loads", "input_dense_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"network.{name}: must be at least 1")
        if self.filter_length < 1:
            raise ConfigError("network.filter_length: must be at least 1")
        if any(width < 1 for width in self.block_widths):
            raise ConfigError("network.block_widths: widths must be at least 1")
        if any(dilation < 1 for dilation in self.dilation_schedule):
            raise ConfigError("network.dilation_schedule: dilations must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("network.dropout_rate: must be in [0, 1)")
        if not 0 <= self.mask_input_channel < self.input_channels:
            raise ConfigError(
                f"network.mask_input_channel: {self.mask_input_channel} is not one"
                f" of the {self.input_channels} input channels"
            )

    @property
    def receptive_field(self):
        return receptive_field(self)

    @property
    def skip_width(self):
        return self.input_dense_width + sum(self.block_widths)

    def to_dict(self):
        result = asdict(self)
        result["block_widths"] = list(self.block_widths)
        result["dilation_schedule"] = list(self.dilation_schedule)
        return result

    @classmethod
    def from_dict(cls, values, prefix="network"):
        known = {field.name for field in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{prefix}.{unknown[0]}: unknown network setting")
        try:
            return cls(**values)
        except TypeError as error:
            raise ConfigError(f"{prefix}: {error}") from None


def receptive_field(config):
    """Samples that can influence one output: 1 + sum of M * (N - 1)"""
    return 1 + sum(
        dilation * (config.filter_length - 1) for dilation in config.dilation_schedule
    )


class GatedBlock:
    """relu(filter_conv(x)) * sigmoid(gate_conv(x)) followed by dropout"""

    def __init__(
        self, in_channels, width, filter_length, dilation, dropout_rate, dtype
    ):
        self.filter_conv = DilatedCausalConv(
            in_channels, width, filter_length, dilation, dtype=dtype
        )
        self.gate_conv = DilatedCausalConv(
            in_channels, width, filter_length, dilation, dtype=dtype
        )
        self.dropout_rate = dropout_rate

    @property
    def width(self):
        return self.filter_conv.out_channels

    def parameters(self):
        return {
            "filter.weight": self.filter_conv.weight,
            "filter.bias": self.filter_conv.bias,
            "gate.weight": self.gate_conv.weight,
            "gate.bias": self.gate_conv.bias,
        }

    def forward(self, inputs, training=False, rng=None):
        filtered = self.filter_conv.forward(inputs)
        gate_input = self.gate_conv.forward(inputs)
        regressed = activation("relu", filtered)
        gate = activation("sigmoid", gate_input)
        outputs, mask = dropout(regressed * gate, self.dropout_rate, rng, training)
        return outputs, (inputs, filtered, regressed, gate, mask)

    def backward(self, cache, upstream_grad):
        inputs, filtered, regressed, gate, mask = cache
        gated_grad = dropout_backward(upstream_grad, mask)
        filtered_grad = activation_backward(
            "relu", filtered, regressed, gated_grad * gate
        )
        gate_grad = activation_backward("sigmoid", None, gate, gated_grad * regressed)
        filter_input_grad, filter_grads = self.filter_conv.backward(
            inputs, filtered_grad
        )
        gate_input_grad, gate_grads = self.gate_conv.backward(inputs, gate_grad)
        grads = {
            "filter.weight": filter_grads["weight"],
            "filter.bias": filter_grads["bias"],
            "gate.weight": gate_grads["weight"],
            "gate.bias": gate_grads["bias"],
        }
        return filter_input_grad + gate_input_grad, grads


class Network:
    """Instantiated network: input dense layer, gated blocks, and mask head"""

    def __init__(self, config, dtype=np.float64):
        self.config = config
        self.input_dense = TimeDistributedDense(
            config.input_channels, config.input_dense_width, dtype=dtype
        )
        self.blocks = []
        in_channels = config.input_dense_width
        for width, dilation in zip(config.block_widths, config.dilation_schedule):
            self.blocks.append(
                GatedBlock(
                    in_channels,
                    width,
                    config.filter_length,
                    dilation,
                    config.dropout_rate,
                    dtype,
                )
            )
            in_channels = width
        self.mask_head = TimeDistributedDense(
            config.skip_width, config.output_loads, dtype=dtype
        )

    @property
    def dtype(self):
        return self.input_dense.weight.dtype

    @property
    def receptive_field(self):
        return self.config.receptive_field

    def parameters(self):
        """Parameter arrays by name in declaration order"""
        params = {
            "input_dense.weight": self.input_dense.weight,
            "input_dense.bias": self.input_dense.bias,
        }
        for index, block in enumerate(self.blocks):
            for name, values in block.parameters().items():
                params[f"blocks.{index}.{name}"] = values
        params["mask_head.weight"] = self.mask_head.weight
        params["mask_head.bias"] = self.mask_head.bias
        return params

    def initialize(self, seed):
        """Draw all parameters from a generator seeded with *seed*"""
        rng = np.random.default_rng(seed)
        self.input_dense.initialize(rng, gain=1.0)
        for block in self.blocks:
            block.filter_conv.initialize(rng, gain=2.0)
            block.gate_conv.initialize(rng, gain=1.0)
        self.mask_head.initialize(rng, gain=1.0)

    def copy_parameters(self):
        return {name: values.copy() for name, values in self.parameters().items()}

    def set_parameters(self, values):
        """Copy values (by name) into the parameter arrays"""
        params = self.parameters()
        missing = sorted(set(params) - set(values))
        if missing:
            raise ShapeError(f"no values provided for parameter {missing[0]}")
        for name, target in params.items():
            source = np.asarray(values[name])
            if source.shape != target.shape:
                raise ShapeError(
                    f"parameter {name} has shape {target.shape},"
                    f" got values of shape {source.shape}"
                )
            target[...] = source

    def astype(self, dtype):
        """Copy of the network with parameters stored as *dtype*"""
        network = Network(self.config, dtype=dtype)
        network.set_parameters(self.parameters())
        return network

    def forward(self, inputs, training=False, rng=None):
        outputs, unused = self.forward_train(inputs, training=training, rng=rng)
        return outputs

    def forward_train(self, inputs, training=False, rng=None):
        """Return predictions and the cache needed by backward"""
        config = self.config
        inputs = as_sequence(inputs, config.input_channels, "network input", self.dtype)
        if training:
            if rng is None:
                raise ConfigError(
                    "training.seed: training mode needs a seed or generator for dropout"
                )
            rng = np.random.default_rng(rng)
        hidden = self.input_dense.forward(inputs)
        skips = [hidden]
        block_caches = []
        features = hidden
        for block in self.blocks:
            features, block_cache = block.forward(features, training, rng)
            skips.append(features)
            block_caches.append(block_cache)
        skip_features = np.concatenate(skips, axis=-1)
        mask = activation("tanh", self.mask_head.forward(skip_features))
        channel = config.mask_input_channel
        masked_input = inputs[:, :, channel : channel + 1]
        outputs = mask * masked_input
        return outputs, (inputs, block_caches, skip_features, mask)

    def backward(self, cache, upstream_grad):
        """Return input gradient and parameter gradients by name"""
        inputs, block_caches, skip_features, mask = cache
        config = self.config
        upstream_grad = np.asarray(upstream_grad, dtype=self.dtype)
        expected = inputs.shape[:2] + (config.output_loads,)
        if upstream_grad.shape != expected:
            raise ShapeError(
                f"upstream gradient has shape {upstream_grad.shape},"
                f" but the network output has shape {expected}"
            )
        channel = config.mask_input_channel
        masked_input = inputs[:, :, channel : channel + 1]
        mask_grad = upstream_grad * masked_input
        logits_grad = activation_backward("tanh", None, mask, mask_grad)
        skip_grad, head_grads = self.mask_head.backward(skip_features, logits_grad)

        widths = [config.input_dense_width] + [block.width for block in self.blocks]
        pieces = np.split(skip_grad, np.cumsum(widths)[:-1], axis=-1)
        block_grads = [None] * len(self.blocks)
        carried = None
        for index in reversed(range(len(self.blocks))):
            grad = pieces[index + 1]
            if carried is not None:
                grad = grad + carried
            carried, block_grads[index] = self.blocks[index].backward(
                block_caches[index], grad
            )
        hidden_grad = pieces[0] if carried is None else pieces[0] + carried
        input_grad, dense_grads = self.input_dense.backward(inputs, hidden_grad)
        input_grad[:, :, channel] += (upstream_grad * mask).sum(axis=-1)

        grads = {
            "input_dense.weight": dense_grads["weight"],
            "input_dense.bias": dense_grads["bias"],
        }
        for index, block_grad in enumerate(block_grads):
            for name, values in block_grad.items():
                grads[f"blocks.{index}.{name}"] = values
        grads["mask_head.weight"] = head_grads["weight"]
        grads["mask_head.bias"] = head_grads["bias"]
        return input_grad, grads

    def loss_gradients(self, inputs, loss):
        """Loss value and parameter gradients with dropout disabled"""
        outputs, cache = self.forward_train(inputs, training=False)
        value, output_grad = loss(outputs)
        unused, grads = self.backward(cache, output_grad)
        return value, grads


def build(config, seed=0, dtype=np.float64):
    """Create a network for *config* with parameters drawn from *seed*"""
    config.validate()
    network = Network(config, dtype=dtype)
    network.initialize(seed)
    logger.debug(
        "built network: %d parameters, receptive field %d",
        parameter_count(network),
        config.receptive_field,
    )
    return network


def predict_series(network, inputs, chunk_length=4096):
    """Causal predictions for a long series, computed chunk by chunk

    Each chunk is preceded by receptive_field - 1 samples of context, so the
    result equals one forward pass over the whole series.
    Accepts (time, channels) or (batch, time, channels) inputs.
    """
    inputs = np.asarray(inputs)
    squeeze = inputs.ndim == 2
    if squeeze:
        inputs = inputs[np.newaxis]
    if chunk_length is not None and chunk_length < 1:
        raise ShapeError(f"chunk_length must be positive, got {chunk_length}")
    time = inputs.shape[1]
    if chunk_length is None or chunk_length >= time:
        outputs = network.forward(inputs)
    else:
        context = network.receptive_field - 1
        outputs = np.empty(
            (inputs.shape[0], time, network.config.output_loads), dtype=network.dtype
        )
        for start in range(0, time, chunk_length):
            stop = min(start + chunk_length, time)
            first = max(0, start - context)
            chunk = network.forward(inputs[:, first:stop])
            outputs[:, start:stop] = chunk[:, start - first :]
    return outputs[0] if squeeze else outputs
