"""Numerical kernel: dilated causal convolutions, dense layers, activations

Sequences are numpy arrays shaped (batch, time, channels). Layers hold their
parameters as arrays and compute forward and backward passes as pure functions
of parameters and inputs. Parameters are changed in place only by an optimizer
(or by the gradient check, which restores them).
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)


def ensure_finite(array, name):
    """Raise NonFiniteError if array contains NaN or infinity"""
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{name} contains NaN or infinite values")
    return array


def as_sequence(array, channels, name, dtype=np.float64):
    """Return array as a finite (batch, time, channels) array of dtype"""
    array = np.asarray(array, dtype=dtype)
    if array.ndim != 3:
        raise ShapeError(
            f"{name} must have shape (batch, time, channels), got {array.shape}"
        )
    if array.shape[1] < 1:
        raise ShapeError(f"{name} must contain at least one time step")
    if array.shape[2] != channels:
        raise ShapeError(
            f"{name} has {array.shape[2]} channels, but the layer expects {channels}"
        )
    return ensure_finite(array, name)


def fan_in_uniform(rng, shape, fan_in, gain=2.0):
    """Uniform initialization with variance gain / fan_in

    Gain 2 is the He initialization for rectified units, gain 1 suits
    saturating units such as tanh.
    """
    limit = np.sqrt(3.0 * gain / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Parameterized layer with explicit forward and backward passes"""

    def parameters(self):
        """Return parameter arrays by name (the arrays themselves, not copies)"""
        raise NotImplementedError

    @property
    def dtype(self):
        return next(iter(self.parameters().values())).dtype

    def forward(self, inputs):
        raise NotImplementedError

    def backward(self, inputs, upstream_grad):
        """Return gradient with respect to inputs and gradients by parameter name"""
        raise NotImplementedError

    def loss_gradients(self, inputs, loss):
        """Return loss value and parameter gradients for one evaluation"""
        outputs = self.forward(inputs)
        value, output_grad = loss(outputs)
        unused_input_grad, grads = self.backward(inputs, output_grad)
        return value, grads

    def _check_upstream(self, inputs, upstream_grad, out_channels):
        upstream_grad = np.asarray(upstream_grad, dtype=self.dtype)
        expected = inputs.shape[:2] + (out_channels,)
        if upstream_grad.shape != expected:
            raise ShapeError(
                f"upstream gradient has shape {upstream_grad.shape},"
                f" but the layer output has shape {expected}"
            )
        return ensure_finite(upstream_grad, "upstream gradient")


class DilatedCausalConv(Layer):
    """Dilated causal convolution y[n] = b + sum_k c_k x[n - M k]

    Tap k reads the input M * k steps in the past; indices before the start of
    the sequence read as zero, so the output is as long as the input.
    Weights have shape (filter_length, in_channels, out_channels).
    """

    def __init__(
        self,
        in_channels,
        out_channels,
        filter_length=2,
        dilation=1,
        weight=None,
        bias=None,
        dtype=np.float64,
    ):
        if filter_length < 1:
            raise ConfigError(f"filter_length: must be at least 1, got {filter_length}")
        if dilation < 1:
            raise ConfigError(f"dilation: must be at least 1, got {dilation}")
        if in_channels < 1 or out_channels < 1:
            raise ConfigError(
                "channels: convolution needs at least one input and one output"
                f" channel, got {in_channels} and {out_channels}"
            )
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.filter_length = int(filter_length)
        self.dilation = int(dilation)
        shape = (self.filter_length, self.in_channels, self.out_channels)
        if weight is None:
            self.weight = np.zeros(shape, dtype=dtype)
        else:
            self.weight = np.array(weight, dtype=dtype)
            if self.weight.shape != shape:
                raise ShapeError(
                    f"convolution weight has shape {self.weight.shape},"
                    f" expected {shape}"
                )
        if bias is None:
            self.bias = np.zeros(self.out_channels, dtype=dtype)
        else:
            self.bias = np.array(bias, dtype=dtype)
            if self.bias.shape != (self.out_channels,):
                raise ShapeError(
                    f"convolution bias has shape {self.bias.shape},"
                    f" expected {(self.out_channels,)}"
                )

    @property
    def receptive_field(self):
        return self.dilation * (self.filter_length - 1) + 1

    @property
    def history_length(self):
        """Number of past input samples the convolution reads"""
        return self.dilation * (self.filter_length - 1)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def initialize(self, rng, gain=2.0):
        fan_in = self.filter_length * self.in_channels
        self.weight[...] = fan_in_uniform(rng, self.weight.shape, fan_in, gain)
        self.bias[...] = 0.0

    def forward(self, inputs):
        inputs = as_sequence(inputs, self.in_channels, "convolution input", self.dtype)
        batch, time, unused = inputs.shape
        outputs = np.empty((batch, time, self.out_channels), dtype=self.dtype)
        outputs[...] = self.bias
        for tap in range(self.filter_length):
            shift = tap * self.dilation
            if shift >= time:
                break
            outputs[:, shift:, :] += inputs[:, : time - shift, :] @ self.weight[tap]
        return outputs

    def backward(self, inputs, upstream_grad):
        inputs = as_sequence(inputs, self.in_channels, "convolution input", self.dtype)
        upstream_grad = self._check_upstream(inputs, upstream_grad, self.out_channels)
        time = inputs.shape[1]
        input_grad = np.zeros_like(inputs)
        weight_grad = np.zeros_like(self.weight)
        for tap in range(self.filter_length):
            shift = tap * self.dilation
            if shift >= time:
                break
            grad = upstream_grad[:, shift:, :]
            weight_grad[tap] = np.tensordot(
                inputs[:, : time - shift, :], grad, axes=([0, 1], [0, 1])
            )
            input_grad[:, : time - shift, :] += grad @ self.weight[tap].T
        bias_grad = upstream_grad.sum(axis=(0, 1))
        return input_grad, {"weight": weight_grad, "bias": bias_grad}


class TimeDistributedDense(Layer):
    """Fully connected layer applied to every time step independently"""

    def __init__(
        self, in_channels, out_channels, weight=None, bias=None, dtype=np.float64
    ):
        if in_channels < 1 or out_channels < 1:
            raise ConfigError(
                "channels: dense layer needs at least one input and one output"
                f" channel, got {in_channels} and {out_channels}"
            )
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        shape = (self.in_channels, self.out_channels)
        self.weight = (
            np.zeros(shape, dtype=dtype) if weight is None else np.array(weight, dtype)
        )
        self.bias = (
            np.zeros(self.out_channels, dtype=dtype)
            if bias is None
            else np.array(bias, dtype)
        )
        if self.weight.shape != shape or self.bias.shape != (self.out_channels,):
            raise ShapeError(
                f"dense parameters have shapes {self.weight.shape} and"
                f" {self.bias.shape}, expected {shape} and {(self.out_channels,)}"
            )

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def initialize(self, rng, gain=2.0):
        self.weight[...] = fan_in_uniform(
            rng, self.weight.shape, self.in_channels, gain
        )
        self.bias[...] = 0.0

    def forward(self, inputs):
        inputs = as_sequence(inputs, self.in_channels, "dense input", self.dtype)
        return inputs @ self.weight + self.bias

    def backward(self, inputs, upstream_grad):
        inputs = as_sequence(inputs, self.in_channels, "dense input", self.dtype)
        upstream_grad = self._check_upstream(inputs, upstream_grad, self.out_channels)
        input_grad = upstream_grad @ self.weight.T
        weight_grad = np.tensordot(inputs, upstream_grad, axes=([0, 1], [0, 1]))
        bias_grad = upstream_grad.sum(axis=(0, 1))
        return input_grad, {"weight": weight_grad, "bias": bias_grad}


def _sigmoid(inputs):
    # exp of a non-positive number never overflows
    decay = np.exp(-np.abs(inputs))
    return np.where(inputs >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay))


ACTIVATIONS = {
    "sigmoid": (_sigmoid, lambda inputs, outputs: outputs * (1.0 - outputs)),
    "relu": (
        lambda inputs: np.maximum(inputs, 0.0),
        lambda inputs, outputs: (inputs > 0).astype(outputs.dtype),
    ),
    "tanh": (np.tanh, lambda inputs, outputs: 1.0 - outputs * outputs),
}


def _activation_pair(kind):
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(
            f"activation: unknown kind '{kind}', use one of {sorted(ACTIVATIONS)}"
        ) from None


def activation(kind, inputs):
    """Apply sigmoid, relu, or tanh elementwise"""
    function, unused = _activation_pair(kind)
    inputs = np.asarray(inputs)
    if not np.issubdtype(inputs.dtype, np.floating):
        inputs = inputs.astype(np.float64)
    return function(ensure_finite(inputs, f"{kind} input"))


def activation_backward(kind, inputs, outputs, upstream_grad):
    """Gradient with respect to the activation input

    Relu passes the upstream gradient only where the input is positive.
    """
    unused, derivative = _activation_pair(kind)
    return upstream_grad * derivative(inputs, outputs)


def dropout(inputs, rate, rng=None, training=True):
    """Inverted dropout, returns outputs and the mask needed for backward

    In training mode each element is zeroed with probability *rate* and the
    survivors are scaled by 1 / (1 - rate). Outside training, and for rate 0,
    the inputs are returned unchanged with mask None.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout_rate: must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return inputs, None
    if rng is None:
        raise ConfigError("training.seed: dropout needs a seed or generator")
    rng = np.random.default_rng(rng)
    keep = rng.random(inputs.shape) >= rate
    mask = keep.astype(inputs.dtype) / (1.0 - rate)
    return inputs * mask, mask


def dropout_backward(upstream_grad, mask):
    if mask is None:
        return upstream_grad
    return upstream_grad * mask


@dataclass(frozen=True)
class GradientCheckReport:
    """Worst agreement between analytic and finite-difference gradients"""

    max_relative_error: float
    parameter_count_checked: int
    worst_parameter: str = ""


def gradient_check(
    model, inputs, loss, num_checks=100, step=1e-6, floor=1e-5, seed=0
):
    """Compare analytic parameter gradients with central differences

    *model* provides parameters(), forward(inputs), and loss_gradients(inputs,
    loss); *loss* maps outputs to (value, gradient). A random subset of
    *num_checks* parameters (all of them if there are fewer) is perturbed by
    +/- *step*. The relative error of one parameter is
    |analytic - numeric| / max(|analytic|, |numeric|, floor).
    The model is evaluated without dropout and must use 64-bit floats.
    """
    params = model.parameters()
    for name, values in params.items():
        if values.dtype != np.float64:
            raise ShapeError(
                f"gradient check needs 64-bit parameters, {name} is {values.dtype}"
            )
    value, grads = model.loss_gradients(inputs, loss)
    if not np.isfinite(value):
        raise NonFiniteError("loss is not finite, gradients cannot be checked")

    def evaluate():
        perturbed, unused = loss(model.forward(inputs))
        if not np.isfinite(perturbed):
            raise NonFiniteError("loss became non-finite during the gradient check")
        return perturbed

    names = list(params)
    offsets = np.cumsum([0] + [params[name].size for name in names])
    total = int(offsets[-1])
    count = min(int(num_checks), total)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(total, size=count, replace=False))

    worst_error = 0.0
    worst_name = ""
    for flat in chosen:
        array_index = int(np.searchsorted(offsets, flat, side="right")) - 1
        name = names[array_index]
        param = params[name]
        index = np.unravel_index(int(flat - offsets[array_index]), param.shape)
        original = param[index]
        try:
            param[index] = original + step
            plus = evaluate()
            param[index] = original - step
            minus = evaluate()
        finally:
            param[index] = original
        numeric = (plus - minus) / (2.0 * step)
        analytic = float(grads[name][index])
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if error > worst_error:
            worst_error = error
            worst_name = f"{name}{list(index)}"
    logger.debug("gradient check: %d parameters, worst %s", count, worst_name)
    return GradientCheckReport(
        max_relative_error=float(worst_error),
        parameter_count_checked=count,
        worst_parameter=worst_name,
    )


def parameter_count(model_or_parameters):
    """Number of trainable scalars of a model or of a name-to-array mapping"""
    if hasattr(model_or_parameters, "parameters"):
        model_or_parameters = model_or_parameters.parameters()
    return int(sum(np.size(values) for values in model_or_parameters.values()))
