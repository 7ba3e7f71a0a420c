"""Sample-by-sample causal inference with constant memory

Every convolution keeps a ring buffer with the last M * (N - 1) inputs it has
seen, so one step costs one N-tap dot product per convolution regardless of
how long the stream has been running. Buffers start as zeros, which matches
the left zero padding of the batch forward pass. Dropout is never applied.
"""

import logging

import numpy as np

from .errors import NonFiniteError, ShapeError
from .numcore import activation

logger = logging.getLogger(__name__)


class ConvQueue:
    """Ring buffer of past inputs for one dilated causal convolution"""

    def __init__(self, conv, dtype):
        self.conv = conv
        self.buffer = np.zeros((conv.history_length, conv.in_channels), dtype=dtype)
        self.position = 0  # slot of the oldest input, overwritten next

    def step(self, sample):
        conv = self.conv
        outputs = conv.bias + sample @ conv.weight[0]
        history = conv.history_length
        for tap in range(1, conv.filter_length):
            past = self.buffer[(self.position - tap * conv.dilation) % history]
            outputs = outputs + past @ conv.weight[tap]
        if history:
            self.buffer[self.position] = sample
            self.position = (self.position + 1) % history
        return outputs


class StreamState:
    """Streaming state of one network; single owner, mutated serially"""

    def __init__(self, network):
        self.network = network
        dtype = network.dtype
        self.queues = [
            (ConvQueue(block.filter_conv, dtype), ConvQueue(block.gate_conv, dtype))
            for block in network.blocks
        ]
        self.skip_features = np.zeros(network.config.skip_width, dtype=dtype)
        self.samples_seen = 0

    @property
    def buffered_entries(self):
        """Number of stored values, fixed after construction"""
        return sum(
            queue.buffer.size for pair in self.queues for queue in pair
        ) + self.skip_features.size

    def step(self, sample):
        """Consume one sample (one value per input channel), return predictions

        Invalid samples raise before any buffer is touched.
        """
        network = self.network
        config = network.config
        sample = np.asarray(sample, dtype=network.dtype)
        if sample.shape != (config.input_channels,):
            raise ShapeError(
                f"sample has shape {sample.shape}, expected"
                f" ({config.input_channels},)"
            )
        if not np.all(np.isfinite(sample)):
            raise NonFiniteError("sample contains NaN or infinite values")

        hidden = sample @ network.input_dense.weight + network.input_dense.bias
        offset = config.input_dense_width
        self.skip_features[:offset] = hidden
        features = hidden
        for block, (filter_queue, gate_queue) in zip(network.blocks, self.queues):
            regressed = activation("relu", filter_queue.step(features))
            gate = activation("sigmoid", gate_queue.step(features))
            features = regressed * gate
            self.skip_features[offset : offset + block.width] = features
            offset += block.width
        head = network.mask_head
        mask = activation("tanh", self.skip_features @ head.weight + head.bias)
        self.samples_seen += 1
        return mask * sample[config.mask_input_channel]


def init_stream(network):
    """Fresh stream state, equivalent to an all-zeros history"""
    return StreamState(network)


def stream(network, samples):
    """Yield predictions for an iterable of samples"""
    state = init_stream(network)
    for sample in samples:
        yield state.step(sample)
