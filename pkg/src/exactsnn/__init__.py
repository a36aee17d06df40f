"""Event-driven simulation and exact gradient training of multi-spike LIF networks."""
from .core import (ConfigError, EventBatch, ForwardTrace, LayerSpec, LayerTrace, NetworkSpec,
                   NeuronParams, build_network)
from .forward import forward, forward_many, infer_neuron
from .backward import backprop, backward, batch_backward

__version__ = "0.1.0"

__all__ = ["ConfigError", "EventBatch", "ForwardTrace", "LayerSpec", "LayerTrace", "NetworkSpec",
           "NeuronParams", "build_network", "forward", "forward_many", "infer_neuron",
           "backprop", "backward", "batch_backward"]
