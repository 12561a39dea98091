"""Build a layer-for-layer PyTorch equivalent of an XML topology.

Supported layer kinds: fc, lstm, bilstm, softmax. Inlays (memcopy,
cast, ctc_greedy, mfcc) run as plain callables so end-to-end data flow
matches the reference engine, but they are excluded from the timed
comparison region by default. Anything else raises UnsupportedKind.

Weight conventions match the NTPW layout: fc stores W as (in, out) so
nn.Linear gets its transpose; LSTM gate order along 4H is i, f, g, o
(torch's native order), recurrent bias is folded into a single vector
(torch's second bias is zeroed). The reference engine stores the
backward half of a bilstm in processing order, so torch's realigned
backward output is flipped along time before concatenation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import UnsupportedKind
from .ntpw import load_ntpw
from .topology import Topology, load_topology

SUPPORTED_LAYERS = ("fc", "lstm", "bilstm", "softmax")
INLAYS = ("memcopy", "cast", "ctc_greedy", "mfcc")

MFCC_COEFFS = 26
LOG_EPS = 1e-10


@dataclass
class BridgeLayer:
    id: str
    kind: str
    fn: object          # tensor -> tensor
    timed: bool         # inlays are excluded from the comparable region


@dataclass
class BridgeModel:
    topology: Topology
    layers: list[BridgeLayer]
    precision: str

    def forward_all(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        """Run every layer, returning each node's output by id."""
        outputs = {}
        with torch.inference_mode():
            for layer in self.layers:
                x = layer.fn(x)
                outputs[layer.id] = x
        return outputs


def _tensor(weights: dict[str, np.ndarray], name: str) -> torch.Tensor:
    if name not in weights:
        raise UnsupportedKind(f"weight container is missing '{name}'")
    return torch.from_numpy(np.ascontiguousarray(weights[name]))


def _build_fc(element, fan_in, weights):
    nodes = int(element.attrs["nodes"])
    linear = torch.nn.Linear(fan_in, nodes)
    with torch.no_grad():
        linear.weight.copy_(_tensor(weights, f"{element.id}.W").T)
        linear.bias.copy_(_tensor(weights, f"{element.id}.b"))
    linear.eval()
    activation = element.attrs.get("activation", "none")
    clip = float(element.attrs.get("clip", "20"))

    if activation == "relu_clip":
        def run(x):
            return torch.clamp(linear(x), 0.0, clip)
    else:
        def run(x):
            return linear(x)
    return run, nodes


def _build_lstm(element, fan_in, weights, bidirectional):
    hidden = int(element.attrs["nodes"])
    lstm = torch.nn.LSTM(input_size=fan_in, hidden_size=hidden,
                         bidirectional=bidirectional)
    directions = [("fwd", "")] + ([("bwd", "_reverse")] if bidirectional
                                  else [])
    with torch.no_grad():
        for direction, suffix in directions:
            prefix = f"{element.id}.{direction}"
            getattr(lstm, f"weight_ih_l0{suffix}").copy_(
                _tensor(weights, f"{prefix}.Wx").T)
            getattr(lstm, f"weight_hh_l0{suffix}").copy_(
                _tensor(weights, f"{prefix}.Wh").T)
            getattr(lstm, f"bias_ih_l0{suffix}").copy_(
                _tensor(weights, f"{prefix}.b"))
            getattr(lstm, f"bias_hh_l0{suffix}").zero_()
    lstm.eval()

    def run(x):
        y, _ = lstm(x)
        if bidirectional:
            # reference stores the backward half in processing order
            y = torch.cat([y[..., :hidden],
                           torch.flip(y[..., hidden:], dims=[0])], dim=-1)
        return y
    return run, hidden * (2 if bidirectional else 1)


def _cast_roundtrip(x: torch.Tensor, precision: str) -> torch.Tensor:
    if precision == "fp32":
        return x.clone()
    if precision == "fp16":
        return x.half().float()
    if precision == "int8":
        peak = float(x.abs().max())
        scale = float(np.float32(peak / 127.0)) if peak > 0 else 1.0
        q = torch.clamp(torch.round(x / scale), -127, 127)
        return q * scale
    raise UnsupportedKind(f"cast precision '{precision}'")


def _ctc_greedy(x: torch.Tensor) -> torch.Tensor:
    steps, batch, classes = x.shape
    blank = classes - 1
    picks = torch.argmax(x, dim=-1)
    out = torch.full((batch, steps), -1.0)
    for col in range(batch):
        previous = None
        cursor = 0
        for t in range(steps):
            token = int(picks[t, col])
            if token != previous and token != blank:
                out[col, cursor] = token
                cursor += 1
            previous = token
    return out


def _mfcc_lite(x: torch.Tensor) -> torch.Tensor:
    steps, batch, frame = x.shape
    nbins = frame // 2 + 1
    n = torch.arange(frame, dtype=torch.float32)
    window = 0.5 - 0.5 * torch.cos(2.0 * math.pi * n / (frame - 1))
    spectrum = torch.fft.rfft(x * window, dim=-1)
    logmag = torch.log(torch.abs(spectrum).float() + LOG_EPS)
    k = torch.arange(MFCC_COEFFS, dtype=torch.float64)[:, None]
    m = torch.arange(nbins, dtype=torch.float64)[None, :]
    dct = torch.cos(math.pi * k * (2.0 * m + 1.0) / (2.0 * nbins)).float()
    return logmag @ dct.T


def _build_inlay(element):
    kind = element.kind
    if kind == "memcopy":
        return lambda x: x.clone()
    if kind == "cast":
        precision = element.attrs["precision"]
        return lambda x: _cast_roundtrip(x, precision)
    if kind == "ctc_greedy":
        return _ctc_greedy
    if kind == "mfcc":
        return _mfcc_lite
    raise UnsupportedKind(f"{element.id}: inlay kind '{kind}'")


def bridge_build(topology_path, weights_path) -> BridgeModel:
    """Layer-for-layer torch model with NTPW weights loaded."""
    topology = load_topology(topology_path)
    weights, precision = load_ntpw(weights_path)

    feature_width = {inp.id: inp.extents[-1] for inp in topology.inputs}
    layers = []
    for element in topology.elements:
        fan_in = feature_width[element.source]
        if element.element_class == "inlay":
            layers.append(BridgeLayer(element.id, element.kind,
                                      _build_inlay(element), timed=False))
            feature_width[element.id] = \
                MFCC_COEFFS if element.kind == "mfcc" else fan_in
            continue
        if element.kind == "fc":
            fn, width = _build_fc(element, fan_in, weights)
        elif element.kind in ("lstm", "bilstm"):
            fn, width = _build_lstm(element, fan_in, weights,
                                    element.kind == "bilstm")
        elif element.kind == "softmax":
            fn, width = (lambda x: torch.softmax(x, dim=-1)), fan_in
        else:
            raise UnsupportedKind(
                f"{element.id}: kind '{element.kind}' (bridge supports "
                f"{SUPPORTED_LAYERS}, inlays {INLAYS})")
        layers.append(BridgeLayer(element.id, element.kind, fn, timed=True))
        feature_width[element.id] = width
    return BridgeModel(topology=topology, layers=layers, precision=precision)
