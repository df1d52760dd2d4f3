# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Association/state networks: a six-layer MLP and a single-cell LSTM with a
one-layer encoder and decoder. Both map a 25-value feature vector to 11
outputs:

    0-1   association / mis-association logits
    2     association score (lower is a better match)
    3-6   state: x, y offsets from the detection centroid, absolute vx, vy
    7-10  log standard deviations of the state

Forward and backward passes are written out in numpy and operate on batches
of pairs (rows). All parameters live in one flat float64 vector, which is
what the optimizer updates and what weight files store.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, softmax

from vrutrack import protocol


class WeightFileError(ValueError):
    pass


class ChecksumError(WeightFileError):
    pass


class TopologyError(WeightFileError):
    pass


class LayoutError(WeightFileError):
    pass


class NonFiniteInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrackMemory:
    """LSTM cell state `c` and hidden state `h`; may be batched (..., hidden)."""

    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden=protocol.hidden_units, batch=()):
        shape = tuple(batch) + (hidden,)
        return cls(np.zeros(shape), np.zeros(shape))

    @classmethod
    def stack(cls, memories):
        return cls(np.stack([m.c for m in memories]), np.stack([m.h for m in memories]))

    def __getitem__(self, index):
        return TrackMemory(self.c[index], self.h[index])


@dataclass(frozen=True, eq=False)
class ModelOutput:
    """Raw network outputs, shaped (..., 11)."""

    raw: np.ndarray

    @property
    def assoc_logits(self):
        return self.raw[..., 0:2]

    @property
    def probabilities(self):
        return softmax(self.assoc_logits, axis=-1)

    @property
    def p_assoc(self):
        return self.probabilities[..., 0]

    @property
    def p_misassoc(self):
        return self.probabilities[..., 1]

    @property
    def score(self):
        return self.raw[..., 2]

    @property
    def state(self):
        return self.raw[..., 3:7]

    @property
    def log_sigma(self):
        return self.raw[..., 7:11]

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    def absolute_state(self, anchor):
        """State with the position offsets added to the detection centroid `anchor`."""
        state = np.array(self.state, dtype=float)
        state[..., 0:2] += np.asarray(anchor, dtype=float)
        return state

    def __getitem__(self, index):
        return ModelOutput(self.raw[index])

    def __len__(self):
        return len(self.raw)


def _relu(x):
    return np.maximum(x, 0.0)


def _check_finite(features):
    features = np.asarray(features, dtype=float)
    if not np.all(np.isfinite(features)):
        raise NonFiniteInputError("feature vector contains non-finite values")
    return features


class Network:
    """
    Base class holding the flat parameter vector and its named views.

    Subclasses define `topology` and `_layout()` -> [(name, shape, fan_in)],
    with fan_in None for biases.
    """

    topology = None

    def __init__(self, input_dim=protocol.feature_dim, hidden=protocol.hidden_units, seed=0):
        self.input_dim = input_dim
        self.hidden = hidden
        self.output_dim = protocol.output_dim
        self._specs = self._layout()
        self.size = sum(int(np.prod(shape)) for _, shape, _ in self._specs)
        self.flat = np.zeros(self.size)
        self.params = self._views(self.flat)
        self.initialize(seed)

    def _layout(self):
        raise NotImplementedError

    @property
    def is_recurrent(self):
        return False

    def _views(self, flat):
        views, offset = {}, 0
        for name, shape, _ in self._specs:
            n = int(np.prod(shape))
            views[name] = flat[offset : offset + n].reshape(shape)
            offset += n
        return views

    def zeros_like_params(self):
        flat = np.zeros(self.size)
        return flat, self._views(flat)

    def initialize(self, seed=0):
        """Uniform He-style fan-in initialization for weights, zero biases."""
        rng = np.random.default_rng(seed)
        for name, shape, fan_in in self._specs:
            if fan_in is None:
                self.params[name][...] = 0.0
            else:
                limit = np.sqrt(6.0 / fan_in)
                self.params[name][...] = rng.uniform(-limit, limit, size=shape)

    def get_flat(self):
        return self.flat.copy()

    def set_flat(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {values.shape}")
        self.flat[...] = values

    def copy(self):
        clone = type(self)(self.input_dim, self.hidden)
        clone.set_flat(self.flat)
        return clone

    def save(self, path):
        save_weights(self, path)


class MlpNetwork(Network):
    """Six fully connected ReLU layers of `hidden` units and a linear head."""

    topology = protocol.topology_mlp
    n_layers = 6

    def _layout(self):
        specs = []
        fan_in = self.input_dim
        for i in range(self.n_layers):
            specs.append((f"W{i}", (fan_in, self.hidden), fan_in))
            specs.append((f"b{i}", (self.hidden,), None))
            fan_in = self.hidden
        specs.append(("W_out", (self.hidden, protocol.output_dim), self.hidden))
        specs.append(("b_out", (protocol.output_dim,), None))
        return specs

    def forward_with_cache(self, features):
        x = _check_finite(features)
        p = self.params
        activations = [x]
        for i in range(self.n_layers):
            x = _relu(x @ p[f"W{i}"] + p[f"b{i}"])
            activations.append(x)
        raw = x @ p["W_out"] + p["b_out"]
        return raw, activations

    def forward(self, features, memory=None):
        raw, _ = self.forward_with_cache(features)
        return ModelOutput(raw), None

    def backward(self, cache, output_grad):
        """Parameter gradient (flat) for the upstream gradient `output_grad` on raw outputs."""
        activations = cache
        grad_flat, grad = self.zeros_like_params()
        p = self.params
        delta = np.asarray(output_grad, dtype=float)
        top = activations[-1]
        grad["W_out"][...] = _outer_sum(top, delta)
        grad["b_out"][...] = _row_sum(delta)
        delta = delta @ p["W_out"].T
        for i in reversed(range(self.n_layers)):
            delta = delta * (activations[i + 1] > 0.0)
            grad[f"W{i}"][...] = _outer_sum(activations[i], delta)
            grad[f"b{i}"][...] = _row_sum(delta)
            delta = delta @ p[f"W{i}"].T
        return grad_flat

    def gradient(self, features, output_grad, memory=None):
        _, cache = self.forward_with_cache(features)
        return self.backward(cache, output_grad)


@dataclass
class SequenceStep:
    """
    One frame of a truncated BPTT window.

    `features`
      (n_rows, 25) candidate pairs at this frame

    `track_index`
      (n_rows,) which sequence (track) each row belongs to

    `carrier`
      (n_tracks,) row whose produced memory the track keeps, -1 to carry the
      memory unchanged
    """

    features: np.ndarray
    track_index: np.ndarray
    carrier: np.ndarray


class LstmNetwork(Network):
    """ReLU encoder -> LSTM cell -> linear decoder."""

    topology = protocol.topology_lstm

    @property
    def is_recurrent(self):
        return True

    def _layout(self):
        h = self.hidden
        return [
            ("W_enc", (self.input_dim, h), self.input_dim),
            ("b_enc", (h,), None),
            ("W_gates", (2 * h, 4 * h), 2 * h),
            ("b_gates", (4 * h,), None),
            ("W_dec", (h, protocol.output_dim), h),
            ("b_dec", (protocol.output_dim,), None),
        ]

    def zero_memory(self, batch=()):
        return TrackMemory.zeros(self.hidden, batch)

    def _step(self, x, c_prev, h_prev):
        p, n = self.params, self.hidden
        e = _relu(x @ p["W_enc"] + p["b_enc"])
        eh = np.concatenate([e, h_prev], axis=-1)
        z = eh @ p["W_gates"] + p["b_gates"]
        i = expit(z[..., 0:n])
        f = expit(z[..., n : 2 * n])
        g = np.tanh(z[..., 2 * n : 3 * n])
        o = expit(z[..., 3 * n : 4 * n])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        raw = h @ p["W_dec"] + p["b_dec"]
        cache = (x, e, eh, i, f, g, o, c_prev, tc, h)
        return raw, c, h, cache

    def _step_backward(self, cache, draw, dh_ext, dc_ext, grad):
        x, e, eh, i, f, g, o, c_prev, tc, h = cache
        p, n = self.params, self.hidden
        grad["W_dec"] += _outer_sum(h, draw)
        grad["b_dec"] += _row_sum(draw)
        dh = draw @ p["W_dec"].T + dh_ext
        do = dh * tc
        dc = dh * o * (1.0 - tc**2) + dc_ext
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_prev = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g**2), do * o * (1.0 - o)],
            axis=-1,
        )
        grad["W_gates"] += _outer_sum(eh, dz)
        grad["b_gates"] += _row_sum(dz)
        deh = dz @ p["W_gates"].T
        de = deh[..., :n] * (e > 0.0)
        dh_prev = deh[..., n:]
        grad["W_enc"] += _outer_sum(x, de)
        grad["b_enc"] += _row_sum(de)
        return dh_prev, dc_prev

    def forward_with_cache(self, features, memory=None):
        x = _check_finite(features)
        if memory is None:
            memory = self.zero_memory(x.shape[:-1])
        raw, c, h, cache = self._step(x, memory.c, memory.h)
        return raw, TrackMemory(c, h), cache

    def forward(self, features, memory=None):
        """
        One step for a pair (or a batch of pairs). Returns the output and the
        memory this pair would leave behind; committing it is up to the caller.
        """
        raw, new_memory, _ = self.forward_with_cache(features, memory)
        return ModelOutput(raw), new_memory

    def backward(self, cache, output_grad, dh_next=None, dc_next=None):
        grad_flat, grad = self.zeros_like_params()
        draw = np.asarray(output_grad, dtype=float)
        h = cache[-1]
        dh_next = np.zeros_like(h) if dh_next is None else dh_next
        dc_next = np.zeros_like(h) if dc_next is None else dc_next
        self._step_backward(cache, draw, dh_next, dc_next, grad)
        return grad_flat

    def gradient(self, features, output_grad, memory=None):
        _, _, cache = self.forward_with_cache(features, memory)
        return self.backward(cache, output_grad)

    def forward_sequence(self, steps, n_tracks, memory=None):
        """
        Runs a window of `SequenceStep`s for `n_tracks` parallel sequences.
        Returns (raw outputs per step, caches, final memory).
        """
        if memory is None:
            memory = self.zero_memory((n_tracks,))
        C, H = memory.c.copy(), memory.h.copy()
        outputs, caches = [], []
        for step in steps:
            x = _check_finite(step.features)
            raw, c, h, cache = self._step(x, C[step.track_index], H[step.track_index])
            has = step.carrier >= 0
            C[has] = c[step.carrier[has]]
            H[has] = h[step.carrier[has]]
            outputs.append(raw)
            caches.append(cache)
        return outputs, caches, TrackMemory(C, H)

    def backward_sequence(self, steps, caches, output_grads, n_tracks):
        """Truncated BPTT over one window; memory entering the window is treated as constant."""
        grad_flat, grad = self.zeros_like_params()
        dC = np.zeros((n_tracks, self.hidden))
        dH = np.zeros((n_tracks, self.hidden))
        for step, cache, draw in reversed(list(zip(steps, caches, output_grads))):
            n_rows = len(step.track_index)
            dh_ext = np.zeros((n_rows, self.hidden))
            dc_ext = np.zeros((n_rows, self.hidden))
            has = step.carrier >= 0
            rows = step.carrier[has]
            dh_ext[rows] = dH[has]
            dc_ext[rows] = dC[has]
            dH[has] = 0.0
            dC[has] = 0.0
            dh_prev, dc_prev = self._step_backward(cache, draw, dh_ext, dc_ext, grad)
            np.add.at(dH, step.track_index, dh_prev)
            np.add.at(dC, step.track_index, dc_prev)
        return grad_flat


def _outer_sum(a, b):
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    return a.T @ b


def _row_sum(a):
    return np.atleast_2d(a).sum(axis=0)


NETWORKS = {
    protocol.topology_mlp: MlpNetwork,
    protocol.topology_lstm: LstmNetwork,
    protocol.mode_learned_mlp: MlpNetwork,
    protocol.mode_learned_lstm: LstmNetwork,
}


def build_network(kind, seed=0, hidden=protocol.hidden_units):
    """`kind` is a topology ("mlp"/"lstm") or a learned association mode."""
    try:
        return NETWORKS[kind](hidden=hidden, seed=seed)
    except KeyError:
        raise ValueError(f"unknown network kind {kind!r}") from None


# magic, version, topology, feature layout, input dim, hidden, output dim, n params
_HEADER = struct.Struct("<4sHBHHHHI")
_CHECKSUM = struct.Struct("<I")


def save_weights(net, path):
    """
    Writes `net` as: header (little-endian, see `_HEADER`), CRC-32 of header
    plus payload, then the flat float64 parameter vector.
    """
    header = _HEADER.pack(
        protocol.weights_magic,
        protocol.weights_version,
        protocol.topology_codes[net.topology],
        protocol.feature_layout_id,
        net.input_dim,
        net.hidden,
        net.output_dim,
        net.size,
    )
    payload = net.flat.astype("<f8").tobytes()
    checksum = zlib.crc32(header + payload)
    with open(path, "wb") as fileobj:
        fileobj.write(header)
        fileobj.write(_CHECKSUM.pack(checksum))
        fileobj.write(payload)


def load_weights(path, topology=None):
    """
    Reads a weight file. `topology` ("mlp", "lstm" or a learned mode), when
    given, must match the file.
    """
    with open(path, "rb") as fileobj:
        blob = fileobj.read()
    fixed = _HEADER.size + _CHECKSUM.size
    if len(blob) < fixed:
        raise ChecksumError(f"{path}: truncated weight file header")
    header = blob[: _HEADER.size]
    (checksum,) = _CHECKSUM.unpack(blob[_HEADER.size : fixed])
    payload = blob[fixed:]
    magic, version, code, layout, input_dim, hidden, output_dim, size = _HEADER.unpack(header)
    if magic != protocol.weights_magic:
        raise WeightFileError(f"{path}: not a vrutrack weight file")
    if zlib.crc32(header + payload) != checksum or len(payload) != 8 * size:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupted)")
    if version != protocol.weights_version:
        raise WeightFileError(f"{path}: unsupported weight file version {version}")
    if layout != protocol.feature_layout_id:
        raise LayoutError(
            f"{path}: feature layout {layout}, expected {protocol.feature_layout_id}"
        )
    names = {v: k for k, v in protocol.topology_codes.items()}
    if code not in names:
        raise TopologyError(f"{path}: unknown topology code {code}")
    file_topology = names[code]
    if topology is not None:
        expected = NETWORKS.get(topology)
        if expected is None or expected.topology != file_topology:
            raise TopologyError(f"{path}: holds a {file_topology} network, not {topology}")
    net = NETWORKS[file_topology](input_dim=input_dim, hidden=hidden)
    if net.size != size or output_dim != net.output_dim:
        raise TopologyError(f"{path}: parameter count {size} does not match {file_topology}")
    net.set_flat(np.frombuffer(payload, dtype="<f8"))
    return net
