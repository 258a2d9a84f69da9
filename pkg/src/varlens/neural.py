"""Networks and optimizer, implemented directly on numpy arrays.

Two architectures cover every value space:

* ``Mlp``: dense layers for numeric bit patterns and word vectors. The
  embedding role uses tanh at every layer including the output; the
  adjustment role uses ReLU hidden layers and a single squared output unit,
  which keeps the adjustment non-negative without clamping.
* ``CharLstm``: two stacked bidirectional LSTM layers over byte indices with
  a dense head on the concatenated final hidden states.

Gradients are exact and hand-derived; the test suite checks every path
against central finite differences. All arrays live in one dtype (float32 by
default, float64 for gradient checks), and every random draw comes from a
seeded generator in a fixed order, so identical seeds give identical
parameters bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgument

__all__ = [
    "Mlp",
    "embedding_mlp",
    "adjustment_mlp",
    "CharLstm",
    "Adam",
    "save_param_block",
    "load_param_block",
    "parse_descriptor",
    "network_from_descriptor",
]

HIDDEN_WIDTH = 300
LSTM_HIDDEN = 128
LSTM_LAYERS = 2


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# dense networks


class Mlp:
    """Fully connected network with per-layer activations.

    ``activations[i]`` applies to layer i's pre-activation; supported names
    are ``tanh``, ``relu``, and ``square``.
    """

    def __init__(self, weights, biases, activations):
        if not (len(weights) == len(biases) == len(activations)):
            raise InvalidArgument("layer lists must have equal length")
        for act in activations:
            if act not in ("tanh", "relu", "square"):
                raise InvalidArgument(f"unknown activation {act!r}")
        self.weights = list(weights)
        self.biases = list(biases)
        self.activations = tuple(activations)

    @classmethod
    def create(cls, input_dim, layer_dims, activations, seed, dtype=np.float32):
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        fan_in = input_dim
        for dim in layer_dims:
            weights.append(_glorot(rng, fan_in, dim, (fan_in, dim), dtype))
            biases.append(np.zeros(dim, dtype=dtype))
            fan_in = dim
        return cls(weights, biases, activations)

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def descriptor(self) -> str:
        dims = ",".join(str(w.shape[1]) for w in self.weights)
        acts = ",".join(self.activations)
        return f"mlp in={self.input_dim} dims={dims} act={acts}"

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x, want_cache: bool = False):
        """Map (batch, input_dim) to (batch, output_dim).

        With ``want_cache`` the returned cache holds everything backward()
        needs; without it only the output is produced.
        """

        a = np.asarray(x, dtype=self.dtype)
        cache = [] if want_cache else None
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            if act == "tanh":
                out = np.tanh(z)
            elif act == "relu":
                out = np.maximum(z, 0.0)
            else:
                out = z * z
            if want_cache:
                cache.append((a, z, out))
            a = out
        if want_cache:
            return a, cache
        return a

    def backward(self, cache, grad_out):
        """Backpropagate.

        Returns (param_grads, grad_input) where param_grads aligns with
        ``params()``.
        """

        gy = np.asarray(grad_out, dtype=self.dtype)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            x, z, out = cache[i]
            act = self.activations[i]
            if act == "tanh":
                gz = gy * (1.0 - out * out)
            elif act == "relu":
                gz = gy * (z > 0)
            else:
                gz = gy * (2.0 * z)
            grads_w[i] = x.T @ gz
            grads_b[i] = gz.sum(axis=0)
            gy = gz @ self.weights[i].T
        param_grads = []
        for gw, gb in zip(grads_w, grads_b):
            param_grads.append(gw)
            param_grads.append(gb)
        return param_grads, gy


def embedding_mlp(input_dim: int, seed: int, dtype=np.float32, width: int = HIDDEN_WIDTH) -> Mlp:
    """Dense embedding network: tanh at every layer including the output."""
    return Mlp.create(input_dim, (width, width, width), ("tanh", "tanh", "tanh"), seed, dtype)


def adjustment_mlp(input_dim: int, seed: int, dtype=np.float32, width: int = HIDDEN_WIDTH) -> Mlp:
    """Dense adjustment network: ReLU hidden layers, single squared output unit."""
    return Mlp.create(input_dim, (width, width, 1), ("relu", "relu", "square"), seed, dtype)


# ---------------------------------------------------------------------------
# recurrent network for general strings


class CharLstm:
    """Stacked bidirectional LSTM over byte indices with a dense head.

    Layer 0 consumes one-hot byte indices (realized as row gathers from its
    input weight matrix); layer 1 consumes the concatenated per-position
    outputs of both layer-0 directions. The readout is the concatenation of
    the final hidden state of every (layer, direction) pair, which for two
    128-unit layers is a 512-vector, fed to a single dense head layer.

    Gate packing order inside the stacked weight matrices is (input, forget,
    candidate, output); forget-gate biases start at 1.
    """

    def __init__(self, alphabet_size, wx, wh, b, head_w, head_b, head_act, hidden, n_layers):
        self.alphabet_size = int(alphabet_size)
        self.hidden = int(hidden)
        self.n_layers = int(n_layers)
        if head_act not in ("tanh", "square"):
            raise InvalidArgument(f"unsupported head activation {head_act!r}")
        self.head_act = head_act
        # indexed [layer][direction]; direction 0 reads left to right
        self.wx = wx
        self.wh = wh
        self.b = b
        self.head_w = head_w
        self.head_b = head_b

    @classmethod
    def create(cls, alphabet_size, head_out, head_act, seed, dtype=np.float32,
               hidden: int = LSTM_HIDDEN, n_layers: int = LSTM_LAYERS):
        rng = np.random.default_rng(seed)
        wx, wh, b = [], [], []
        in_dim = alphabet_size
        for _layer in range(n_layers):
            wx_l, wh_l, b_l = [], [], []
            for _direction in range(2):
                wx_l.append(_glorot(rng, in_dim, 4 * hidden, (in_dim, 4 * hidden), dtype))
                wh_l.append(_glorot(rng, hidden, 4 * hidden, (hidden, 4 * hidden), dtype))
                bias = np.zeros(4 * hidden, dtype=dtype)
                bias[hidden:2 * hidden] = 1.0
                b_l.append(bias)
            wx.append(wx_l)
            wh.append(wh_l)
            b.append(b_l)
            in_dim = 2 * hidden
        readout = n_layers * 2 * hidden
        head_w = _glorot(rng, readout, head_out, (readout, head_out), dtype)
        head_b = np.zeros(head_out, dtype=dtype)
        return cls(alphabet_size, wx, wh, b, head_w, head_b, head_act, hidden, n_layers)

    @property
    def dtype(self):
        return self.head_w.dtype

    @property
    def output_dim(self) -> int:
        return self.head_w.shape[1]

    def descriptor(self) -> str:
        return (f"lstm alpha={self.alphabet_size} hidden={self.hidden} "
                f"layers={self.n_layers} head={self.output_dim} headact={self.head_act}")

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in range(self.n_layers):
            for direction in range(2):
                out.extend((self.wx[layer][direction],
                            self.wh[layer][direction],
                            self.b[layer][direction]))
        out.append(self.head_w)
        out.append(self.head_b)
        return out

    # -- sequence plumbing

    @staticmethod
    def _pack(seqs, dtype):
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        if np.any(lengths == 0):
            raise InvalidArgument("cannot encode an empty sequence")
        n, t_max = len(seqs), int(lengths.max())
        idx = np.zeros((n, t_max), dtype=np.int64)
        for r, s in enumerate(seqs):
            idx[r, :len(s)] = s
        mask = (np.arange(t_max)[None, :] < lengths[:, None]).astype(dtype)
        return idx, lengths, mask

    @staticmethod
    def _reversal_gather(lengths, t_max):
        # involution: positions j < L map to L-1-j, padding maps to itself
        cols = np.arange(t_max)[None, :]
        g = np.where(cols < lengths[:, None], lengths[:, None] - 1 - cols, cols)
        return g

    def _run_direction(self, x, idx, mask, layer, direction, want_cache):
        """One masked pass over time. ``x`` is (B, T, in) for dense layers,
        None for layer 0 where ``idx`` supplies gather rows."""
        wx = self.wx[layer][direction]
        wh = self.wh[layer][direction]
        bias = self.b[layer][direction]
        hdim = self.hidden
        n, t_max = mask.shape
        # input contributions for every timestep at once; only the hidden
        # recurrence stays inside the loop
        if x is None:
            xproj = wx[idx.reshape(-1)].reshape(n, t_max, 4 * hdim)
        else:
            xproj = (x.reshape(n * t_max, -1) @ wx).reshape(n, t_max, 4 * hdim)
        h = np.zeros((n, hdim), dtype=self.dtype)
        c = np.zeros((n, hdim), dtype=self.dtype)
        outputs = np.zeros((n, t_max, hdim), dtype=self.dtype)
        steps = [] if want_cache else None
        for t in range(t_max):
            gates = xproj[:, t] + h @ wh + bias
            sif = _sigmoid(gates[:, :2 * hdim])
            gi = sif[:, :hdim]
            gf = sif[:, hdim:]
            gg = np.tanh(gates[:, 2 * hdim:3 * hdim])
            go = _sigmoid(gates[:, 3 * hdim:])
            c_new = gf * c + gi * gg
            tc = np.tanh(c_new)
            h_new = go * tc
            m = mask[:, t:t + 1]
            if want_cache:
                steps.append((h, c, gi, gf, gg, go, tc))
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            outputs[:, t] = h
        return h, outputs, steps

    def _backward_direction(self, x, idx, mask, layer, direction, steps, d_outputs, d_final,
                            grads, need_dx):
        """BPTT for one (layer, direction). Accumulates parameter grads into
        ``grads`` (dict keyed like params) and returns d_input (or None)."""
        wx = self.wx[layer][direction]
        wh = self.wh[layer][direction]
        hdim = self.hidden
        n, t_max = mask.shape
        dh = d_final.copy() if d_final is not None else np.zeros((n, hdim), dtype=self.dtype)
        dc = np.zeros((n, hdim), dtype=self.dtype)
        # gate gradients for all timesteps; weight gradients reduce to a few
        # large matmuls after the loop (padded steps contribute exact zeros)
        dgates_all = np.empty((n, t_max, 4 * hdim), dtype=self.dtype)
        for t in range(t_max - 1, -1, -1):
            if d_outputs is not None:
                dh = dh + d_outputs[:, t]
            h_prev, c_prev, gi, gf, gg, go, tc = steps[t]
            m = mask[:, t:t + 1]
            dh_cell = m * dh
            dc_cell = m * dc
            dh_skip = (1.0 - m) * dh
            dc_skip = (1.0 - m) * dc
            d_go = dh_cell * tc
            dc_total = dc_cell + dh_cell * go * (1.0 - tc * tc)
            dgates = dgates_all[:, t]
            dgates[:, :hdim] = (dc_total * gg) * gi * (1.0 - gi)
            dgates[:, hdim:2 * hdim] = (dc_total * c_prev) * gf * (1.0 - gf)
            dgates[:, 2 * hdim:3 * hdim] = (dc_total * gi) * (1.0 - gg * gg)
            dgates[:, 3 * hdim:] = (d_go) * go * (1.0 - go)
            dh = dh_skip + dgates @ wh.T
            dc = dc_skip + dc_total * gf
        flat = dgates_all.reshape(n * t_max, 4 * hdim)
        grads[(layer, direction, "b")] += flat.sum(axis=0)
        h_prev_all = np.stack([s[0] for s in steps], axis=1)
        grads[(layer, direction, "wh")] += h_prev_all.reshape(n * t_max, hdim).T @ flat
        if x is None:
            np.add.at(grads[(layer, direction, "wx")], idx.reshape(-1), flat)
            return None
        grads[(layer, direction, "wx")] += x.reshape(n * t_max, -1).T @ flat
        if not need_dx:
            return None
        return (flat @ wx.T).reshape(n, t_max, x.shape[2])

    def forward_batch(self, seqs, want_cache: bool = False):
        """Embed a batch of index sequences; returns (out, cache).

        ``cache`` is None unless requested. Sequences may have unequal
        lengths; each direction consumes exactly the valid prefix of its
        (possibly reversed) sequence.
        """

        idx, lengths, mask = self._pack(seqs, self.dtype)
        t_max = idx.shape[1]
        rev = self._reversal_gather(lengths, t_max)
        idx_rev = np.take_along_axis(idx, rev, axis=1)

        finals = []
        layer_caches = []
        x_fwd, x_rev = None, None  # layer 0 uses gathers
        cur_idx, cur_idx_rev = idx, idx_rev
        for layer in range(self.n_layers):
            hf, out_f, steps_f = self._run_direction(x_fwd, cur_idx, mask, layer, 0, want_cache)
            hb, out_b_rev, steps_b = self._run_direction(x_rev, cur_idx_rev, mask, layer, 1, want_cache)
            finals.extend((hf, hb))
            if want_cache:
                layer_caches.append((x_fwd, x_rev, steps_f, steps_b))
            if layer + 1 < self.n_layers:
                out_b = np.take_along_axis(out_b_rev, rev[:, :, None], axis=1)
                nxt = np.concatenate([out_f, out_b], axis=2)
                x_fwd = nxt
                x_rev = np.take_along_axis(nxt, rev[:, :, None], axis=1)
                cur_idx = cur_idx_rev = None
        readout = np.concatenate(finals, axis=1)
        z = readout @ self.head_w + self.head_b
        out = np.tanh(z) if self.head_act == "tanh" else z * z
        if not want_cache:
            return out, None
        cache = {
            "idx": idx, "idx_rev": idx_rev, "mask": mask, "rev": rev,
            "layers": layer_caches, "readout": readout, "z": z, "out": out,
        }
        return out, cache

    def backward_batch(self, cache, grad_out):
        """Backpropagate through the whole stack.

        Returns parameter gradients aligned with ``params()``.
        """

        idx, idx_rev = cache["idx"], cache["idx_rev"]
        mask, rev = cache["mask"], cache["rev"]
        hdim = self.hidden
        gy = np.asarray(grad_out, dtype=self.dtype)
        if self.head_act == "tanh":
            gz = gy * (1.0 - cache["out"] * cache["out"])
        else:
            gz = gy * (2.0 * cache["z"])
        g_head_w = cache["readout"].T @ gz
        g_head_b = gz.sum(axis=0)
        d_readout = gz @ self.head_w.T

        grads = {}
        for layer in range(self.n_layers):
            for direction in range(2):
                grads[(layer, direction, "wx")] = np.zeros_like(self.wx[layer][direction])
                grads[(layer, direction, "wh")] = np.zeros_like(self.wh[layer][direction])
                grads[(layer, direction, "b")] = np.zeros_like(self.b[layer][direction])

        d_final = {}
        for k in range(self.n_layers * 2):
            layer, direction = divmod(k, 2)
            d_final[(layer, direction)] = d_readout[:, k * hdim:(k + 1) * hdim]

        d_out_f = d_out_b = None  # per-position grads flowing into each layer's outputs
        for layer in range(self.n_layers - 1, -1, -1):
            x_fwd, x_rev, steps_f, steps_b = cache["layers"][layer]
            need_dx = layer > 0
            dxf = self._backward_direction(
                x_fwd, idx if layer == 0 else None, mask, layer, 0, steps_f,
                d_out_f, d_final[(layer, 0)], grads, need_dx)
            d_out_b_rev = None
            if d_out_b is not None:
                d_out_b_rev = np.take_along_axis(d_out_b, rev[:, :, None], axis=1)
            dxb_rev = self._backward_direction(
                x_rev, idx_rev if layer == 0 else None, mask, layer, 1, steps_b,
                d_out_b_rev, d_final[(layer, 1)], grads, need_dx)
            if need_dx:
                # dxf/dxb are grads w.r.t. this layer's inputs, i.e. the
                # concatenated outputs of the layer below
                dxb = np.take_along_axis(dxb_rev, rev[:, :, None], axis=1)
                d_in = dxf + dxb
                d_out_f = d_in[:, :, :hdim]
                d_out_b = d_in[:, :, hdim:]

        out = []
        for layer in range(self.n_layers):
            for direction in range(2):
                out.extend((grads[(layer, direction, "wx")],
                            grads[(layer, direction, "wh")],
                            grads[(layer, direction, "b")]))
        out.append(g_head_w)
        out.append(g_head_b)
        return out


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise InvalidArgument("parameter/gradient lists do not match optimizer state")
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / correct1
            v_hat = v / correct2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# parameter serialization (shared by checkpoints)


def save_param_block(fh, arrays) -> None:
    """Write arrays as little-endian float32 with explicit shapes."""
    fh.write(np.asarray(len(arrays), dtype="<u4").tobytes())
    for arr in arrays:
        shape = arr.shape
        fh.write(np.asarray(len(shape), dtype=np.uint8).tobytes())
        fh.write(np.asarray(shape, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_param_block(fh) -> list[np.ndarray]:
    """Read back a block written by :func:`save_param_block`."""
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("truncated parameter block header")
    count = int(np.frombuffer(raw, dtype="<u4")[0])
    arrays = []
    for _ in range(count):
        nd = fh.read(1)
        if len(nd) != 1:
            raise FormatError("truncated parameter block")
        ndim = int(np.frombuffer(nd, dtype=np.uint8)[0])
        shp = fh.read(4 * ndim)
        if len(shp) != 4 * ndim:
            raise FormatError("truncated parameter block")
        shape = tuple(int(x) for x in np.frombuffer(shp, dtype="<u4"))
        n_bytes = 4 * int(np.prod(shape)) if shape else 4
        data = fh.read(n_bytes)
        if len(data) != n_bytes:
            raise FormatError("truncated parameter block")
        arrays.append(np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32))
    return arrays


def _assign_params(net, arrays) -> None:
    own = net.params()
    if len(own) != len(arrays):
        raise FormatError(f"checkpoint holds {len(arrays)} arrays, network needs {len(own)}")
    for dst, src in zip(own, arrays):
        if dst.shape != src.shape:
            raise FormatError(f"checkpoint array shape {src.shape} != network shape {dst.shape}")
        dst[...] = src.astype(dst.dtype)


def parse_descriptor(text: str) -> dict:
    """Parse a network descriptor string into its fields."""
    parts = text.split()
    if not parts or parts[0] not in ("mlp", "lstm"):
        raise FormatError(f"unrecognized architecture descriptor {text!r}")
    fields = {"kind": parts[0]}
    for item in parts[1:]:
        if "=" not in item:
            raise FormatError(f"malformed descriptor field {item!r}")
        key, val = item.split("=", 1)
        fields[key] = val
    return fields


def network_from_descriptor(text: str, dtype=np.float32):
    """Instantiate an untrained network matching a descriptor string."""
    fields = parse_descriptor(text)
    try:
        if fields["kind"] == "mlp":
            dims = tuple(int(x) for x in fields["dims"].split(","))
            acts = tuple(fields["act"].split(","))
            return Mlp.create(int(fields["in"]), dims, acts, seed=0, dtype=dtype)
        return CharLstm.create(
            int(fields["alpha"]), int(fields["head"]), fields["headact"],
            seed=0, dtype=dtype, hidden=int(fields["hidden"]), n_layers=int(fields["layers"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad architecture descriptor {text!r}: {exc}") from None


def load_network(fh, descriptor: str, dtype=np.float32):
    """Reconstruct a network from a descriptor plus a parameter block."""
    net = network_from_descriptor(descriptor, dtype)
    _assign_params(net, load_param_block(fh))
    return net
