"""Small feed-forward network machinery in float64 numpy.

Layers cache what they need during a training-mode forward pass and
accumulate parameter gradients in :meth:`backward`. There is no autograd
graph: a network is a fixed sequence of layers and residual blocks.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from ._rng import substream
from .errors import DataError, NumericError

CHECKPOINT_VERSION = 1


class Param:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class Linear:
    """Affine map; ``bias=False`` when a batch-norm follows (its shift makes a bias redundant)."""

    def __init__(self, n_in, n_out, rng, name, init_scale=1.0, bias=True):
        std = init_scale * np.sqrt(2.0 / n_in)
        self.weight = Param(f"{name}.weight", rng.normal(0.0, std, (n_in, n_out)))
        self.bias = Param(f"{name}.bias", np.zeros(n_out)) if bias else None
        self._x = None

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def forward(self, x, train, rng, update_running):
        if train:
            self._x = x
        y = x @ self.weight.value
        return y if self.bias is None else y + self.bias.value

    def backward(self, dy):
        if self._x is None:
            raise RuntimeError("backward called without a training-mode forward pass")
        self.weight.grad += self._x.T @ dy
        if self.bias is not None:
            self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value.T


class BatchNorm:
    def __init__(self, dim, name, momentum=0.1, eps=1e-5):
        self.gamma = Param(f"{name}.gamma", np.ones(dim))
        self.beta = Param(f"{name}.beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self._cache = None
        self._collect = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def forward(self, x, train, rng, update_running):
        if not train:
            if self._collect is not None:
                d = x - self.running_mean
                self._collect[0] += len(x)
                self._collect[1] += d.sum(axis=0)
                self._collect[2] += (d * d).sum(axis=0)
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
            return self.gamma.value * xhat + self.beta.value
        n = x.shape[0]
        mean = x.mean(axis=0)
        xc = x - mean
        var = (xc * xc).mean(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        if update_running:
            m = self.momentum
            self.running_mean *= 1 - m
            self.running_mean += m * mean
            self.running_var *= 1 - m
            self.running_var += m * var * n / (n - 1)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("backward called without a training-mode forward pass")
        xhat, inv = self._cache
        self.gamma.grad += (dy * xhat).sum(axis=0)
        self.beta.grad += dy.sum(axis=0)
        dxhat = dy * self.gamma.value
        return inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))


class ReLU:
    def __init__(self):
        self.mask = None

    def params(self):
        return []

    def forward(self, x, train, rng, update_running):
        mask = x > 0
        if train:
            self.mask = mask
        return x * mask

    def backward(self, dy):
        return dy * self.mask


class Dropout:
    """Inverted dropout: kept units are scaled by 1 / (1 - rate) at training time."""

    def __init__(self, rate):
        self.rate = rate
        self._mask = None

    def params(self):
        return []

    def forward(self, x, train, rng, update_running):
        if not train or self.rate == 0:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, train, rng, update_running):
        for layer in self.layers:
            x = layer.forward(x, train, rng, update_running)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Residual(Sequential):
    """``x + body(x)``; the body must preserve width."""

    def forward(self, x, train, rng, update_running):
        return x + super().forward(x, train, rng, update_running)

    def backward(self, dy):
        return dy + super().backward(dy)


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 68
    hidden: int = 256
    n_blocks: int = 2
    stages_per_block: int = 2
    dropout: float = 0.2
    output_dim: int = 5
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    output_init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.hidden, self.output_dim) < 1:
            raise ValueError("layer widths must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    def layer_specs(self):
        """Ordered description of every layer, residual boundaries included."""
        def stage(n_in, n_out):
            return [{"type": "linear", "in": n_in, "out": n_out, "bias": False},
                    {"type": "batchnorm", "dim": n_out},
                    {"type": "relu"}, {"type": "dropout", "rate": self.dropout}]
        out = stage(self.input_dim, self.hidden)
        for _ in range(self.n_blocks):
            body = []
            for _ in range(self.stages_per_block):
                body += stage(self.hidden, self.hidden)
            out.append({"type": "residual", "body": body})
        out.append({"type": "linear", "in": self.hidden, "out": self.output_dim})
        return out


def _build(specs, spec, rng, prefix, counter):
    layers = []
    for ls in specs:
        kind = ls["type"]
        if kind == "linear":
            counter[0] += 1
            last = ls is specs[-1] and prefix == ""
            layers.append(Linear(ls["in"], ls["out"], rng, f"{prefix}linear{counter[0]}",
                                 init_scale=spec.output_init_scale if last else 1.0,
                                 bias=ls.get("bias", True)))
        elif kind == "batchnorm":
            layers.append(BatchNorm(ls["dim"], f"{prefix}bn{counter[0]}", spec.bn_momentum, spec.bn_eps))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "dropout":
            layers.append(Dropout(ls["rate"]))
        elif kind == "residual":
            counter[1] += 1
            layers.append(Residual(_build(ls["body"], spec, rng, f"block{counter[1]}.", counter)))
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    return layers


class Network:
    """Input -> [Linear, BN, ReLU, Dropout] -> residual blocks -> Linear."""

    def __init__(self, spec=NetworkSpec()):
        self.spec = spec
        rng = substream(spec.seed, "init")
        self.body = Sequential(_build(spec.layer_specs(), spec, rng, "", [0, 0]))
        self.dropout_rng = substream(spec.seed, "dropout")
        self._trained_forward = False

    def params(self):
        return self.body.params()

    def named_params(self):
        return {p.name: p for p in self.params()}

    def batchnorms(self):
        found = []

        def walk(layers):
            for layer in layers:
                if isinstance(layer, BatchNorm):
                    found.append(layer)
                elif isinstance(layer, Sequential):
                    walk(layer.layers)
        walk(self.body.layers)
        return found

    def relus(self):
        found = []

        def walk(layers):
            for layer in layers:
                if isinstance(layer, ReLU):
                    found.append(layer)
                elif isinstance(layer, Sequential):
                    walk(layer.layers)
        walk(self.body.layers)
        return found

    def forward(self, x, mode="eval", rng=None, update_running=True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise DataError(f"expected input of shape (B, {self.spec.input_dim}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network input")
        train = mode == "train"
        if not train and mode != "eval":
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if train and x.shape[0] < 2:
            raise DataError("training-mode forward needs at least 2 samples for batch statistics")
        out = self.body.forward(x, train, rng if rng is not None else self.dropout_rng, update_running)
        self._trained_forward = train
        return out

    def recalibrate_batchnorm(self, features, chunk=8192):
        """Replace running statistics by exact population statistics with dropout off.

        Dropout sits upstream of every inner batch norm, so statistics gathered
        during training include the dropout noise, which is absent at
        inference. The mismatch shifts eval-mode outputs systematically. Each
        layer is refit in order, downstream of the already refitted ones.
        """
        x = np.asarray(features, dtype=np.float64)
        if len(x) < 2:
            raise DataError("batch-norm recalibration needs at least 2 samples")
        for bn in self.batchnorms():
            bn._collect = [0, np.zeros_like(bn.running_mean), np.zeros_like(bn.running_var)]
            try:
                for i in range(0, len(x), chunk):
                    self.forward(x[i:i + chunk], "eval")
                n, s1, s2 = bn._collect
            finally:
                bn._collect = None
            shift = s1 / n
            bn.running_var[:] = np.maximum(s2 / n - shift * shift, 0.0) * n / (n - 1)
            bn.running_mean += shift

    def zero_grad(self):
        for p in self.params():
            p.grad.fill(0.0)

    def backward(self, grad_out):
        """Parameter gradients for upstream ``grad_out``; previous gradients are cleared."""
        if not self._trained_forward:
            raise RuntimeError("backward needs a preceding training-mode forward pass")
        self.zero_grad()
        self.body.backward(np.asarray(grad_out, dtype=np.float64))
        return {p.name: p.grad for p in self.params()}

    def state_arrays(self):
        arrays = {p.name: p.value for p in self.params()}
        for bn in self.batchnorms():
            arrays.update(bn.buffers())
        return arrays

    def load_state_arrays(self, arrays):
        for p in self.params():
            p.value[...] = arrays[p.name]
        for bn in self.batchnorms():
            bn.running_mean[...] = arrays[f"{bn.name}.running_mean"]
            bn.running_var[...] = arrays[f"{bn.name}.running_var"]


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip_norm=None):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def clip_scale(self):
        """Factor applied to all gradients by global-norm clipping."""
        if self.clip_norm is None:
            return 1.0
        total = np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params))
        return min(1.0, self.clip_norm / total) if total > 0 else 1.0

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {p.name}")
        scale = self.clip_scale()
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad * scale
            m, v = self.m[p.name], self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays, t):
        for k in self.m:
            self.m[k][...] = arrays[f"adam.m.{k}"]
            self.v[k][...] = arrays[f"adam.v.{k}"]
        self.t = t


# -- gradient checking --------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    n_checked: int
    n_kink_retries: int

    def passed(self, tol=1e-4):
        return self.max_rel_error < tol


def _kink_signature(network, extra):
    sig = [r.mask for r in network.relus()]
    if extra is not None:
        sig.append(np.asarray(extra))
    return sig


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(network, x, objective, step=1e-5, dropout_seed=0, max_per_param=None,
              sample_seed=0, floor=1e-6, max_shrink=4):
    """Compare backprop gradients with central finite differences.

    ``objective(raw) -> (loss, dloss_draw, kinks)`` where ``kinks`` is any
    array whose change signals that a non-differentiable point of the loss
    was crossed (``None`` if the loss is smooth). Dropout masks are frozen by
    reseeding before every forward pass and batch-norm running statistics are
    left untouched. When a perturbation flips a ReLU or loss kink, the step
    is shrunk by 10x (up to ``max_shrink`` times) so the difference quotient
    stays on one linear piece.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    def run():
        raw = network.forward(x, "train", rng=np.random.default_rng(dropout_seed), update_running=False)
        loss, draw, kinks = objective(raw)
        return loss, draw, _kink_signature(network, kinks)

    _, draw, base_sig = run()
    network.backward(draw)
    analytic = {p.name: p.grad.copy() for p in network.params()}
    picker = np.random.default_rng(sample_seed)
    worst, worst_name, n_checked, retries = 0.0, "", 0, 0
    for p in network.params():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(picker.choice(flat.size, max_per_param, replace=False))
        for i in idx:
            orig = flat[i]
            h = step
            for attempt in range(max_shrink + 1):
                flat[i] = orig + h
                lp, _, sig_p = run()
                flat[i] = orig - h
                lm, _, sig_m = run()
                flat[i] = orig
                if _same(sig_p, base_sig) and _same(sig_m, base_sig):
                    break
                retries += 1
                h /= 10.0
            numeric = (lp - lm) / (2 * h)
            a = analytic[p.name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            n_checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{p.name}[{i}]"
    network.backward(draw)
    return GradCheckResult(float(worst), worst_name, n_checked, retries)


# -- checkpoints --------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, network, meta=None, optimizer=None):
    """Write a versioned zip container: ``meta.json`` plus one ``.npy`` per array.

    Entry timestamps are fixed, so identical state gives identical bytes.
    """
    arrays = dict(network.state_arrays())
    payload = {"version": CHECKPOINT_VERSION, "network_spec": asdict(network.spec),
               "meta": meta or {}}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        payload["optimizer"] = {"t": optimizer.t, "lr": optimizer.lr, "clip_norm": optimizer.clip_norm}
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(payload, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _zip_write(zf, f"arrays/{name}.npy", buf.getvalue())


def load_checkpoint(path):
    """Return ``(network, payload)``; optimizer moments, if stored, are in ``payload['arrays']``."""
    with zipfile.ZipFile(path) as zf:
        payload = json.loads(zf.read("meta.json"))
        if payload.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {payload.get('version')}")
        arrays = {}
        for name in zf.namelist():
            if name.startswith("arrays/"):
                arrays[name[len("arrays/"):-len(".npy")]] = np.lib.format.read_array(
                    io.BytesIO(zf.read(name)), allow_pickle=False)
    network = Network(NetworkSpec(**payload["network_spec"]))
    network.load_state_arrays(arrays)
    payload["arrays"] = arrays
    return network, payload
