"""Tanh MLPs used as generators and discriminators."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Jet, StructuralError

MAGIC = b"APINN1"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture descriptor.

    ``widths`` lists the hidden layer widths; the output layer (width
    ``output_dim``) is implicit.
    """

    input_dim: int
    widths: tuple = (20, 20, 20)
    activation: str = "tanh"
    residual_links: bool = False
    spectral_norm: bool = False
    sigmoid_output: bool = False
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.input_dim < 1 or self.output_dim != 1:
            raise StructuralError("input_dim must be positive and output_dim must be 1")
        if not self.widths or any(w < 1 for w in self.widths):
            raise StructuralError(f"invalid widths {self.widths}")
        if self.activation != "tanh":
            raise StructuralError(f"unsupported activation {self.activation!r}")
        if self.residual_links and len(set(self.widths)) > 1:
            raise StructuralError("residual links need equal consecutive hidden widths")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim, *self.widths, self.output_dim]

    def layout(self) -> list[tuple[int, int, int]]:
        out, off = [], 0
        s = self.sizes
        for fi, fo in zip(s[:-1], s[1:]):
            out.append((off, fi, fo))
            off += (fi + 1) * fo
        return out

    def num_params(self) -> int:
        s = self.sizes
        return sum((fi + 1) * fo for fi, fo in zip(s[:-1], s[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


@dataclass
class ParamVector:
    values: np.ndarray
    layout: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.layout = [tuple(l) for l in self.layout]
        expected = sum((fi + 1) * fo for _, fi, fo in self.layout)
        if expected != self.values.size:
            raise StructuralError(f"parameter length {self.values.size} != layout size {expected}")

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        off, fi, fo = self.layout[i]
        W = self.values[off:off + fi * fo].reshape(fi, fo)
        b = self.values[off + fi * fo: off + (fi + 1) * fo]
        return W, b

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), list(self.layout))

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.asarray(values, dtype=np.float64), list(self.layout))

    def __len__(self):
        return self.values.size


def init(spec: NetworkSpec, seed: int) -> ParamVector:
    """Gaussian weights with variance 1/fan_in, zero biases."""
    rng = np.random.default_rng(seed)
    layout = spec.layout()
    vals = np.zeros(spec.num_params())
    for off, fi, fo in layout:
        vals[off:off + fi * fo] = rng.standard_normal(fi * fo) / np.sqrt(fi)
    return ParamVector(vals, layout)


def zeros(spec: NetworkSpec) -> ParamVector:
    return ParamVector(np.zeros(spec.num_params()), spec.layout())


# ---------------------------------------------------------------------------
# spectral normalisation

class SpectralState:
    """Persistent left/right singular-vector estimates, one pair per layer."""

    def __init__(self):
        self.vectors: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def copy(self) -> "SpectralState":
        s = SpectralState()
        s.vectors = {k: (u.copy(), v.copy()) for k, (u, v) in self.vectors.items()}
        return s

    def flat(self) -> np.ndarray:
        parts = []
        for k in sorted(self.vectors):
            parts.extend(self.vectors[k])
        return np.concatenate(parts) if parts else np.zeros(0)

    def load_flat(self, spec: NetworkSpec, flat: np.ndarray):
        self.vectors = {}
        if flat.size == 0:
            return
        off = 0
        for i, (_, fi, fo) in enumerate(spec.layout()):
            u = flat[off:off + fi].copy(); off += fi
            v = flat[off:off + fo].copy(); off += fo
            self.vectors[i] = (u, v)

    def refresh(self, params: ParamVector, iters: int = 1):
        for i in range(len(params.layout)):
            W, _ = params.layer(i)
            self._power(i, W, iters)

    def _power(self, key: int, W: np.ndarray, iters: int):
        fi, fo = W.shape
        if key in self.vectors:
            u, v = self.vectors[key]
        else:
            # deterministic start that is not orthogonal to typical top vectors
            v = np.ones(fo) / np.sqrt(fo)
            u = np.ones(fi) / np.sqrt(fi)
        for _ in range(iters):
            u_new = W @ v
            nu = np.linalg.norm(u_new)
            if nu == 0.0:
                break
            u = u_new / nu
            v_new = W.T @ u
            nv = np.linalg.norm(v_new)
            if nv == 0.0:
                break
            v = v_new / nv
        self.vectors[key] = (u, v)
        return u, v


def spectral_normalize(W: np.ndarray, iters: int = 1, state: SpectralState | None = None,
                       key: int = 0) -> np.ndarray:
    """Return W / sigma_hat with sigma_hat from power iteration (cache kept in ``state``)."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    W = np.asarray(W, dtype=np.float64)
    if not np.any(W):
        return np.zeros_like(W)
    state = state if state is not None else SpectralState()
    u, v = state._power(key, W, iters)
    sigma = float(u @ W @ v)
    if sigma == 0.0 or not np.isfinite(sigma):
        sigma = 1.0
    return W / sigma


# ---------------------------------------------------------------------------
# evaluation

def forward_jet(spec: NetworkSpec, params: ParamVector, x, leaves=None,
                sn: SpectralState | None = None):
    """Pre-output score as a Jet (or a tape Node when ``leaves`` come from ``Tape.watch``).

    ``x`` is a Jet or Node with ``input_dim`` channels.  When spectral
    normalisation is on, ``sn`` must hold singular-vector estimates; they are
    refined with 20 power iterations if missing.
    """
    nl = len(spec.layout())
    if spec.spectral_norm and (sn is None or len(sn.vectors) < nl):
        sn = sn if sn is not None else SpectralState()
        for i in range(nl):
            if i not in sn.vectors:
                sn._power(i, params.layer(i)[0], 20)
    h = x
    outs = []
    for i in range(nl):
        if leaves is not None:
            W, b = leaves[i]
        else:
            W, b = params.layer(i)
        if spec.spectral_norm:
            u, v = sn.vectors[i]
            W = dc.sn_weight(W, u, v)
        z = dc.linear(h, W, b)
        if i == nl - 1:
            h = z
        else:
            a = dc.tanh(z)
            h = dc.add(h, a) if spec.residual_links and i > 0 else a
        outs.append(h)
    if not np.isfinite(_data(h).sum()):
        # locate the first layer that produced a non-finite value
        for i, o in enumerate(outs):
            if not np.all(np.isfinite(_data(o))):
                raise dc.NumericalOverflowError(f"layer {i}")
    return h


def _data(h) -> np.ndarray:
    return (h.value if isinstance(h, dc.Node) else h).data


def score_and_grad(spec: NetworkSpec, params: ParamVector, x: np.ndarray, seed,
                   sn: SpectralState | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fused value-only pass: pre-output scores and sum_i seed_i * d score_i / d params.

    ``seed`` is an array or a callable mapping the scores to the seed.  Same
    arithmetic as the taped path for order-0 inputs, without recording; used
    in the inner discriminator loop.
    """
    lay = params.layout
    nl = len(lay)
    vals = params.values
    h = np.asarray(x, dtype=np.float64).reshape(-1, spec.input_dim)
    Ws, sig, uv, hs, acts = [], [], [], [], []
    for i, (off, fi, fo) in enumerate(lay):
        W = vals[off:off + fi * fo].reshape(fi, fo)
        b = vals[off + fi * fo: off + (fi + 1) * fo]
        if spec.spectral_norm:
            u, v = sn.vectors[i]
            s = float(u @ W @ v)
            if s == 0.0 or not np.isfinite(s):
                s = 1.0
            sig.append(s)
            uv.append((u, v))
            Weff = W / s
        else:
            Weff = W
        Ws.append((W, Weff))
        hs.append(h)
        z = (h * Weff if fi == 1 else h @ Weff) + b
        if i == nl - 1:
            h = z
            break
        a = np.tanh(z)
        acts.append(a)
        h = h + a if spec.residual_links and i > 0 else a
    out = h[:, 0]
    if not np.isfinite(out.sum()):
        raise dc.NumericalOverflowError(f"layer {nl - 1}")
    if callable(seed):
        seed = seed(out)
    grad = np.empty_like(vals)
    g = np.asarray(seed, dtype=np.float64).reshape(-1, 1)
    carry = None  # gradient reaching a layer input through its skip link
    for i in range(nl - 1, -1, -1):
        off, fi, fo = lay[i]
        W, Weff = Ws[i]
        gWeff = (hs[i] * g).sum(0, keepdims=True) if fi == 1 else hs[i].T @ g
        if spec.spectral_norm:
            u, v = uv[i]
            s = sig[i]
            gW = gWeff / s - (np.sum(gWeff * W) / (s * s)) * np.outer(u, v)
        else:
            gW = gWeff
        grad[off:off + fi * fo] = gW.ravel()
        grad[off + fi * fo: off + (fi + 1) * fo] = g.sum(0)
        if i == 0:
            break
        gh = g @ Weff.T
        if carry is not None:
            gh = gh + carry
        a = acts[i - 1]
        g = gh * (1.0 - a * a)
        carry = gh if spec.residual_links and i - 1 > 0 else None
    return out, grad


def forward(spec: NetworkSpec, params: ParamVector, x, raw: bool = False,
            sn: SpectralState | None = None) -> np.ndarray:
    """Plain evaluation on points ``x`` of shape (N, input_dim) (or a single point).

    Returns a length-N array.  ``raw`` skips the output sigmoid.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1 and spec.input_dim == x.size
    X = x.reshape(-1, spec.input_dim)
    out = forward_jet(spec, params, Jet.constant(X), sn=sn).data[0, :, 0]
    if spec.sigmoid_output and not raw:
        out = 0.5 * (1.0 + np.tanh(0.5 * out))
    return out[0] if single else out


def forward_dual(spec: NetworkSpec, params: ParamVector, x, raw: bool = False,
                 sn: SpectralState | None = None) -> dc.DualJet:
    """Value plus first and pure second input derivatives at one point."""

    def fn(xj):
        z = forward_jet(spec, params, xj, sn=sn)
        return dc.sigmoid(z) if spec.sigmoid_output and not raw else z

    return dc.eval_with_input_derivs(fn, x)


# ---------------------------------------------------------------------------
# checkpoints: MAGIC | u32 header length | JSON header | float64 sections

def save_checkpoint(path, header: dict, sections: dict[str, np.ndarray]):
    names = list(sections)
    hdr = dict(header)
    hdr["sections"] = [[n, int(np.asarray(sections[n]).size)] for n in names]
    blob = json.dumps(hdr, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.asarray(sections[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise StructuralError("not an APINN1 checkpoint")
    (hl,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    p = len(MAGIC) + 4
    header = json.loads(raw[p:p + hl].decode())
    p += hl
    sections = {}
    for name, n in header["sections"]:
        sections[name] = np.frombuffer(raw[p:p + 8 * n], dtype="<f8").astype(np.float64)
        p += 8 * n
    if p != len(raw):
        raise StructuralError("checkpoint length mismatch")
    return header, sections


def check_layout(params: ParamVector, spec: NetworkSpec):
    if [tuple(l) for l in params.layout] != spec.layout():
        raise StructuralError("parameter layout does not match network spec")


def as_spec(obj: NetworkSpec | dict | Sequence) -> NetworkSpec:
    return obj if isinstance(obj, NetworkSpec) else NetworkSpec.from_dict(dict(obj))
