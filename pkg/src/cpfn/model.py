"""The conditional push-forward network and its on-disk format.

A CPFN combines two feedforward submodules,

    phi: R^d -> R^{r x q}      (covariate branch, identity output)
    psi: R^q -> R^{r x q}      (latent branch, gelu output)

into ``out_j(x, u) = sum_i phi_ij(x) * psi_ij(u)``.  Each submodule emits a
flat vector of length ``r*q`` read in row-major order, i.e. flat index
``i*q + j`` holds rank ``i`` and response coordinate ``j``.

Every trainable quantity, including the log-bandwidth, lives in one flat
:class:`~cpfn.autodiff.ParameterVector` so the optimizer sees a single array.
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterVector
from .errors import CorruptModel, DimensionMismatch, InvalidConfig
from .kernels import Bandwidth, KernelSpec

SCHEMA_VERSION = 1
LATENTS = ("standard_normal", "uniform01")
_LATENT_ALIASES = {"normal": "standard_normal", "gaussian": "standard_normal",
                   "uniform": "uniform01"}
ACTIVATIONS = ("identity", "gelu")
TRANSFORMS = ("identity", "log1p")


def canonical_latent(name: str) -> str:
    name = _LATENT_ALIASES.get(name, name)
    if name not in LATENTS:
        raise InvalidConfig(f"unknown latent law {name!r}; expected one of {LATENTS}")
    return name


def draw_latent(latent: str, rng: np.random.Generator, shape) -> np.ndarray:
    if latent == "standard_normal":
        return rng.standard_normal(shape)
    return rng.random(shape)


@dataclass(frozen=True)
class NetworkArchitecture:
    in_dim: int
    out_dim: int
    hidden_widths: tuple = (50, 50, 50)
    hidden_activation: str = "gelu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.in_dim < 1 or self.out_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise InvalidConfig("network dimensions must be positive")
        if self.hidden_activation != "gelu" or self.output_activation not in ACTIVATIONS:
            raise InvalidConfig("unsupported activation")

    @property
    def sizes(self):
        return (self.in_dim, *self.hidden_widths, self.out_dim)

    def layer_shapes(self, prefix):
        s = self.sizes
        shapes = []
        for k in range(len(s) - 1):
            shapes.append((f"{prefix}.W{k}", (s[k + 1], s[k])))
            shapes.append((f"{prefix}.b{k}", (s[k + 1],)))
        return shapes

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum(s[k] * s[k + 1] + s[k + 1] for k in range(len(s) - 1))

    def to_dict(self):
        return {"in_dim": self.in_dim, "out_dim": self.out_dim,
                "hidden_widths": list(self.hidden_widths),
                "hidden_activation": self.hidden_activation,
                "output_activation": self.output_activation}


@dataclass
class Standardization:
    """Per-column affine map z -> (z - mean) / std."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape:
            raise DimensionMismatch("mean and std lengths differ")
        if np.any(self.std <= 0):
            raise InvalidConfig("standardization std must be positive")

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def apply(self, z):
        return (np.asarray(z, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def __eq__(self, other):
        return (isinstance(other, Standardization) and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.std, other.std))


@dataclass(eq=False)
class CPFNModel:
    phi_arch: NetworkArchitecture
    psi_arch: NetworkArchitecture
    params: ParameterVector
    rank: int
    d: int
    q: int
    kernel: KernelSpec
    latent: str = "standard_normal"
    x_stats: Standardization = None
    y_stats: Standardization = None
    y_transform: str = "identity"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.latent = canonical_latent(self.latent)
        if self.x_stats is None:
            self.x_stats = Standardization.identity(self.d)
        if self.y_stats is None:
            self.y_stats = Standardization.identity(self.q)
        if self.y_transform not in TRANSFORMS:
            raise InvalidConfig(f"unknown response transform {self.y_transform!r}")
        r, d, q = self.rank, self.d, self.q
        if (self.phi_arch.in_dim, self.phi_arch.out_dim) != (d, r * q):
            raise DimensionMismatch("phi architecture does not map R^d -> R^(r*q)")
        if (self.psi_arch.in_dim, self.psi_arch.out_dim) != (q, r * q):
            raise DimensionMismatch("psi architecture does not map R^q -> R^(r*q)")
        if self.x_stats.mean.size != d or self.y_stats.mean.size != q:
            raise DimensionMismatch("standardization stats do not match (d, q)")
        if self.kernel.dim != q:
            raise DimensionMismatch("kernel dimension must equal q")

    # -- convenience -------------------------------------------------------
    @property
    def log_eps(self) -> np.ndarray:
        return self.params["log_eps"].copy()

    def bandwidth(self) -> np.ndarray:
        return np.exp(self.params["log_eps"])

    @property
    def bandwidth_spec(self) -> Bandwidth:
        return Bandwidth(tuple(self.params["log_eps"].tolist()))

    @property
    def n_network_params(self) -> int:
        return self.phi_arch.n_params + self.psi_arch.n_params

    def with_params(self, values) -> "CPFNModel":
        return CPFNModel(self.phi_arch, self.psi_arch, self.params.with_values(values), self.rank,
                         self.d, self.q, self.kernel, self.latent, self.x_stats, self.y_stats,
                         self.y_transform, dict(self.metadata))

    def replace(self, **changes) -> "CPFNModel":
        fields = dict(phi_arch=self.phi_arch, psi_arch=self.psi_arch, params=self.params.copy(),
                      rank=self.rank, d=self.d, q=self.q, kernel=self.kernel, latent=self.latent,
                      x_stats=self.x_stats, y_stats=self.y_stats, y_transform=self.y_transform,
                      metadata=dict(self.metadata))
        fields.update(changes)
        return CPFNModel(**fields)

    def __eq__(self, other):
        if not isinstance(other, CPFNModel):
            return NotImplemented
        return (self.phi_arch == other.phi_arch and self.psi_arch == other.psi_arch
                and self.params == other.params and self.rank == other.rank
                and self.d == other.d and self.q == other.q and self.kernel == other.kernel
                and self.latent == other.latent and self.x_stats == other.x_stats
                and self.y_stats == other.y_stats and self.y_transform == other.y_transform
                and self.metadata == other.metadata)


def _glorot(rng, shape):
    fan_out, fan_in = shape
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(d, q, r=20, hidden_widths=(50, 50, 50), latent="standard_normal",
               kernel="gaussian", eps0=0.05, seed=0) -> CPFNModel:
    """Fresh CPFN with Glorot-uniform weights, zero biases and log(eps0) bandwidth."""
    if min(int(d), int(q), int(r)) < 1:
        raise InvalidConfig("d, q and r must be positive")
    eps0 = np.atleast_1d(np.asarray(eps0, dtype=np.float64))
    if eps0.size not in (1, q) or np.any(~(eps0 > 0)) or np.any(~np.isfinite(eps0)):
        raise InvalidConfig("eps0 must be positive, scalar or of length q")
    if isinstance(kernel, str):
        kernel = KernelSpec(kernel, q)
    phi = NetworkArchitecture(d, r * q, tuple(hidden_widths), "gelu", "identity")
    psi = NetworkArchitecture(q, r * q, tuple(hidden_widths), "gelu", "gelu")
    params = ParameterVector.from_shapes(phi.layer_shapes("phi") + psi.layer_shapes("psi")
                                         + [("log_eps", (q,))])
    rng = np.random.default_rng(seed)
    for name, shape in phi.layer_shapes("phi") + psi.layer_shapes("psi"):
        if len(shape) == 2:
            params[name][...] = _glorot(rng, shape)
    params["log_eps"][...] = np.log(np.broadcast_to(eps0, (q,)))
    return CPFNModel(phi, psi, params, int(r), int(d), int(q), kernel, canonical_latent(latent))


def _weights(arch, prefix, seg):
    n = len(arch.sizes) - 1
    return [(seg[f"{prefix}.W{k}"], seg[f"{prefix}.b{k}"]) for k in range(n)]


def mlp_forward(arch: NetworkArchitecture, weights, inputs):
    """Feedforward pass; ``weights`` is a list of (W, b) pairs, W of shape (out, in).

    Works on numpy arrays or autodiff ``Var`` objects.  ``inputs`` may be a
    single vector or a batch of row vectors.
    """
    single = np.ndim(ad._val(inputs)) == 1
    h = inputs.reshape(1, -1) if single else inputs
    if np.ndim(ad._val(h)) != 2:
        raise DimensionMismatch("network input must be a vector or a batch of row vectors")
    if np.shape(ad._val(h))[-1] != arch.in_dim:
        raise DimensionMismatch(f"network expects {arch.in_dim} inputs, got {np.shape(ad._val(h))[-1]}")
    last = len(weights) - 1
    for k, (W, b) in enumerate(weights):
        h = ad.affine(h, W, b)
        act = arch.hidden_activation if k < last else arch.output_activation
        if act == "gelu":
            h = ad.gelu(h)
    return h.reshape(-1) if single else h


def push_forward(model: CPFNModel, xs, us, flat=None):
    """phi(x)*psi(u) summed over rank, in standardized coordinates.

    ``xs`` has shape (n, d).  ``us`` has shape (n, q) for one draw per row,
    (n, R, q) for R draws per row or (1, R, q) for R draws shared by all rows; the result has the matching shape with a
    trailing axis of length q.  ``flat`` substitutes a ``Var`` (or array)
    for the stored parameter values.
    """
    seg = model.params.unflatten(model.params.values if flat is None else flat)
    r, q = model.rank, model.q
    n = np.shape(ad._val(xs))[0]
    ushape = np.shape(ad._val(us))
    phi = mlp_forward(model.phi_arch, _weights(model.phi_arch, "phi", seg), xs)
    psi = mlp_forward(model.psi_arch, _weights(model.psi_arch, "psi", seg), us.reshape(-1, q))
    if len(ushape) == 3:
        # a leading axis of 1 shares the same R draws across all rows
        R = ushape[1]
        if ushape[0] == 1 and n > 1:
            return ad.rank_contract(phi.reshape(n, r, q), psi.reshape(R, r, q))
        prod = phi.reshape(n, 1, r, q) * psi.reshape(n, R, r, q)
    else:
        prod = phi.reshape(n, r, q) * psi.reshape(n, r, q)
    return prod.sum(axis=-2)


def push_forward_shared(model: CPFNModel, xs, us):
    """Outputs for every (x, u) pair when the latent draws are shared.

    ``xs`` (k, d) and ``us`` (R, q) give a (k, R, q) array.  numpy only.
    """
    seg = model.params.unflatten(model.params.values)
    r, q = model.rank, model.q
    phi = mlp_forward(model.phi_arch, _weights(model.phi_arch, "phi", seg), xs).reshape(-1, r, q)
    psi = mlp_forward(model.psi_arch, _weights(model.psi_arch, "psi", seg), us).reshape(-1, r, q)
    return ad.rank_contract(phi, psi)


def cpfn_forward(model: CPFNModel, x, u):
    """phi_theta(x, u) for standardized inputs; vectors or row batches."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.shape[-1] != model.d or u.shape[-1] != model.q:
        raise DimensionMismatch(f"expected x in R^{model.d} and u in R^{model.q}")
    single = x.ndim == 1 and u.ndim == 1
    xs, us = np.atleast_2d(x), np.atleast_2d(u)
    if xs.shape[0] == 1 and us.shape[0] > 1:
        xs = np.repeat(xs, us.shape[0], axis=0)
    elif us.shape[0] == 1 and xs.shape[0] > 1:
        us = np.repeat(us, xs.shape[0], axis=0)
    if xs.shape[0] != us.shape[0]:
        raise DimensionMismatch("x and u batches have different lengths")
    out = push_forward(model, xs, us)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _enc(a) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _dec(s, n=None) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(s.encode("ascii"), validate=True), dtype="<f8").astype(np.float64)
    if n is not None and arr.size != n:
        raise CorruptModel(f"array length {arr.size} != expected {n}")
    return arr


def _checksum(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def model_to_dict(model: CPFNModel) -> dict:
    doc = {
        "format": "cpfn-model",
        "schema_version": SCHEMA_VERSION,
        "d": model.d, "q": model.q, "rank": model.rank,
        "latent": model.latent,
        "kernel": {"family": model.kernel.family, "dim": model.kernel.dim},
        "phi_arch": model.phi_arch.to_dict(),
        "psi_arch": model.psi_arch.to_dict(),
        "layout": [[s.name, s.offset, list(s.shape)] for s in model.params.layout],
        "params": _enc(model.params.values),
        "x_stats": {"mean": _enc(model.x_stats.mean), "std": _enc(model.x_stats.std)},
        "y_stats": {"mean": _enc(model.y_stats.mean), "std": _enc(model.y_stats.std)},
        "y_transform": model.y_transform,
        "metadata": model.metadata,
    }
    doc["checksum"] = _checksum(doc)
    return doc


def serialize_model(model: CPFNModel) -> bytes:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=1).encode("utf-8")


def deserialize_model(blob: bytes) -> CPFNModel:
    try:
        doc = json.loads(blob.decode("utf-8") if isinstance(blob, (bytes, bytearray)) else blob)
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"model stream is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != "cpfn-model":
        raise CorruptModel("not a cpfn-model document")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise CorruptModel(f"unsupported schema version {doc.get('schema_version')!r}")
    if doc.get("checksum") != _checksum(doc):
        raise CorruptModel("checksum mismatch")
    try:
        layout = tuple((name, off, tuple(shape)) for name, off, shape in doc["layout"])
        total = sum(int(np.prod(s)) for _, _, s in layout)
        params = ParameterVector(_dec(doc["params"], total), layout)
        d, q = int(doc["d"]), int(doc["q"])
        return CPFNModel(
            phi_arch=NetworkArchitecture(**doc["phi_arch"]),
            psi_arch=NetworkArchitecture(**doc["psi_arch"]),
            params=params, rank=int(doc["rank"]), d=d, q=q,
            kernel=KernelSpec(doc["kernel"]["family"], int(doc["kernel"]["dim"])),
            latent=doc["latent"],
            x_stats=Standardization(_dec(doc["x_stats"]["mean"], d), _dec(doc["x_stats"]["std"], d)),
            y_stats=Standardization(_dec(doc["y_stats"]["mean"], q), _dec(doc["y_stats"]["std"], q)),
            y_transform=doc["y_transform"],
            metadata=doc.get("metadata", {}),
        )
    except CorruptModel:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"malformed model document: {exc}") from None


def save_model(model: CPFNModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> CPFNModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
