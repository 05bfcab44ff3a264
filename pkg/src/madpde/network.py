"""Latent-conditioned fully connected decoder with sine activations.

The decoder maps (spatial point, latent code) to a solution value.  A
periodic embedding can replace one coordinate by its (sin, cos) pair,
which makes periodicity of the output a hard constraint.  The
insert-latent variant narrows one hidden layer by the latent size and
feeds the code in a second time at that depth.

Two evaluation paths exist and must agree bit-exactly on values:
``forward`` is plain numpy for cheap evaluation on grids, while
``forward_with_jets`` runs on a tape and additionally carries first and
diagonal second derivatives with respect to the spatial input.  The
latent code always enters with zero input-jets: solutions are
differentiated in space, never in the code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .graph import Jet2, Node, Tape, jet_arith

Array = np.ndarray


class NetworkError(Exception):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    spatial_dim: int
    latent_dim: int
    depth: int = 7
    width: int = 128
    output_dim: int = 1
    activation: str = "sine"
    omega0: float = 1.0
    insert_latent_at: int | None = None
    periodic_embedding: tuple[int, float] | None = None

    def __post_init__(self):
        if self.depth < 2:
            raise NetworkError("depth must be >= 2")
        if self.width < 1:
            raise NetworkError("width must be >= 1")
        if self.latent_dim < 0:
            raise NetworkError("latent_dim must be >= 0")
        if self.spatial_dim < 1:
            raise NetworkError("spatial_dim must be >= 1")
        if self.activation != "sine":
            raise NetworkError(f"unsupported activation {self.activation!r}")
        if self.insert_latent_at is not None:
            if not 1 <= self.insert_latent_at <= self.depth - 2:
                raise NetworkError("insert_latent_at must lie in [1, depth-2]")
            if self.latent_dim >= self.width:
                raise NetworkError("insert-latent variant needs width > latent_dim")
        if self.periodic_embedding is not None:
            coord, period = self.periodic_embedding
            if not 0 <= coord < self.spatial_dim:
                raise NetworkError("periodic_embedding coordinate out of range")
            if period <= 0:
                raise NetworkError("periodic_embedding period must be positive")

    @property
    def embedded_dim(self) -> int:
        return self.spatial_dim + (1 if self.periodic_embedding is not None else 0)

    @property
    def affine_count(self) -> int:
        """depth counts neuron layers (input, hidden, output), so a
        depth-2 network is a single affine map with no activation."""
        return self.depth - 1

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per affine map; fan_in counts the latent
        features the map consumes."""
        dims = []
        for l in range(1, self.affine_count + 1):
            if l == 1:
                fin = self.embedded_dim + self.latent_dim
            else:
                fin = self.width
            if l == self.affine_count:
                fout = self.output_dim
            elif l == self.insert_latent_at:
                fout = self.width - self.latent_dim
            else:
                fout = self.width
            dims.append((fin, fout))
        return dims

    def to_dict(self) -> dict:
        return {
            "spatial_dim": self.spatial_dim,
            "latent_dim": self.latent_dim,
            "depth": self.depth,
            "width": self.width,
            "output_dim": self.output_dim,
            "activation": self.activation,
            "omega0": self.omega0,
            "insert_latent_at": self.insert_latent_at,
            "periodic_embedding": list(self.periodic_embedding)
            if self.periodic_embedding is not None
            else None,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        d = dict(d)
        pe = d.get("periodic_embedding")
        if pe is not None:
            d["periodic_embedding"] = (int(pe[0]), float(pe[1]))
        return NetworkConfig(**d)

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.blake2b(payload.encode(), digest_size=8).hexdigest()


@dataclass
class NetworkWeights:
    config: NetworkConfig
    matrices: list[Array]
    biases: list[Array]

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            self.config,
            [m.copy() for m in self.matrices],
            [b.copy() for b in self.biases],
        )

    def theta_bytes(self) -> bytes:
        """Canonical byte image of every parameter, for equality checks."""
        h = hashlib.blake2b(digest_size=16)
        for m, b in zip(self.matrices, self.biases):
            h.update(np.ascontiguousarray(m).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.digest()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.matrices + self.biases)


@dataclass
class LatentVector:
    components: Array
    owner: int | str = "new"


def init_weights(config: NetworkConfig, seed) -> NetworkWeights:
    """Uniform init in [-sqrt(6/fan_in)/s, +sqrt(6/fan_in)/s], with
    s = omega0 on the first layer and 1 elsewhere.  Biases follow the
    same law as their layer's matrix."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    matrices, biases = [], []
    for l, (fin, fout) in enumerate(config.layer_dims(), start=1):
        s = config.omega0 if l == 1 else 1.0
        bound = np.sqrt(6.0 / fin) / s
        matrices.append(rng.uniform(-bound, bound, size=(fin, fout)))
        biases.append(rng.uniform(-bound, bound, size=(fout,)))
    return NetworkWeights(config, matrices, biases)


# ---------------------------------------------------------------------------
# Input embedding


def embed_input(x: Array, config: NetworkConfig) -> Array:
    """Replace the designated coordinate by its (sin, cos) pair, or pass
    the input through unchanged when no embedding is configured."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if config.periodic_embedding is None:
        return x
    coord, period = config.periodic_embedding
    w = 2.0 * np.pi / period
    cols = []
    for j in range(config.spatial_dim):
        if j == coord:
            cols.append(np.sin(w * x[:, j]))
            cols.append(np.cos(w * x[:, j]))
        else:
            cols.append(x[:, j])
    return np.stack(cols, axis=1)


def _embed_lanes(x: Array, config: NetworkConfig, d1_mask, d2_mask):
    """Feature matrix plus its per-coordinate derivative matrices.

    The input points are data, so every lane is a plain numpy constant.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n_pts, d = x.shape
    if d != config.spatial_dim:
        raise NetworkError(f"input has {d} coordinates, config expects {config.spatial_dim}")
    val = embed_input(x, config)
    de = config.embedded_dim
    coord = period = None
    if config.periodic_embedding is not None:
        coord, period = config.periodic_embedding

    def feature_cols(k, order):
        """Derivative of each embedded feature with respect to x_k."""
        cols = np.zeros((n_pts, de))
        pos = 0
        for j in range(d):
            if coord is not None and j == coord:
                if j == k:
                    w = 2.0 * np.pi / period
                    if order == 1:
                        cols[:, pos] = w * np.cos(w * x[:, j])
                        cols[:, pos + 1] = -w * np.sin(w * x[:, j])
                    else:
                        cols[:, pos] = -(w * w) * np.sin(w * x[:, j])
                        cols[:, pos + 1] = -(w * w) * np.cos(w * x[:, j])
                pos += 2
            else:
                if j == k and order == 1:
                    cols[:, pos] = 1.0
                pos += 1
        return cols

    d1 = [feature_cols(k, 1) if d1_mask[k] else None for k in range(d)]
    d2 = [feature_cols(k, 2) if d2_mask[k] else None for k in range(d)]
    return val, d1, d2


# ---------------------------------------------------------------------------
# Forward passes


def forward(weights: NetworkWeights, x: Array, z: Array | LatentVector | None = None) -> Array:
    """Plain numpy forward; mirrors the tape kernels expression by
    expression so values agree bit-exactly with the jet path."""
    cfg = weights.config
    if isinstance(z, LatentVector):
        z = z.components
    if cfg.latent_dim == 0:
        if z is not None and np.size(z):
            raise NetworkError("latent-free network got a latent code")
        z = None
    elif z is None:
        raise NetworkError("latent code required")
    else:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (cfg.latent_dim,):
            raise NetworkError(f"latent shape {z.shape} != ({cfg.latent_dim},)")

    h = embed_input(x, cfg)
    n_pts = h.shape[0]
    zrep = None
    if z is not None:
        zrep = np.repeat(z[None, :], n_pts, axis=0)
    for l, (w, b) in enumerate(zip(weights.matrices, weights.biases), start=1):
        fin_x = h.shape[1]
        pre = (h @ w[:fin_x]) + b
        if zrep is not None and (l == 1 or (cfg.insert_latent_at is not None
                                            and l == cfg.insert_latent_at + 1)):
            pre = pre + (zrep @ w[fin_x:])
        if l < cfg.affine_count:
            if l == 1 and cfg.omega0 != 1.0:
                pre = np.asarray(cfg.omega0) * pre
            h = np.sin(pre)
        else:
            h = pre
    return h


@dataclass
class WeightNodes:
    """Weights registered on a tape, as parameter or constant leaves."""

    config: NetworkConfig
    layers: list[tuple[Node, Node]]
    trainable: bool


def register_weights(tape: Tape, weights: NetworkWeights, trainable: bool = True) -> WeightNodes:
    make = tape.param if trainable else tape.constant
    layers = [(make(w), make(b)) for w, b in zip(weights.matrices, weights.biases)]
    return WeightNodes(weights.config, layers, trainable)


def _as_latent_node(tape: Tape, z, cfg: NetworkConfig) -> Node | None:
    if cfg.latent_dim == 0:
        if z is not None:
            raise NetworkError("latent-free network got a latent code")
        return None
    if z is None:
        raise NetworkError("latent code required")
    if isinstance(z, Node):
        return z
    if isinstance(z, LatentVector):
        z = z.components
    return tape.constant(np.asarray(z, dtype=np.float64))


def forward_with_jets(tape: Tape, wn: WeightNodes, x: Array, z=None,
                      d1_mask=None, d2_mask=None) -> Jet2:
    """Forward pass carrying input jets; returns the output as a Jet2
    whose lanes are tape nodes of shape (N, output_dim).

    Masks switch off unused derivative lanes per coordinate; a masked
    lane is None in the result.  The latent code contributes to values
    only (its input-jets are identically zero), so derivative lanes
    skip the latent feature block entirely.
    """
    cfg = wn.config
    d = cfg.spatial_dim
    if d1_mask is None:
        d1_mask = (True,) * d
    if d2_mask is None:
        d2_mask = (True,) * d
    d1_mask = tuple(bool(a or b) for a, b in zip(d1_mask, d2_mask))

    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n_pts = x.shape[0]
    emb_val, emb_d1, emb_d2 = _embed_lanes(x, cfg, d1_mask, d2_mask)

    val = tape.constant(emb_val)
    d1 = [None if a is None else tape.constant(a) for a in emb_d1]
    d2 = [None if a is None else tape.constant(a) for a in emb_d2]

    z_node = _as_latent_node(tape, z, cfg)
    zrep = tape.block_repeat(z_node, n_pts) if z_node is not None else None

    for l, (w, b) in enumerate(wn.layers, start=1):
        fin_x = val.value.shape[1]
        pre_val = tape.affine(val, w, b, rows=(0, fin_x))
        takes_latent = zrep is not None and (
            l == 1 or (cfg.insert_latent_at is not None and l == cfg.insert_latent_at + 1)
        )
        if takes_latent:
            fin = fin_x + cfg.latent_dim
            pre_val = tape.add(pre_val, tape.affine(zrep, w, None, rows=(fin_x, fin)))
        pre_d1 = [None if a is None else tape.affine(a, w, None, rows=(0, fin_x)) for a in d1]
        pre_d2 = [None if a is None else tape.affine(a, w, None, rows=(0, fin_x)) for a in d2]
        if l < cfg.affine_count:
            jet = Jet2(pre_val, tuple(pre_d1), tuple(pre_d2))
            if l == 1 and cfg.omega0 != 1.0:
                om = Jet2(tape.constant(cfg.omega0), (tape.zero,) * d, (tape.zero,) * d)
                jet = jet_arith(jet, om, "mul")
            act = jet_arith(jet, None, "sin")
            val, d1, d2 = act.val, list(act.d1), list(act.d2)
        else:
            val, d1, d2 = pre_val, pre_d1, pre_d2
    return Jet2(val, tuple(d1), tuple(d2))


def forward_values(tape: Tape, wn: WeightNodes, x: Array, z=None) -> Node:
    """Value-only tape forward (no derivative lanes)."""
    d = wn.config.spatial_dim
    jet = forward_with_jets(tape, wn, x, z,
                            d1_mask=(False,) * d, d2_mask=(False,) * d)
    return jet.val
