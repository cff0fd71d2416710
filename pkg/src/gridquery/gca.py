"""Numeric reference forward pass for grid context aggregation.

Per group: every node's features are transformed by a small MLP, gated
elementwise by an edge-attention vector computed from the node's
geometric relation to the center (positions plus coverage weight) and its
semantic relation to a pooled context feature, then the gated
contributions are aggregated into the center feature.

Everything here is plain float64 numpy with injected weights; there is no
training, batching, or autodiff dependency. Reductions over nodes and
context are order-independent by construction (max, or correctly-rounded
sums), so permutation invariance holds exactly, not just approximately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .cloud import seeded_rng

__all__ = [
    "MlpSpec",
    "GcaConfig",
    "GcaFileError",
    "grid_context_pool",
    "edge_attention",
    "gca_forward",
    "gca_forward_group",
    "FiniteDiffResult",
    "finite_diff_check",
    "seeded_mlp",
    "seeded_gca_config",
    "save_gca_config",
    "load_gca_config",
]

ACTIVATIONS = ("relu", "identity")
AGGREGATIONS = ("max", "sum", "weighted_mean")
POOLINGS = ("max", "mean")


class GcaFileError(ValueError):
    """Malformed weight file."""


def _fsum_columns(rows: np.ndarray) -> np.ndarray:
    """Correctly-rounded column sums; invariant to row order."""
    return np.array([math.fsum(rows[:, j]) for j in range(rows.shape[1])])


@dataclass(frozen=True)
class MlpSpec:
    """A plain MLP: per layer a dense weight matrix, bias, and activation.

    ``layer_dims`` is (input_dim, out_1, ..., out_L); weights[i] has shape
    (layer_dims[i], layer_dims[i+1]).
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]

    def __post_init__(self) -> None:
        dims = self.layer_dims
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"layer_dims must chain >= 2 positive dims, got {dims}")
        n_layers = len(dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("need one weight matrix and bias per layer")
        if len(self.activations) != n_layers:
            raise ValueError("need one activation per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]):
                raise ValueError(f"layer {i}: weight shape {w.shape} != {(dims[i], dims[i + 1])}")
            if b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} != {(dims[i + 1],)}")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=np.float64)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            y = y @ w + b
            if act == "relu":
                y = np.maximum(y, 0.0)
        return y

    def forward_with_tangent(
        self, x: np.ndarray, dx: np.ndarray, eps: float
    ) -> tuple[np.ndarray, np.ndarray, bool]:
        """Forward-mode pass: returns (value, directional derivative,
        kink flag). The kink flag is set when a relu pre-activation sits
        close enough to zero that a +-eps probe could cross it."""
        y, dy = np.asarray(x, dtype=np.float64), np.asarray(dx, dtype=np.float64)
        kink = False
        for w, b, act in zip(self.weights, self.biases, self.activations):
            pre = y @ w + b
            dpre = dy @ w
            if act == "relu":
                if np.any(np.abs(pre) <= 2.0 * eps * (np.abs(dpre) + 1e-30)):
                    kink = True
                mask = pre > 0.0
                y, dy = np.where(mask, pre, 0.0), np.where(mask, dpre, 0.0)
            else:
                y, dy = pre, dpre
        return y, dy, kink

    @classmethod
    def identity(cls, dim: int) -> "MlpSpec":
        """Single identity layer: forward(x) == x."""
        return cls((dim, dim), (np.eye(dim),), (np.zeros(dim),), ("identity",))


@dataclass(frozen=True)
class GcaConfig:
    """The four MLPs plus reduction choices for one aggregation module.

    m_spec    : node feature transform, feature_dim -> out_dim
    geo_spec  : geometric relation, input (center xyz, node xyz, node
                coverage weight) = 7 floats, 10 with ``relative_geo``
                (node - center offset appended)
    sem_spec  : semantic relation, input (pooled context feature, node
                feature) = 2 * feature_dim
    fuse_spec : edge fusion over concat(geo out, sem out); output either
                matches m_spec's output (elementwise gate) or is 1
                (scalar gate, broadcast)
    """

    m_spec: MlpSpec
    geo_spec: MlpSpec
    sem_spec: MlpSpec
    fuse_spec: MlpSpec
    aggregation: str = "max"
    pooling: str = "max"
    relative_geo: bool = False

    def __post_init__(self) -> None:
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        geo_in = 10 if self.relative_geo else 7
        if self.geo_spec.in_dim != geo_in:
            raise ValueError(f"geo_spec input dim must be {geo_in}, got {self.geo_spec.in_dim}")
        if self.sem_spec.in_dim != 2 * self.feature_dim:
            raise ValueError(
                f"sem_spec input dim must be 2*feature_dim={2 * self.feature_dim}, "
                f"got {self.sem_spec.in_dim}"
            )
        if self.fuse_spec.in_dim != self.geo_spec.out_dim + self.sem_spec.out_dim:
            raise ValueError("fuse_spec input dim must equal geo out + sem out")
        if self.fuse_spec.out_dim not in (self.m_spec.out_dim, 1):
            raise ValueError(
                "fuse_spec output dim must match m_spec output "
                f"({self.m_spec.out_dim}) or be 1 for a scalar gate"
            )

    @property
    def feature_dim(self) -> int:
        return self.m_spec.in_dim

    @property
    def out_dim(self) -> int:
        return self.m_spec.out_dim


def grid_context_pool(context_features, pooling: str = "max") -> np.ndarray:
    """Parameter-free elementwise reduction of context features.

    Permutation invariant and exact: max columnwise, or a correctly-
    rounded mean.
    """
    feats = np.asarray(context_features, dtype=np.float64)
    if feats.ndim != 2 or len(feats) == 0:
        raise ValueError("context features must be a nonempty (n, F) array")
    if pooling == "max":
        return feats.max(axis=0)
    if pooling == "mean":
        return _fsum_columns(feats) / len(feats)
    raise ValueError(f"unknown pooling {pooling!r}")


def _geo_input(chi_c: np.ndarray, chi_i: np.ndarray, w_i: float, relative: bool) -> np.ndarray:
    parts = [chi_c, chi_i]
    if relative:
        parts.append(chi_i - chi_c)
    parts.append(np.array([w_i]))
    return np.concatenate(parts)


def edge_attention(chi_c, chi_i, w_i: float, f_cxt, f_i, config: GcaConfig) -> np.ndarray:
    """Edge-attention vector for one node: fused geometric + semantic
    relation to the group center."""
    chi_c = np.asarray(chi_c, dtype=np.float64)
    chi_i = np.asarray(chi_i, dtype=np.float64)
    geo = config.geo_spec.forward(_geo_input(chi_c, chi_i, float(w_i), config.relative_geo))
    sem = config.sem_spec.forward(np.concatenate([np.asarray(f_cxt), np.asarray(f_i)]))
    return config.fuse_spec.forward(np.concatenate([geo, sem]))


def _aggregate(contribs: np.ndarray, weights: np.ndarray, how: str) -> np.ndarray:
    if how == "max":
        return contribs.max(axis=0)
    if how == "sum":
        return _fsum_columns(contribs)
    # weighted mean over the nodes' coverage weights
    num = _fsum_columns(weights[:, None] * contribs)
    den = math.fsum(weights)
    return num / den


def gca_forward(
    center_position,
    node_positions,
    node_weights,
    node_features,
    context_features,
    config: GcaConfig,
) -> np.ndarray:
    """Center feature from one group's nodes.

    Per node: edge attention gates the transformed node feature
    elementwise (a scalar gate broadcasts); the gated contributions are
    reduced by the configured aggregation. Pure function of its inputs.
    """
    chi_c = np.asarray(center_position, dtype=np.float64)
    pos = np.asarray(node_positions, dtype=np.float64)
    w = np.asarray(node_weights, dtype=np.float64)
    feats = np.asarray(node_features, dtype=np.float64)
    if len(pos) == 0:
        raise ValueError("empty group")
    if feats.ndim != 2 or len(feats) != len(pos) or len(w) != len(pos):
        raise ValueError("need one feature vector and weight per node")
    if feats.shape[1] != config.feature_dim:
        raise ValueError(f"feature dim {feats.shape[1]} != config feature dim {config.feature_dim}")
    f_cxt = grid_context_pool(context_features, config.pooling)

    contribs = np.empty((len(pos), config.out_dim))
    for i in range(len(pos)):
        e = edge_attention(chi_c, pos[i], w[i], f_cxt, feats[i], config)
        contribs[i] = e * config.m_spec.forward(feats[i])
    return _aggregate(contribs, w, config.aggregation)


def gca_forward_group(group, cloud, node_features, context_features, config: GcaConfig) -> np.ndarray:
    """:func:`gca_forward` pulling positions/weights from a PointGroup."""
    idx = group.nodes.node_indices
    return gca_forward(
        group.center_position,
        cloud.positions[idx],
        cloud.weights[idx],
        node_features,
        context_features,
        config,
    )


@dataclass
class FiniteDiffResult:
    max_rel_error: float
    retries: int


def finite_diff_check(
    config: GcaConfig,
    center_position,
    node_positions,
    node_weights,
    node_features,
    context_features,
    epsilon: float = 1e-5,
    jitter_seed: int = 0,
    max_retries: int = 5,
) -> FiniteDiffResult:
    """Compare analytic directional derivatives of :func:`gca_forward`
    against central finite differences.

    Differentiates with respect to the node features and node coverage
    weights along seeded random directions (context features are held
    constant). A probe that lands on a relu kink or a max-aggregation tie
    is reported and retried with jittered inputs.
    """
    rng = seeded_rng(jitter_seed)
    chi_c = np.asarray(center_position, dtype=np.float64)
    pos = np.asarray(node_positions, dtype=np.float64)
    w0 = np.asarray(node_weights, dtype=np.float64)
    f0 = np.asarray(node_features, dtype=np.float64)
    ctx = np.asarray(context_features, dtype=np.float64)

    for attempt in range(max_retries + 1):
        df = rng.normal(size=f0.shape)
        dw = rng.normal(size=w0.shape)
        analytic, kink = _directional_derivative(config, chi_c, pos, w0, f0, ctx, df, dw, epsilon)
        if kink:
            # Jitter and retry: the probe sat on a non-differentiable point.
            f0 = f0 + rng.normal(scale=1e-2, size=f0.shape)
            w0 = np.abs(w0 + rng.normal(scale=1e-2, size=w0.shape)) + 1e-3
            continue
        plus = gca_forward(chi_c, pos, w0 + epsilon * dw, f0 + epsilon * df, ctx, config)
        minus = gca_forward(chi_c, pos, w0 - epsilon * dw, f0 - epsilon * df, ctx, config)
        numeric = (plus - minus) / (2.0 * epsilon)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
        err = float(np.max(np.abs(analytic - numeric) / scale))
        return FiniteDiffResult(err, attempt)
    raise ValueError(f"could not find a differentiable probe in {max_retries} retries")


def _directional_derivative(
    config: GcaConfig,
    chi_c: np.ndarray,
    pos: np.ndarray,
    w: np.ndarray,
    feats: np.ndarray,
    ctx: np.ndarray,
    df: np.ndarray,
    dw: np.ndarray,
    eps: float,
) -> tuple[np.ndarray, bool]:
    """Forward-mode directional derivative of gca_forward w.r.t.
    (node_features, node_weights); context features are constants."""
    f_cxt = grid_context_pool(ctx, config.pooling)
    k = len(pos)
    kink = False
    vals = np.empty((k, config.out_dim))
    tans = np.empty((k, config.out_dim))
    for i in range(k):
        geo_in = _geo_input(chi_c, pos[i], float(w[i]), config.relative_geo)
        geo_tan = np.zeros_like(geo_in)
        geo_tan[-1] = dw[i]  # the coverage weight slot
        geo, dgeo, k1 = config.geo_spec.forward_with_tangent(geo_in, geo_tan, eps)

        sem_in = np.concatenate([f_cxt, feats[i]])
        sem_tan = np.concatenate([np.zeros_like(f_cxt), df[i]])
        sem, dsem, k2 = config.sem_spec.forward_with_tangent(sem_in, sem_tan, eps)

        e, de, k3 = config.fuse_spec.forward_with_tangent(
            np.concatenate([geo, sem]), np.concatenate([dgeo, dsem]), eps
        )
        m, dm, k4 = config.m_spec.forward_with_tangent(feats[i], df[i], eps)
        vals[i] = e * m
        tans[i] = de * m + e * dm
        kink = kink or k1 or k2 or k3 or k4

    if config.aggregation == "max":
        winners = np.argmax(vals, axis=0)
        # A near-tie in any column makes the max non-differentiable.
        sorted_vals = np.sort(vals, axis=0)
        if k > 1:
            gaps = sorted_vals[-1] - sorted_vals[-2]
            probe_span = 2.0 * eps * (np.abs(tans).max(axis=0) + 1e-30)
            if np.any(gaps <= probe_span):
                kink = True
        return tans[winners, np.arange(vals.shape[1])], kink
    if config.aggregation == "sum":
        return _fsum_columns(tans), kink
    num = _fsum_columns(w[:, None] * vals)
    den = math.fsum(w)
    dnum = _fsum_columns(dw[:, None] * vals + w[:, None] * tans)
    dden = math.fsum(dw)
    return dnum / den - (num / den) * (dden / den), kink


def seeded_mlp(
    dims: Iterable[int],
    activations: Iterable[str] | str,
    rng: np.random.Generator,
    scale: float = 0.5,
) -> MlpSpec:
    """Random MLP with normal(0, scale/sqrt(fan_in)) weights."""
    dims = tuple(int(d) for d in dims)
    if isinstance(activations, str):
        activations = (activations,) * (len(dims) - 1)
    else:
        activations = tuple(activations)
    weights = []
    biases = []
    for i in range(len(dims) - 1):
        weights.append(rng.normal(0.0, scale / np.sqrt(dims[i]), size=(dims[i], dims[i + 1])))
        biases.append(rng.normal(0.0, 0.1, size=dims[i + 1]))
    return MlpSpec(dims, tuple(weights), tuple(biases), activations)


def seeded_gca_config(
    feature_dim: int,
    seed: int,
    out_dim: int = 8,
    hidden: int = 8,
    activation: str = "relu",
    aggregation: str = "max",
    pooling: str = "max",
    scalar_gate: bool = False,
    relative_geo: bool = False,
) -> GcaConfig:
    """A full random-but-reproducible config with consistent shapes."""
    rng = seeded_rng(seed)
    acts = (activation, "identity")
    geo_in = 10 if relative_geo else 7
    fuse_out = 1 if scalar_gate else out_dim
    return GcaConfig(
        m_spec=seeded_mlp((feature_dim, hidden, out_dim), acts, rng),
        geo_spec=seeded_mlp((geo_in, hidden, hidden), acts, rng),
        sem_spec=seeded_mlp((2 * feature_dim, hidden, hidden), acts, rng),
        fuse_spec=seeded_mlp((2 * hidden, hidden, fuse_out), acts, rng),
        aggregation=aggregation,
        pooling=pooling,
        relative_geo=relative_geo,
    )


# ---------------------------------------------------------------------------
# Weight file format
#
#   GCA1
#   aggregation <max|sum|weighted_mean>
#   pooling <max|mean>
#   relative_geo <0|1>
#   mlp <node|geo|sem|fuse>
#   dims d0 d1 ... dL
#   activations a1 ... aL
#   <W1 row-major, then b1, then W2, b2, ... as whitespace floats>
#   (four mlp sections, in node/geo/sem/fuse order)
# ---------------------------------------------------------------------------

_SECTION_ORDER = ("node", "geo", "sem", "fuse")


def save_gca_config(config: GcaConfig, sink: str | Path | TextIO) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="\n") as fh:
            save_gca_config(config, fh)
        return
    sink.write("GCA1\n")
    sink.write(f"aggregation {config.aggregation}\n")
    sink.write(f"pooling {config.pooling}\n")
    sink.write(f"relative_geo {int(config.relative_geo)}\n")
    specs = dict(zip(_SECTION_ORDER, (config.m_spec, config.geo_spec, config.sem_spec, config.fuse_spec)))
    for name in _SECTION_ORDER:
        spec = specs[name]
        sink.write(f"mlp {name}\n")
        sink.write("dims " + " ".join(str(d) for d in spec.layer_dims) + "\n")
        sink.write("activations " + " ".join(spec.activations) + "\n")
        for w, b in zip(spec.weights, spec.biases):
            sink.write(" ".join(repr(float(v)) for v in w.ravel()) + "\n")
            sink.write(" ".join(repr(float(v)) for v in b) + "\n")


def load_gca_config(source: str | Path | TextIO) -> GcaConfig:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_gca_config(fh)
    lines = [ln.strip() for ln in source.read().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "GCA1":
        raise GcaFileError("missing GCA1 header")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("mlp "):
        try:
            key, value = lines[i].split(None, 1)
        except ValueError:
            raise GcaFileError(f"bad header line {lines[i]!r}") from None
        header[key] = value
        i += 1
    specs: dict[str, MlpSpec] = {}
    while i < len(lines):
        name = lines[i].split()[1] if len(lines[i].split()) == 2 else None
        if name not in _SECTION_ORDER:
            raise GcaFileError(f"expected 'mlp <name>' section, got {lines[i]!r}")
        spec, i = _parse_mlp(lines, i + 1)
        specs[name] = spec
    missing = [n for n in _SECTION_ORDER if n not in specs]
    if missing:
        raise GcaFileError(f"missing mlp sections: {missing}")
    try:
        return GcaConfig(
            m_spec=specs["node"],
            geo_spec=specs["geo"],
            sem_spec=specs["sem"],
            fuse_spec=specs["fuse"],
            aggregation=header.get("aggregation", "max"),
            pooling=header.get("pooling", "max"),
            relative_geo=bool(int(header.get("relative_geo", "0"))),
        )
    except ValueError as exc:
        raise GcaFileError(str(exc)) from None


def _parse_mlp(lines: list[str], i: int) -> tuple[MlpSpec, int]:
    if i >= len(lines) or not lines[i].startswith("dims "):
        raise GcaFileError("mlp section must start with a dims line")
    dims = tuple(int(t) for t in lines[i].split()[1:])
    i += 1
    if i >= len(lines) or not lines[i].startswith("activations "):
        raise GcaFileError("mlp section needs an activations line")
    acts = tuple(lines[i].split()[1:])
    i += 1
    values: list[float] = []
    needed = sum(dims[j] * dims[j + 1] + dims[j + 1] for j in range(len(dims) - 1))
    while i < len(lines) and len(values) < needed and not lines[i].startswith("mlp "):
        try:
            values.extend(float(t) for t in lines[i].split())
        except ValueError:
            raise GcaFileError(f"non-numeric weight data: {lines[i]!r}") from None
        i += 1
    if len(values) != needed:
        raise GcaFileError(f"expected {needed} weight values, got {len(values)}")
    weights = []
    biases = []
    pos = 0
    for j in range(len(dims) - 1):
        n = dims[j] * dims[j + 1]
        weights.append(np.array(values[pos : pos + n]).reshape(dims[j], dims[j + 1]))
        pos += n
        biases.append(np.array(values[pos : pos + dims[j + 1]]))
        pos += dims[j + 1]
    try:
        return MlpSpec(dims, tuple(weights), tuple(biases), acts), i
    except ValueError as exc:
        raise GcaFileError(str(exc)) from None
