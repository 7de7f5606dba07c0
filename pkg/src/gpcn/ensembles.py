"""Multiscale GCN ensembles.

Model kinds:

* ``gpcn``: one GCN per graph scale; the input is restricted to each coarse
  scale through composed prolongation transposes and each member's output is
  lifted back, so the ensemble output is the sum over scales. With
  ``adaptive=True`` the prolongation entries train jointly with the filters.
* ``plain_ensemble``: several GCNs on the same structure matrix, summed.
* ``ngcn``: members use successive powers of the structure matrix.
* ``diffpool``: the prolongations are replaced by input-dependent affinity
  matrices (row-softmaxed output of a small pooling convolution), and the
  coarse structure matrices are recomputed from them on every pass.

Levels are ordered fine to coarse; level 0 is the prediction scale.
Parameter ownership follows that order: level i owns its filter stack plus
the prolongation (or pooling module) that introduces it, which is what the
schedule-driven trainers mask on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autodiff import Node, Tape
from .gcn import (
    GcnLayerParams,
    GcnParams,
    GcnSpec,
    gcn_graph,
    init_gcn_params,
)
from .gdd import gdd
from .graphs import StructureMatrix, laplacian, make_tube, structure_power
from .numcore import glorot_uniform, row_softmax, spmm
from .serialize import load_arrays, save_arrays

__all__ = [
    "ModelSpec",
    "ModelParams",
    "Hierarchy",
    "make_hierarchy",
    "paper_hierarchy",
    "desk_hierarchy",
    "MODEL_NAMES",
    "build_from_table",
    "init_model_params",
    "compose_prolongations",
    "model_graph",
    "model_forward",
    "gpcn_forward",
    "ngcn_forward",
    "diffpool_coarsen",
    "coarsen_from_scores",
    "ensemble_input_gradient",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of an ensemble: levels fine to coarse plus their wiring."""

    kind: str  # gpcn | plain_ensemble | ngcn | diffpool
    levels: tuple
    prolongations: tuple = ()  # initial values, fine side first; () when unused
    adaptive: bool = False
    radii: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("gpcn", "plain_ensemble", "ngcn", "diffpool"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "prolongations", tuple(self.prolongations))
        if self.kind == "gpcn":
            if len(self.prolongations) != len(self.levels) - 1:
                raise ValueError("gpcn needs one prolongation per adjacent level pair")
            for i, p in enumerate(self.prolongations):
                want = (self.levels[i].n, self.levels[i + 1].n)
                if p.shape != want:
                    raise ValueError(
                        f"prolongation {i} has shape {p.shape}, expected {want}"
                    )
        if self.kind in ("plain_ensemble", "ngcn"):
            ns = {lvl.n for lvl in self.levels}
            if len(ns) != 1:
                raise ValueError(f"{self.kind} members must share the node count, got {ns}")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_fine(self) -> int:
        return self.levels[0].n


@dataclass
class ModelParams:
    """Trainable state: per-level filter stacks, prolongation copies, pooling
    modules (diffpool only)."""

    levels: list
    prolongations: list = field(default_factory=list)
    pools: list = field(default_factory=list)

    def owned_arrays(self, owner: int):
        """(name, array) pairs owned by one level: its filters plus the
        prolongation / pooling module that introduces it (owner >= 1)."""
        out = [
            (f"level{owner}_{name}", arr)
            for name, arr in self.levels[owner].arrays()
        ]
        if owner >= 1 and owner - 1 < len(self.prolongations):
            out.append((f"prolong{owner - 1}", self.prolongations[owner - 1]))
        if owner >= 1 and owner - 1 < len(self.pools):
            pool = self.pools[owner - 1]
            out.append((f"pool{owner - 1}_w", pool.w))
            out.append((f"pool{owner - 1}_b", pool.b))
        return out

    def all_arrays(self):
        out = []
        for owner in range(len(self.levels)):
            out.extend(self.owned_arrays(owner))
        return out


@dataclass(frozen=True)
class Hierarchy:
    """Graphs fine to coarse with Laplacians and optimized prolongations."""

    graphs: tuple
    laplacians: tuple
    prolongations: tuple


def make_hierarchy(graphs, alpha: float = 1.0, **gdd_kwargs) -> Hierarchy:
    """Compute Laplacians and adjacent-pair prolongations for a graph chain."""
    graphs = tuple(graphs)
    for a, b in zip(graphs, graphs[1:]):
        if b.n > a.n:
            raise ValueError("hierarchy must be ordered fine to coarse")
    laps = tuple(laplacian(g) for g in graphs)
    prols = tuple(
        gdd(graphs[i + 1], graphs[i], alpha, **gdd_kwargs).p
        for i in range(len(graphs) - 1)
    )
    return Hierarchy(graphs=graphs, laplacians=laps, prolongations=prols)


def paper_hierarchy(**gdd_kwargs) -> Hierarchy:
    """Full-size chain: Tube(48,13,3) -> Tube(24,13,1) -> Tube(24,3,0)."""
    return make_hierarchy(
        [make_tube(48, 13, 3), make_tube(24, 13, 1), make_tube(24, 3, 0)], **gdd_kwargs
    )


def desk_hierarchy(**gdd_kwargs) -> Hierarchy:
    """Desk-scale chain with the same shape: Tube(12,13,3) -> Tube(6,13,1) -> Tube(6,3,0)."""
    return make_hierarchy(
        [make_tube(12, 13, 3), make_tube(6, 13, 1), make_tube(6, 3, 0)], **gdd_kwargs
    )


_DENSE_HEAD = (256, 32, 8, 1)

# level widths are listed fine to coarse
_TABLE = {
    "single_gcn": ("plain_ensemble", [(64, 64, 64)]),
    "ensemble2": ("plain_ensemble", [(64, 64, 64), (32, 32, 32)]),
    "ensemble3": ("plain_ensemble", [(64, 64, 64), (32, 32, 32), (16, 16, 16)]),
    "gpcn2": ("gpcn", [(32, 32, 32), (64, 64, 64)]),
    "gpcn3": ("gpcn", [(16, 16, 16), (32, 32, 32), (64, 64, 64)]),
    "a_gpcn2": ("gpcn", [(32, 32, 32), (64, 64, 64)]),
    "a_gpcn3": ("gpcn", [(16, 16, 16), (32, 32, 32), (64, 64, 64)]),
    "ngcn3": ("ngcn", [(64, 64, 64)] * 3),
    "ngcn5": ("ngcn", [(64, 64, 64)] * 5),
    "diffpool3": ("diffpool", [(16, 16, 16), (32, 32, 32), (64, 64, 64)]),
}

MODEL_NAMES = tuple(sorted(_TABLE))

_NGCN_RADII = {"ngcn3": (1, 2, 4), "ngcn5": (1, 2, 4, 8, 16)}


def build_from_table(name: str, hierarchy: Hierarchy) -> ModelSpec:
    """Instantiate one of the named ensemble architectures on a hierarchy.

    The hierarchy supplies the structure matrices (and prolongations for the
    multiscale kinds); its fine graph carries the single-scale kinds.
    """
    if name not in _TABLE:
        raise ValueError(
            f"unknown model {name!r}; valid names: {', '.join(MODEL_NAMES)}"
        )
    kind, widths = _TABLE[name]
    fine_z = hierarchy.laplacians[0]
    if kind == "plain_ensemble":
        levels = [GcnSpec(z=fine_z, gcn_widths=w, dense_widths=_DENSE_HEAD) for w in widths]
        return ModelSpec(kind=kind, levels=levels, name=name)
    if kind == "ngcn":
        radii = _NGCN_RADII[name]
        levels = [
            GcnSpec(
                z=structure_power(fine_z, r), gcn_widths=w, dense_widths=_DENSE_HEAD
            )
            for r, w in zip(radii, widths)
        ]
        return ModelSpec(kind=kind, levels=levels, radii=radii, name=name)
    depth = len(widths)
    if len(hierarchy.graphs) < depth:
        raise ValueError(f"{name} needs a hierarchy of at least {depth} graphs")
    if kind == "diffpool":
        levels = [
            GcnSpec(
                z=fine_z if i == 0 else None,
                gcn_widths=widths[i],
                dense_widths=_DENSE_HEAD,
                n_nodes=hierarchy.graphs[i].n,
            )
            for i in range(depth)
        ]
        return ModelSpec(kind=kind, levels=levels, name=name)
    levels = [
        GcnSpec(
            z=hierarchy.laplacians[i], gcn_widths=widths[i], dense_widths=_DENSE_HEAD
        )
        for i in range(depth)
    ]
    return ModelSpec(
        kind="gpcn",
        levels=levels,
        prolongations=hierarchy.prolongations[: depth - 1],
        adaptive=name.startswith("a_"),
        name=name,
    )


def init_model_params(spec: ModelSpec, in_features: int, rng) -> ModelParams:
    """Initialize filters level by level; prolongations copy their optimized
    initial values, pooling modules get Glorot filters."""
    levels = [init_gcn_params(lvl, in_features, rng) for lvl in spec.levels]
    prolongations = [np.array(p, dtype=float) for p in spec.prolongations]
    pools = []
    if spec.kind == "diffpool":
        for i in range(spec.n_levels - 1):
            n_coarse = spec.levels[i + 1].n
            pools.append(
                GcnLayerParams(
                    w=glorot_uniform(rng, in_features, n_coarse),
                    b=np.zeros(n_coarse),
                    activation="linear",
                )
            )
    return ModelParams(levels=levels, prolongations=prolongations, pools=pools)


def compose_prolongations(ps, n: int | None = None) -> np.ndarray:
    """Left-to-right product of a prolongation chain; the empty chain is the
    identity (its size must then be given)."""
    ps = list(ps)
    if not ps:
        if n is None:
            raise ValueError("empty chain needs an explicit size")
        return np.eye(n)
    out = np.asarray(ps[0], dtype=float)
    for p in ps[1:]:
        p = np.asarray(p, dtype=float)
        if out.shape[1] != p.shape[0]:
            raise ValueError(
                f"prolongation chain dimension mismatch: {out.shape} then {p.shape}"
            )
        out = out @ p
    return out


def _bind_level_params(tape, params, owner, train, bindings):
    """GcnParams -> (w, b, activation) triples, as tape variables when training."""
    gp = params.levels[owner]
    if not train:
        return ([(l.w, l.b, l.activation) for l in gp.gcn],
                [(l.w, l.b, l.activation) for l in gp.dense])

    def bind(prefix, layers):
        out = []
        for i, layer in enumerate(layers):
            wn = tape.variable(layer.w)
            bn = tape.variable(layer.b)
            bindings.append((owner, f"level{owner}_{prefix}{i}_w", layer.w, wn))
            bindings.append((owner, f"level{owner}_{prefix}{i}_b", layer.b, bn))
            out.append((wn, bn, layer.activation))
        return out

    return bind("gcn", gp.gcn), bind("dense", gp.dense)


def model_graph(tape: Tape, spec: ModelSpec, params: ModelParams, x, level_mask=None, train=False):
    """Record the full ensemble forward pass.

    Returns (output node, bindings); bindings are (owner_level, name, array,
    node) rows for every parameter turned into a tape variable. ``level_mask``
    restricts the sum to a subset of levels (their members still project
    through every intervening prolongation).
    """
    active = set(range(spec.n_levels)) if level_mask is None else set(level_mask)
    if not active:
        raise ValueError("level mask must keep at least one level")
    bindings: list = []
    x = x if isinstance(x, Node) else np.asarray(x, dtype=float)

    if spec.kind in ("plain_ensemble", "ngcn"):
        contribs = []
        for i, lvl in enumerate(spec.levels):
            if i not in active:
                continue
            lp = _bind_level_params(tape, params, i, train, bindings)
            contribs.append(gcn_graph(tape, lvl, lp, x))
        out = contribs[0]
        for c in contribs[1:]:
            out = tape.add(out, c)
        return out, bindings

    if spec.kind == "diffpool":
        return _diffpool_graph(tape, spec, params, x, active, train, bindings)

    # gpcn: restrict, run member, lift, sum
    train_p = train and spec.adaptive
    p_nodes = []
    for i, p in enumerate(params.prolongations):
        if train_p:
            pn = tape.variable(p)
            bindings.append((i + 1, f"prolong{i}", p, pn))
            p_nodes.append(pn)
        else:
            p_nodes.append(p)

    out = None
    composed = None  # fine-to-level-i product, built incrementally
    for i, lvl in enumerate(spec.levels):
        if i > 0:
            step = p_nodes[i - 1]
            if composed is None:
                composed = step
            elif isinstance(composed, Node) or isinstance(step, Node):
                composed = tape.matmul(composed, step)
            else:
                composed = composed @ step
        if i not in active:
            continue
        lp = _bind_level_params(tape, params, i, train, bindings)
        if i == 0:
            contrib = gcn_graph(tape, lvl, lp, x)
        else:
            if isinstance(composed, Node):
                down = tape.matmul(tape.transpose(composed), x)
            else:
                down = tape.matmul(composed.T, x)
            member = gcn_graph(tape, lvl, lp, down)
            contrib = tape.matmul(composed, member)
        out = contrib if out is None else tape.add(out, contrib)
    return out, bindings


def _diffpool_graph(tape, spec, params, x, active, train, bindings):
    z = spec.levels[0].z  # StructureMatrix at the fine level, dense nodes below
    xs = x
    out = None
    lift = None  # product of affinity matrices back to the fine scale
    for i, lvl in enumerate(spec.levels):
        if i > 0:
            pool = params.pools[i - 1]
            if train:
                pw = tape.variable(pool.w)
                pb = tape.variable(pool.b)
                bindings.append((i, f"pool{i - 1}_w", pool.w, pw))
                bindings.append((i, f"pool{i - 1}_b", pool.b, pb))
            else:
                pw, pb = pool.w, pool.b
            xw = tape.matmul(xs, pw)
            agg = tape.spmm(z, xw) if isinstance(z, StructureMatrix) else tape.matmul(z, xw)
            s = tape.row_softmax(tape.add(agg, pb))
            st = tape.transpose(s)
            xs = tape.matmul(st, xs)
            zs = tape.spmm(z, s) if isinstance(z, StructureMatrix) else tape.matmul(z, s)
            z = tape.matmul(st, zs)
            lift = s if lift is None else tape.matmul(lift, s)
        if i not in active:
            continue
        lp = _bind_level_params(tape, params, i, train, bindings)
        member = gcn_graph(tape, lvl, lp, xs, z_override=z)
        contrib = member if i == 0 else tape.matmul(lift, member)
        out = contrib if out is None else tape.add(out, contrib)
    return out, bindings


def model_forward(spec: ModelSpec, params: ModelParams, x, level_mask=None) -> np.ndarray:
    """Ensemble forward pass to the fine-scale n-by-1 output (batch axis ok)."""
    tape = Tape()
    out, _ = model_graph(tape, spec, params, x, level_mask=level_mask, train=False)
    return out.value


def gpcn_forward(spec: ModelSpec, params: ModelParams, x, level_mask=None) -> np.ndarray:
    if spec.kind != "gpcn":
        raise ValueError(f"gpcn_forward got a {spec.kind} model")
    return model_forward(spec, params, x, level_mask=level_mask)


def ngcn_forward(radii, z: StructureMatrix, params_list, x) -> np.ndarray:
    """Sum of members where member r aggregates with the r-th power of z."""
    radii = tuple(int(r) for r in radii)
    if any(r < 1 for r in radii):
        raise ValueError("radii must be >= 1")
    out = None
    for r, gp in zip(radii, params_list):
        zr = structure_power(z, r)
        spec = GcnSpec(
            z=zr,
            gcn_widths=tuple(l.w.shape[1] for l in gp.gcn),
            dense_widths=tuple(l.w.shape[1] for l in gp.dense),
        )
        tape = Tape()
        member = gcn_graph(tape, spec, ([(l.w, l.b, l.activation) for l in gp.gcn],
                                        [(l.w, l.b, l.activation) for l in gp.dense]), x)
        out = member.value if out is None else out + member.value
    return out


def coarsen_from_scores(scores: np.ndarray, z, x):
    """Coarsen with S = row_softmax(scores): returns (S^T Z S, S^T X, S)."""
    s = row_softmax(np.asarray(scores, dtype=float))
    x = np.asarray(x, dtype=float)
    zs = spmm(z, s) if isinstance(z, StructureMatrix) else z @ s
    return s.T @ zs, s.T @ x, s


def diffpool_coarsen(pool: GcnLayerParams, z, x):
    """One pooling step: affinity scores from the pooling convolution, then
    the coarsened structure matrix S^T Z S and data S^T X."""
    x = np.asarray(x, dtype=float)
    pre = spmm(z, x @ pool.w) if isinstance(z, StructureMatrix) else z @ (x @ pool.w)
    return coarsen_from_scores(pre + pool.b, z, x)


def ensemble_input_gradient(spec: ModelSpec, params: ModelParams, x) -> np.ndarray:
    """Analytic gradient of the summed ensemble output w.r.t. the fine input.

    Applies the first-layer rule Z_i^T (dE_i/dA_1) W_1^T inside each member
    and lifts the result through the member's composed prolongation.
    """
    if spec.kind != "gpcn":
        raise ValueError("analytic ensemble gradient is defined for gpcn models")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("ensemble_input_gradient expects a single n-by-F signal")
    total = np.zeros_like(x)
    for i, lvl in enumerate(spec.levels):
        p1i = compose_prolongations(params.prolongations[:i], n=spec.n_fine)
        xi = p1i.T @ x
        gp = params.levels[i]
        w1, b1 = gp.gcn[0].w, gp.gcn[0].b
        a1 = spmm(lvl.z, xi @ w1) + b1
        tape = Tape()
        a1_node = tape.variable(a1)
        member = gcn_graph(
            tape, lvl, ([(l.w, l.b, l.activation) for l in gp.gcn],
                        [(l.w, l.b, l.activation) for l in gp.dense]),
            xi, first_pre=a1_node,
        )
        lifted = tape.matmul(p1i, member) if i > 0 else member
        tape.backward(tape.sum(lifted))
        member_grad = spmm(lvl.z.mat.T, a1_node.grad) @ w1.T
        total += p1i @ member_grad
    return total


# ---------------------------------------------------------------------------
# checkpoints


def _csr_arrays(prefix: str, z: StructureMatrix) -> dict:
    return {
        f"{prefix}_data": z.mat.data.astype(float),
        f"{prefix}_indices": z.mat.indices.astype(np.int64),
        f"{prefix}_indptr": z.mat.indptr.astype(np.int64),
    }


def _csr_restore(arrays: dict, prefix: str, n: int) -> StructureMatrix:
    return StructureMatrix(
        mat=sp.csr_matrix(
            (
                arrays[f"{prefix}_data"],
                arrays[f"{prefix}_indices"].astype(np.int64),
                arrays[f"{prefix}_indptr"].astype(np.int64),
            ),
            shape=(n, n),
        )
    )


def save_checkpoint(path, spec: ModelSpec, params: ModelParams) -> None:
    """Self-contained model checkpoint: parameters, prolongations, structure
    matrices, and the architecture manifest."""
    arrays = {}
    for owner in range(spec.n_levels):
        for name, arr in params.owned_arrays(owner):
            arrays[name] = arr
    for i, lvl in enumerate(spec.levels):
        if lvl.z is not None:
            arrays.update(_csr_arrays(f"z{i}", lvl.z))
    meta = {
        "kind": spec.kind,
        "name": spec.name,
        "adaptive": spec.adaptive,
        "radii": list(spec.radii),
        "levels": [
            {
                "n": lvl.n,
                "gcn_widths": list(lvl.gcn_widths),
                "dense_widths": list(lvl.dense_widths),
                "has_z": lvl.z is not None,
            }
            for lvl in spec.levels
        ],
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path):
    """Restore (spec, params) from :func:`save_checkpoint` output."""
    arrays, meta = load_arrays(path)
    levels = []
    for i, lm in enumerate(meta["levels"]):
        z = _csr_restore(arrays, f"z{i}", lm["n"]) if lm["has_z"] else None
        levels.append(
            GcnSpec(
                z=z,
                gcn_widths=tuple(lm["gcn_widths"]),
                dense_widths=tuple(lm["dense_widths"]),
                n_nodes=lm["n"],
            )
        )
    prolongations = []
    i = 0
    while f"prolong{i}" in arrays:
        prolongations.append(arrays[f"prolong{i}"])
        i += 1
    spec = ModelSpec(
        kind=meta["kind"],
        levels=levels,
        prolongations=tuple(prolongations),
        adaptive=meta["adaptive"],
        radii=tuple(meta["radii"]),
        name=meta["name"],
    )
    level_params = []
    for owner, lm in enumerate(meta["levels"]):
        gcn_layers = []
        j = 0
        while f"level{owner}_gcn{j}_w" in arrays:
            act = "relu"
            gcn_layers.append(
                GcnLayerParams(
                    w=arrays[f"level{owner}_gcn{j}_w"],
                    b=arrays[f"level{owner}_gcn{j}_b"],
                    activation=act,
                )
            )
            j += 1
        dense_layers = []
        j = 0
        n_dense = len(lm["dense_widths"])
        while f"level{owner}_dense{j}_w" in arrays:
            act = "linear" if j == n_dense - 1 else "sigmoid"
            dense_layers.append(
                GcnLayerParams(
                    w=arrays[f"level{owner}_dense{j}_w"],
                    b=arrays[f"level{owner}_dense{j}_b"],
                    activation=act,
                )
            )
            j += 1
        level_params.append(GcnParams(gcn=gcn_layers, dense=dense_layers))
    pools = []
    i = 0
    while f"pool{i}_w" in arrays:
        pools.append(
            GcnLayerParams(
                w=arrays[f"pool{i}_w"], b=arrays[f"pool{i}_b"], activation="linear"
            )
        )
        i += 1
    params = ModelParams(
        levels=level_params, prolongations=list(prolongations), pools=pools
    )
    return spec, params
