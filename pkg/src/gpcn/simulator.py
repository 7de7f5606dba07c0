"""Coarse-grained mass-spring simulator for a microtubule under bending load.

Monomers are point masses on a helical lattice (ring-major ids shared with
:func:`gpcn.graphs.make_tube`). Harmonic bonds cover lateral, seam, and
longitudinal associations; harmonic angles cover the lateral pitch angle,
the straight longitudinal angle, and the acute/obtuse lattice-cell angles.
Each interaction kind is scaled by one of five named strength parameters,
the quantities a generated dataset varies and records.

Units are nm / ns / Dalton, so force is Da*nm/ns^2 and energy Da*nm^2/ns^2.
Rest lengths and angles are measured from the constructed geometry itself
(grouped by interaction kind), so the resting configuration has exactly zero
potential energy; construction fails if those measurements drift from the
canonical values they are expected to reproduce.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .numcore import NumericalError, seeded_rng
from .serialize import dump_json, load_arrays, save_arrays, write_csv

__all__ = [
    "STRENGTH_PARAMS",
    "REST_LENGTHS",
    "REST_ANGLES_DEG",
    "MtModel",
    "SimConfig",
    "SimState",
    "Frame",
    "Dataset",
    "SimulationDiverged",
    "build_geometry",
    "bond_energy",
    "angle_energy",
    "forces_and_energy",
    "initial_state",
    "step",
    "run_simulation",
    "tip_deflection",
    "generate_dataset",
    "full_strength_grid",
    "desk_strength_grid",
    "save_dataset",
    "load_dataset",
]

STRENGTH_PARAMS = ("LatAssoc", "LongAssoc", "LatAngle", "LongAngle", "QuadAngles")

REST_LENGTHS = {"lat_lattice": 5.15639, "lat_seam": 5.15639, "longitudinal": 5.0}
REST_ANGLES_DEG = {
    "lat_angle": 153.023,
    "long_angle": 180.0,
    "quad_acute": 77.0694,
    "quad_obtuse": 102.931,
}

_BOND_STRENGTH = {"lat_lattice": "LatAssoc", "lat_seam": "LatAssoc", "longitudinal": "LongAssoc"}
_ANGLE_STRENGTH = {
    "lat_angle": "LatAngle",
    "long_angle": "LongAngle",
    "quad_acute": "QuadAngles",
    "quad_obtuse": "QuadAngles",
}

MASS_DALTON = 50.0


class SimulationDiverged(NumericalError):
    """A particle left the guard volume; the run is unusable."""


@dataclass
class MtModel:
    """Static description of the lattice: geometry plus interaction tables."""

    n_rings: int
    k: int
    offset: int
    positions: np.ndarray  # (n, 3) resting geometry, nm
    mass: float
    bond_idx: np.ndarray  # (m_b, 2)
    bond_kind: list  # kind name per bond
    bond_rest: np.ndarray  # (m_b,) nm, measured from the resting geometry
    angle_idx: np.ndarray  # (m_a, 3) with the vertex in the middle
    angle_kind: list
    angle_rest: np.ndarray  # (m_a,) radians, measured

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def clamp_set(self) -> np.ndarray:
        """First two rings (the held end)."""
        return np.arange(2 * self.k)

    def forced_set(self) -> np.ndarray:
        """Last two rings (the loaded end)."""
        return np.arange(self.n - 2 * self.k, self.n)

    def strength_vectors(self, strengths: dict):
        """Effective per-interaction stiffness for one parameter setting."""
        for name, value in strengths.items():
            if name not in STRENGTH_PARAMS:
                raise ValueError(f"unknown strength parameter {name!r}")
            if value <= 0:
                raise ValueError(f"strength {name} must be positive, got {value}")
        full = {name: 1.0 for name in STRENGTH_PARAMS}
        full.update(strengths)
        kb = np.array([full[_BOND_STRENGTH[kind]] for kind in self.bond_kind])
        ka = np.array([full[_ANGLE_STRENGTH[kind]] for kind in self.angle_kind])
        return kb, ka


def _angle_geometry(pos, idx):
    """Vectorized angle quantities for (i, vertex, k) index triples.

    Used by both geometry construction and the force loop so the rest values
    measured at build time are bitwise reproducible during integration.
    """
    u = pos[idx[:, 0]] - pos[idx[:, 1]]
    v = pos[idx[:, 2]] - pos[idx[:, 1]]
    lu = np.linalg.norm(u, axis=1)
    lv = np.linalg.norm(v, axis=1)
    uh = u / lu[:, None]
    vh = v / lv[:, None]
    cos = np.clip(np.sum(uh * vh, axis=1), -1.0, 1.0)
    theta = np.arccos(cos)
    return theta, cos, uh, vh, lu, lv


def _measured_angle(pos, a, b, c):
    theta, *_ = _angle_geometry(pos, np.array([[a, b, c]]))
    return float(theta[0])


def build_geometry(
    n_rings: int = 48,
    k: int = 13,
    offset: int = 3,
    ring_spacing: float = 5.0,
    lateral_rest: float = 5.15639,
    rest_tol: float = 1e-2,
) -> MtModel:
    """Construct the helical lattice and instantiate every interaction.

    Protofilaments run straight along the tube axis at spacing
    ``ring_spacing``; the helical rise per column is ``offset *
    ring_spacing / k`` and the cylinder radius is solved so lateral bonds
    have length ``lateral_rest``. Every arrangement of bonded particles that
    matches one of the named interaction kinds gets an interaction, with its
    rest value measured from this geometry and checked against the canonical
    value for the kind (failure beyond ``rest_tol`` aborts construction).
    """
    if n_rings < 2 or k < 3:
        raise ValueError("geometry needs n_rings >= 2 and k >= 3")
    if not (0 <= offset < n_rings):
        raise ValueError(f"offset must satisfy 0 <= offset < n_rings, got {offset}")
    rise = offset * ring_spacing / k
    chord2 = lateral_rest**2 - rise**2
    if chord2 <= 0:
        raise ValueError("lateral rest length too short for this offset")
    radius = np.sqrt(chord2) / (2.0 * np.sin(np.pi / k))

    n = n_rings * k
    pos = np.zeros((n, 3))
    for i in range(n_rings):
        for j in range(k):
            theta = 2.0 * np.pi * j / k
            pos[i * k + j] = (radius * np.cos(theta), radius * np.sin(theta), i * ring_spacing + j * rise)

    def node(i, j):
        return i * k + j

    # bonds: longitudinal along columns, lateral along rings, seam closing the wrap
    bond_idx, bond_kind = [], []
    for i in range(n_rings):
        for j in range(k):
            if i + 1 < n_rings:
                bond_idx.append((node(i, j), node(i + 1, j)))
                bond_kind.append("longitudinal")
            if j + 1 < k:
                bond_idx.append((node(i, j), node(i, j + 1)))
                bond_kind.append("lat_lattice")
        if i + offset < n_rings:
            bond_idx.append((node(i, k - 1), node(i + offset, 0)))
            bond_kind.append("lat_seam")
    bond_idx = np.array(bond_idx, dtype=int)

    # lateral successor along the helical chain (seam continues it)
    def lat_next(i, j):
        if j + 1 < k:
            return (i, j + 1)
        if i + offset < n_rings:
            return (i + offset, 0)
        return None

    lat_prev = {}
    for i in range(n_rings):
        for j in range(k):
            nxt = lat_next(i, j)
            if nxt is not None:
                lat_prev[nxt] = (i, j)

    angle_idx, angle_kind = [], []
    for i in range(n_rings):
        for j in range(k):
            v = (i, j)
            nxt = lat_next(i, j)
            prv = lat_prev.get(v)
            if prv is not None and nxt is not None:
                angle_idx.append((node(*prv), node(*v), node(*nxt)))
                angle_kind.append("lat_angle")
            if 0 < i < n_rings - 1:
                angle_idx.append((node(i - 1, j), node(i, j), node(i + 1, j)))
                angle_kind.append("long_angle")
            lat_neighbors = [p for p in (prv, nxt) if p is not None]
            long_neighbors = []
            if i > 0:
                long_neighbors.append((i - 1, j))
            if i + 1 < n_rings:
                long_neighbors.append((i + 1, j))
            for ln in lat_neighbors:
                for gn in long_neighbors:
                    theta = _measured_angle(pos, node(*ln), node(*v), node(*gn))
                    kind = "quad_acute" if np.degrees(theta) < 90.0 else "quad_obtuse"
                    angle_idx.append((node(*ln), node(*v), node(*gn)))
                    angle_kind.append(kind)
    angle_idx = np.array(angle_idx, dtype=int)

    # rest values are measured from the geometry, grouped by kind, and each
    # group must be internally uniform; the canonical table applies to the
    # 13-column offset-3 lattice it was measured on
    d = pos[bond_idx[:, 1]] - pos[bond_idx[:, 0]]
    bond_rest = np.linalg.norm(d, axis=1)
    angle_rest, *_ = _angle_geometry(pos, angle_idx)
    for kinds, rests in ((bond_kind, bond_rest), (angle_kind, np.degrees(angle_rest))):
        for kind in set(kinds):
            group = rests[np.array([k_ == kind for k_ in kinds])]
            if group.max() - group.min() > 1e-6:
                raise ValueError(
                    f"inconsistent geometry: {kind} rest values spread over "
                    f"[{group.min():.6f}, {group.max():.6f}]"
                )
    for kind, rest in zip(bond_kind, bond_rest):
        if abs(rest - REST_LENGTHS[kind]) > rest_tol:
            raise ValueError(
                f"inconsistent geometry: {kind} bond rest {rest:.5f} nm "
                f"vs expected {REST_LENGTHS[kind]}"
            )
    if k == 13 and offset == 3:
        for kind, rest in zip(angle_kind, np.degrees(angle_rest)):
            if abs(rest - REST_ANGLES_DEG[kind]) > rest_tol:
                raise ValueError(
                    f"inconsistent geometry: {kind} rest {rest:.4f} deg "
                    f"vs expected {REST_ANGLES_DEG[kind]}"
                )
    return MtModel(
        n_rings=n_rings,
        k=k,
        offset=offset,
        positions=pos,
        mass=MASS_DALTON,
        bond_idx=bond_idx,
        bond_kind=bond_kind,
        bond_rest=bond_rest,
        angle_idx=angle_idx,
        angle_kind=angle_kind,
        angle_rest=angle_rest,
    )


def bond_energy(k_eff: float, length: float, rest: float) -> float:
    """Harmonic association energy k (length - rest)^2."""
    return float(k_eff * (length - rest) ** 2)


def angle_energy(k_eff: float, theta: float, rest: float) -> float:
    """Harmonic angle energy k (theta - rest)^2, angles in radians."""
    return float(k_eff * (theta - rest) ** 2)


def forces_and_energy(model: MtModel, pos: np.ndarray, kb: np.ndarray, ka: np.ndarray):
    """Analytic forces plus per-particle energy attribution.

    Returns (forces (n,3), per_particle (n,), total). Bond energy splits half
    to each endpoint, angle energy a third to each participant, so the
    attribution sums exactly to the total. Angles whose arms are collinear to
    machine precision contribute energy but zero force (finite fallback).
    """
    n = model.n
    forces = np.zeros((n, 3))
    per_particle = np.zeros(n)

    bi, bj = model.bond_idx[:, 0], model.bond_idx[:, 1]
    d = pos[bj] - pos[bi]
    r = np.linalg.norm(d, axis=1)
    safe_r = np.where(r > 1e-12, r, 1.0)
    dr = r - model.bond_rest
    e_bond = kb * dr * dr
    fmag = np.where(r > 1e-12, 2.0 * kb * dr / safe_r, 0.0)
    fvec = fmag[:, None] * d
    np.add.at(forces, bi, fvec)
    np.add.at(forces, bj, -fvec)
    np.add.at(per_particle, bi, 0.5 * e_bond)
    np.add.at(per_particle, bj, 0.5 * e_bond)

    ai, av, ak2 = model.angle_idx[:, 0], model.angle_idx[:, 1], model.angle_idx[:, 2]
    theta, cos, uh, vh, lu, lv = _angle_geometry(pos, model.angle_idx)
    delta = theta - model.angle_rest
    e_angle = ka * delta * delta
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    ok = sin > 1e-12
    inv_sin = np.where(ok, 1.0 / np.where(ok, sin, 1.0), 0.0)
    dth_da = (cos[:, None] * uh - vh) * (inv_sin / lu)[:, None]
    dth_dc = (cos[:, None] * vh - uh) * (inv_sin / lv)[:, None]
    coeff = (-2.0 * ka * delta)[:, None]
    fa = coeff * dth_da
    fc = coeff * dth_dc
    np.add.at(forces, ai, fa)
    np.add.at(forces, ak2, fc)
    np.add.at(forces, av, -(fa + fc))
    share = e_angle / 3.0
    np.add.at(per_particle, ai, share)
    np.add.at(per_particle, av, share)
    np.add.at(per_particle, ak2, share)

    total = float(e_bond.sum() + e_angle.sum())
    return forces, per_particle, total


@dataclass
class SimConfig:
    """One simulation run: strengths, load protocol, integrator settings."""

    strengths: dict = field(default_factory=dict)
    ramp_steps: int = 2000
    hold_steps: int = 4000
    dt: float = 0.05  # ns
    save_every: int = 500
    max_force: float = 0.4  # Da*nm/ns^2 per loaded particle, applied along -y
    bond_k_base: float = 100.0  # Da/ns^2 per unit strength
    angle_k_base: float = 500.0  # Da*nm^2/ns^2/rad^2 per unit strength
    langevin: bool = True
    temperature: float | None = None  # kT; None picks noise ~1% of max_force
    damping: float | None = None  # ns; None means 100 * dt
    guard_factor: float = 20.0
    feature_columns: int = 10  # 10 drops LatAngle from the inputs, 11 keeps all five

    def __post_init__(self):
        if self.ramp_steps < 1 or self.hold_steps < 0 or self.save_every < 1:
            raise ValueError("step counts must be positive")
        if (self.ramp_steps + self.hold_steps) % self.save_every != 0:
            raise ValueError("save_every must divide the total step count")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.feature_columns not in (10, 11):
            raise ValueError("feature_columns must be 10 or 11")
        for name, value in self.strengths.items():
            if name not in STRENGTH_PARAMS:
                raise ValueError(f"unknown strength parameter {name!r}")
            if not (value > 0):
                raise ValueError(f"strength {name} must be positive, got {value}")

    @property
    def total_steps(self) -> int:
        return self.ramp_steps + self.hold_steps

    def resolved_damping(self) -> float:
        return self.damping if self.damping is not None else 100.0 * self.dt

    def resolved_temperature(self, mass: float) -> float:
        if self.temperature is not None:
            return self.temperature
        # noise force std = 1% of the applied load
        gamma = 1.0 / self.resolved_damping()
        target = 0.01 * max(self.max_force, 1e-12)
        return target**2 * self.dt / (2.0 * mass * gamma)

    def feature_names(self):
        coeffs = (
            ("LatAssoc", "LongAssoc", "LongAngle", "QuadAngles")
            if self.feature_columns == 10
            else STRENGTH_PARAMS
        )
        return ["px", "py", "pz", "vx", "vy", "vz", *coeffs]


@dataclass
class SimState:
    positions: np.ndarray
    velocities: np.ndarray
    step_index: int = 0


@dataclass
class Frame:
    x: np.ndarray  # (n, F)
    y: np.ndarray  # (n, 1)


@dataclass
class Dataset:
    """Stacked frames from one or more runs plus the generation manifest."""

    x: np.ndarray  # (frames, n, F)
    y: np.ndarray  # (frames, n, 1)
    column_names: list
    manifest: dict
    normalization: object | None = None

    @property
    def n_frames(self) -> int:
        return self.x.shape[0]


def initial_state(model: MtModel) -> SimState:
    return SimState(
        positions=model.positions.copy(),
        velocities=np.zeros_like(model.positions),
        step_index=0,
    )


def _ramp_force(config: SimConfig, step_index: int) -> float:
    return min((step_index + 1) / config.ramp_steps, 1.0) * config.max_force


def step(model: MtModel, state: SimState, config: SimConfig, rng=None, *, _cache=None) -> SimState:
    """One velocity-Verlet step with clamps, ramped end load, and optional
    Langevin forces (friction plus one noise draw per step)."""
    kb, ka = _cache if _cache is not None else _effective_stiffness(model, config)
    clamp = model.clamp_set()
    forced = model.forced_set()
    mass = model.mass
    dt = config.dt
    gamma = 1.0 / config.resolved_damping()
    kt = config.resolved_temperature(mass)
    noise = None
    if config.langevin and kt > 0.0:
        if rng is None:
            raise ValueError("langevin noise needs an rng")
        sigma = np.sqrt(2.0 * mass * gamma * kt / dt)
        noise = sigma * rng.normal(size=state.positions.shape)

    def total_force(pos, vel, step_index):
        f, _, _ = forces_and_energy(model, pos, kb, ka)
        f[forced, 1] -= _ramp_force(config, step_index)
        if config.langevin:
            f -= mass * gamma * vel
            if noise is not None:
                f += noise
        return f

    pos, vel = state.positions, state.velocities
    f = total_force(pos, vel, state.step_index)
    vel += 0.5 * dt * f / mass
    pos += dt * vel
    pos[clamp] = model.positions[clamp]
    vel[clamp] = 0.0
    f = total_force(pos, vel, state.step_index)
    vel += 0.5 * dt * f / mass
    vel[clamp] = 0.0
    state.step_index += 1

    guard = config.guard_factor * max(1.0, np.abs(model.positions).max())
    if not np.isfinite(pos).all() or np.abs(pos).max() > guard:
        raise SimulationDiverged(
            f"simulation diverged at step {state.step_index}: "
            f"max |coordinate| = {np.abs(pos[np.isfinite(pos)]).max() if np.isfinite(pos).any() else np.inf:.3g} nm"
        )
    return state


def _effective_stiffness(model: MtModel, config: SimConfig):
    kb, ka = model.strength_vectors(config.strengths)
    return kb * config.bond_k_base, ka * config.angle_k_base


def _make_frame(model: MtModel, state: SimState, config: SimConfig, kb, ka) -> Frame:
    _, per_particle, _ = forces_and_energy(model, state.positions, kb, ka)
    full = {name: 1.0 for name in STRENGTH_PARAMS}
    full.update(config.strengths)
    coeff_names = config.feature_names()[6:]
    coeffs = np.tile([full[name] for name in coeff_names], (model.n, 1))
    x = np.concatenate([state.positions, state.velocities, coeffs], axis=1)
    return Frame(x=x, y=per_particle[:, None])


def run_simulation(model: MtModel, config: SimConfig, seed=0) -> list:
    """Integrate the load protocol and return a frame every ``save_every``
    steps (12 frames at the default settings)."""
    cache = _effective_stiffness(model, config)
    rng = seeded_rng(seed)
    state = initial_state(model)
    frames = []
    for _ in range(config.total_steps):
        state = step(model, state, config, rng, _cache=cache)
        if state.step_index % config.save_every == 0:
            frames.append(_make_frame(model, state, config, *cache))
    return frames


def tip_deflection(model: MtModel, frame: Frame) -> float:
    """Mean displacement of the loaded rings against the resting geometry."""
    forced = model.forced_set()
    moved = frame.x[forced, :3]
    return float(np.linalg.norm(moved - model.positions[forced], axis=1).mean())


def full_strength_grid():
    """Every strength parameter over the canonical seven values (7^5 runs)."""
    values = [0.1, 0.3, 0.6, 1.0, 1.3, 1.6, 1.9]
    return {name: list(values) for name in STRENGTH_PARAMS}


def desk_strength_grid():
    """Two varied association strengths, three values each (9 runs)."""
    return {"LatAssoc": [0.1, 1.0, 1.9], "LongAssoc": [0.1, 1.0, 1.9]}


def generate_dataset(model: MtModel, param_grid: dict, config: SimConfig, seed=0) -> Dataset:
    """One run per grid combination, concatenated into a dataset.

    Combinations iterate in canonical parameter order with ascending values;
    each run draws from an independent child seed. Diverged runs are recorded
    in the manifest and excluded from the tensors.
    """
    for name in param_grid:
        if name not in STRENGTH_PARAMS:
            raise ValueError(f"unknown strength parameter {name!r}")
    varied = [name for name in STRENGTH_PARAMS if name in param_grid]
    if not varied:
        raise ValueError("param_grid must vary at least one strength parameter")
    combos = list(itertools.product(*(sorted(param_grid[name]) for name in varied)))
    children = np.random.SeedSequence(seed).spawn(len(combos))

    xs, ys, runs = [], [], []
    for combo, child in zip(combos, children):
        strengths = dict(config.strengths)
        strengths.update(dict(zip(varied, combo)))
        run_config = replace(config, strengths=strengths)
        record = {"strengths": {k: float(v) for k, v in sorted(strengths.items())}}
        try:
            frames = run_simulation(model, run_config, seed=child)
            record["status"] = "ok"
            record["n_frames"] = len(frames)
            xs.extend(f.x for f in frames)
            ys.extend(f.y for f in frames)
        except SimulationDiverged as exc:
            record["status"] = "diverged"
            record["error"] = str(exc)
        runs.append(record)
    if not xs:
        raise NumericalError("every run diverged; no dataset produced")
    manifest = {
        "seed": int(seed),
        "n_rings": model.n_rings,
        "k": model.k,
        "offset": model.offset,
        "n_nodes": model.n,
        "feature_columns": config.feature_columns,
        "column_names": SimConfig.feature_names(config),
        "grid": {name: [float(v) for v in sorted(param_grid[name])] for name in varied},
        "config": {
            "ramp_steps": config.ramp_steps,
            "hold_steps": config.hold_steps,
            "dt": config.dt,
            "save_every": config.save_every,
            "max_force": config.max_force,
            "bond_k_base": config.bond_k_base,
            "angle_k_base": config.angle_k_base,
            "langevin": config.langevin,
            "temperature": config.resolved_temperature(model.mass),
            "damping": config.resolved_damping(),
        },
        "runs": runs,
    }
    return Dataset(
        x=np.stack(xs),
        y=np.stack(ys),
        column_names=config.feature_names(),
        manifest=manifest,
    )


def save_dataset(dataset: Dataset, out_dir, fmt: str = "bin") -> None:
    """Write a dataset directory: manifest.json plus frames (bin or csv)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    dump_json(os.path.join(out_dir, "manifest.json"), dataset.manifest)
    if fmt == "bin":
        save_arrays(
            os.path.join(out_dir, "frames.bin"),
            {"x": dataset.x, "y": dataset.y},
            {"column_names": dataset.column_names},
        )
    elif fmt == "csv":
        header = ["frame", "node", *dataset.column_names, "energy"]
        rows = []
        t, n, f = dataset.x.shape
        for ti in range(t):
            for ni in range(n):
                rows.append(
                    [ti, ni, *dataset.x[ti, ni].tolist(), float(dataset.y[ti, ni, 0])]
                )
        write_csv(os.path.join(out_dir, "frames.csv"), header, rows)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def load_dataset(out_dir) -> Dataset:
    """Read a dataset directory written by :func:`save_dataset` (either format)."""
    import json
    import os

    with open(os.path.join(out_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    bin_path = os.path.join(out_dir, "frames.bin")
    if os.path.exists(bin_path):
        arrays, meta = load_arrays(bin_path)
        return Dataset(
            x=arrays["x"], y=arrays["y"], column_names=meta["column_names"], manifest=manifest
        )
    csv_path = os.path.join(out_dir, "frames.csv")
    with open(csv_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",")
    column_names = header[2:-1]
    n = int(data[:, 1].max()) + 1
    t = int(data[:, 0].max()) + 1
    feats = len(column_names)
    x = data[:, 2 : 2 + feats].reshape(t, n, feats)
    y = data[:, -1].reshape(t, n, 1)
    return Dataset(x=x, y=y, column_names=column_names, manifest=manifest)
