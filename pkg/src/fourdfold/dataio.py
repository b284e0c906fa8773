"""Trajectory ingestion, serialization, windowing, splits and synthetic data.

Two on-disk formats are supported:

* Trajectory JSON (``fourdfold-traj/1``): sequence, picosecond spacing and
  per-state frames (unit quaternion + translation in angstroms) plus torsion
  (sin, cos) pairs and masks.
* Multi-model PDB with standard column layout (coordinates only; frames and
  torsions are recomputed on load rather than trusted from any auxiliary
  records).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from . import protein
from .geom import Rigid, quat_to_rot, rot_to_quat
from .protein import AtomSet, ProteinState, RigidGroupTemplates, TorsionAngles, Trajectory

TRAJ_FORMAT = "fourdfold-traj/1"


class TrajectoryFormatError(ValueError):
    """Malformed trajectory file."""


class MissingBackboneError(TrajectoryFormatError):
    """A model in a PDB file lacks a required backbone atom."""


# ---------------------------------------------------------------------------
# JSON trajectories
# ---------------------------------------------------------------------------


def save_trajectory(traj: Trajectory, path) -> None:
    states = []
    for state in traj.states:
        quats = rot_to_quat(state.frames.rot)
        frames = [
            [[round(float(v), 9) for v in q], [round(float(v), 9) for v in t]]
            for q, t in zip(quats.tolist(), state.frames.trans.tolist())
        ]
        states.append(
            {
                "frames": frames,
                "torsions": state.torsions.sincos.tolist(),
                "torsion_mask": state.torsions.mask.tolist(),
            }
        )
    doc = {
        "format": TRAJ_FORMAT,
        "sequence": traj.sequence,
        "dt_ps": traj.dt,
        "states": states,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _load_json_trajectory(path) -> Trajectory:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != TRAJ_FORMAT:
        raise TrajectoryFormatError(f"{path}: unsupported format {doc.get('format')!r}")
    seq = doc["sequence"]
    n = len(seq)
    if not doc.get("states"):
        raise TrajectoryFormatError(f"{path}: trajectory holds no states")
    states = []
    for k, raw in enumerate(doc["states"]):
        if len(raw["frames"]) != n or len(raw["torsions"]) != n:
            raise TrajectoryFormatError(f"{path}: state {k} length does not match sequence")
        quats = torch.tensor([f[0] for f in raw["frames"]], dtype=torch.float64)
        trans = torch.tensor([f[1] for f in raw["frames"]], dtype=torch.float64)
        rot = quat_to_rot(quats)  # normalizes, so orthonormality is exact
        sincos = torch.tensor(raw["torsions"], dtype=torch.float64)
        mask = torch.tensor(raw["torsion_mask"], dtype=torch.bool)
        states.append(ProteinState(seq, Rigid(rot, trans), TorsionAngles(sincos, mask)))
    return Trajectory(states, dt=float(doc["dt_ps"]))


# ---------------------------------------------------------------------------
# PDB
# ---------------------------------------------------------------------------


def write_pdb(traj: Trajectory, path, templates: RigidGroupTemplates | None = None) -> None:
    """Emit a multi-MODEL PDB (chain A, occupancy 1.00) from reconstructed atoms."""
    templates = templates or protein.load_templates()
    aatype = traj.states[0].aatype()
    lines = []
    for model_idx, state in enumerate(traj.states, start=1):
        atoms = protein.atoms_from_frames_and_torsions(
            aatype, state.frames, state.torsions, templates
        )
        lines.append(f"MODEL     {model_idx:>4}")
        serial = 1
        for i, code in enumerate(state.sequence):
            ri = int(aatype[i])
            res3 = protein.THREE_LETTER[code]
            for slot, name in enumerate(templates.atom14_names[ri]):
                if not name or not atoms.exists[i, slot]:
                    continue
                x, y, z = (float(v) for v in atoms.coords[i, slot])
                element = name[0]
                lines.append(
                    f"ATOM  {serial:>5}  {name:<3}{res3:>4} A{i + 1:>4}    "
                    f"{x:8.3f}{y:8.3f}{z:8.3f}{1.00:6.2f}{0.00:6.2f}          {element:>2}"
                )
                serial += 1
        lines.append(f"TER   {serial:>5}      {protein.THREE_LETTER[state.sequence[-1]]:>3} A{len(state.sequence):>4}")
        lines.append("ENDMDL")
    lines.append("END")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_pdb_trajectory(path, dt: float = 1.0, templates: RigidGroupTemplates | None = None) -> Trajectory:
    templates = templates or protein.load_templates()
    models: list[dict] = []
    current: dict | None = None
    saw_model_record = False
    with open(path) as fh:
        for line in fh:
            rec = line[:6]
            if rec == "MODEL ":
                saw_model_record = True
                current = {}
                models.append(current)
            elif rec in ("ATOM  ", "HETATM"):
                if current is None:
                    current = {}
                    models.append(current)
                name = line[12:16].strip()
                res3 = line[17:20].strip()
                resseq = int(line[22:26])
                xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
                current.setdefault(resseq, {"res3": res3, "atoms": {}})
                if current[resseq]["res3"] != res3:
                    raise TrajectoryFormatError(
                        f"{path}: conflicting residue names at residue {resseq}"
                    )
                current[resseq]["atoms"][name] = xyz
            elif rec == "ENDMDL" and saw_model_record:
                current = None
    models = [m for m in models if m]
    if not models:
        raise TrajectoryFormatError(f"{path}: no coordinates found")

    resseqs = sorted(models[0])
    try:
        seq = "".join(protein.ONE_LETTER[models[0][r]["res3"]] for r in resseqs)
    except KeyError as exc:
        raise TrajectoryFormatError(f"{path}: unknown residue name {exc}") from exc
    aatype = protein.seq_to_aatype(seq)

    states = []
    for m_idx, model in enumerate(models, start=1):
        if sorted(model) != resseqs or any(model[r]["res3"] != models[0][r]["res3"] for r in resseqs):
            raise TrajectoryFormatError(f"{path}: model {m_idx} sequence mismatch")
        n = len(resseqs)
        coords = torch.zeros(n, protein.ATOM_SLOTS, 3, dtype=torch.float64)
        exists = torch.zeros(n, protein.ATOM_SLOTS, dtype=torch.bool)
        for i, r in enumerate(resseqs):
            names = templates.atom14_names[int(aatype[i])]
            for name, xyz in model[r]["atoms"].items():
                if name in names:
                    slot = names.index(name)
                    coords[i, slot] = torch.tensor(xyz, dtype=torch.float64)
                    exists[i, slot] = True
            for required in ("N", "CA", "C"):
                if not exists[i, names.index(required)]:
                    raise MissingBackboneError(
                        f"{path}: model {m_idx} residue {r} is missing backbone atom {required}"
                    )
        atoms = AtomSet(coords, exists)
        frames = protein.frames_from_backbone(coords[:, 0], coords[:, 1], coords[:, 2])
        torsions = protein.torsions_from_atoms(aatype, atoms, templates)
        states.append(ProteinState(seq, frames, torsions))
    return Trajectory(states, dt=dt)


def load_trajectory(path, dt: float = 1.0) -> Trajectory:
    """Load a trajectory from JSON or (multi-model) PDB, by file suffix."""
    text = str(path)
    if text.endswith((".pdb", ".ent")):
        return _load_pdb_trajectory(path, dt=dt)
    return _load_json_trajectory(path)


# ---------------------------------------------------------------------------
# Windows and splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowSample:
    """One training example: motion steps, reference step, target steps."""

    motion: list
    reference: ProteinState
    targets: list
    protein_id: str = ""
    window_start: int = 0

    def __post_init__(self):
        seq = self.reference.sequence
        if any(s.sequence != seq for s in self.motion + self.targets):
            raise ValueError("window states must share one sequence")


def make_windows(
    traj: Trajectory,
    s: int,
    s_mot: int = 2,
    s_ref: int = 1,
    stride: int = 1,
    protein_id: str = "",
) -> list:
    """Contiguous [motion..., reference, targets...] windows at the given stride."""
    span = s_mot + s_ref + s
    length = len(traj)
    if length < span:
        warnings.warn(
            f"trajectory too short for windows: {length} states < {span} needed",
            stacklevel=2,
        )
        return []
    windows = []
    for start in range(0, length - span + 1, stride):
        states = traj.states[start : start + span]
        windows.append(
            WindowSample(
                motion=list(states[:s_mot]),
                reference=states[s_mot],
                targets=list(states[s_mot + s_ref :]),
                protein_id=protein_id,
                window_start=start,
            )
        )
    return windows


def split_s2l(traj: Trajectory) -> tuple:
    """Short-to-long split: first 90% of states for training, rest for eval."""
    if len(traj) < 20:
        raise ValueError(f"trajectory too short for a 90/10 split: {len(traj)}")
    cut = math.floor(0.9 * len(traj))
    return (
        Trajectory(traj.states[:cut], dt=traj.dt),
        Trajectory(traj.states[cut:], dt=traj.dt),
    )


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic partition of protein identities for the O2O task."""

    mode: str
    seed: int
    train: tuple
    val: tuple
    test: tuple

    def partition_of(self, protein_id: str) -> str:
        for name in ("train", "val", "test"):
            if protein_id in getattr(self, name):
                return name
        raise KeyError(protein_id)


def split_o2o(protein_ids, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> SplitSpec:
    """Partition protein ids into train/val/test by seeded shuffle."""
    ids = list(protein_ids)
    if len(ids) < 3 or len(ids) < len(fractions):
        raise ValueError(f"need at least {max(3, len(fractions))} proteins, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = int(len(ids) * fractions[0])
    n_val = int(len(ids) * fractions[1])
    n_train = max(1, n_train)
    n_val = max(1, n_val)
    if n_train + n_val >= len(ids):
        n_train = len(ids) - 2
        n_val = 1
    return SplitSpec(
        mode="O2O",
        seed=seed,
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
    )


# ---------------------------------------------------------------------------
# Synthetic trajectories
# ---------------------------------------------------------------------------

TWO_STATE_NOISE_BOUND = 0.15  # angstrom, hard clip on per-frame jitter


def _base_fold(sequence: str, templates: RigidGroupTemplates) -> Rigid:
    """Idealized helical fold used as the resting conformation."""
    n = len(sequence)
    phi = torch.full((n,), math.radians(-60.0), dtype=torch.float64)
    psi = torch.full((n,), math.radians(-45.0), dtype=torch.float64)
    return protein.build_chain_frames(sequence, phi, psi, templates)


def _state_from_frames(
    sequence: str, aatype, frames: Rigid, chi_angles, templates, step_time=None
) -> ProteinState:
    """Protein state with torsions measured from the reconstructed atoms."""
    mask = protein.default_torsion_mask(aatype, templates)
    angles = torch.zeros(len(sequence), 7, dtype=torch.float64)
    angles[:, 3:] = chi_angles
    tors = protein.torsions_from_angles(angles, mask)
    atoms = protein.atoms_from_frames_and_torsions(aatype, frames, tors, templates)
    measured = protein.torsions_from_atoms(aatype, atoms, templates)
    return ProteinState(sequence, frames, measured, step_time=step_time)


def _hinge_transform(angle: float, axis: np.ndarray, pivot: torch.Tensor) -> Rigid:
    rot = torch.matrix_exp(
        torch.tensor(angle, dtype=torch.float64)
        * torch.as_tensor(
            np.array(
                [
                    [0.0, -axis[2], axis[1]],
                    [axis[2], 0.0, -axis[0]],
                    [-axis[1], axis[0], 0.0],
                ]
            )
        )
    )
    return Rigid(rot, pivot - rot @ pivot)


def synth_trajectory(
    kind: str,
    n: int,
    l: int,
    dt: float = 1.0,
    seed: int = 0,
    amplitude: float = 0.5,
    period: int = 32,
    templates: RigidGroupTemplates | None = None,
) -> Trajectory:
    """Deterministic synthetic peptide trajectories for desk-scale experiments.

    kinds: ``hinge`` rotates the C-terminal half about a pivot residue with a
    sinusoidal angle (radians); ``breathe`` sinusoidally displaces the
    C-terminal half along the inter-domain axis (amplitude in angstroms);
    ``two_state`` alternates between two conformations with noisy dwell times
    and bounded per-frame jitter.
    """
    if kind not in ("hinge", "breathe", "two_state"):
        raise ValueError(f"unknown trajectory kind: {kind!r}")
    if n < 4 or l < 4:
        raise ValueError("need n >= 4 residues and l >= 4 states")
    templates = templates or protein.load_templates()
    rng = np.random.default_rng(seed)
    sequence = "".join(rng.choice(list(protein.RESTYPES), size=n))
    aatype = protein.seq_to_aatype(sequence)
    base = _base_fold(sequence, templates)
    chi = torch.as_tensor(rng.uniform(-math.pi, math.pi, (n, 4)))
    pivot_idx = n // 2
    pivot = base.trans[pivot_idx].clone()
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    moving = torch.arange(n) >= pivot_idx

    def with_moved_half(g: Rigid) -> Rigid:
        moved = g.compose(base)
        rot = torch.where(moving[:, None, None], moved.rot, base.rot)
        trans = torch.where(moving[:, None], moved.trans, base.trans)
        return Rigid(rot, trans)

    states = []
    if kind == "hinge":
        for s_idx in range(l):
            theta = amplitude * math.sin(2 * math.pi * s_idx / period)
            frames = with_moved_half(_hinge_transform(theta, axis, pivot))
            states.append(_state_from_frames(sequence, aatype, frames, chi, templates, s_idx * dt))
    elif kind == "breathe":
        direction = base.trans[moving].mean(0) - base.trans[~moving].mean(0)
        direction = direction / torch.linalg.norm(direction)
        for s_idx in range(l):
            d = amplitude * math.sin(2 * math.pi * s_idx / period)
            g = Rigid(torch.eye(3, dtype=torch.float64), d * direction)
            frames = with_moved_half(g)
            states.append(_state_from_frames(sequence, aatype, frames, chi, templates, s_idx * dt))
    else:  # two_state
        conf_a = base
        conf_b = with_moved_half(_hinge_transform(amplitude, axis, pivot))
        dwell_mean = max(2, period // 4)
        occupancy = []
        flag = False
        while len(occupancy) < l:
            dwell = max(1, int(round(rng.normal(dwell_mean, dwell_mean / 3))))
            occupancy.extend([flag] * dwell)
            flag = not flag
        for s_idx in range(l):
            conf = conf_b if occupancy[s_idx] else conf_a
            jitter = np.clip(
                rng.normal(0.0, TWO_STATE_NOISE_BOUND / 3, (n, 3)),
                -TWO_STATE_NOISE_BOUND,
                TWO_STATE_NOISE_BOUND,
            )
            frames = Rigid(conf.rot, conf.trans + torch.as_tensor(jitter))
            states.append(_state_from_frames(sequence, aatype, frames, chi, templates, s_idx * dt))
    return Trajectory(states, dt=dt)


def synth_two_state_conformations(
    n: int, seed: int, amplitude: float = 0.5, templates: RigidGroupTemplates | None = None
):
    """CA coordinates of the two generator conformations (for self-checks)."""
    templates = templates or protein.load_templates()
    rng = np.random.default_rng(seed)
    sequence = "".join(rng.choice(list(protein.RESTYPES), size=n))
    base = _base_fold(sequence, templates)
    rng.uniform(-math.pi, math.pi, (n, 4))  # keep the stream aligned with synth_trajectory
    pivot_idx = n // 2
    pivot = base.trans[pivot_idx].clone()
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    moving = torch.arange(n) >= pivot_idx
    g = _hinge_transform(amplitude, axis, pivot)
    moved = g.compose(base)
    trans_b = torch.where(moving[:, None], moved.trans, base.trans)
    return base.trans.clone(), trans_b
