"""Protein parameterization: backbone frames, torsion angles, rigid groups.

A residue is a backbone frame (N, CA, C with CA at the local origin) plus
seven torsion angles ordered (omega, phi, psi, chi1..chi4), stored as
(sin, cos) pairs.  Side-chain and backbone-oxygen atoms live in rigid groups
positioned by chaining torsion rotations from the backbone frame, using the
idealized per-residue geometry shipped in ``data/templates.json``.

Torsion conventions (shared by reconstruction and extraction):

* omega_i is the dihedral (CA_{i-1}, C_{i-1}, N_i, CA_i); masked for i = 0.
* phi_i   is the dihedral (C_{i-1}, N_i, CA_i, C_i); masked for i = 0.
* psi_i   is the dihedral (N_i, CA_i, C_i, O_i) + pi, which makes the stored
  value the rotation angle applied to the oxygen's rigid group.
* chi_k   is the standard four-atom side-chain dihedral.

Coordinates are in angstroms throughout.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import torch
from torch import Tensor

from .geom import Rigid

# Canonical residue-type order; indices are used everywhere a residue type is
# stored numerically.
RESTYPES = "ARNDCQEGHILKMFPSTWYV"
RESTYPE_INDEX = {c: i for i, c in enumerate(RESTYPES)}
THREE_LETTER = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "VAL", "TRP", "TYR",
]
# fix order to match RESTYPES
THREE_LETTER = {
    "A": "ALA", "R": "ARG", "N": "ASN", "D": "ASP", "C": "CYS", "Q": "GLN",
    "E": "GLU", "G": "GLY", "H": "HIS", "I": "ILE", "L": "LEU", "K": "LYS",
    "M": "MET", "F": "PHE", "P": "PRO", "S": "SER", "T": "THR", "W": "TRP",
    "Y": "TYR", "V": "VAL",
}
ONE_LETTER = {v: k for k, v in THREE_LETTER.items()}

ATOM_SLOTS = 14
TORSION_NAMES = ("omega", "phi", "psi", "chi1", "chi2", "chi3", "chi4")
# atom14 slots 0..3 are always N, CA, C, O
ATOM_N, ATOM_CA, ATOM_C, ATOM_O = 0, 1, 2, 3


class GeometryError(ValueError):
    """Degenerate geometry (collinear/coincident atoms)."""


class TemplateError(ValueError):
    """Template table failed validation."""


def parse_residue_code(code: str) -> str:
    """Normalize a one- or three-letter residue code to one-letter form."""
    code = code.strip().upper()
    if len(code) == 1 and code in RESTYPE_INDEX:
        return code
    if len(code) == 3 and code in ONE_LETTER:
        return ONE_LETTER[code]
    raise ValueError(f"unknown residue code: {code!r}")


def seq_to_aatype(sequence: str) -> Tensor:
    return torch.tensor([RESTYPE_INDEX[parse_residue_code(c)] for c in sequence], dtype=torch.long)


def aatype_to_seq(aatype: Tensor) -> str:
    return "".join(RESTYPES[int(i)] for i in aatype)


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidGroupTemplates:
    """Idealized rigid-group geometry for the 20 residue types, as tensors.

    All tensors are indexed by residue-type index along dim 0 and are
    read-only shared data after load.
    """

    atom14_names: tuple          # 20 x 14 atom names ('' = unused slot)
    atom_exists: Tensor          # (20, 14) bool
    atom_group: Tensor           # (20, 14) long, rigid-group index per atom
    atom_pos: Tensor             # (20, 14, 3) local coordinates in group frame
    default_rot: Tensor          # (20, 8, 3, 3) group frame relative to parent
    default_trans: Tensor        # (20, 8, 3)
    chi_mask: Tensor             # (20, 4) bool
    chi_pi_periodic: Tensor      # (20, 4) bool
    chi_atom14_idx: Tensor       # (20, 4, 4) long, -1 where undefined
    swap_perm: Tensor            # (20, 14) long, symmetric-atom renaming
    version: str = "fourdfold-templates/1"

    def atom_index(self, restype: str, atom_name: str) -> int:
        names = self.atom14_names[RESTYPE_INDEX[parse_residue_code(restype)]]
        return names.index(atom_name)


def _frame_rotation(ex: Tensor, ey: Tensor) -> Tensor:
    """Rotation with x-axis along ex and y in the (ex, ey) half-plane."""
    x = ex / torch.linalg.norm(ex)
    y = ey - (ey @ x) * x
    y = y / torch.linalg.norm(y)
    z = torch.linalg.cross(x, y)
    return torch.stack([x, y, z], dim=-1)


@functools.lru_cache(maxsize=1)
def load_templates() -> RigidGroupTemplates:
    """Load and validate the shipped template table (checksummed JSON)."""
    raw = resources.files("fourdfold").joinpath("data/templates.json").read_text()
    doc = json.loads(raw)
    if doc.get("format") != "fourdfold-templates/1":
        raise TemplateError(f"unsupported template format: {doc.get('format')!r}")
    payload = json.dumps(doc["data"], sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(payload.encode()).hexdigest()
    if digest != doc["sha256"]:
        raise TemplateError("template table checksum mismatch")
    data = doc["data"]

    n_types = len(RESTYPES)
    names_out = []
    atom_exists = torch.zeros(n_types, ATOM_SLOTS, dtype=torch.bool)
    atom_group = torch.zeros(n_types, ATOM_SLOTS, dtype=torch.long)
    atom_pos = torch.zeros(n_types, ATOM_SLOTS, 3, dtype=torch.float64)
    default_rot = torch.eye(3, dtype=torch.float64).repeat(n_types, 8, 1, 1)
    default_trans = torch.zeros(n_types, 8, 3, dtype=torch.float64)
    chi_mask = torch.zeros(n_types, 4, dtype=torch.bool)
    chi_pi = torch.zeros(n_types, 4, dtype=torch.bool)
    chi_idx = torch.full((n_types, 4, 4), -1, dtype=torch.long)
    swap_perm = torch.arange(ATOM_SLOTS).repeat(n_types, 1)

    for res3, entry in data["residues"].items():
        ri = RESTYPE_INDEX[ONE_LETTER[res3]]
        names = entry["atom14"]
        names_out.append((ri, tuple(names)))
        name_to_slot = {n: i for i, n in enumerate(names) if n}
        atoms = entry["atoms"]
        if set(atoms) != set(name_to_slot):
            raise TemplateError(f"{res3}: atom table does not match atom14 layout")
        pos = {}
        for name, spec in atoms.items():
            slot = name_to_slot[name]
            atom_exists[ri, slot] = True
            atom_group[ri, slot] = spec["group"]
            p = torch.tensor(spec["pos"], dtype=torch.float64)
            atom_pos[ri, slot] = p
            pos[name] = p
        chi_mask[ri] = torch.tensor(entry["chi_mask"])
        chi_pi[ri] = torch.tensor(entry["chi_pi_periodic"])
        for k, quad in enumerate(entry["chi_atoms"]):
            if quad:
                chi_idx[ri, k] = torch.tensor([name_to_slot[a] for a in quad])
        for a, b in entry["symmetric_swaps"]:
            ia, ib = name_to_slot[a], name_to_slot[b]
            swap_perm[ri, ia], swap_perm[ri, ib] = ib, ia

        # group frames relative to their parent group
        # 0 backbone and 1 pre-omega: identity (pre-omega holds no atoms)
        default_rot[ri, 2] = _frame_rotation(pos["N"] - pos["CA"], torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64))
        default_trans[ri, 2] = pos["N"]
        default_rot[ri, 3] = _frame_rotation(pos["C"] - pos["CA"], pos["CA"] - pos["N"])
        default_trans[ri, 3] = pos["C"]
        if entry["chi_mask"][0]:
            a, b, c, _ = entry["chi_atoms"][0]
            default_rot[ri, 4] = _frame_rotation(pos[c] - pos[b], pos[a] - pos[b])
            default_trans[ri, 4] = pos[c]
        for k in range(1, 4):
            if entry["chi_mask"][k]:
                axis_end = pos[entry["chi_atoms"][k][2]]
                default_rot[ri, 4 + k] = _frame_rotation(
                    axis_end, torch.tensor([-1.0, 0.0, 0.0], dtype=torch.float64)
                )
                default_trans[ri, 4 + k] = axis_end

    names_out.sort()
    return RigidGroupTemplates(
        atom14_names=tuple(n for _, n in names_out),
        atom_exists=atom_exists,
        atom_group=atom_group,
        atom_pos=atom_pos,
        default_rot=default_rot,
        default_trans=default_trans,
        chi_mask=chi_mask,
        chi_pi_periodic=chi_pi,
        chi_atom14_idx=chi_idx,
        swap_perm=swap_perm,
    )


# ---------------------------------------------------------------------------
# Core containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorsionAngles:
    """(sin, cos) pairs for the 7 torsions with per-angle defined-ness mask."""

    sincos: Tensor  # (..., 7, 2)
    mask: Tensor    # (..., 7) bool

    def __post_init__(self):
        if self.sincos.shape[-2:] != (7, 2) or self.mask.shape[-1] != 7:
            raise ValueError("torsions must have shape (..., 7, 2) with mask (..., 7)")
        if self.sincos.shape[:-2] != self.mask.shape[:-1]:
            raise ValueError("torsion value/mask batch shapes differ")

    def angles(self) -> Tensor:
        """Angles in radians, atan2(sin, cos); undefined entries arbitrary."""
        return torch.atan2(self.sincos[..., 0], self.sincos[..., 1])

    def __getitem__(self, idx) -> "TorsionAngles":
        return TorsionAngles(self.sincos[idx], self.mask[idx])

    def to(self, dtype=None) -> "TorsionAngles":
        return TorsionAngles(self.sincos.to(dtype=dtype), self.mask)


def torsions_from_angles(angles: Tensor, mask: Tensor) -> TorsionAngles:
    return TorsionAngles(torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1), mask)


@dataclass(frozen=True)
class AtomSet:
    """Fixed 14-slot heavy-atom coordinates with an existence mask."""

    coords: Tensor  # (..., N, 14, 3) angstrom
    exists: Tensor  # (..., N, 14) bool

    def __post_init__(self):
        if self.coords.shape[-2:] != (ATOM_SLOTS, 3) or self.exists.shape[-1] != ATOM_SLOTS:
            raise ValueError("atom sets use a fixed 14-slot layout")

    def backbone(self) -> Tensor:
        """(..., N, 4, 3) coordinates of N, CA, C, O."""
        return self.coords[..., :4, :]

    def ca(self) -> Tensor:
        return self.coords[..., ATOM_CA, :]


@dataclass(frozen=True)
class ProteinState:
    """One time slice: sequence, backbone frames and torsions."""

    sequence: str
    frames: Rigid         # batch shape (N,)
    torsions: TorsionAngles
    step_time: float | None = None  # picoseconds, carried as metadata only

    def __post_init__(self):
        n = len(self.sequence)
        if self.frames.shape != (n,) or self.torsions.sincos.shape[:-2] != (n,):
            raise ValueError("sequence, frames and torsions must share length N")

    @property
    def n_residues(self) -> int:
        return len(self.sequence)

    def aatype(self) -> Tensor:
        return seq_to_aatype(self.sequence)


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered protein states with a fixed spacing in picoseconds."""

    states: list
    dt: float = 1.0

    def __post_init__(self):
        if len(self.states) < 1:
            raise ValueError("a trajectory holds at least one state")
        seq = self.states[0].sequence
        if any(s.sequence != seq for s in self.states):
            raise ValueError("all states must share one sequence")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def sequence(self) -> str:
        return self.states[0].sequence


# ---------------------------------------------------------------------------
# Frames and torsions from / to atoms
# ---------------------------------------------------------------------------


def frames_from_backbone(n: Tensor, ca: Tensor, c: Tensor) -> Rigid:
    """Backbone frame from N/CA/C coordinates (broadcastable (..., 3)).

    x axis along C-CA, z along x cross (N-CA), y completing the right-handed
    basis; translation at CA.  Raises GeometryError on degenerate input.
    """
    x = c - ca
    x_norm = torch.linalg.norm(x, dim=-1, keepdim=True)
    u = n - ca
    z = torch.linalg.cross(x, u)
    z_norm = torch.linalg.norm(z, dim=-1, keepdim=True)
    if bool((x_norm < 1e-6).any()) or bool((z_norm < 1e-6).any()):
        raise GeometryError("collinear or coincident backbone atoms")
    x = x / x_norm
    z = z / z_norm
    y = torch.linalg.cross(z, x)
    return Rigid(torch.stack([x, y, z], dim=-1), ca)


def dihedral(p1: Tensor, p2: Tensor, p3: Tensor, p4: Tensor) -> Tensor:
    """Signed dihedral angle of four points, standard convention."""
    b0 = p1 - p2
    b1 = p3 - p2
    b1 = b1 / torch.linalg.norm(b1, dim=-1, keepdim=True)
    b2 = p4 - p3
    v = b0 - (b0 * b1).sum(-1, keepdim=True) * b1
    w = b2 - (b2 * b1).sum(-1, keepdim=True) * b1
    x = (v * w).sum(-1)
    y = (torch.linalg.cross(b1, v) * w).sum(-1)
    return torch.atan2(y, x)


def _rot_x(sincos: Tensor) -> Tensor:
    """Rotation about the local x axis from normalized (sin, cos) pairs."""
    norm = torch.linalg.norm(sincos, dim=-1, keepdim=True).clamp(min=1e-8)
    s, c = (sincos / norm).unbind(-1)
    one = torch.ones_like(s)
    zero = torch.zeros_like(s)
    return torch.stack(
        [
            torch.stack([one, zero, zero], dim=-1),
            torch.stack([zero, c, -s], dim=-1),
            torch.stack([zero, s, c], dim=-1),
        ],
        dim=-2,
    )


def group_frames(
    aatype: Tensor, frames: Rigid, torsions: TorsionAngles, templates: RigidGroupTemplates
) -> Rigid:
    """Global frames of the 8 rigid groups per residue, shape (..., N, 8)."""
    dtype = frames.rot.dtype
    d_rot = templates.default_rot[aatype].to(dtype)      # (..., N, 8, 3, 3)
    d_trans = templates.default_trans[aatype].to(dtype)  # (..., N, 8, 3)

    sincos = torsions.sincos.to(dtype)
    ident = torch.zeros(*sincos.shape[:-2], 1, 2, dtype=dtype, device=sincos.device)
    ident[..., 0, 1] = 1.0
    # groups 1..7 rotate by torsions 0..6; group 0 stays fixed
    rot_x = _rot_x(torch.cat([ident, sincos], dim=-2))   # (..., N, 8, 3, 3)
    local = Rigid(d_rot @ rot_x, d_trans)

    out_rot = [frames.rot]
    out_trans = [frames.trans]
    # groups 1-4 hang off the backbone frame; chi2..chi4 chain through the
    # preceding chi group
    for g in range(1, 8):
        parent = Rigid(out_rot[0], out_trans[0]) if g <= 4 else Rigid(out_rot[g - 1], out_trans[g - 1])
        joined = parent.compose(Rigid(local.rot[..., g, :, :], local.trans[..., g, :]))
        out_rot.append(joined.rot)
        out_trans.append(joined.trans)
    return Rigid(torch.stack(out_rot, dim=-3), torch.stack(out_trans, dim=-2))


def atoms_from_frames_and_torsions(
    aatype: Tensor, frames: Rigid, torsions: TorsionAngles, templates: RigidGroupTemplates
) -> AtomSet:
    """Reconstruct the 14-slot heavy atoms from frames and torsion angles."""
    g = group_frames(aatype, frames, torsions, templates)
    group_idx = templates.atom_group[aatype]                      # (..., N, 14)
    sel = group_idx[..., None, None].expand(*group_idx.shape, 3, 3)
    rot = torch.gather(g.rot, -3, sel)
    sel_t = group_idx[..., None].expand(*group_idx.shape, 3)
    trans = torch.gather(g.trans, -2, sel_t)
    local = templates.atom_pos[aatype].to(frames.rot.dtype)
    coords = torch.einsum("...ij,...j->...i", rot, local) + trans
    exists = templates.atom_exists[aatype]
    return AtomSet(coords * exists[..., None], exists.expand(coords.shape[:-1]).clone())


def torsions_from_atoms(
    aatype: Tensor, atoms: AtomSet, templates: RigidGroupTemplates
) -> TorsionAngles:
    """Measure the 7 torsions from coordinates; missing atoms clear the mask."""
    coords = atoms.coords
    exists = atoms.exists
    batch = coords.shape[:-3]
    n = coords.shape[-3]
    dtype = coords.dtype

    angles = torch.zeros(*batch, n, 7, dtype=dtype, device=coords.device)
    mask = torch.zeros(*batch, n, 7, dtype=torch.bool, device=coords.device)

    bb_ok = exists[..., :4].all(-1)
    prev_ok = torch.zeros_like(bb_ok)
    prev_ok[..., 1:] = bb_ok[..., :-1]

    ca, c_at, n_at, o_at = (
        coords[..., ATOM_CA, :],
        coords[..., ATOM_C, :],
        coords[..., ATOM_N, :],
        coords[..., ATOM_O, :],
    )
    prev_ca = torch.roll(ca, 1, dims=-2)
    prev_c = torch.roll(c_at, 1, dims=-2)

    angles[..., 0] = dihedral(prev_ca, prev_c, n_at, ca)
    angles[..., 1] = dihedral(prev_c, n_at, ca, c_at)
    angles[..., 2] = dihedral(n_at, ca, c_at, o_at) + math.pi
    mask[..., 0] = bb_ok & prev_ok
    mask[..., 1] = bb_ok & prev_ok
    mask[..., 0, 0:2] = False  # no predecessor for the first residue
    mask[..., 2] = bb_ok & exists[..., ATOM_O]

    chi_idx = templates.chi_atom14_idx[aatype]     # (..., N, 4, 4)
    chi_defined = templates.chi_mask[aatype]       # (..., N, 4)
    safe_idx = chi_idx.clamp(min=0)
    sel = safe_idx[..., None].expand(*safe_idx.shape, 3)
    quad = torch.gather(coords[..., None, :, :].expand(*coords.shape[:-2], 4, ATOM_SLOTS, 3), -2, sel)
    angles[..., 3:] = dihedral(quad[..., 0, :], quad[..., 1, :], quad[..., 2, :], quad[..., 3, :])
    atoms_present = torch.gather(
        exists[..., None, :].expand(*exists.shape[:-1], 4, ATOM_SLOTS), -1, safe_idx
    ).all(-1)
    mask[..., 3:] = chi_defined & atoms_present

    sincos = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1)
    neutral = torch.zeros_like(sincos)
    neutral[..., 1] = 1.0
    sincos = torch.where(mask[..., None], sincos, neutral)
    return TorsionAngles(sincos, mask)


def alt_torsions(
    aatype: Tensor, torsions: TorsionAngles, templates: RigidGroupTemplates
) -> TorsionAngles:
    """Alternative ground truth: pi-shift the 180-degree-symmetric chi angles."""
    flip = templates.chi_pi_periodic[aatype]  # (..., N, 4)
    pad = torch.zeros(*flip.shape[:-1], 3, dtype=torch.bool, device=flip.device)
    flip7 = torch.cat([pad, flip], dim=-1) & torsions.mask
    sincos = torch.where(flip7[..., None], -torsions.sincos, torsions.sincos)
    return TorsionAngles(sincos, torsions.mask)


def default_torsion_mask(aatype: Tensor, templates: RigidGroupTemplates) -> Tensor:
    """Torsion mask implied by sequence alone (all atoms assumed present)."""
    n = aatype.shape[-1]
    mask = torch.ones(*aatype.shape, 7, dtype=torch.bool)
    mask[..., 3:] = templates.chi_mask[aatype]
    mask[..., 0, 0:2] = False
    return mask


# ---------------------------------------------------------------------------
# Idealized chain construction
# ---------------------------------------------------------------------------

# standard peptide-bond geometry linking residue i to i+1
PEPTIDE_BOND_C_N = 1.329       # angstrom
PEPTIDE_ANGLE_CA_C_N = math.radians(116.2)
PEPTIDE_ANGLE_C_N_CA = math.radians(121.7)


def place_atom(a: Tensor, b: Tensor, c: Tensor, bond: float, angle: float, dihed: float) -> Tensor:
    """Place atom d bonded to c with |cd| = bond, angle(b,c,d) and dihedral(a,b,c,d)."""
    bc = c - b
    bc = bc / torch.linalg.norm(bc)
    n = torch.linalg.cross(b - a, bc)
    n = n / torch.linalg.norm(n)
    m = torch.stack([bc, torch.linalg.cross(n, bc), n], dim=-1)
    d_local = torch.tensor(
        [-bond * math.cos(angle), bond * math.sin(angle) * math.cos(dihed), bond * math.sin(angle) * math.sin(dihed)],
        dtype=a.dtype,
    )
    return c + m @ d_local


def build_chain_frames(
    sequence: str,
    phi: Tensor,
    psi: Tensor,
    templates: RigidGroupTemplates,
    omega: Tensor | None = None,
    dtype=torch.float64,
) -> Rigid:
    """Backbone frames of an idealized chain with prescribed phi/psi/omega.

    Residue 0 sits at the identity frame; subsequent residues are linked with
    standard peptide-bond geometry and each residue's own idealized internal
    coordinates, so the torsions measured from the reconstructed atoms equal
    the prescribed ones exactly.  ``phi[i]``/``omega[i]`` apply to the bond
    preceding residue i (entries for i = 0 ignored); ``psi[i]`` to the bond
    following it (entry for the last residue ignored).
    """
    aatype = seq_to_aatype(sequence)
    n = len(sequence)
    if omega is None:
        omega = torch.full((n,), math.pi, dtype=dtype)
    rots = [torch.eye(3, dtype=dtype)]
    trans = [torch.zeros(3, dtype=dtype)]
    for i in range(1, n):
        prev = Rigid(rots[-1], trans[-1])
        prev_local = templates.atom_pos[aatype[i - 1]].to(dtype)
        n_prev = prev.apply(prev_local[ATOM_N])
        ca_prev = prev.apply(prev_local[ATOM_CA])
        c_prev = prev.apply(prev_local[ATOM_C])
        cur_local = templates.atom_pos[aatype[i]].to(dtype)
        bond_n_ca = torch.linalg.norm(cur_local[ATOM_CA] - cur_local[ATOM_N]).item()
        bond_ca_c = torch.linalg.norm(cur_local[ATOM_C] - cur_local[ATOM_CA]).item()
        cos_n_ca_c = float(
            (cur_local[ATOM_N] / torch.linalg.norm(cur_local[ATOM_N]))
            @ (cur_local[ATOM_C] / torch.linalg.norm(cur_local[ATOM_C]))
        )
        angle_n_ca_c = math.acos(max(-1.0, min(1.0, cos_n_ca_c)))
        n_i = place_atom(n_prev, ca_prev, c_prev, PEPTIDE_BOND_C_N, PEPTIDE_ANGLE_CA_C_N, float(psi[i - 1]))
        ca_i = place_atom(ca_prev, c_prev, n_i, bond_n_ca, PEPTIDE_ANGLE_C_N_CA, float(omega[i]))
        c_i = place_atom(c_prev, n_i, ca_i, bond_ca_c, angle_n_ca_c, float(phi[i]))
        frame = frames_from_backbone(n_i, ca_i, c_i)
        rots.append(frame.rot)
        trans.append(frame.trans)
    return Rigid(torch.stack(rots), torch.stack(trans))
