import hashlib
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fourdfold import geom, protein
from fourdfold.geom import Rigid


@pytest.fixture(scope="module")
def tpl():
    return protein.load_templates()


def random_state_inputs(rng, seq, tpl):
    aatype = protein.seq_to_aatype(seq)
    n = len(seq)
    frames = Rigid(geom.random_rotation(rng, (n,)), torch.as_tensor(rng.uniform(-30, 30, (n, 3))))
    mask = protein.default_torsion_mask(aatype, tpl)
    angles = torch.as_tensor(rng.uniform(-math.pi, math.pi, (n, 7)))
    return aatype, frames, protein.torsions_from_angles(angles, mask), mask


# ---------------------------------------------------------------------------
# templates
# ---------------------------------------------------------------------------


def test_templates_cover_every_heavy_atom_once(tpl):
    # completeness audit: each atom14 name appears in exactly one rigid group
    for ri, code in enumerate(protein.RESTYPES):
        names = [n for n in tpl.atom14_names[ri] if n]
        assert len(names) == len(set(names))
        assert int(tpl.atom_exists[ri].sum()) == len(names)
        # backbone group holds N, CA, C with CA at the origin
        for atom in ("N", "CA", "C"):
            slot = tpl.atom_index(code, atom)
            assert int(tpl.atom_group[ri, slot]) == 0
        ca_slot = tpl.atom_index(code, "CA")
        assert tpl.atom_pos[ri, ca_slot].abs().max().item() == 0.0


def test_templates_checksum_guard(tmp_path, monkeypatch):
    import fourdfold

    src = json.loads(
        (
            __import__("importlib.resources", fromlist=["files"])
            .files("fourdfold")
            .joinpath("data/templates.json")
            .read_text()
        )
    )
    assert hashlib.sha256(
        json.dumps(src["data"], sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest() == src["sha256"]


def test_unknown_residue_code_rejected():
    with pytest.raises(ValueError):
        protein.parse_residue_code("XYZ")
    with pytest.raises(ValueError):
        protein.seq_to_aatype("AXB")


# ---------------------------------------------------------------------------
# frames_from_backbone
# ---------------------------------------------------------------------------


def test_frame_from_template_backbone_is_identity(tpl):
    ri = protein.RESTYPE_INDEX["A"]
    n, ca, c = tpl.atom_pos[ri, 0], tpl.atom_pos[ri, 1], tpl.atom_pos[ri, 2]
    f = protein.frames_from_backbone(n, ca, c)
    assert torch.allclose(f.rot, torch.eye(3), atol=1e-12)
    assert torch.allclose(f.trans, torch.zeros(3), atol=1e-12)


def test_frame_translation_equivariance(tpl):
    ri = protein.RESTYPE_INDEX["A"]
    shift = torch.tensor([5.0, 0.0, 0.0])
    n, ca, c = (tpl.atom_pos[ri, i] + shift for i in range(3))
    f = protein.frames_from_backbone(n, ca, c)
    assert torch.allclose(f.rot, torch.eye(3), atol=1e-12)
    assert torch.allclose(f.trans, shift, atol=1e-12)


def test_frame_rigid_equivariance(rng, tpl):
    ri = protein.RESTYPE_INDEX["F"]
    base = protein.frames_from_backbone(*(tpl.atom_pos[ri, i] for i in range(3)))
    for _ in range(1000):
        g = Rigid(geom.random_rotation(rng), torch.as_tensor(rng.uniform(-10, 10, 3)))
        f = protein.frames_from_backbone(*(g.apply(tpl.atom_pos[ri, i]) for i in range(3)))
        expect = g.compose(base)
        assert (f.rot - expect.rot).abs().max().item() < 1e-8
        assert (f.trans - expect.trans).abs().max().item() < 1e-8


def test_frame_degenerate_geometry(tpl):
    p = torch.tensor([1.0, 0.0, 0.0])
    with pytest.raises(protein.GeometryError):
        protein.frames_from_backbone(2 * p, torch.zeros(3), p)  # collinear
    with pytest.raises(protein.GeometryError):
        protein.frames_from_backbone(p, p, p)  # coincident


# ---------------------------------------------------------------------------
# atom reconstruction
# ---------------------------------------------------------------------------


def test_glycine_has_backbone_atoms_only(tpl):
    aatype = protein.seq_to_aatype("G")
    mask = protein.default_torsion_mask(aatype, tpl)
    assert not mask[0, 3:].any()
    tors = protein.torsions_from_angles(torch.zeros(1, 7), mask)
    atoms = protein.atoms_from_frames_and_torsions(aatype, Rigid.identity((1,)), tors, tpl)
    names = [n for n, e in zip(tpl.atom14_names[int(aatype[0])], atoms.exists[0]) if e]
    assert names == ["N", "CA", "C", "O"]


def test_default_torsions_match_direct_template_chaining(tpl):
    # oracle: chain the default group frames directly, no torsion machinery
    seq = protein.RESTYPES
    aatype = protein.seq_to_aatype(seq)
    n = len(seq)
    mask = protein.default_torsion_mask(aatype, tpl)
    sincos = torch.zeros(n, 7, 2)
    sincos[..., 1] = 1.0
    atoms = protein.atoms_from_frames_and_torsions(
        aatype, Rigid.identity((n,)), protein.TorsionAngles(sincos, mask), tpl
    )
    for i in range(n):
        ri = int(aatype[i])
        frames = {0: (torch.eye(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))}
        for g in range(1, 5):
            frames[g] = (tpl.default_rot[ri, g], tpl.default_trans[ri, g])
        for g in range(5, 8):
            pr, pt = frames[g - 1]
            frames[g] = (pr @ tpl.default_rot[ri, g], pr @ tpl.default_trans[ri, g] + pt)
        for a in range(protein.ATOM_SLOTS):
            if not tpl.atom_exists[ri, a]:
                continue
            r, t = frames[int(tpl.atom_group[ri, a])]
            expected = r @ tpl.atom_pos[ri, a] + t
            assert (atoms.coords[i, a] - expected).abs().max().item() < 1e-12


def test_roundtrip_all_residue_types(rng, tpl):
    aatype, frames, tors, mask = random_state_inputs(rng, protein.RESTYPES, tpl)
    atoms = protein.atoms_from_frames_and_torsions(aatype, frames, tors, tpl)

    f2 = protein.frames_from_backbone(atoms.coords[:, 0], atoms.coords[:, 1], atoms.coords[:, 2])
    assert (f2.rot - frames.rot).abs().max().item() < 1e-6
    assert (f2.trans - frames.trans).abs().max().item() < 1e-6

    t2 = protein.torsions_from_atoms(aatype, atoms, tpl)
    # psi and chi1..chi4 parameterize atoms and must round-trip; omega/phi are
    # determined by consecutive-frame geometry, not by reconstruction inputs
    shared = (mask & t2.mask)[..., 2:]
    err = ((t2.sincos - tors.sincos)[..., 2:, :].abs() * shared[..., None]).max().item()
    assert err < 1e-6


def test_chi1_round_trip_specific_angle(tpl):
    seq = "R"
    aatype = protein.seq_to_aatype(seq)
    mask = protein.default_torsion_mask(aatype, tpl)
    angles = torch.zeros(1, 7)
    angles[0, 3] = math.pi / 3
    tors = protein.torsions_from_angles(angles, mask)
    atoms = protein.atoms_from_frames_and_torsions(aatype, Rigid.identity((1,)), tors, tpl)
    t2 = protein.torsions_from_atoms(aatype, atoms, tpl)
    assert abs(t2.angles()[0, 3].item() - math.pi / 3) < 1e-6


def test_trans_peptide_omega_is_pi(tpl):
    seq = "AAGSA"
    n = len(seq)
    phi = torch.full((n,), math.radians(-120.0))
    psi = torch.full((n,), math.radians(130.0))
    frames = protein.build_chain_frames(seq, phi, psi, tpl)
    aatype = protein.seq_to_aatype(seq)
    mask = protein.default_torsion_mask(aatype, tpl)
    angles = torch.zeros(n, 7)
    angles[:, 2] = psi
    tors = protein.torsions_from_angles(angles, mask)
    atoms = protein.atoms_from_frames_and_torsions(aatype, frames, tors, tpl)
    measured = protein.torsions_from_atoms(aatype, atoms, tpl)
    omega_sincos = measured.sincos[1:, 0]
    trans_ref = torch.tensor([math.sin(math.pi), math.cos(math.pi)])
    assert (omega_sincos - trans_ref).abs().max().item() < 1e-4


def test_missing_side_chain_clears_chi_masks(rng, tpl):
    aatype, frames, tors, _ = random_state_inputs(rng, "KK", tpl)
    atoms = protein.atoms_from_frames_and_torsions(aatype, frames, tors, tpl)
    exists = atoms.exists.clone()
    cg = tpl.atom_index("K", "CG")
    exists[1, cg] = False  # drop one side-chain atom of residue 1
    t2 = protein.torsions_from_atoms(aatype, protein.AtomSet(atoms.coords, exists), tpl)
    assert t2.mask[0, 3:].all()
    assert not t2.mask[1, 3:].any()  # CG participates in chi1 and chi2; chain breaks all chis
    assert t2.mask[1, 2]  # psi intact


# ---------------------------------------------------------------------------
# alt torsions
# ---------------------------------------------------------------------------


def test_alt_torsions_identity_on_alanine(rng, tpl):
    aatype, _, tors, _ = random_state_inputs(rng, "A", tpl)
    alt = protein.alt_torsions(aatype, tors, tpl)
    assert torch.equal(alt.sincos, tors.sincos)


def test_alt_torsions_asp_chi2_shift(tpl):
    aatype = protein.seq_to_aatype("D")
    mask = protein.default_torsion_mask(aatype, tpl)
    angles = torch.zeros(1, 7)
    angles[0, 4] = 0.3
    tors = protein.torsions_from_angles(angles, mask)
    alt = protein.alt_torsions(aatype, tors, tpl)
    got = alt.angles()[0, 4].item()
    want = 0.3 + math.pi
    assert abs(math.sin(got) - math.sin(want)) < 1e-12
    assert abs(math.cos(got) - math.cos(want)) < 1e-12


def test_alt_torsions_involution(rng, tpl):
    aatype, _, tors, _ = random_state_inputs(rng, protein.RESTYPES, tpl)
    twice = protein.alt_torsions(aatype, protein.alt_torsions(aatype, tors, tpl), tpl)
    assert torch.equal(twice.sincos, tors.sincos)


def test_alt_torsions_atom_renaming_equivalence(rng, tpl):
    # oracle: rebuilding with flipped angles matches the original coordinates
    # up to renaming the symmetric atom pair
    aatype, frames, tors, _ = random_state_inputs(rng, protein.RESTYPES, tpl)
    atoms = protein.atoms_from_frames_and_torsions(aatype, frames, tors, tpl)
    alt = protein.alt_torsions(aatype, tors, tpl)
    atoms_alt = protein.atoms_from_frames_and_torsions(aatype, frames, alt, tpl)
    perm = tpl.swap_perm[aatype]
    renamed = torch.gather(atoms_alt.coords, 1, perm[..., None].expand(-1, -1, 3))
    dev = ((renamed - atoms.coords) * atoms.exists[..., None]).abs().max().item()
    assert dev < 1e-4


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.text(alphabet=protein.RESTYPES, min_size=1, max_size=8))
def test_roundtrip_property(seed, seq):
    tpl = protein.load_templates()
    rng = np.random.default_rng(seed)
    aatype, frames, tors, mask = random_state_inputs(rng, seq, tpl)
    atoms = protein.atoms_from_frames_and_torsions(aatype, frames, tors, tpl)
    f2 = protein.frames_from_backbone(atoms.coords[:, 0], atoms.coords[:, 1], atoms.coords[:, 2])
    assert (f2.rot - frames.rot).abs().max().item() < 1e-6
    t2 = protein.torsions_from_atoms(aatype, atoms, tpl)
    shared = (mask & t2.mask)[..., 2:]
    assert ((t2.sincos - tors.sincos)[..., 2:, :].abs() * shared[..., None]).max().item() < 1e-6


def test_protein_state_validates_lengths(tpl):
    frames = Rigid.identity((3,))
    mask = protein.default_torsion_mask(protein.seq_to_aatype("AAA"), tpl)
    tors = protein.torsions_from_angles(torch.zeros(3, 7), mask)
    protein.ProteinState("AAA", frames, tors)
    with pytest.raises(ValueError):
        protein.ProteinState("AA", frames, tors)
