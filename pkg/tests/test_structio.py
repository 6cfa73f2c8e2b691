from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowtok.numerics import Rng
from flowtok.structio import (
    BackboneStructure,
    DatasetManifest,
    IngestConfig,
    PDBParseError,
    ingest_directory,
    ingest_filter,
    load_structures,
    parse_pdb,
    read_pdb,
    write_pdb,
)
from flowtok.synth import synthetic_structure

FIXTURES = Path(__file__).parent / "fixtures"


def _atom(serial, name, resseq, xyz, chain="A", b=0.0):
    return (
        f"ATOM  {serial:5d} {name:^4s} GLY {chain}{resseq:4d}    "
        f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}{1.0:6.2f}{b:6.2f}           C"
    )


def test_single_ca_record():
    res = parse_pdb(_atom(1, "CA", 1, (1.0, 2.0, 3.0)), ca_only=True)
    (s,) = res.structures
    assert len(s) == 1
    assert np.allclose(s.coords[0, 0], [1.0, 2.0, 3.0])


def test_missing_ca_dropped_and_reported():
    res = read_pdb(FIXTURES / "missing_ca.pdb")
    (s,) = res.structures
    assert len(s) == 9
    assert len(res.dropped) == 1
    assert res.dropped[0]["residue"] == 6
    assert res.dropped[0]["reason"] == "missing_CA"


def test_gap_rejects_chain():
    lines = [_atom(i, "CA", r, (3.8 * i, 0, 0)) for i, r in enumerate([1, 2, 3, 5, 6], start=1)]
    res = parse_pdb("\n".join(lines), ca_only=True)
    assert res.structures == []
    assert "gap" in res.rejected[0]["reason"]


def test_malformed_record_reports_line_number():
    text = "\n".join([_atom(1, "CA", 1, (0, 0, 0)), "REMARK ok", "ATOM      2  CA  GLY A   2      1.0xx   0.000   0.000"])
    with pytest.raises(PDBParseError) as err:
        parse_pdb(text, ca_only=True)
    assert err.value.line_no == 3
    assert "line 3" in str(err.value)


def test_truncated_atom_line():
    with pytest.raises(PDBParseError):
        parse_pdb("ATOM      1  CA  GLY A   1      1.000", ca_only=True)


def test_multi_chain_and_first_model_only():
    a = [_atom(i, "CA", i, (3.8 * i, 0, 0), chain="A") for i in range(1, 4)]
    b = [_atom(10 + i, "CA", i, (3.8 * i, 5, 0), chain="B") for i in range(1, 5)]
    second = [_atom(50, "CA", 9, (0, 0, 0), chain="C")]
    text = "\n".join(["MODEL        1", *a, "TER", *b, "ENDMDL", "MODEL        2", *second, "ENDMDL"])
    res = parse_pdb(text, structure_id="x", ca_only=True)
    assert [(s.id, len(s)) for s in res.structures] == [("x_A", 3), ("x_B", 4)]


def test_altloc_first_wins():
    l1 = _atom(1, "CA", 1, (1, 1, 1))
    l1 = l1[:16] + "A" + l1[17:]
    l2 = _atom(2, "CA", 1, (9, 9, 9))
    l2 = l2[:16] + "B" + l2[17:]
    (s,) = parse_pdb(l1 + "\n" + l2, ca_only=True).structures
    assert len(s) == 1 and np.allclose(s.coords[0, 0], 1.0)


def test_bfactor_read_as_plddt_only_when_asked():
    text = _atom(1, "CA", 1, (0, 0, 0), b=87.5)
    assert parse_pdb(text, ca_only=True).structures[0].plddt is None
    assert parse_pdb(text, ca_only=True, plddt_from_bfactor=True).structures[0].plddt[0] == 87.5


def test_full_backbone_requires_n_and_c():
    text = "\n".join([_atom(1, "N", 1, (0, 0, 0)), _atom(2, "CA", 1, (1, 0, 0))])
    res = parse_pdb(text)
    assert res.structures == [] and res.dropped[0]["reason"] == "missing_C"


def test_golden_file_columns():
    golden = (FIXTURES / "golden_backbone.pdb").read_bytes()
    (s,) = parse_pdb(golden, plddt_from_bfactor=True).structures
    assert write_pdb(s) == golden
    atom = golden.decode().splitlines()[2]  # CA of residue 1
    assert atom[0:6] == "ATOM  " and atom[12:16] == " CA " and atom[17:20] == "GLY"
    assert atom[21] == "A" and atom[22:26] == "   1"
    assert atom[54:60] == "  1.00" and atom[60:66] == " 91.50"


def test_written_lines_are_80_columns_and_bfactor_defaults_to_zero():
    s = BackboneStructure("t", np.arange(9.0).reshape(3, 1, 3))
    text = write_pdb(s).decode()
    assert all(len(line) == 80 for line in text.splitlines())
    atoms = [line for line in text.splitlines() if line.startswith("ATOM")]
    assert all(line[60:66] == "  0.00" for line in atoms)


def test_empty_structure_forbidden():
    with pytest.raises(ValueError):
        BackboneStructure("e", np.zeros((0, 1, 3)))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 80), st.sampled_from([1, 3]), st.integers(0, 10_000))
def test_write_parse_roundtrip(length, atoms, seed):
    s = synthetic_structure(length, Rng(seed), kind="mixed", num_atoms=atoms)
    (back,) = parse_pdb(write_pdb(s), ca_only=atoms == 1, plddt_from_bfactor=True).structures
    assert back.coords.shape == s.coords.shape
    assert np.abs(back.coords - s.coords).max() <= 5e-4 + 1e-9
    assert np.allclose(back.plddt, s.plddt)
    if (s.ss_labels == "C").all():
        assert back.ss_labels is None  # no HELIX/SHEET records to carry labels
    else:
        assert (back.ss_labels == s.ss_labels).all()


# --- ingest filters --------------------------------------------------------

def _chain(id, labels, plddt, length=None):
    n = len(labels) if length is None else length
    return BackboneStructure(
        id=id,
        coords=np.cumsum(np.full((n, 1, 3), 2.2), axis=0),
        plddt=None if plddt is None else np.broadcast_to(np.asarray(plddt, float), (n,)).copy(),
        ss_labels=np.array(list(labels)),
    )


def test_coil_threshold():
    over = _chain("over", "C" * 71 + "H" * 29, 90.0)
    at = _chain("at", "C" * 70 + "H" * 30, 90.0)
    m = ingest_filter([over, at])
    by_id = {e.id: e for e in m.entries}
    assert by_id["over"].reasons == ["coil_fraction"] and not by_id["over"].retained
    assert by_id["at"].retained


def test_plddt_filters():
    m = ingest_filter([_chain("p90", "H" * 20, 90.0), _chain("p75", "H" * 20, 75.0)])
    by_id = {e.id: e for e in m.entries}
    assert by_id["p90"].retained
    assert by_id["p75"].reasons == ["mean_plddt"]
    assert by_id["p75"].confident_fraction == 1.0


def test_confident_fraction_filter():
    # mean 86 but only 70% above 70
    plddt = np.array([100.0] * 14 + [53.3333333] * 6)
    m = ingest_filter([_chain("mix", "H" * 20, plddt)])
    assert m.entries[0].reasons == ["plddt_fraction"]


def test_length_filter_and_toggles():
    long = _chain("long", "C" * 300, 50.0)
    m = ingest_filter([long], IngestConfig(max_len=256, coil_filter=False, plddt_filter=False))
    assert m.entries[0].reasons == ["length"]
    m = ingest_filter([long], IngestConfig(max_len=512, coil_filter=False, plddt_filter=False))
    assert m.entries[0].retained


def test_missing_plddt_skips_with_note(caplog):
    m = ingest_filter([_chain("np", "H" * 20, None)])
    assert m.entries[0].retained
    assert any("pLDDT" in n for n in m.notes)


def test_psea_used_without_file_labels():
    s = synthetic_structure(40, Rng(0), kind="helix")
    s.ss_labels = None
    (e,) = ingest_filter([s]).entries
    assert e.ss_source == "psea" and e.retained


def _write_corpus(tmp_path, n=6):
    rng = Rng(1)
    for i in range(n):
        s = synthetic_structure(30 + i, rng.spawn(i), kind="mixed", id=f"c{i}", plddt=60.0 if i == 2 else 92.0)
        (tmp_path / f"c{i}.pdb").write_bytes(write_pdb(s))
    (tmp_path / "bad.pdb").write_text("ATOM      1  CA  GLY A   1      1.0")


def test_ingest_directory_every_chain_once_and_deterministic(tmp_path):
    _write_corpus(tmp_path)
    m1 = ingest_directory(tmp_path, threads=1)
    m4 = ingest_directory(tmp_path, threads=4)
    assert m1.to_json() == m4.to_json()
    ids = [e.id for e in m1.entries]
    assert ids == sorted(ids) and len(set(ids)) == 7
    by_id = {e.id: e for e in m1.entries}
    assert by_id["c2"].reasons == ["mean_plddt", "plddt_fraction"]
    assert by_id["bad"].reasons[0].startswith("parse_error")
    assert all(e.retained == (not e.reasons) for e in m1.entries)
    again = DatasetManifest.from_json(m1.to_json())
    assert again.to_json() == m1.to_json()
    loaded = load_structures(m1)
    assert [s.id for s in loaded] == [e.id for e in m1.retained()]
