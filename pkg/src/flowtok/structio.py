"""PDB reading/writing for backbone traces and the dataset ingestion filters."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import SS_COIL, SS_HELIX, SS_STRAND, secondary_structure

log = logging.getLogger(__name__)

__all__ = [
    "BackboneStructure",
    "PDBParseError",
    "ParseResult",
    "parse_pdb",
    "read_pdb",
    "write_pdb",
    "IngestConfig",
    "ManifestEntry",
    "DatasetManifest",
    "ingest_filter",
    "ingest_directory",
    "load_structures",
]

BACKBONE_ATOMS = ("N", "CA", "C")
DEFAULT_MAX_LEN = 256


@dataclass
class BackboneStructure:
    id: str
    coords: np.ndarray  # (L, A, 3), A in {1, 3}
    plddt: np.ndarray | None = None
    ss_labels: np.ndarray | None = None
    chain_id: str = "A"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim == 2:
            self.coords = self.coords[:, None, :]
        if self.coords.ndim != 3 or self.coords.shape[-1] != 3 or self.coords.shape[1] not in (1, 3):
            raise ValueError(f"{self.id}: coords must be (L, 1|3, 3), got {self.coords.shape}")
        if len(self.coords) < 1:
            raise ValueError(f"{self.id}: empty structure")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError(f"{self.id}: non-finite coordinates")
        if self.plddt is not None:
            self.plddt = np.asarray(self.plddt, dtype=np.float64)
            if self.plddt.shape != (len(self),):
                raise ValueError(f"{self.id}: plddt length mismatch")
        if self.ss_labels is not None:
            self.ss_labels = np.asarray(self.ss_labels, dtype="<U1")
            if self.ss_labels.shape != (len(self),):
                raise ValueError(f"{self.id}: ss_labels length mismatch")

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def num_atoms(self) -> int:
        return self.coords.shape[1]

    @property
    def ca(self) -> np.ndarray:
        return self.coords[:, 1 if self.num_atoms == 3 else 0]

    def with_coords(self, coords: np.ndarray, id: str | None = None) -> "BackboneStructure":
        return BackboneStructure(
            id=self.id if id is None else id,
            coords=coords,
            plddt=self.plddt,
            ss_labels=self.ss_labels,
            chain_id=self.chain_id,
        )


class PDBParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass
class ParseResult:
    structures: list[BackboneStructure]
    dropped: list[dict] = field(default_factory=list)  # residues removed (missing atoms)
    rejected: list[dict] = field(default_factory=list)  # whole chains removed


def _ss_ranges(lines: Sequence[tuple[int, str]]) -> dict[str, list[tuple[int, int, str]]]:
    ranges: dict[str, list[tuple[int, int, str]]] = {}
    for line_no, line in lines:
        try:
            if line.startswith("HELIX "):
                chain, lo, hi = line[19], int(line[21:25]), int(line[33:37])
                ranges.setdefault(chain, []).append((lo, hi, SS_HELIX))
            elif line.startswith("SHEET "):
                chain, lo, hi = line[21], int(line[22:26]), int(line[33:37])
                ranges.setdefault(chain, []).append((lo, hi, SS_STRAND))
        except (ValueError, IndexError):
            raise PDBParseError(line_no, f"malformed {line[:6].strip()} record") from None
    return ranges


def parse_pdb(
    data: bytes | str,
    structure_id: str = "structure",
    ca_only: bool = False,
    plddt_from_bfactor: bool = False,
) -> ParseResult:
    """Extract backbone traces, one :class:`BackboneStructure` per chain.

    Only the first MODEL is read.  Residues missing a required atom are
    dropped and listed in ``dropped``; chains whose residue numbering jumps
    are rejected with a reason in ``rejected``.
    """
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    required = ("CA",) if ca_only else BACKBONE_ATOMS
    residues: dict[str, dict[tuple[int, str], dict]] = {}
    ss_lines: list[tuple[int, str]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        rec = line[:6]
        if rec == "ENDMDL":
            break
        if rec in ("HELIX ", "SHEET "):
            ss_lines.append((line_no, line))
            continue
        if rec != "ATOM  ":
            continue
        if len(line) < 54:
            raise PDBParseError(line_no, f"ATOM record too short ({len(line)} columns)")
        try:
            name = line[12:16].strip()
            chain = line[21]
            resseq = int(line[22:26])
            icode = line[26]
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
            bfac = float(line[60:66]) if len(line) >= 66 and line[60:66].strip() else 0.0
        except ValueError as exc:
            raise PDBParseError(line_no, f"malformed ATOM record: {exc}") from None
        if not all(np.isfinite(xyz)):
            raise PDBParseError(line_no, "non-finite coordinate")
        chain_res = residues.setdefault(chain, {})
        res = chain_res.setdefault((resseq, icode), {"atoms": {}, "bfac": {}, "line": line_no})
        if name not in res["atoms"]:  # first altloc wins
            res["atoms"][name] = xyz
            res["bfac"][name] = bfac

    ss_ranges = _ss_ranges(ss_lines)
    out = ParseResult(structures=[])
    multi = len(residues) > 1
    for chain, chain_res in residues.items():
        sid = f"{structure_id}_{chain.strip() or '_'}" if multi else structure_id
        keys = list(chain_res)
        gap = next(
            ((a, b) for a, b in zip(keys, keys[1:]) if b[0] - a[0] > 1),
            None,
        )
        if gap is not None:
            out.rejected.append(
                {"id": sid, "chain": chain, "reason": f"gap between residues {gap[0][0]} and {gap[1][0]}"}
            )
            continue
        coords, plddt, seqnums = [], [], []
        for (resseq, icode), res in chain_res.items():
            missing = [a for a in required if a not in res["atoms"]]
            if missing:
                out.dropped.append(
                    {"id": sid, "chain": chain, "residue": resseq, "line": res["line"], "reason": f"missing_{missing[0]}"}
                )
                continue
            coords.append([res["atoms"][a] for a in required])
            plddt.append(res["bfac"]["CA"])
            seqnums.append(resseq)
        if not coords:
            out.rejected.append({"id": sid, "chain": chain, "reason": "no complete residues"})
            continue
        labels = None
        if ss_ranges:
            labels = np.full(len(coords), SS_COIL, dtype="<U1")
            for lo, hi, lab in ss_ranges.get(chain, []):
                for i, n in enumerate(seqnums):
                    if lo <= n <= hi:
                        labels[i] = lab
        out.structures.append(
            BackboneStructure(
                id=sid,
                coords=np.array(coords),
                plddt=np.array(plddt) if plddt_from_bfactor else None,
                ss_labels=labels,
                chain_id=chain,
            )
        )
    return out


def read_pdb(path, ca_only: bool = False, plddt_from_bfactor: bool = False) -> ParseResult:
    path = Path(path)
    return parse_pdb(path.read_bytes(), structure_id=path.stem, ca_only=ca_only, plddt_from_bfactor=plddt_from_bfactor)


def _segments(labels: np.ndarray, target: str) -> list[tuple[int, int]]:
    segs = []
    i = 0
    while i < len(labels):
        if labels[i] == target:
            j = i
            while j + 1 < len(labels) and labels[j + 1] == target:
                j += 1
            segs.append((i, j))
            i = j + 1
        else:
            i += 1
    return segs


def write_pdb(structure: BackboneStructure, resname: str = "GLY") -> bytes:
    """Fixed-column PDB (v3.3 layout); B-factor carries pLDDT when present."""
    s = structure
    chain = (s.chain_id or "A")[:1]
    lines = []
    if s.ss_labels is not None:
        for k, (i, j) in enumerate(_segments(s.ss_labels, SS_HELIX), start=1):
            lines.append(
                f"HELIX  {k:3d} {k:>3d} {resname:3s} {chain} {i + 1:4d}  {resname:3s} {chain} {j + 1:4d} {1:2d}"
                f"{'':30s} {j - i + 1:5d}    "
            )
        for k, (i, j) in enumerate(_segments(s.ss_labels, SS_STRAND), start=1):
            lines.append(
                f"SHEET  {k:3d} S{k:<2d}{1:2d} {resname:3s} {chain}{i + 1:4d}  {resname:3s} {chain}{j + 1:4d} {0:2d}"
                f"{'':40s}"
            )
    names = ("CA",) if s.num_atoms == 1 else BACKBONE_ATOMS
    serial = 1
    for i in range(len(s)):
        b = float(s.plddt[i]) if s.plddt is not None else 0.0
        for a, name in enumerate(names):
            x, y, z = s.coords[i, a]
            lines.append(
                f"ATOM  {serial:5d} {name:^4s} {resname:3s} {chain}{i + 1:4d}    "
                f"{x:8.3f}{y:8.3f}{z:8.3f}{1.0:6.2f}{b:6.2f}          {name[0]:>2s}  "
            )
            serial += 1
    lines.append(f"TER   {serial:5d}      {resname:3s} {chain}{len(s):4d}" + " " * 54)
    lines.append("END" + " " * 77)
    return ("\n".join(lines) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

@dataclass
class IngestConfig:
    max_len: int = DEFAULT_MAX_LEN
    ca_only: bool = True
    coil_filter: bool = True
    max_coil_fraction: float = 0.70
    plddt_filter: bool = True
    min_mean_plddt: float = 80.0
    plddt_confident: float = 70.0
    min_confident_fraction: float = 0.8
    use_file_ss: bool = True
    plddt_from_bfactor: bool = True
    split: str = "train"


@dataclass
class ManifestEntry:
    id: str
    path: str
    length: int
    retained: bool
    reasons: list[str]
    coil_fraction: float | None = None
    mean_plddt: float | None = None
    confident_fraction: float | None = None
    ss_source: str | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    config: dict
    split: str = "train"
    notes: list[str] = field(default_factory=list)

    def retained(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.retained]

    def to_dict(self) -> dict:
        return {
            "format": "flowtok-manifest",
            "version": 1,
            "split": self.split,
            "config": self.config,
            "notes": list(self.notes),
            "entries": [asdict(e) for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(
            entries=[ManifestEntry(**e) for e in d["entries"]],
            config=d["config"],
            split=d.get("split", "train"),
            notes=d.get("notes", []),
        )


def _evaluate(s: BackboneStructure, cfg: IngestConfig, path: str = "") -> ManifestEntry:
    reasons = []
    if len(s) > cfg.max_len:
        reasons.append("length")
    labels, source = secondary_structure(s, use_file_labels=cfg.use_file_ss)
    coil = float(np.mean(labels == SS_COIL))
    if cfg.coil_filter and coil > cfg.max_coil_fraction:
        reasons.append("coil_fraction")
    mean_plddt = confident = None
    if s.plddt is not None:
        mean_plddt = float(np.mean(s.plddt))
        confident = float(np.mean(s.plddt > cfg.plddt_confident))
        if cfg.plddt_filter:
            if mean_plddt < cfg.min_mean_plddt:
                reasons.append("mean_plddt")
            if confident < cfg.min_confident_fraction:
                reasons.append("plddt_fraction")
    return ManifestEntry(
        id=s.id,
        path=path,
        length=len(s),
        retained=not reasons,
        reasons=reasons,
        coil_fraction=coil,
        mean_plddt=mean_plddt,
        confident_fraction=confident,
        ss_source=source,
    )


def ingest_filter(
    structures: Iterable[BackboneStructure],
    config: IngestConfig | None = None,
    paths: dict[str, str] | None = None,
) -> DatasetManifest:
    """Apply the length, coil, and pLDDT filters; every chain gets one manifest entry."""
    cfg = config or IngestConfig()
    paths = paths or {}
    structures = list(structures)
    notes = []
    if cfg.plddt_filter and any(s.plddt is None for s in structures):
        msg = "pLDDT filters skipped for chains without pLDDT values"
        log.warning(msg)
        notes.append(msg)
    if cfg.coil_filter:
        notes.append("coil fraction from file HELIX/SHEET records when present, else Cα geometry assignment")
    entries = [_evaluate(s, cfg, paths.get(s.id, "")) for s in structures]
    entries.sort(key=lambda e: e.id)
    return DatasetManifest(entries=entries, config=asdict(cfg), split=cfg.split, notes=notes)


def ingest_directory(directory, config: IngestConfig | None = None, threads: int = 1) -> DatasetManifest:
    cfg = config or IngestConfig()
    files = sorted(Path(directory).glob("*.pdb"))

    def load(p: Path):
        try:
            return p, read_pdb(p, ca_only=cfg.ca_only, plddt_from_bfactor=cfg.plddt_from_bfactor), None
        except PDBParseError as exc:
            return p, None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(load, files))
    structures, paths, extra = [], {}, []
    for p, res, err in results:
        if err is not None:
            extra.append(ManifestEntry(id=p.stem, path=str(p), length=0, retained=False, reasons=[f"parse_error: {err}"]))
            continue
        for s in res.structures:
            structures.append(s)
            paths[s.id] = str(p)
        for r in res.rejected:
            extra.append(ManifestEntry(id=r["id"], path=str(p), length=0, retained=False, reasons=[r["reason"]]))
    manifest = ingest_filter(structures, cfg, paths)
    manifest.entries = sorted(manifest.entries + extra, key=lambda e: e.id)
    dropped = sum(len(r.dropped) for _, r, _ in results if r is not None)
    if dropped:
        manifest.notes.append(f"{dropped} residues dropped for missing backbone atoms")
    return manifest


def load_structures(manifest: DatasetManifest, ca_only: bool | None = None) -> list[BackboneStructure]:
    """Re-read every retained chain listed in a manifest, in manifest order."""
    ca = manifest.config.get("ca_only", True) if ca_only is None else ca_only
    plddt = manifest.config.get("plddt_from_bfactor", True)
    cache: dict[str, dict[str, BackboneStructure]] = {}
    out = []
    for e in manifest.retained():
        if e.path not in cache:
            res = read_pdb(e.path, ca_only=ca, plddt_from_bfactor=plddt)
            cache[e.path] = {s.id: s for s in res.structures}
        out.append(cache[e.path][e.id])
    return out
