"""Synthetic backbones with known secondary structure.

Helices are ideal (rise 1.5 Å, 100° per residue), strands are planar
zigzags, and loops are circular arcs; every consecutive Cα pair is 3.8 Å
apart.  Labels are known by construction, which makes these chains handy
fixtures for the ingest filters and for small training runs.
"""

from __future__ import annotations

import numpy as np

from .geometry import SS_COIL, SS_HELIX, SS_STRAND, center_ca, random_rotation
from .numerics import Rng
from .structio import BackboneStructure

__all__ = ["CA_CA", "helix_trace", "strand_trace", "straight_trace", "synthetic_structure", "synthetic_dataset", "add_backbone_atoms"]

CA_CA = 3.8
HELIX_RISE = 1.5
HELIX_TWIST = np.deg2rad(100.0)
# radius chosen so consecutive Cα are exactly CA_CA apart
HELIX_RADIUS = float(np.sqrt((CA_CA**2 - HELIX_RISE**2) / (2.0 - 2.0 * np.cos(HELIX_TWIST))))
STRAND_SPACING = 4.8


def helix_trace(n: int, phase: float = 0.0) -> np.ndarray:
    k = np.arange(n)
    ang = phase + k * HELIX_TWIST
    return np.stack([HELIX_RADIUS * np.cos(ang), HELIX_RADIUS * np.sin(ang), HELIX_RISE * k], axis=-1)


def strand_trace(n: int) -> np.ndarray:
    # planar zigzag with a 120° Cα-Cα-Cα angle
    rise = CA_CA * np.sin(np.deg2rad(60.0))
    k = np.arange(n)
    return np.stack([np.zeros(n), 0.5 * CA_CA * (k % 2), rise * k], axis=-1)


def straight_trace(n: int) -> np.ndarray:
    return np.stack([np.zeros(n), np.zeros(n), CA_CA * np.arange(n)], axis=-1)


def _arc(p: np.ndarray, q: np.ndarray, n_mid: int, bulge: np.ndarray) -> np.ndarray:
    """``n_mid`` points between p and q on a circular arc with chords of CA_CA.

    The arc bows towards ``bulge``.  Falls back to an evenly spaced straight
    path when the gap is too wide to bridge.
    """
    if n_mid <= 0:
        return np.zeros((0, 3))
    n_seg = n_mid + 1
    chord = float(np.linalg.norm(q - p))
    if chord >= n_seg * CA_CA * 0.999:
        t = np.linspace(0.0, 1.0, n_seg + 1)[1:-1, None]
        return p + t * (q - p)

    # per-step angle θ solves R·2sin(nθ/2) = chord with R = CA_CA / (2 sin(θ/2))
    def excess(theta):
        return CA_CA * np.sin(n_seg * theta / 2) / np.sin(theta / 2) - chord

    lo, hi = 1e-9, 2 * np.pi / n_seg
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    radius = CA_CA / (2 * np.sin(theta / 2))
    sweep = n_seg * theta
    u = (q - p) / chord
    b = bulge - np.dot(bulge, u) * u
    if np.linalg.norm(b) < 1e-6:
        b = np.cross(u, [0.0, 0.0, 1.0])
        if np.linalg.norm(b) < 1e-6:
            b = np.cross(u, [1.0, 0.0, 0.0])
    b = b / np.linalg.norm(b)
    # 2-D frame: origin at chord midpoint, axes (u, b); centre at (0, -h)
    h = radius * np.cos(sweep / 2)
    phi = np.pi / 2 + sweep / 2 - theta * np.arange(1, n_seg)
    centre = 0.5 * (p + q)
    return centre + np.outer(radius * np.cos(phi), u) + np.outer(radius * np.sin(phi) - h, b)


def add_backbone_atoms(ca: np.ndarray) -> np.ndarray:
    """Approximate N and C positions from a Cα trace, giving an (L, 3, 3) array."""
    L = len(ca)
    if L == 1:
        return np.stack([ca - [1.46, 0, 0], ca, ca + [1.52, 0, 0]], axis=1)
    fwd = np.zeros_like(ca)
    fwd[:-1] = ca[1:] - ca[:-1]
    fwd[-1] = fwd[-2]
    back = np.zeros_like(ca)
    back[1:] = ca[:-1] - ca[1:]
    back[0] = -fwd[0]
    fwd /= np.linalg.norm(fwd, axis=-1, keepdims=True)
    back /= np.linalg.norm(back, axis=-1, keepdims=True)
    bis = fwd + back
    nb = np.linalg.norm(bis, axis=-1, keepdims=True)
    bis = np.where(nb > 1e-6, bis / np.maximum(nb, 1e-12), 0.0)
    n = ca + 1.46 * (0.8 * back - 0.6 * bis)
    c = ca + 1.52 * (0.8 * fwd - 0.6 * bis)
    return np.stack([n, ca, c], axis=1)


def _segment_plan(length: int, kind: str, rng: Rng) -> list[tuple[str, int]]:
    plan: list[tuple[str, int]] = []
    remaining = length
    first = True
    prev = None
    while remaining > 0:
        if not first:
            lo, hi = (2, 4) if prev == SS_STRAND or kind == "helix" else (3, 6)
            loop = int(min(remaining, rng.integers(lo, hi)))
            plan.append((SS_COIL, loop))
            remaining -= loop
            if remaining <= 0:
                break
        first = False
        if kind == "helix":
            ss = SS_HELIX
        elif kind == "sheet":
            ss = SS_STRAND
        else:
            ss = SS_HELIX if float(rng.uniform()) < 0.5 else SS_STRAND
        if kind == "helix":
            # long helices with tight turns; a short remainder extends the last helix
            n = int(rng.integers(28, 41))
            if remaining - n < 28 + 3:
                n = remaining
        elif ss == SS_HELIX:
            n = int(rng.integers(10, 19))
        else:
            n = int(rng.integers(5, 9))
        n = min(n, remaining)
        plan.append((ss if n >= 5 else SS_COIL, n))
        prev = ss
        remaining -= n
    return plan


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _axis_frame(z_dir: np.ndarray, x_hint: np.ndarray) -> np.ndarray:
    """Rotation taking local +z to ``z_dir`` with local +x near ``x_hint``."""
    z = _unit(z_dir)
    x = _unit(x_hint - np.dot(x_hint, z) * z)
    return np.stack([x, np.cross(z, x), z], axis=1)


def _element(ss: str, n: int, rng: Rng) -> tuple[np.ndarray, float]:
    if ss == SS_HELIX:
        return helix_trace(n, phase=float(rng.uniform(low=0.0, high=2 * np.pi))), 2 * HELIX_RADIUS + 5.5
    if ss == SS_STRAND:
        return strand_trace(n), STRAND_SPACING
    return straight_trace(n), 5.0


MIN_NONBONDED = 3.0


def _min_nonbonded(ca: np.ndarray) -> float:
    if len(ca) < 3:
        return np.inf
    d = np.linalg.norm(ca[:, None] - ca[None], axis=-1)
    iu = np.triu_indices(len(ca), k=2)
    return float(d[iu].min())


def synthetic_structure(
    length: int,
    rng: Rng,
    kind: str = "mixed",
    num_atoms: int = 1,
    id: str = "synth",
    plddt: float | None = 90.0,
) -> BackboneStructure:
    """Build a chain of helices and/or strands joined by arcs.

    ``kind`` is ``"helix"``, ``"sheet"``, or ``"mixed"``.  Elements run
    antiparallel side by side, like a flat bundle or sheet.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if kind not in ("helix", "sheet", "mixed"):
        raise ValueError(f"unknown kind {kind!r}")
    for _ in range(50):
        ca, labels = _build(length, kind, rng)
        if _min_nonbonded(ca) >= MIN_NONBONDED:
            break
    ca = center_ca(ca) @ random_rotation(rng).T
    xyz = ca[:, None, :] if num_atoms == 1 else add_backbone_atoms(ca)
    pl = None if plddt is None else np.full(length, float(plddt))
    return BackboneStructure(id=id, coords=xyz, plddt=pl, ss_labels=np.array(labels, dtype="<U1"), chain_id="A")


def _build(length: int, kind: str, rng: Rng) -> tuple[np.ndarray, list[str]]:
    plan = _segment_plan(length, kind, rng)
    lateral = np.array([1.0, 0.0, 0.0])
    direction = np.array([0.0, 0.0, 1.0])
    pieces: list[np.ndarray] = []
    labels: list[str] = []
    loop = 0
    axis_x = 0.0
    prev_spacing = 0.0
    for ss, n in plan:
        labels.extend([ss] * n)
        if pieces and ss == SS_COIL:
            loop += n
            continue
        seg, spacing = _element(ss, n, rng)
        if not pieces:
            pieces.append(seg)
        else:
            # element axes sit side by side; each new element runs back the other way
            end = pieces[-1][-1]
            axis_x += max(spacing, prev_spacing)
            direction = -direction
            origin = np.array([axis_x, 0.0, end[2]])
            placed = origin + seg @ _axis_frame(direction, lateral).T
            pieces.append(_arc(end, placed[0], loop, bulge=-direction))
            pieces.append(placed)
            loop = 0
        prev_spacing = spacing
    if loop:
        end = pieces[-1][-1]
        step = _unit(direction + 0.5 * lateral) * CA_CA
        pieces.append(end + step * np.arange(1, loop + 1)[:, None])
    return np.concatenate(pieces, axis=0), labels


def synthetic_dataset(
    n: int,
    seed: int,
    min_len: int = 24,
    max_len: int = 64,
    kinds: tuple[str, ...] = ("helix", "sheet", "mixed"),
    num_atoms: int = 1,
) -> list[BackboneStructure]:
    rng = Rng(seed)
    out = []
    for i in range(n):
        sub = rng.spawn(i)
        length = int(sub.integers(min_len, max_len + 1))
        kind = kinds[i % len(kinds)]
        out.append(synthetic_structure(length, sub, kind=kind, num_atoms=num_atoms, id=f"synth_{i:04d}"))
    return out
