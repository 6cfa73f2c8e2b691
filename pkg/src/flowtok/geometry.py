"""Rigid-body geometry on backbone coordinates.

Coordinates are ``(L, A, 3)`` arrays (A = 1 for Cα-only, A = 3 for N, Cα, C)
or plain ``(L, 3)`` Cα traces where noted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng

__all__ = [
    "DegenerateGeometryError",
    "Alignment",
    "ca_index",
    "ca_trace",
    "center_ca",
    "ca_centroid",
    "random_rotation",
    "sample_rotation",
    "apply_rigid",
    "kabsch_align",
    "rmsd",
    "tm_d0",
    "tm_score",
    "assign_secondary_structure",
    "secondary_structure",
    "SS_HELIX",
    "SS_STRAND",
    "SS_COIL",
]

SS_HELIX, SS_STRAND, SS_COIL = "H", "E", "C"


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Alignment:
    """Rigid transform taking ``pred`` onto ``truth``: ``pred @ rotation.T + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    rmsd: float

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return apply_rigid(coords, self.rotation, self.translation)


def ca_index(num_atoms: int) -> int:
    if num_atoms == 1:
        return 0
    if num_atoms == 3:
        return 1
    raise ValueError(f"expected 1 or 3 backbone atoms per residue, got {num_atoms}")


def ca_trace(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 2:
        return coords
    return coords[:, ca_index(coords.shape[1])]


def ca_centroid(coords: np.ndarray) -> np.ndarray:
    """Cα centroid; batched inputs ``(..., L, A, 3)`` give ``(..., 3)``."""
    coords = np.asarray(coords)
    if coords.ndim == 2:
        return coords.mean(axis=0)
    ca = coords[..., ca_index(coords.shape[-2]), :]
    return ca.mean(axis=-2)


def center_ca(coords: np.ndarray) -> np.ndarray:
    """Translate so the Cα centroid sits at the origin (all atoms move together)."""
    coords = np.asarray(coords, dtype=np.float64)
    c = ca_centroid(coords)
    if coords.ndim == 2:
        return coords - c
    return coords - c[..., None, None, :]


def random_rotation(rng: Rng) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    q = rng.normal((4,))
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


sample_rotation = random_rotation


def apply_rigid(coords: np.ndarray, rotation: np.ndarray, translation=None) -> np.ndarray:
    out = np.asarray(coords) @ np.asarray(rotation).T
    if translation is not None:
        out = out + translation
    return out


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = ca_trace(pred) if np.ndim(pred) == 3 else np.asarray(pred, dtype=np.float64)
    t = ca_trace(truth) if np.ndim(truth) == 3 else np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"coordinate sets differ in shape: {p.shape} vs {t.shape}")
    if len(p) < 3:
        raise DegenerateGeometryError(f"need at least 3 points for superposition, got {len(p)}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite coordinates")
    return p, t


def _is_collinear(x: np.ndarray, tol: float = 1e-9) -> bool:
    s = np.linalg.svd(x - x.mean(axis=0), compute_uv=False)
    return s[1] <= tol * max(1.0, s[0])


def _kabsch(p: np.ndarray, t: np.ndarray, w: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    if w is None:
        pc, tc = p.mean(axis=0), t.mean(axis=0)
        h = (p - pc).T @ (t - tc)
    else:
        w = w / w.sum()
        pc, tc = w @ p, w @ t
        h = (p - pc).T @ ((t - tc) * w[:, None])
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, tc - pc @ rot.T


def kabsch_align(pred: np.ndarray, truth: np.ndarray) -> Alignment:
    """Least-RMSD proper rotation + translation mapping ``pred`` onto ``truth``."""
    p, t = _check_pair(pred, truth)
    if _is_collinear(p) or _is_collinear(t):
        raise DegenerateGeometryError("points are collinear; superposition is not unique")
    rot, trans = _kabsch(p, t)
    diff = p @ rot.T + trans - t
    value = float(np.sqrt(np.mean(np.sum(diff * diff, axis=-1))))
    return Alignment(rot, trans, value)


def rmsd(pred: np.ndarray, truth: np.ndarray) -> float:
    """Cα RMSD after optimal superposition."""
    return kabsch_align(pred, truth).rmsd


def tm_d0(length: int) -> float:
    return max(0.5, 1.24 * np.cbrt(length - 15.0) - 1.8)


def _seed_windows(length: int) -> list[tuple[int, int]]:
    sizes = []
    n = length
    while n >= 4:
        sizes.append(n)
        n //= 2
    if length >= 7:
        sizes.append(7)
    out = []
    for size in sorted(set(sizes), reverse=True):
        stride = max(1, (length - size) // 24) if size < length else 1
        starts = list(range(0, length - size + 1, stride))
        if starts[-1] != length - size:
            starts.append(length - size)
        out.extend((s, s + size) for s in starts)
    return out


def _tm_from_dist(d: np.ndarray, d0: float) -> float:
    return float(np.mean(1.0 / (1.0 + (d / d0) ** 2)))


def tm_score(pred: np.ndarray, truth: np.ndarray, max_iter: int = 20) -> float:
    """TM-score of two equal-length, residue-matched Cα traces.

    The superposition search seeds Kabsch fits on fragments of length
    L, L/2, L/4, ... and 7, then iteratively refits on residues closer than
    the search cutoff, keeping the best score seen.
    """
    p, t = _check_pair(pred, truth)
    n = len(p)
    d0 = tm_d0(n)
    d_search = float(np.clip(d0, 4.5, 8.0))
    best = 0.0
    seen: set[bytes] = set()
    for lo, hi in _seed_windows(n):
        sel = np.zeros(n, dtype=bool)
        sel[lo:hi] = True
        for _ in range(max_iter):
            key = np.packbits(sel).tobytes()
            if key in seen:
                break
            seen.add(key)
            if sel.sum() < 3 or _is_collinear(p[sel]):
                break
            rot, trans = _kabsch(p[sel], t[sel])
            d = np.linalg.norm(p @ rot.T + trans - t, axis=-1)
            best = max(best, _tm_from_dist(d, d0))
            cut = d_search
            new = d < cut
            while new.sum() < 3 and cut < 100:
                cut += 0.5
                new = d < cut
            if np.array_equal(new, sel):
                break
            sel = new
    return min(best, 1.0)


# ---------------------------------------------------------------------------
# secondary structure from Cα geometry
#
# Distance windows follow the P-SEA convention: for residue i the Cα
# distances to i+2, i+3, i+4 must all fall inside the helix (or strand)
# ranges; the i -> i+3 virtual torsion separates right-handed helices.
# ---------------------------------------------------------------------------

_HELIX_D = ((5.5, 0.5), (5.3, 0.5), (6.4, 0.6))
_STRAND_D = ((6.7, 0.6), (9.9, 0.9), (12.4, 1.1))
_HELIX_TORSION = (50.0, 20.0)
_STRAND_TORSION = (-170.0, 45.0)


def _virtual_torsion(ca: np.ndarray) -> np.ndarray:
    b0 = ca[1:-2] - ca[:-3]
    b1 = ca[2:-1] - ca[1:-2]
    b2 = ca[3:] - ca[2:-1]
    n1 = np.cross(b0, b1)
    n2 = np.cross(b1, b2)
    y = np.linalg.norm(b1, axis=-1) * np.sum(b0 * n2, axis=-1)
    x = np.sum(n1 * n2, axis=-1)
    return np.degrees(np.arctan2(y, x))


def _angle_close(a: np.ndarray, center: float, tol: float) -> np.ndarray:
    diff = (a - center + 180.0) % 360.0 - 180.0
    return np.abs(diff) <= tol


def _within(d: np.ndarray, spec: tuple[float, float]) -> np.ndarray:
    return np.abs(d - spec[0]) <= spec[1]


def _mark_segments(flags: np.ndarray, span: int, min_len: int, length: int) -> np.ndarray:
    covered = np.zeros(length, dtype=bool)
    for i in np.flatnonzero(flags):
        covered[i : i + span] = True
    out = np.zeros(length, dtype=bool)
    i = 0
    while i < length:
        if covered[i]:
            j = i
            while j < length and covered[j]:
                j += 1
            if j - i >= min_len:
                out[i:j] = True
            i = j
        else:
            i += 1
    return out


def assign_secondary_structure(coords: np.ndarray) -> np.ndarray:
    """Per-residue labels ``'H'`` (helix), ``'E'`` (strand), ``'C'`` (coil) from Cα geometry.

    Chains shorter than 5 residues are all coil.
    """
    ca = ca_trace(coords)
    n = len(ca)
    labels = np.full(n, SS_COIL, dtype="<U1")
    if n < 5:
        return labels
    m = n - 4
    d2 = np.linalg.norm(ca[2 : 2 + m] - ca[:m], axis=-1)
    d3 = np.linalg.norm(ca[3 : 3 + m] - ca[:m], axis=-1)
    d4 = np.linalg.norm(ca[4 : 4 + m] - ca[:m], axis=-1)
    tors = _virtual_torsion(ca)[:m]
    helix = (
        _within(d2, _HELIX_D[0])
        & _within(d3, _HELIX_D[1])
        & _within(d4, _HELIX_D[2])
        & _angle_close(tors, *_HELIX_TORSION)
    )
    strand = (
        _within(d2, _STRAND_D[0])
        & _within(d3, _STRAND_D[1])
        & _within(d4, _STRAND_D[2])
        & _angle_close(tors, *_STRAND_TORSION)
    )
    h = _mark_segments(helix, 5, 5, n)
    e = _mark_segments(strand & ~helix, 5, 3, n) & ~h
    labels[h] = SS_HELIX
    labels[e] = SS_STRAND
    return labels


def secondary_structure(structure, use_file_labels: bool = True) -> tuple[np.ndarray, str]:
    """Labels for a structure plus their source: ``"file"`` or ``"psea"``."""
    labels = getattr(structure, "ss_labels", None)
    if use_file_labels and labels is not None:
        return np.asarray(labels, dtype="<U1"), "file"
    return assign_secondary_structure(structure.coords), "psea"
