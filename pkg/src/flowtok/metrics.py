"""Reconstruction and generation metrics."""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import SS_COIL, SS_HELIX, SS_STRAND, assign_secondary_structure, ca_trace, rmsd, tm_score

__all__ = [
    "GaussianStats",
    "FrechetError",
    "SS_THRESHOLD",
    "RFPSD_MIN_SAMPLES",
    "DIVERSITY_WINDOW",
    "ss_class",
    "ss_rmsd",
    "fit_gaussian",
    "frechet_distance",
    "GeoFeatures",
    "EXTRACTORS",
    "get_extractor",
    "rfpsd",
    "truncated_tm",
    "diversity_pairs",
    "diversity",
    "novelty",
    "MetricsRow",
    "MetricsReport",
    "evaluate_reconstruction",
    "SCHEMA_PATH",
]

SS_THRESHOLD = 0.6
RFPSD_MIN_SAMPLES = 5000
DIVERSITY_WINDOW = 10
SCHEMA_PATH = Path(__file__).parent / "schemas" / "metrics_report.schema.json"

_CLASS_NAMES = {SS_HELIX: "alpha", SS_STRAND: "beta", SS_COIL: "coil"}


# -- secondary-structure stratified RMSD ---------------------------------------

def ss_class(labels) -> str | None:
    """``alpha``/``beta``/``coil`` when one class covers more than 60% of residues."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return None
    for code, name in _CLASS_NAMES.items():
        if np.mean(labels == code) > SS_THRESHOLD:
            return name
    return None


def ss_rmsd(pairs: Sequence[tuple[np.ndarray, np.ndarray]], labels: Sequence) -> dict[str, float]:
    """Mean RMSD per dominant class; classes with no member are absent."""
    buckets: dict[str, list[float]] = {}
    for (pred, truth), lab in zip(pairs, labels, strict=True):
        cls = ss_class(lab)
        if cls is not None:
            buckets.setdefault(cls, []).append(rmsd(pred, truth))
    return {k: float(np.mean(v)) for k, v in sorted(buckets.items())}


# -- Gaussian statistics and the Fréchet distance ------------------------------

@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int


class FrechetError(ArithmeticError):
    pass


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Sample mean and Bessel-corrected covariance of (n, d) features."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("fit_gaussian needs at least two samples")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = xc.T @ xc / (n - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T), n)


def _psd_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min(initial=0.0) < -1e-6:
        raise FrechetError(f"{what} has eigenvalue {w.min():.3g} < -1e-6")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """‖μa − μb‖² + Tr(Σa + Σb − 2 (Σb^½ Σa Σb^½)^½), clamped at zero."""
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    root_b = _psd_sqrt(b.cov, "covariance")
    inner = root_b @ a.cov @ root_b
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if w.min(initial=0.0) < -1e-6:
        raise FrechetError(f"product matrix has eigenvalue {w.min():.3g} < -1e-6")
    tr_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    diff = a.mean - b.mean
    d = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * tr_sqrt
    return max(d, 0.0)


# -- feature extractors ------------------------------------------------------------

@dataclass(frozen=True)
class GeoFeatures:
    """Rigid-invariant descriptor: log-binned Cα distance histogram, Rg, SS fractions."""

    id: str = "geo-v1"
    bins: int = 16
    d_min: float = 3.0
    d_max: float = 60.0

    @property
    def dim(self) -> int:
        return self.bins + 1 + 3

    def edges(self) -> np.ndarray:
        inner = np.geomspace(self.d_min, self.d_max, self.bins - 1)
        return np.concatenate([[0.0], inner, [np.inf]])

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        ca = ca_trace(coords)
        n = len(ca)
        iu = np.triu_indices(n, k=1)
        d = np.linalg.norm(ca[:, None] - ca[None, :], axis=-1)[iu]
        hist = np.histogram(d, bins=self.edges())[0].astype(np.float64)
        hist = hist / max(len(d), 1)
        rg = float(np.sqrt(np.mean(np.sum((ca - ca.mean(axis=0)) ** 2, axis=-1))))
        labels = assign_secondary_structure(ca)
        fr = [float(np.mean(labels == c)) for c in (SS_HELIX, SS_STRAND, SS_COIL)]
        return np.concatenate([hist, [rg / 10.0], fr])


EXTRACTORS: dict[str, Callable[[np.ndarray], np.ndarray]] = {"geo-v1": GeoFeatures()}


def get_extractor(name: str):
    try:
        return EXTRACTORS[name]
    except KeyError:
        raise ValueError(f"unknown feature extractor {name!r}; known: {sorted(EXTRACTORS)}") from None


def _coords(s) -> np.ndarray:
    return np.asarray(getattr(s, "coords", s), dtype=np.float64)


def rfpsd(reference: Sequence, reconstructed: Sequence, extractor="geo-v1") -> float:
    """Fréchet distance between Gaussians fitted to features of two structure sets."""
    ext = get_extractor(extractor) if isinstance(extractor, str) else extractor
    if len(reference) == 0 or len(reconstructed) == 0:
        raise ValueError("rfpsd needs non-empty sets")
    n = min(len(reference), len(reconstructed))
    if n < RFPSD_MIN_SAMPLES:
        warnings.warn(f"rFPSD from {n} samples; estimates stabilise only beyond {RFPSD_MIN_SAMPLES}", stacklevel=2)
    fa = np.stack([ext(_coords(s)) for s in reference])
    fb = np.stack([ext(_coords(s)) for s in reconstructed])
    return frechet_distance(fit_gaussian(fa), fit_gaussian(fb))


# -- set-level similarity -------------------------------------------------------------

def truncated_tm(a: np.ndarray, b: np.ndarray) -> float:
    """TM-score after cutting the longer chain's tail to the shorter length."""
    a, b = ca_trace(_coords(a)), ca_trace(_coords(b))
    n = min(len(a), len(b))
    return tm_score(a[:n], b[:n])


def diversity_pairs(lengths: Sequence[int], window: int = DIVERSITY_WINDOW) -> list[tuple[int, int]]:
    n = len(lengths)
    return [(i, j) for i in range(n) for j in range(i + 1, n) if abs(lengths[i] - lengths[j]) <= window]


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def diversity(structures: Sequence, threads: int = 1) -> float | None:
    """Mean pairwise TM over pairs within ten residues in length; None if no pair qualifies."""
    coords = [_coords(s) for s in structures]
    pairs = diversity_pairs([len(c) for c in coords])
    if not pairs:
        return None
    scores = _pmap(lambda ij: truncated_tm(coords[ij[0]], coords[ij[1]]), pairs, threads)
    return float(np.mean(scores))


def novelty(generated: Sequence, reference: Sequence, threads: int = 1) -> float:
    """Mean over generated structures of the best TM against the reference set."""
    if len(reference) == 0:
        raise ValueError("novelty needs a non-empty reference set")
    gen = [_coords(s) for s in generated]
    ref = [_coords(s) for s in reference]

    def best(g):
        return max(truncated_tm(g, r) for r in ref)

    return float(np.mean(_pmap(best, gen, threads)))


# -- reports --------------------------------------------------------------------------

@dataclass
class MetricsRow:
    id: str
    length: int
    rmsd: float
    tm: float
    ss_class: str | None


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)
    rfpsd: float | None = None
    diversity: float | None = None
    novelty: float | None = None
    extractor: str = "geo-v1"
    sampler: dict | None = None
    warnings: list[str] = field(default_factory=list)

    def aggregates(self) -> dict:
        out: dict = {"n": len(self.rows)}
        if self.rows:
            r = np.array([row.rmsd for row in self.rows])
            t = np.array([row.tm for row in self.rows])
            out.update(rmsd_mean=float(r.mean()), rmsd_std=float(r.std()), tm_mean=float(t.mean()), tm_std=float(t.std()))
        by_class: dict[str, list[float]] = {}
        for row in self.rows:
            if row.ss_class is not None:
                by_class.setdefault(row.ss_class, []).append(row.rmsd)
        out["ss_rmsd"] = {k: float(np.mean(v)) for k, v in sorted(by_class.items())}
        out["rfpsd"] = self.rfpsd
        out["diversity"] = self.diversity
        out["novelty"] = self.novelty
        out["designability"] = None  # needs external folding models
        return out

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in sorted(self.rows, key=lambda r: r.id)],
            "aggregates": self.aggregates(),
            "provenance": {"extractor": self.extractor, "sampler": self.sampler, "warnings": list(self.warnings)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        agg = d.get("aggregates", {})
        prov = d.get("provenance", {})
        return cls(
            rows=[MetricsRow(**r) for r in d.get("rows", [])],
            rfpsd=agg.get("rfpsd"),
            diversity=agg.get("diversity"),
            novelty=agg.get("novelty"),
            extractor=prov.get("extractor", "geo-v1"),
            sampler=prov.get("sampler"),
            warnings=list(prov.get("warnings", [])),
        )

    def to_csv(self) -> str:
        lines = ["id,length,rmsd,tm,ss_class"]
        for r in sorted(self.rows, key=lambda r: r.id):
            lines.append(f"{r.id},{r.length},{r.rmsd:.6f},{r.tm:.6f},{r.ss_class or ''}")
        return "\n".join(lines) + "\n"


def evaluate_reconstruction(
    truth: Sequence,
    pred: Sequence,
    extractor: str = "geo-v1",
    sampler: dict | None = None,
    reference: Sequence | None = None,
    threads: int = 1,
) -> MetricsReport:
    """Pair structures by id and fill rows plus set-level metrics.

    Novelty is only computed against an explicit ``reference`` set.
    """
    by_id = {s.id: s for s in pred}
    missing = [s.id for s in truth if s.id not in by_id]
    if missing:
        raise ValueError(f"no prediction for ids: {missing}")
    truth = sorted(truth, key=lambda s: s.id)

    def row(s):
        p = by_id[s.id]
        if len(p) != len(s):
            raise ValueError(f"{s.id}: length {len(p)} vs {len(s)}")
        labels = s.ss_labels if s.ss_labels is not None else assign_secondary_structure(s.coords)
        return MetricsRow(s.id, len(s), rmsd(p.coords, s.coords), tm_score(ca_trace(p.coords), ca_trace(s.coords)), ss_class(labels))

    rows = _pmap(row, truth, threads)
    report = MetricsReport(rows=rows, extractor=extractor, sampler=sampler)
    preds = [by_id[s.id] for s in truth]
    if len(truth) >= 2:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            report.rfpsd = rfpsd(truth, preds, extractor)
        report.warnings.extend(str(w.message) for w in caught)
    else:
        report.warnings.append("rFPSD needs at least two structures per set")
    report.diversity = diversity(preds, threads)
    if reference:
        report.novelty = novelty(preds, reference, threads)
    return report
