"""Acceptance suite: one test per criterion, summarised at the end of the run."""

import itertools
import json
import math
import shutil
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from helpers import gradcheck_tokenizer, max_rel_error
from flowtok import cli
from flowtok.flowtrain import TRAIN_PRESETS, Trainer, flow_loss
from flowtok.geometry import apply_rigid, ca_trace, random_rotation, rmsd, tm_score
from flowtok.metrics import GaussianStats, frechet_distance
from flowtok.numerics import Rng, Tensor, ops
from flowtok.prior import Generated, Prior, PriorConfig, PriorTrainConfig, best_of_n, greedy, prior_loss, train_prior
from flowtok.sampler import SamplerConfig, euler_sample, guided_field, noise_like, score_from_field, sde_sample
from flowtok.structio import BackboneStructure, ingest_filter, parse_pdb, write_pdb
from flowtok.synth import synthetic_dataset, synthetic_structure
from flowtok.tokenizer import FSQ, Tokenizer, preset, reconstruct

pytestmark = pytest.mark.acceptance

FIXTURES = Path(__file__).parent / "fixtures"


def _full_fd_check(model, batch):
    """Central differences over every entry of every parameter."""
    model.store.zero_grad()
    flow_loss(model, batch, train=False)[0].backward()
    worst = (0.0, "")
    for name, t in model.store.items():
        flat = t.data.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + 1e-5
            fp = flow_loss(model, batch, train=False)[0].item()
            flat[i] = old - 1e-5
            fm = flow_loss(model, batch, train=False)[0].item()
            flat[i] = old
            fd[i] = (fp - fm) / 2e-5
        worst = max(worst, (max_rel_error(t.grad.reshape(-1), fd), name))
    return worst


@pytest.mark.criterion(1, "gradient fidelity")
def test_criterion_1_gradient_fidelity(record_property):
    start = time.time()
    model, batch = gradcheck_tokenizer(quantize=False)
    assert batch.state.x_t.shape[1:] == (6, 1, 3)
    err, name = _full_fd_check(model, batch)
    elapsed = time.time() - start
    record_property("detail", f"max rel err {err:.2e} at {name}, {model.num_params()} entries, {elapsed:.0f}s")
    assert err < 1e-4, name
    assert elapsed < 300


@pytest.mark.criterion(2, "FSQ correctness")
def test_criterion_2_fsq():
    fsq = FSQ([3, 3])
    grids = np.array(list(itertools.product([-1, 0, 1], repeat=2)), dtype=float)
    codes = fsq.codes_from_grid(grids)
    assert sorted(codes.tolist()) == list(range(9))
    assert np.array_equal(fsq.grid_from_codes(codes), grids)
    assert np.array_equal(fsq.codes_from_grid(fsq.grid_from_codes(np.arange(9))), np.arange(9))
    big = FSQ([8, 5, 5, 5])
    assert big.codebook_size == 1000
    assert len({tuple(g) for g in big.grid_from_codes(np.arange(1000))}) == 1000

    model, batch = gradcheck_tokenizer(quantize=True)
    flow_loss(model, batch, train=False)[0].backward()
    st = {n: t.grad.copy() for n, t in model.store.items()}
    model.store.zero_grad()

    def explicit(z, identity=False):
        b = model.fsq.bound(z)
        return b + ops.stop_gradient(Tensor(np.round(b.data)) - b)

    model.fsq.quantize = explicit
    flow_loss(model, batch, train=False)[0].backward()
    assert max(np.abs(t.grad - st[n]).max() for n, t in model.store.items()) < 1e-10


class _Field:
    def __init__(self, cond, uncond):
        self.cond, self.uncond = cond, uncond

    def __call__(self, x, t, conditional=True):
        return (self.cond if conditional else self.uncond)(x, t)


@pytest.mark.criterion(3, "sampler identities")
def test_criterion_3_sampler(record_property):
    f = _Field(lambda x, t: np.tanh(x) * (1 - t) - 0.3 * x, lambda x, t: 0.5 * x)
    shape = (1, 9, 1, 3)
    failures = []

    cfg = SamplerConfig(steps=40, guidance=1.5, eta=0.0, gamma=0.0, seed=3)
    x0 = noise_like(shape, Rng(3))
    if not np.array_equal(sde_sample(f, x0, cfg, Rng(3)), euler_sample(f, x0, cfg)):
        failures.append("(a) SDE at eta=gamma=0 differs from Euler")

    x = noise_like(shape, Rng(4))
    if np.abs(guided_field(f, x, 0.37, 0.0) - f(x, 0.37)).max() > 1e-12:
        failures.append("(b) g=0 differs from the conditional field")

    rng = Rng(5)
    worst = 0.0
    for _ in range(100):
        x0, x1 = rng.normal(shape), rng.normal(shape)
        t = float(rng.uniform())
        xt = (1 - t) * x0 + t * x1
        worst = max(worst, float(np.abs(score_from_field(xt, t, x1 - x0) + x0).max()))
    if worst > 1e-10:
        failures.append(f"(c) max |s + x0| = {worst:.3g}, the formula gives s = -x0/(1-t)")
    record_property("detail", "; ".join(failures) or "(a), (b), (c) hold")
    assert not failures, failures


@pytest.mark.criterion(4, "overfit reconstruction")
def test_criterion_4_overfit(record_property):
    start = time.time()
    ds = synthetic_dataset(5, seed=0, min_len=24, max_len=32)
    model = Tokenizer(preset("small"))
    cfg = TRAIN_PRESETS["small"]
    assert cfg.batch_size == 32 and cfg.lr == 1.7e-4
    trainer = Trainer(model, [s.coords for s in ds], cfg)
    euler = SamplerConfig(steps=100)

    def mean_rmsd():
        recs = [reconstruct(model, s, euler.replace(seed=i)) for i, s in enumerate(ds)]
        return float(np.mean([rmsd(ca_trace(r.coords), ca_trace(s.coords)) for r, s in zip(recs, ds)]))

    history = []
    value = math.inf
    while trainer.step < 5000:
        trainer.run(500)
        value = mean_rmsd()
        history.append((trainer.step, round(value, 2)))
        if value < 1.0:
            break
    elapsed = time.time() - start
    tier = "pass" if value < 1.0 else "warn" if value < 2.0 else "fail"
    record_property("detail", f"mean RMSD {value:.3f} A after {trainer.step} steps, {elapsed / 60:.1f} min [{tier}] {history}")
    if tier == "warn":
        warnings.warn(f"overfit RMSD {value:.3f} A is inside the 2 A warning band")
    assert value < 1.0
    assert elapsed < 30 * 60


@pytest.mark.criterion(5, "geometry oracles")
def test_criterion_5_geometry():
    rng = Rng(11)
    worst_rmsd = worst_orth = 0.0
    for i in range(1000):
        sub = rng.spawn(i)
        x = synthetic_structure(int(sub.integers(5, 40)), sub).coords
        r = random_rotation(sub)
        worst_orth = max(worst_orth, np.abs(r @ r.T - np.eye(3)).max(), abs(np.linalg.det(r) - 1))
        y = apply_rigid(x, r, sub.normal((3,)) * 30)
        worst_rmsd = max(worst_rmsd, rmsd(y, x))
    assert worst_rmsd < 1e-6
    assert worst_orth < 1e-10
    s = ca_trace(synthetic_structure(50, rng).coords)
    assert tm_score(s, s) == 1.0


def _gauss(mean, cov):
    return GaussianStats(np.atleast_1d(np.asarray(mean, float)), np.atleast_2d(np.asarray(cov, float)), 10)


@pytest.mark.criterion(6, "Frechet math")
def test_criterion_6_frechet():
    rng = Rng(12)
    a = rng.normal((5, 5))
    g = _gauss(rng.normal((5,)), a @ a.T + np.eye(5))
    assert frechet_distance(g, g) < 1e-8
    assert frechet_distance(_gauss(0, 1), _gauss(3, 4)) == 10.0
    v = rng.normal((5,))
    assert abs(frechet_distance(g, _gauss(g.mean + v, g.cov)) - v @ v) < 1e-10
    b = rng.normal((5, 5))
    h = _gauss(rng.normal((5,)), b @ b.T + 0.5 * np.eye(5))
    assert abs(frechet_distance(g, h) - frechet_distance(h, g)) < 1e-8


@pytest.mark.criterion(7, "prior sanity")
def test_criterion_7_prior():
    rng = Rng(13)
    seqs = [rng.integers(0, 1000, shape=(int(rng.integers(6, 16)),)).tolist() for _ in range(10)]
    untrained = Prior(PriorConfig(layers=2, width=64, heads=4, max_len=32), dtype=np.float64)
    vocab = untrained.config.vocab
    assert abs(prior_loss(untrained, seqs).item() - math.log(vocab)) / math.log(vocab) < 0.02

    prior = Prior(PriorConfig(layers=2, width=64, heads=4, max_len=32), dtype=np.float64)
    train_prior(prior, seqs, PriorTrainConfig(lr=3e-3, warmup=20, batch_size=10), steps=300)
    assert greedy(prior, prior.config).codes.tolist() in seqs

    draws = [Generated(np.array([1]), -3.0, "eos"), Generated(np.array([2]), -0.5, "eos"), Generated(np.array([3]), -2.0, "eos")]
    it = iter(draws)
    assert best_of_n(None, PriorConfig(), Rng(0), n=3, draw=lambda m, c, r: next(it)) is draws[1]


def _chain(id, labels, plddt):
    n = len(labels)
    coords = np.cumsum(np.full((n, 1, 3), 2.2), axis=0)
    return BackboneStructure(id, coords, plddt=np.asarray(plddt, float), ss_labels=np.array(list(labels)))


@pytest.mark.criterion(8, "ingest filters")
def test_criterion_8_ingest():
    fixtures = [
        _chain("coil_at_70", "C" * 70 + "H" * 30, [90.0] * 100),
        _chain("coil_over_70", "C" * 71 + "H" * 29, [90.0] * 100),
        _chain("plddt_at_80", "H" * 10, [80.0] * 10),
        _chain("plddt_below_80", "H" * 10, [79.9] * 10),
        _chain("fraction_at_0.8", "H" * 10, [95.0] * 8 + [65.0] * 2),  # mean 89, 80% above 70
        _chain("fraction_below_0.8", "H" * 10, [100.0] * 7 + [65.0] * 3),  # mean 89.5, 70% above 70
    ]
    kept = {e.id: e.retained for e in ingest_filter(fixtures).entries}
    assert kept == {
        "coil_at_70": True,
        "coil_over_70": False,
        "plddt_at_80": True,
        "plddt_below_80": False,
        "fraction_at_0.8": True,
        "fraction_below_0.8": False,
    }


@pytest.mark.criterion(9, "end-to-end determinism")
def test_criterion_9_determinism(tmp_path):
    run = tmp_path / "run"
    args = ["report", "--profile", "ci", "--seed", "7", "--out", str(run)]
    assert cli.main(args) == 0
    first = tmp_path / "first"
    shutil.move(run, first)
    assert cli.main(args) == 0
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(run) for p in run.rglob("*") if p.is_file())
    for rel in files:
        assert (first / rel).read_bytes() == (run / rel).read_bytes(), rel
    assert {"tokenizer.ckpt", "prior.ckpt", "tokens.tsv", "report.json"} <= {p.name for p in files}
    assert json.loads((first / "tokenizer" / "config.json").read_text())["dtype"] == "float64"


@pytest.mark.criterion(10, "PDB parser")
def test_criterion_10_parser():
    for seed, atoms in itertools.product(range(20), (1, 3)):
        s = synthetic_structure(30 + seed, Rng(seed), num_atoms=atoms)
        (back,) = parse_pdb(write_pdb(s), ca_only=atoms == 1).structures
        assert np.abs(back.coords - s.coords).max() <= 1e-3
    golden = (FIXTURES / "golden_backbone.pdb").read_bytes()
    (s,) = parse_pdb(golden, plddt_from_bfactor=True).structures
    assert write_pdb(s) == golden
    for line in golden.decode().splitlines():
        assert len(line) == 80
        if line.startswith("ATOM"):
            assert line[12:16].strip() in ("N", "CA", "C")
            assert line[21] == "A" and line[54:60] == "  1.00"
            assert line[76:78].strip() in ("N", "C")
