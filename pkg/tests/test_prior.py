import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from flowtok.numerics import Rng
from flowtok.prior import (
    Generated,
    Prior,
    PriorConfig,
    PriorTrainConfig,
    best_of_n,
    frame,
    generate,
    greedy,
    min_p_filter,
    nucleus_filter,
    prior_loss,
    read_token_file,
    sequence_log_likelihood,
    train_prior,
    write_token_file,
)


def _small(**kw):
    base = dict(codebook_size=12, layers=2, width=32, heads=4, max_len=20)
    base.update(kw)
    return Prior(PriorConfig(**base), dtype=np.float64)


class FixedModel:
    """Mock: the same next-token distribution at every position."""

    def __init__(self, probs):
        self.logp = np.log(np.asarray(probs, dtype=np.float64))

    def next_log_probs(self, prefix):
        return self.logp


def test_untrained_loss_near_uniform():
    prior = Prior(PriorConfig(layers=2, width=64, heads=4))
    rng = Rng(0)
    seqs = [rng.integers(0, 1000, shape=(30,)) for _ in range(8)]
    loss = prior_loss(prior, seqs).item()
    assert abs(loss - math.log(1002)) / math.log(1002) < 0.02


def test_memorizes_repeated_sequence_and_misalignment_costs():
    prior = _small()
    seq = [3, 1, 4, 1, 5, 9, 2, 6]
    train_prior(prior, [seq] * 4, PriorTrainConfig(lr=3e-3, warmup=10, batch_size=4), steps=150)
    loss = prior_loss(prior, [seq]).item()
    assert loss < 0.05
    # score each position against the token one further along
    f = frame(seq, prior.config)
    z = prior.logits(f[:-1][None]).data[0]
    logp = z - np.log(np.exp(z - z.max(-1, keepdims=True)).sum(-1, keepdims=True)) - z.max(-1, keepdims=True)
    aligned = -np.mean(logp[np.arange(len(f) - 1), f[1:]])
    shifted = -np.mean(logp[np.arange(len(f) - 2), f[2:]])
    assert aligned == pytest.approx(loss, rel=1e-9)
    assert shifted > aligned


def test_padding_excluded_from_loss():
    prior = _small()
    a = [1, 2, 3]
    b = [4, 5, 6, 7, 8, 9, 10]
    alone = prior_loss(prior, [a]).item()
    la, lb = len(a) + 1, len(b) + 1
    both = prior_loss(prior, [a, b]).item()
    only_b = prior_loss(prior, [b]).item()
    assert both == pytest.approx((alone * la + only_b * lb) / (la + lb), rel=1e-12)


def test_out_of_vocab_codes_rejected():
    prior = _small()
    with pytest.raises(ValueError):
        prior_loss(prior, [[1, 12]])
    with pytest.raises(ValueError):
        frame([-1], prior.config)


def test_causality():
    prior = _small()
    rng = Rng(1)
    toks = np.concatenate([[12], rng.integers(0, 12, shape=(9,))])
    base = prior.logits(toks[None]).data[0]
    for i in range(len(toks) - 1):
        other = toks.copy()
        other[i + 1 :] = rng.integers(0, 12, shape=(len(toks) - i - 1,))
        assert np.array_equal(prior.logits(other[None]).data[0, : i + 1], base[: i + 1])


def test_nucleus_examples():
    assert np.array_equal(nucleus_filter([0.95, 0.05], 0.9), [1.0, 0.0])
    assert np.allclose(nucleus_filter([0.5, 0.3, 0.2], 0.7), [0.625, 0.375, 0.0])
    assert np.allclose(nucleus_filter([0.2, 0.5, 0.3], 1.0), [0.2, 0.5, 0.3])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12), st.floats(0.05, 1.0))
def test_nucleus_keeps_argmax_and_mass(raw, p):
    probs = np.asarray(raw) + 1e-3
    probs /= probs.sum()
    out = nucleus_filter(probs, p)
    assert out[np.argmax(probs)] > 0
    assert probs[out > 0].sum() >= p - 1e-12
    assert out.sum() == pytest.approx(1.0)
    # no smaller prefix of the sorted list already reaches p
    kept = np.sort(probs[out > 0])[::-1]
    assert kept[:-1].sum() < p or len(kept) == 1


def test_min_p_filter():
    out = min_p_filter([0.5, 0.3, 0.04, 0.16], 0.1)
    assert out[2] == 0 and out[3] > 0 and out.sum() == pytest.approx(1.0)


def test_p_one_is_plain_categorical():
    cfg = PriorConfig(codebook_size=3, max_len=3, top_p=1.0)
    probs = np.array([0.5, 0.3, 0.2, 0.0, 0.0])
    model = FixedModel(np.where(probs > 0, probs, 1e-300))
    rng = Rng(2)
    draws = [int(generate(model, cfg, rng).codes[0]) for _ in range(20_000)]
    counts = np.bincount(draws, minlength=3)
    assert stats.chisquare(counts, 20_000 * probs[:3]).pvalue > 1e-3


def test_nucleus_collapses_to_dominant_token():
    cfg = PriorConfig(codebook_size=2, max_len=3, top_p=0.9)
    model = FixedModel([0.95, 0.05, 1e-300, 1e-300])
    rng = Rng(3)
    assert all(generate(model, cfg, rng).codes.tolist() == [0] for _ in range(200))


def test_generated_log_likelihood_matches_recomputation():
    prior = _small(max_len=12)
    cfg = prior.config.replace(top_p=0.9)
    rng = Rng(4)
    for _ in range(5):
        g = generate(prior, cfg, rng)
        assert 1 <= len(g.codes) <= cfg.max_len - 2
        assert np.all(g.codes < cfg.codebook_size)
        ll = sequence_log_likelihood(prior, g.codes, include_eos=g.terminated == "eos")
        assert abs(ll - g.log_likelihood) < 1e-6


def test_generation_always_terminates():
    cfg = PriorConfig(codebook_size=3, max_len=6)
    model = FixedModel([0.3, 0.3, 0.4, 1e-300, 1e-300])  # EOS never sampled
    g = generate(model, cfg, Rng(5))
    assert g.terminated == "max_len" and len(g.codes) == cfg.max_len - 2


def test_best_of_one_is_generate():
    prior = _small(max_len=10)
    a = generate(prior, prior.config, Rng(6))
    b = best_of_n(prior, prior.config, Rng(6), n=1)
    assert np.array_equal(a.codes, b.codes) and a.log_likelihood == b.log_likelihood


def test_best_of_n_picks_highest_and_first_on_ties():
    draws = iter([Generated(np.array([1]), -5.0, "eos"), Generated(np.array([2]), -1.0, "eos"), Generated(np.array([3]), -1.0, "eos")])
    best = best_of_n(None, PriorConfig(), Rng(0), n=3, draw=lambda m, c, r: next(draws))
    assert best.codes.tolist() == [2]


def test_best_of_n_expected_log_likelihood_grows():
    cfg = PriorConfig(codebook_size=3, max_len=8, top_p=1.0)
    model = FixedModel([0.5, 0.2, 0.1, 1e-300, 0.2])
    means = []
    for n in (1, 2, 4):
        rng = Rng(7)
        means.append(np.mean([best_of_n(model, cfg, rng, n=n).log_likelihood for _ in range(1000)]))
    assert means[0] <= means[1] <= means[2]


def test_greedy_reproduces_memorized_sequences():
    prior = _small()
    seqs = [[i, (i + 1) % 12, (i * 5) % 12, 7] for i in range(3)]
    train_prior(prior, seqs, PriorTrainConfig(lr=3e-3, warmup=10, batch_size=3), steps=200)
    out = greedy(prior, prior.config).codes.tolist()
    assert out in seqs


def test_token_file_round_trip(tmp_path):
    recs = [("a", [1, 2, 3]), ("b_B", [999])]
    path = tmp_path / "tokens.tsv"
    write_token_file(path, recs)
    assert path.read_text() == "a\t1 2 3\nb_B\t999\n"
    back = read_token_file(path)
    assert [(r, c.tolist()) for r, c in back] == recs


def test_checkpoint_round_trip(tmp_path):
    prior = _small()
    prior.save(tmp_path / "p.ckpt")
    back = Prior.load(tmp_path / "p.ckpt")
    assert back.config == prior.config
    toks = np.array([[12, 1, 2]])
    assert np.array_equal(back.logits(toks).data, prior.logits(toks).data)


def test_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(top_p=0.0)
    with pytest.raises(ValueError):
        PriorConfig(width=30, heads=4)
    cfg = PriorConfig()
    assert cfg.vocab == 1002 and cfg.max_len == 258 and cfg.top_p == 0.9 and cfg.best_of == 2
