"""Acceptance gate: one test per release criterion.

Every numeric tolerance here is pinned; do not loosen. Oracles are
independent of the implementation (closed-form arithmetic, exhaustive
enumeration, or central finite differences).
"""

import itertools
import json
import math
import socket
import time
from collections import Counter

import numpy as np
import pytest
import torch

from gradcheck import fd_check
from synth import SEQ_LEN, VOCAB_SIZE, make_corpus, make_examples
from trialsent.cli import main as cli_main
from trialsent.corpus import (
    REAL_CLASSES,
    GoldLabel,
    RaterAnnotation,
    balance_classes,
    majority_label,
)
from trialsent.encoder import TinyEncoder
from trialsent.evaluation import ConfusionMatrix, compare_rater, metrics
from trialsent.ingest import FixtureEntrezClient, parse_all
from trialsent.preprocess import ConclusionSource, extract_conclusion, trailing_sentence_count
from trialsent.ssgan import (
    Discriminator,
    GanConfig,
    Generator,
    Provenance,
    discriminator_step_losses,
    generator_step_losses,
    loss_discriminator,
    loss_generator,
    train,
)

POS, NEG, NEU = REAL_CLASSES


def _random_step_inputs(rng):
    """One random small configuration for the gradient oracle."""
    d = int(rng.integers(2, 9))  # d <= 8 keeps finite differences fast
    cfg = GanConfig(d=d, noise_dim=int(rng.integers(2, 7)),
                    generator_hidden=[int(rng.integers(2, 9))],
                    discriminator_hidden=[int(rng.integers(2, 9))],
                    dropout_rate=0.0, dtype="float64",
                    seed=int(rng.integers(0, 10_000)))
    torch.manual_seed(cfg.seed)
    enc = TinyEncoder(VOCAB_SIZE, d, seed=cfg.seed, dtype=torch.float64)
    gen, disc = Generator(cfg), Discriminator(cfg)
    for m in (enc, gen, disc):
        m.eval()
    n_lab = int(rng.integers(1, 5))
    n_unl = int(rng.integers(1, 6))
    examples, _ = make_examples((n_lab + n_unl) // 3 + 1, seed=int(rng.integers(1 << 30)))
    examples = examples[:n_lab + n_unl]
    ids = torch.tensor([e.ids for e in examples])
    mask = torch.tensor([e.attention_mask for e in examples], dtype=torch.float64)
    labels = torch.tensor([int(rng.integers(0, 3)) for _ in examples])
    prov = torch.tensor([Provenance.LABELED] * n_lab + [Provenance.UNLABELED] * n_unl)
    noise = torch.tensor(rng.normal(size=(int(rng.integers(1, 6)), cfg.noise_dim)))
    return enc, gen, disc, ids, mask, labels, prov, noise


def test_gradient_oracle_100_random_configs():
    """Analytic gradients of every loss term vs central differences.

    100 random configurations, d <= 8, step 1e-5, relative error <= 1e-4,
    sampled coordinates spanning encoder, generator, and discriminator
    parameters; whole run under 2 minutes.
    """
    rng = np.random.default_rng(20260823)
    start = time.monotonic()
    for _ in range(100):
        enc, gen, disc, ids, mask, labels, prov, noise = _random_step_inputs(rng)
        d_params = list(enc.parameters()) + list(disc.parameters())
        fd_check(d_params,
                 lambda: discriminator_step_losses(
                     enc, gen, disc, ids, mask, labels, prov, noise)["d_total"],
                 rng, n_coords=12, step=1e-5, rtol=1e-4)
        fd_check(list(gen.parameters()),
                 lambda: generator_step_losses(
                     enc, gen, disc, ids, mask, prov, noise)["g_total"],
                 rng, n_coords=12, step=1e-5, rtol=1e-4)
    assert time.monotonic() - start < 120.0


def test_masking_exactness():
    """Unlabeled labels are inert bit-for-bit; fakes never touch d_sup."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        enc, gen, disc, ids, mask, labels, prov, noise = _random_step_inputs(rng)

        def grads():
            for m in (enc, gen, disc):
                m.zero_grad(set_to_none=True)
            losses = discriminator_step_losses(enc, gen, disc, ids, mask,
                                               labels, prov, noise)
            losses["d_total"].backward()
            g = [p.grad.clone() if p.grad is not None else None
                 for p in list(enc.parameters()) + list(disc.parameters())]
            return {k: v.item() for k, v in losses.items()}, g

        before, g_before = grads()
        scrambled = labels.clone()
        unl = prov == Provenance.UNLABELED
        scrambled[unl] = (scrambled[unl] + 1) % 3
        labels_saved = labels.clone()
        labels.copy_(scrambled)
        after, g_after = grads()
        labels.copy_(labels_saved)

        assert before == after  # exact float equality, no tolerance
        for a, b in zip(g_before, g_after):
            assert (a is None and b is None) or torch.equal(a, b)

        # d_sup must not change when fake rows are added to the batch
        h = enc(ids, mask)
        logits_real, _ = disc(h)
        sup_real = loss_discriminator(logits_real, labels, prov)["d_sup"].item()
        h_all = torch.cat([h, gen(noise).detach()])
        logits_all, _ = disc(h_all)
        prov_all = torch.cat([prov, torch.full((len(noise),), Provenance.FAKE,
                                               dtype=torch.long)])
        labels_all = torch.cat([labels, torch.zeros(len(noise), dtype=torch.long)])
        sup_with_fakes = loss_discriminator(logits_all, labels_all,
                                            prov_all)["d_sup"].item()
        assert sup_real == sup_with_fakes


def test_loss_additivity_50_epoch_run():
    """Totals equal the sum of their parts to 1e-9, per step and per epoch."""
    rng = np.random.default_rng(11)
    for _ in range(200):
        enc, gen, disc, ids, mask, labels, prov, noise = _random_step_inputs(rng)
        d = discriminator_step_losses(enc, gen, disc, ids, mask, labels, prov, noise)
        assert abs(d["d_total"].item() - (d["d_sup"].item() + d["d_unsup"].item())) <= 1e-9
        g = generator_step_losses(enc, gen, disc, ids, mask, prov, noise)
        assert abs(g["g_total"].item() - (g["g_fm"].item() + g["g_unsup"].item())) <= 1e-9

    corpus = make_corpus(n_labeled_per_class=3, n_unlabeled=30, seed=0)
    enc = TinyEncoder(VOCAB_SIZE, 12, seed=0)
    cfg = GanConfig(d=12, noise_dim=16, epochs=50, batch_size=16, seed=0,
                    learning_rate_D=5e-3, learning_rate_G=5e-3)
    model = train(corpus, enc, cfg)
    assert len(model.history) == 50
    for entry in model.history:
        loss = entry["loss"]
        assert abs(loss["d_total"] - (loss["d_sup"] + loss["d_unsup"])) <= 1e-9
        assert abs(loss["g_total"] - (loss["g_fm"] + loss["g_unsup"])) <= 1e-9


def _labeled(counts):
    rows = []
    for lbl, n in zip(REAL_CLASSES, counts):
        rows.extend(((lbl.value, i), lbl) for i in range(n))
    return rows


def test_balancing_reference_counts_and_property_suite():
    """{26, 69, 13} -> {26, 26, 26}, 78 total; 500 random triples hold the
    median / membership rules."""
    out = balance_classes(_labeled((26, 69, 13)), seed=0)
    got = Counter(lbl for _, lbl in out)
    assert got == {POS: 26, NEG: 26, NEU: 26}
    assert len(out) == 78

    rng = np.random.default_rng(99)
    for trial in range(500):
        counts = tuple(int(rng.integers(1, 80)) for _ in range(3))
        median = sorted(counts)[1]  # independent of np.median
        out = balance_classes(_labeled(counts), seed=trial)
        per_class = {lbl: [ex for ex, l in out if l is lbl] for lbl in REAL_CLASSES}
        for lbl, n in zip(REAL_CLASSES, counts):
            members = per_class[lbl]
            assert len(members) == median
            originals = {(lbl.value, i) for i in range(n)}
            assert set(members) <= originals
            if n <= median:
                assert set(members) == originals  # undersized keeps everyone
            else:
                assert len(set(members)) == median  # no duplicates when cutting


def test_trailing_fraction_oracle_and_structured_routing(fixtures_dir):
    """Eq: n = max(1, ceil(0.125 * S_t)) for every S_t in 1..1000."""
    for s in range(1, 1001):
        assert trailing_sentence_count(s) == max(1, (s + 7) // 8)

    records = parse_all(FixtureEntrezClient(fixtures_dir).records)
    routed = Counter()
    for record in records:
        conclusion = extract_conclusion(record)
        routed[conclusion.source_rule] += 1
        has_heading = any(h.upper() in {"CONCLUSION", "CONCLUSIONS",
                                        "INTERPRETATION",
                                        "CONCLUSIONS AND RELEVANCE"}
                          for h, _ in record.sections)
        if record.is_structured and has_heading:
            assert conclusion.source_rule is ConclusionSource.STRUCTURED_HEADING
        else:
            assert conclusion.source_rule is ConclusionSource.TRAILING_FRACTION
    assert routed[ConclusionSource.STRUCTURED_HEADING] > 0
    assert routed[ConclusionSource.TRAILING_FRACTION] > 0


def test_majority_vote_exhaustive_27_triples():
    ties = 0
    for votes in itertools.product(REAL_CLASSES, repeat=3):
        anns = [RaterAnnotation(f"r{i}", "1", v) for i, v in enumerate(votes)]
        gold = majority_label(anns)
        tally = Counter(votes)
        top, top_count = tally.most_common(1)[0]
        if top_count >= 2:
            assert gold.resolved and gold.label is top
        else:
            ties += 1
            assert not gold.resolved and gold.label is None
        assert gold.vote_counts == {lbl.value: tally.get(lbl, 0)
                                    for lbl in REAL_CLASSES}
    assert ties == 6


def _oracle_metrics(m):
    """Direct-formula accuracy and macro F1 (coded independently)."""
    total = m.sum()
    acc = np.trace(m) / total
    f1s = []
    for c in range(3):
        tp = m[c, c]
        precision = tp / m[:, c].sum() if m[:, c].sum() else 0.0
        recall = tp / m[c, :].sum() if m[c, :].sum() else 0.0
        f1s.append(2 * precision * recall / (precision + recall)
                   if precision + recall else 0.0)
    return acc, sum(f1s) / 3


def test_metrics_oracle_and_rater_agreement():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        counts = rng.integers(0, 50, size=(3, 3))
        if counts.sum() == 0:
            counts[1, 1] = 1
        report = metrics(ConfusionMatrix(counts))
        acc, macro = _oracle_metrics(counts.astype(float))
        assert abs(report.accuracy - acc) <= 1e-9
        assert abs(report.macro_f1 - macro) <= 1e-9

    # synthetic second-rater fixture: agrees on 62 of 100 gold labels
    gold, rater = {}, []
    for i in range(100):
        pmid = str(i)
        true = REAL_CLASSES[i % 3]
        gold[pmid] = GoldLabel(pmid, true, {}, resolved=True)
        guess = true if i < 62 else REAL_CLASSES[(i + 1) % 3]
        rater.append(RaterAnnotation("expert", pmid, guess))
    report = compare_rater(rater, gold)
    assert report.accuracy == pytest.approx(0.62, abs=1e-12)
    assert report.n == 100


def _desk_run(seed):
    corpus = make_corpus(n_labeled_per_class=20, n_unlabeled=600, seed=seed)
    enc = TinyEncoder(VOCAB_SIZE, 16, seed=seed)
    cfg = GanConfig(d=16, noise_dim=16, epochs=30, batch_size=64, seed=seed,
                    learning_rate_D=5e-3, learning_rate_G=5e-3)
    val = make_examples(20, seed=seed + 1000)
    return train(corpus, enc, cfg, validation=val)


def test_end_to_end_desk_scale_training():
    """>=0.95 train / >=0.90 validation within 200 epochs, under 5 minutes;
    same seed twice gives bit-identical histories."""
    start = time.monotonic()
    model = _desk_run(seed=1)
    elapsed = time.monotonic() - start
    assert elapsed < 300.0
    assert len(model.history) <= 200
    assert max(e["train_accuracy"] for e in model.history) >= 0.95
    assert max(e["validation_accuracy"] for e in model.history) >= 0.90

    rerun = _desk_run(seed=1)
    assert rerun.history == model.history  # exact, every float bit-identical


def test_semi_supervision_benefit(record_property):
    """12 labeled + 600 unlabeled: GAN-enabled mean validation accuracy over
    10 seeds must not trail the supervised-only baseline."""
    def mean_val(gan_enabled):
        accs = []
        for seed in range(10):
            corpus = make_corpus(4, 600, seed=seed, signal_prob=0.5)
            enc = TinyEncoder(VOCAB_SIZE, 16, seed=seed)
            cfg = GanConfig(d=16, noise_dim=16, epochs=40, batch_size=64,
                            seed=seed, learning_rate_D=5e-3,
                            learning_rate_G=5e-3, gan_enabled=gan_enabled)
            val = make_examples(20, seed=seed + 1000, signal_prob=0.5)
            model = train(corpus, enc, cfg, validation=val)
            accs.append(model.history[-1]["validation_accuracy"])
        return float(np.mean(accs))

    with_gan = mean_val(True)
    without_gan = mean_val(False)
    record_property("mean_validation_accuracy_gan_enabled", with_gan)
    record_property("mean_validation_accuracy_supervised_only", without_gan)
    print(f"semi-supervision benefit: gan={with_gan:.3f} "
          f"supervised-only={without_gan:.3f}")
    assert with_gan >= without_gan


def test_pipeline_determinism_and_offline(fixtures_dir, tmp_path, monkeypatch, capsys):
    """Full CLI pipeline on recorded fixtures: zero network, byte-identical rerun."""
    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted during offline pipeline")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)

    def run_all():
        code = cli_main(["fetch", "--field", "Anesthesiology", "--max", "20",
                         "--out", str(tmp_path / "corpus.jsonl"),
                         "--fixtures", str(fixtures_dir)])
        assert code == 0
        code = cli_main(["pipeline", "--run-dir", str(tmp_path),
                         "--config", str(fixtures_dir / "run.cfg"),
                         "--vocab", str(fixtures_dir / "vocab.txt"),
                         "--gold", str(fixtures_dir / "gold.jsonl"),
                         "--seed", "3"])
        capsys.readouterr()
        assert code == 0

    run_all()
    watched = ["corpus.jsonl", "tokens.jsonl", "balanced.jsonl", "train.jsonl",
               "val.jsonl", "predictions.jsonl", "report.json",
               "model/encoder.pt", "model/discriminator.pt",
               "model/history.json"]
    first = {name: (tmp_path / name).read_bytes() for name in watched}
    run_all()
    for name in watched:
        assert (tmp_path / name).read_bytes() == first[name], name
