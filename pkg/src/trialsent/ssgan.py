"""Semi-supervised adversarial fine-tuning core.

A noise-fed generator produces fake representation vectors; a (k+1)-class
discriminator scores real labeled, real unlabeled and fake vectors. The
discriminator loss is the masked supervised cross-entropy plus the
real-vs-fake term; the generator loss is feature matching plus the
adversarial term. After training the generator is discarded and the
discriminator doubles as the sentiment classifier.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import REAL_CLASSES, SentimentLabel, TrainingCorpus
from .encoder import TinyEncoder, _to_tensors

log = logging.getLogger(__name__)

EPS = 1e-8  # probability clamp before every log
N_REAL_CLASSES = 3
FAKE_INDEX = N_REAL_CLASSES  # position k in the (k+1)-way softmax


class Provenance(enum.IntEnum):
    LABELED = 0
    UNLABELED = 1
    FAKE = 2


@dataclass
class GanConfig:
    d: int
    noise_dim: int = 100
    noise_mean: float = 0.0
    noise_std: float = 1.0
    k: int = N_REAL_CLASSES
    generator_hidden: Optional[list] = None   # default: [d]
    discriminator_hidden: Optional[list] = None  # default: [d]
    dropout_rate: float = 0.1
    leaky_slope: float = 0.2
    learning_rate_G: float = 5e-5
    learning_rate_D: float = 5e-5
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    gan_enabled: bool = True
    fake_ratio: float = 1.0  # |fake| per |real| rows in a batch
    dtype: str = "float32"

    def __post_init__(self):
        if self.k != N_REAL_CLASSES:
            raise ValueError("this artifact is fixed to 3 real classes")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must be in [0,1)")
        if self.generator_hidden is None:
            self.generator_hidden = [self.d]
        if self.discriminator_hidden is None:
            self.discriminator_hidden = [self.d]

    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


@dataclass
class LossBreakdown:
    d_sup: float
    d_unsup: float
    d_total: float
    g_fm: float
    g_unsup: float
    g_total: float

    def to_dict(self) -> dict:
        return asdict(self)


class Generator(nn.Module):
    """MLP from noise vectors to fake representation vectors."""

    def __init__(self, config: GanConfig):
        super().__init__()
        dtype = config.torch_dtype()
        layers: list = []
        width = config.noise_dim
        for h in config.generator_hidden:
            layers += [nn.Linear(width, h, dtype=dtype),
                       nn.LeakyReLU(config.leaky_slope),
                       nn.Dropout(config.dropout_rate)]
            width = h
        layers.append(nn.Linear(width, config.d, dtype=dtype))
        self.net = nn.Sequential(*layers)
        self.noise_dim = config.noise_dim
        self.output_dim = config.d

    def forward(self, noise: torch.Tensor) -> torch.Tensor:
        if noise.shape[-1] != self.noise_dim:
            raise ValueError(f"noise dimension {noise.shape[-1]} != {self.noise_dim}")
        return self.net(noise)


class Discriminator(nn.Module):
    """MLP over representation vectors; emits (k+1) logits and the last
    hidden activation f(x) used by feature matching."""

    def __init__(self, config: GanConfig):
        super().__init__()
        dtype = config.torch_dtype()
        blocks: list = []
        width = config.d
        for h in config.discriminator_hidden:
            blocks.append(nn.Sequential(
                nn.Linear(width, h, dtype=dtype),
                nn.LeakyReLU(config.leaky_slope),
                nn.Dropout(config.dropout_rate)))
            width = h
        self.hidden = nn.ModuleList(blocks)
        self.head = nn.Linear(width, config.k + 1, dtype=dtype)
        self.input_dim = config.d
        self.feature_dim = width

    def forward(self, h: torch.Tensor) -> tuple:
        if h.shape[-1] != self.input_dim:
            raise ValueError(f"representation dimension {h.shape[-1]} != {self.input_dim}")
        x = h
        for block in self.hidden:
            x = block(x)
        return self.head(x), x  # (logits, features)


def generate(noise: torch.Tensor, generator: Generator) -> torch.Tensor:
    return generator(noise)


def discriminate(h: torch.Tensor, discriminator: Discriminator) -> tuple:
    """Returns (logits, probabilities, features) for a batch of vectors."""
    logits, features = discriminator(h)
    return logits, torch.softmax(logits, dim=-1), features


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(EPS, 1.0 - EPS))


def loss_discriminator(logits: torch.Tensor, labels: torch.Tensor,
                       provenance: torch.Tensor) -> dict:
    """Masked supervised loss plus real-vs-fake loss.

    ``labels`` holds real-class indices; entries at non-LABELED rows are
    never read, so unlabeled labels are inert by construction. Returns
    tensors so gradients can flow: {"d_sup", "d_unsup", "d_total"}.
    """
    if logits.numel() == 0:
        raise ValueError("empty batch")
    probs = torch.softmax(logits, dim=-1)
    labeled = provenance == Provenance.LABELED
    real = labeled | (provenance == Provenance.UNLABELED)
    fake = provenance == Provenance.FAKE

    if labeled.any():
        p_true = probs[labeled].gather(1, labels[labeled].unsqueeze(1)).squeeze(1)
        d_sup = (-_clamped_log(p_true)).mean()
    else:
        d_sup = logits.sum() * 0.0

    d_unsup = logits.sum() * 0.0
    p_fake = probs[:, FAKE_INDEX]
    if real.any():
        d_unsup = d_unsup + (-_clamped_log(1.0 - p_fake[real])).mean()
    if fake.any():
        d_unsup = d_unsup + (-_clamped_log(p_fake[fake])).mean()

    return {"d_sup": d_sup, "d_unsup": d_unsup, "d_total": d_sup + d_unsup}


def loss_generator(real_features: torch.Tensor, fake_features: torch.Tensor,
                   fake_logits: torch.Tensor) -> dict:
    """Feature matching plus the adversarial term.

    Returns tensors: {"g_fm", "g_unsup", "g_total"}.
    """
    if real_features.numel() == 0 or fake_features.numel() == 0:
        raise ValueError("feature batches must be non-empty")
    if real_features.shape[-1] != fake_features.shape[-1]:
        raise ValueError("feature dimension mismatch")
    g_fm = ((real_features.mean(dim=0) - fake_features.mean(dim=0)) ** 2).sum()
    p_fake = torch.softmax(fake_logits, dim=-1)[:, FAKE_INDEX]
    g_unsup = (-_clamped_log(1.0 - p_fake)).mean()
    return {"g_fm": g_fm, "g_unsup": g_unsup, "g_total": g_fm + g_unsup}


@dataclass
class TrainedModel:
    encoder: nn.Module
    discriminator: Discriminator
    config: GanConfig
    history: list = field(default_factory=list)
    class_order: tuple = tuple(lbl.value for lbl in REAL_CLASSES)


def discriminator_step_losses(encoder, generator, discriminator, ids, mask,
                              labels, prov, noise) -> dict:
    """Discriminator-side losses for one batch (real rows + detached fakes)."""
    h_real = encoder(ids, mask)
    if generator is not None and noise is not None and len(noise):
        h_fake = generator(noise)
        n_fake = len(noise)
        h_all = torch.cat([h_real, h_fake.detach()])
        prov_all = torch.cat([prov, torch.full((n_fake,), Provenance.FAKE,
                                               dtype=torch.long)])
        labels_all = torch.cat([labels, torch.zeros(n_fake, dtype=torch.long)])
    else:
        h_all, prov_all, labels_all = h_real, prov, labels
    logits_all, _ = discriminator(h_all)
    return loss_discriminator(logits_all, labels_all, prov_all)


def generator_step_losses(encoder, generator, discriminator, ids, mask,
                          prov, noise) -> dict:
    """Generator-side losses for one batch.

    Feature matching compares fake features against the unlabeled rows
    only (labeled examples stay out of the generator loss); a corpus with
    no unlabeled rows falls back to the full real batch.
    """
    h_fake = generator(noise)
    fake_logits, fake_feats = discriminator(h_fake)
    unlab = prov == Provenance.UNLABELED
    fm_rows = unlab if unlab.any() else torch.ones_like(unlab)
    with torch.no_grad():
        _, real_feats = discriminator(encoder(ids[fm_rows], mask[fm_rows]))
    return loss_generator(real_feats, fake_feats, fake_logits)


def _corpus_tensors(corpus: TrainingCorpus, dtype: torch.dtype) -> tuple:
    ids, mask = _to_tensors(corpus.examples)
    label_idx = torch.zeros(len(corpus), dtype=torch.long)
    prov = torch.empty(len(corpus), dtype=torch.long)
    class_index = {lbl: i for i, lbl in enumerate(REAL_CLASSES)}
    for i, (lbl, is_lab) in enumerate(zip(corpus.labels, corpus.is_labeled)):
        if is_lab:
            label_idx[i] = class_index[lbl]
            prov[i] = Provenance.LABELED
        else:
            prov[i] = Provenance.UNLABELED
    return ids, mask.to(dtype), label_idx, prov


def train(corpus: TrainingCorpus, encoder: nn.Module, config: GanConfig,
          validation: Optional[tuple] = None) -> TrainedModel:
    """Run the adversarial fine-tuning loop.

    Per batch: one optimizer step on discriminator + encoder against the
    discriminator loss, then one step on the generator against the
    generator loss. Fully deterministic for a fixed seed. ``validation``
    is an optional (examples, labels) pair scored after every epoch.
    """
    present = {lbl for lbl, is_lab in zip(corpus.labels, corpus.is_labeled) if is_lab}
    missing = [lbl.value for lbl in REAL_CLASSES if lbl not in present]
    if missing:
        raise ValueError(f"corpus lacks labeled examples for class(es): {missing}")

    torch.manual_seed(config.seed)
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # keeps reductions bit-reproducible
    try:
        return _train_loop(corpus, encoder, config, validation)
    finally:
        torch.set_num_threads(n_threads)


def _train_loop(corpus, encoder, config, validation) -> TrainedModel:
    dtype = config.torch_dtype()
    ids, mask, label_idx, prov = _corpus_tensors(corpus, dtype)
    if not config.gan_enabled:
        # supervised-only baseline: labeled rows, plain cross-entropy
        keep = prov == Provenance.LABELED
        ids, mask = ids[keep], mask[keep]
        label_idx, prov = label_idx[keep], prov[keep]
    n = len(ids)

    generator = Generator(config) if config.gan_enabled else None
    discriminator = Discriminator(config)
    d_params = list(discriminator.parameters()) + \
        [p for p in encoder.parameters() if p.requires_grad]
    opt_d = torch.optim.Adam(d_params, lr=config.learning_rate_D)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.learning_rate_G) \
        if generator is not None else None

    rng = np.random.default_rng(config.seed)
    history: list = []
    model = TrainedModel(encoder=encoder, discriminator=discriminator,
                         config=config, history=history)

    for epoch in range(config.epochs):
        encoder.train()
        discriminator.train()
        if generator is not None:
            generator.train()
        order = rng.permutation(n)
        sums = np.zeros(4)
        n_batches = 0

        for start in range(0, n, config.batch_size):
            idx = torch.as_tensor(order[start:start + config.batch_size])
            b_ids, b_mask = ids[idx], mask[idx]
            b_labels, b_prov = label_idx[idx], prov[idx]
            n_real = len(idx)
            n_fake = round(config.fake_ratio * n_real) if generator is not None else 0

            noise = None
            if n_fake:
                noise = config.noise_mean + config.noise_std * \
                    torch.randn(n_fake, config.noise_dim, dtype=dtype)

            # --- discriminator (+ encoder) step
            d_losses = discriminator_step_losses(
                encoder, generator, discriminator, b_ids, b_mask,
                b_labels, b_prov, noise)
            d_objective = d_losses["d_total"] if config.gan_enabled \
                else d_losses["d_sup"]
            _check_finite(d_objective, epoch, start)
            opt_d.zero_grad()
            d_objective.backward()
            opt_d.step()

            # --- generator step (fresh forward through the updated discriminator)
            if n_fake:
                g_losses = generator_step_losses(
                    encoder, generator, discriminator, b_ids, b_mask, b_prov, noise)
                _check_finite(g_losses["g_total"], epoch, start)
                opt_g.zero_grad()
                g_losses["g_total"].backward()
                opt_g.step()
            else:
                zero = torch.zeros(())
                g_losses = {"g_fm": zero, "g_unsup": zero, "g_total": zero}

            d_unsup_val = d_losses["d_unsup"].item() if config.gan_enabled else 0.0
            sums += np.array([d_losses["d_sup"].item(), d_unsup_val,
                              g_losses["g_fm"].item(), g_losses["g_unsup"].item()])
            n_batches += 1

        d_sup, d_unsup, g_fm, g_unsup = sums / n_batches
        breakdown = LossBreakdown(d_sup, d_unsup, d_sup + d_unsup,
                                  g_fm, g_unsup, g_fm + g_unsup)
        entry = {"epoch": epoch, "loss": breakdown.to_dict(),
                 "train_accuracy": _accuracy(model, corpus)}
        if validation is not None:
            entry["validation_accuracy"] = _accuracy_pairs(model, *validation)
        history.append(entry)

    encoder.eval()
    discriminator.eval()
    # generator is dropped here; the returned model carries no generator state
    return model


def _check_finite(loss: torch.Tensor, epoch: int, batch_start: int):
    if not torch.isfinite(loss):
        raise RuntimeError(
            f"non-finite loss at epoch {epoch}, batch offset {batch_start}: {loss}")


def predict_batch(model: TrainedModel, batch) -> tuple:
    """(labels, probabilities over the 3 real classes) for a batch of sequences.

    The fake logit is dropped and the real-class probabilities are
    renormalized; ties break by fixed class order.
    """
    model.encoder.eval()
    model.discriminator.eval()
    with torch.no_grad():
        h = model.encoder.encode(batch)
        logits, _ = model.discriminator(h)
        probs = torch.softmax(logits, dim=-1).numpy()
    real = probs[:, :N_REAL_CLASSES]
    real = real / real.sum(axis=1, keepdims=True)
    labels = [REAL_CLASSES[i] for i in real.argmax(axis=1)]
    return labels, real


def predict(model: TrainedModel, tokens) -> tuple:
    labels, probs = predict_batch(model, [tokens])
    return labels[0], probs[0]


def renormalize_probs(probs4: Sequence[float]) -> tuple:
    """Drop the fake component of a (k+1)-class probability vector and
    renormalize; returns (label, 3-class probabilities)."""
    real = np.asarray(probs4[:N_REAL_CLASSES], dtype=float)
    real = real / real.sum()
    return REAL_CLASSES[int(real.argmax())], real


def _accuracy(model: TrainedModel, corpus: TrainingCorpus) -> float:
    examples = [ex for ex, lab in zip(corpus.examples, corpus.is_labeled) if lab]
    gold = [lbl for lbl, lab in zip(corpus.labels, corpus.is_labeled) if lab]
    return _accuracy_pairs(model, examples, gold)


def _accuracy_pairs(model: TrainedModel, examples, gold) -> float:
    if not examples:
        return float("nan")
    pred, _ = predict_batch(model, examples)
    return float(np.mean([p == g for p, g in zip(pred, gold)]))


def save_model(model: TrainedModel, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.encoder.state_dict(), out_dir / "encoder.pt")
    torch.save(model.discriminator.state_dict(), out_dir / "discriminator.pt")
    cfg = asdict(model.config)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    (out_dir / "labels.json").write_text(json.dumps(list(model.class_order)))
    (out_dir / "history.json").write_text(json.dumps(model.history, indent=2))


def load_model(model_dir, encoder: nn.Module) -> TrainedModel:
    """Rebuild a trained model; the caller supplies an encoder of the same
    architecture (its weights are overwritten from the artifact)."""
    model_dir = Path(model_dir)
    cfg = GanConfig(**json.loads((model_dir / "config.json").read_text()))
    encoder.load_state_dict(torch.load(model_dir / "encoder.pt", weights_only=True))
    disc = Discriminator(cfg)
    disc.load_state_dict(torch.load(model_dir / "discriminator.pt", weights_only=True))
    history = json.loads((model_dir / "history.json").read_text()) \
        if (model_dir / "history.json").exists() else []
    encoder.eval()
    disc.eval()
    return TrainedModel(encoder=encoder, discriminator=disc, config=cfg, history=history)
