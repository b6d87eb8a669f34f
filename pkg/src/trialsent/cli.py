"""Command-line entry point for the whole pipeline.

Verbs: fetch, preprocess, labels aggregate, corpus balance, corpus
split, train, classify, evaluate, trend, serve, pipeline. Every
artifact-producing command writes a sidecar ``<artifact>.meta.json``
with the stage name, seed and input hashes so any report can be traced
back to the exact inputs that produced it.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 transport
error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import evaluation, ingest, preprocess, ssgan
from .corpus import REAL_CLASSES, SentimentLabel, parse_label
from .encoder import EncoderConfig, EncoderKind
from .encoder import load as load_encoder
from .errors import ConfigError, DataError, TransportError
from .jsonl import read_jsonl, write_jsonl
from .preprocess import TokenSequence, WordPieceVocab

log = logging.getLogger("trialsent")


# ---------------------------------------------------------------- config


import dataclasses

GAN_KEYS = {f.name for f in dataclasses.fields(ssgan.GanConfig)}

ENCODER_KEYS = ("encoder_kind", "checkpoint_path", "vocab_size", "trainable",
                "encoder_seed", "max_length")


def parse_run_config(path) -> dict:
    """Flat ``key = value`` document (or JSON when the file ends in .json)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        return json.loads(path.read_text())
    cfg: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        cfg[key.strip()] = _coerce(value.strip())
    return cfg


def _coerce(value: str):
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    if value.startswith("["):
        return json.loads(value)
    return value


def split_config(raw: dict) -> tuple:
    """(GanConfig, encoder settings dict) from a flat run config."""
    gan_kwargs = {k: v for k, v in raw.items() if k in GAN_KEYS}
    enc = {k: raw[k] for k in ENCODER_KEYS if k in raw}
    unknown = set(raw) - set(GAN_KEYS) - set(ENCODER_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        gan = ssgan.GanConfig(**gan_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config: {exc}") from exc
    return gan, enc


def build_encoder(gan: ssgan.GanConfig, enc_cfg: dict):
    kind = EncoderKind(enc_cfg.get("encoder_kind", "TINY_TEST"))
    config = EncoderConfig(
        kind=kind,
        output_dim=gan.d,
        checkpoint_path=enc_cfg.get("checkpoint_path"),
        trainable=enc_cfg.get("trainable", True),
        seed=enc_cfg.get("encoder_seed", gan.seed),
        vocab_size=enc_cfg.get("vocab_size", 64),
        dtype=gan.dtype,
    )
    return load_encoder(config), config


# ---------------------------------------------------------------- metadata


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_meta(artifact, stage: str, inputs: list, seed=None):
    meta = {
        "stage": stage,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "timestamp": time.time(),
    }
    Path(str(artifact) + ".meta.json").write_text(json.dumps(meta, indent=2))


# ---------------------------------------------------------------- token files


def read_token_rows(path) -> list:
    rows = list(read_jsonl(path))
    if not rows:
        raise DataError(f"no rows in {path}")
    return rows


def rows_to_sequences(rows) -> tuple:
    seqs, labels = [], []
    for row in rows:
        seqs.append(TokenSequence(ids=row["ids"], attention_mask=row["mask"],
                                  length=len(row["ids"])))
        labels.append(parse_label(row["label"]))
    return seqs, labels


def rows_to_corpus(rows) -> corpus_mod.TrainingCorpus:
    tc = corpus_mod.TrainingCorpus()
    for row, (seq, label) in zip(rows, zip(*rows_to_sequences(rows))):
        tc.examples.append(seq)
        tc.labels.append(label)
        tc.is_labeled.append(label is not SentimentLabel.UNLABELED)
    return tc


# ---------------------------------------------------------------- CLI


@click.group()
@click.option("--verbose", is_flag=True, default=False)
def cli(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--field", "field_name", required=True)
@click.option("--max", "max_records", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--from-year", type=int, default=None)
@click.option("--to-year", type=int, default=None)
@click.option("--api-key-env", default=None,
              help="Environment variable holding the Entrez API key.")
@click.option("--fixtures", type=click.Path(exists=True), default=None,
              help="Serve from a recorded-response fixture directory (offline).")
def fetch(field_name, max_records, out_path, from_year, to_year, api_key_env, fixtures):
    """Fetch clinical-trial records and write the corpus JSONL."""
    import os

    if fixtures:
        client = ingest.FixtureEntrezClient(fixtures)
    else:
        api_key = os.environ.get(api_key_env) if api_key_env else None
        client = ingest.LiveEntrezClient(api_key=api_key)
    query = ingest.FieldQuery(field_name=field_name, max_records=max_records,
                              from_year=from_year, to_year=to_year)
    raws = ingest.fetch_records(query, client)
    records = ingest.parse_all(raws, field=field_name)
    n = write_jsonl(out_path, (r.to_json() for r in records))
    write_meta(out_path, "fetch", [])
    click.echo(f"wrote {n} records to {out_path}")


@cli.command("preprocess")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--max-len", type=int, default=128, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True), default=None,
              help="Gold-label JSONL; unmatched records get the UNK_UNK sentinel.")
def preprocess_cmd(in_path, vocab_path, max_len, out_path, gold_path):
    """Extract conclusions and tokenize the corpus into fixed-length sequences."""
    vocab = WordPieceVocab.load(vocab_path)
    gold = {}
    if gold_path:
        for row in read_jsonl(gold_path):
            gold[row["pmid"]] = row["label"]
    rows = []
    for raw in read_jsonl(in_path):
        record = ingest.AbstractRecord.from_json(raw)
        conclusion = preprocess.extract_conclusion(record)
        seq = preprocess.tokenize(conclusion, vocab, max_length=max_len)
        rows.append({"pmid": record.pmid, "ids": seq.ids,
                     "mask": seq.attention_mask,
                     "label": gold.get(record.pmid, corpus_mod.UNLABELED_SENTINEL)})
    n = write_jsonl(out_path, rows)
    write_meta(out_path, "preprocess", [in_path, vocab_path])
    click.echo(f"tokenized {n} records to {out_path}")


@cli.group()
def labels():
    """Gold-label operations."""


@labels.command("aggregate")
@click.option("--annotations", "ann_path", type=click.Path(exists=True), required=True)
@click.option("--raters", required=True,
              help="Comma-separated ids of the three designated gold raters.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def labels_aggregate(ann_path, raters, out_path):
    """Majority-vote three designated raters' annotations into gold labels."""
    gold_raters = [r.strip() for r in raters.split(",") if r.strip()]
    if len(gold_raters) != 3:
        raise ConfigError("exactly three gold raters are required")
    by_pmid: dict = {}
    for row in read_jsonl(ann_path):
        if row["rater"] not in gold_raters:
            continue
        ann = corpus_mod.RaterAnnotation(rater_id=row["rater"], pmid=row["pmid"],
                                         label=parse_label(row["label"]))
        by_pmid.setdefault(ann.pmid, []).append(ann)

    rows, unresolved = [], []
    for pmid in sorted(by_pmid):
        anns = by_pmid[pmid]
        if len(anns) != 3:
            raise DataError(f"pmid {pmid} has {len(anns)} gold-rater annotations, "
                            "expected 3")
        gold = corpus_mod.majority_label(anns)
        if gold.resolved:
            rows.append({"pmid": pmid, "label": gold.label.value,
                         "votes": gold.vote_counts, "resolved": True})
        else:
            unresolved.append(pmid)
    n = write_jsonl(out_path, rows)
    write_meta(out_path, "labels-aggregate", [ann_path])
    if unresolved:
        log.warning("adjudication queue (three-way ties): %s", unresolved)
    click.echo(f"resolved {n} gold labels ({len(unresolved)} ties) to {out_path}")


@cli.group("corpus")
def corpus_group():
    """Example-set operations."""


@corpus_group.command("balance")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def corpus_balance(in_path, seed, out_path):
    """Over/undersample labeled rows to the median class size."""
    rows = [r for r in read_token_rows(in_path)
            if r["label"] != corpus_mod.UNLABELED_SENTINEL]
    if not rows:
        raise DataError(f"no labeled rows in {in_path}")
    labeled = [(json.dumps(r, sort_keys=True), parse_label(r["label"])) for r in rows]
    try:
        balanced = corpus_mod.balance_classes(labeled, seed=seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    n = write_jsonl(out_path, (json.loads(r) for r, _ in balanced))
    write_meta(out_path, "balance", [in_path], seed=seed)
    click.echo(f"balanced to {n} rows in {out_path}")


@corpus_group.command("split")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--holdout", type=float, default=0.3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-out", type=click.Path(), required=True)
@click.option("--val-out", type=click.Path(), required=True)
def corpus_split(in_path, holdout, seed, train_out, val_out):
    """Stratified train/validation split of a labeled token file."""
    rows = read_token_rows(in_path)
    examples = [(json.dumps(r, sort_keys=True), parse_label(r["label"])) for r in rows]
    try:
        result = corpus_mod.split(examples, holdout, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_jsonl(train_out, (json.loads(r) for r, _ in result.train))
    write_jsonl(val_out, (json.loads(r) for r, _ in result.validation))
    for path in (train_out, val_out):
        write_meta(path, "split", [in_path], seed=seed)
    click.echo(f"split {len(result.train)} train / {len(result.validation)} val")


@cli.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True,
              help="Token JSONL; rows labeled UNK_UNK are the unlabeled pool.")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--val", "val_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def train(corpus_path, config_path, val_path, out_dir):
    """Adversarial fine-tuning; saves the model artifact directory."""
    gan_cfg, enc_cfg = split_config(parse_run_config(config_path))
    encoder, encoder_config = build_encoder(gan_cfg, enc_cfg)
    tc = rows_to_corpus(read_token_rows(corpus_path))
    validation = None
    if val_path:
        validation = rows_to_sequences(read_token_rows(val_path))
    try:
        model = ssgan.train(tc, encoder, gan_cfg, validation=validation)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ssgan.save_model(model, out_dir)
    enc_dump = {k: (v.value if hasattr(v, "value") else v)
                for k, v in vars(encoder_config).items()}
    (Path(out_dir) / "encoder_config.json").write_text(
        json.dumps(enc_dump, indent=2, sort_keys=True))
    write_meta(Path(out_dir) / "config.json", "train",
               [corpus_path, config_path], seed=gan_cfg.seed)
    last = model.history[-1]
    click.echo(f"trained {gan_cfg.epochs} epochs; "
               f"final train accuracy {last['train_accuracy']:.3f}")


def _load_model_dir(model_dir):
    enc_raw = json.loads((Path(model_dir) / "encoder_config.json").read_text())
    enc_raw["kind"] = EncoderKind(enc_raw.pop("kind"))
    encoder = load_encoder(EncoderConfig(**enc_raw))
    return ssgan.load_model(model_dir, encoder)


@cli.command()
@click.option("--model", "model_dir", type=click.Path(exists=True), required=True)
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def classify(model_dir, in_path, out_path):
    """Predict sentiment for a token file; writes predictions JSONL."""
    model = _load_model_dir(model_dir)
    rows = read_token_rows(in_path)
    seqs, _ = rows_to_sequences(rows)
    labels_out, probs = ssgan.predict_batch(model, seqs)
    out_rows = [{"pmid": row["pmid"], "label": lbl.value,
                 "probs": [round(float(p), 8) for p in pr]}
                for row, lbl, pr in zip(rows, labels_out, probs)]
    n = write_jsonl(out_path, out_rows)
    write_meta(out_path, "classify", [in_path])
    click.echo(f"classified {n} records to {out_path}")


@cli.command()
@click.option("--pred", "pred_path", type=click.Path(exists=True), default=None)
@click.option("--rater", "rater_path", type=click.Path(exists=True), default=None)
@click.option("--gold", "gold_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def evaluate(pred_path, rater_path, gold_path, out_path):
    """Score predictions (or a held-out rater's labels) against gold labels."""
    if (pred_path is None) == (rater_path is None):
        raise ConfigError("provide exactly one of --pred or --rater")
    gold = {row["pmid"]: parse_label(row["label"]) for row in read_jsonl(gold_path)}

    source = pred_path or rater_path
    predicted = {}
    for row in read_jsonl(source):
        predicted[row["pmid"]] = parse_label(row["label"])
    missing = sorted(set(gold) - set(predicted))
    if missing:
        raise DataError(f"missing predictions for pmids: {missing}")
    pairs = [(gold[p], predicted[p]) for p in sorted(gold)]
    try:
        report = evaluation.evaluate_pairs(pairs)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    click.echo(report.to_table())
    if out_path:
        Path(out_path).write_text(json.dumps(report.to_dict(), indent=2,
                                             sort_keys=True))
        write_meta(out_path, "evaluate", [source, gold_path])


@cli.command()
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--group-by", type=click.Choice(["year", "field"]), default="year",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def trend(pred_path, corpus_path, group_by, out_path):
    """Sentiment counts and fractions grouped by year or medical field."""
    records = {row["pmid"]: row for row in read_jsonl(corpus_path)}
    preds = list(read_jsonl(pred_path))
    orphans = sorted(p["pmid"] for p in preds if p["pmid"] not in records)
    if orphans:
        raise DataError(f"predictions with no corpus record: {orphans}")
    table = build_trend(preds, records, group_by)
    for row in table:
        click.echo(json.dumps(row, sort_keys=True))
    if out_path:
        write_jsonl(out_path, table)
        # plot-ready tabular companion
        tsv = Path(out_path).with_suffix(".tsv")
        header = "group\tpositive\tnegative\tneutral\tfrac_positive\tfrac_negative\tfrac_neutral\n"
        lines = [header] + [
            "{group}\t{positive}\t{negative}\t{neutral}"
            "\t{frac_positive}\t{frac_negative}\t{frac_neutral}\n".format(**row)
            for row in table]
        tsv.write_text("".join(lines))
        write_meta(out_path, "trend", [pred_path, corpus_path])


def build_trend(preds, records, group_by) -> list:
    groups: dict = {}
    for pred in preds:
        record = records[pred["pmid"]]
        key = record[group_by]
        counts = groups.setdefault(key, {lbl.value: 0 for lbl in REAL_CLASSES})
        counts[pred["label"]] += 1
    table = []
    for key in sorted(groups):
        counts = groups[key]
        total = sum(counts.values())
        row = {"group": key,
               "positive": counts["POSITIVE"], "negative": counts["NEGATIVE"],
               "neutral": counts["NEUTRAL"]}
        for name in ("positive", "negative", "neutral"):
            row[f"frac_{name}"] = row[name] / total
        table.append(row)
    return table


@cli.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--raters-config", type=click.Path(exists=True), required=True,
              help='JSON: {"tokens": {token: rater_id}, "admin_token": str, "seed": int}')
@click.option("--log", "log_path", type=click.Path(), required=True)
@click.option("--static-dir", type=click.Path(), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8731, show_default=True)
def serve(corpus_path, raters_config, log_path, static_dir, host, port):
    """Start the annotation HTTP service."""
    import uvicorn

    from .annotation_api import AnnotationStore, create_app

    raters_cfg = json.loads(Path(raters_config).read_text())
    abstracts = {row["pmid"]: row["abstract"] for row in read_jsonl(corpus_path)}
    store = AnnotationStore(abstracts, raters=sorted(set(raters_cfg["tokens"].values())),
                            log_path=log_path, seed=raters_cfg.get("seed", 0))
    app = create_app(store, rater_tokens=raters_cfg["tokens"],
                     admin_token=raters_cfg["admin_token"], static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


PIPELINE_STAGES = ("preprocess", "balance", "split", "train", "evaluate")

STAGE_NEEDS = {
    "preprocess": ["corpus.jsonl"],
    "balance": ["tokens.jsonl"],
    "split": ["balanced.jsonl"],
    "train": ["train.jsonl"],
    "evaluate": ["model/config.json", "val.jsonl"],
}

STAGE_BEFORE = {"tokens.jsonl": "preprocess", "balanced.jsonl": "balance",
                "train.jsonl": "split", "val.jsonl": "split",
                "model/config.json": "train", "corpus.jsonl": "fetch"}


@cli.command()
@click.option("--run-dir", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--vocab", "vocab_path", type=click.Path(exists=True), required=True)
@click.option("--gold", "gold_path", type=click.Path(exists=True), default=None)
@click.option("--stages", default=",".join(PIPELINE_STAGES), show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def pipeline(run_dir, config_path, vocab_path, gold_path, stages, seed):
    """Run pipeline stages over conventional filenames inside a run directory."""
    run_dir = Path(run_dir)
    stage_list = [s.strip() for s in stages.split(",") if s.strip()]
    unknown = set(stage_list) - set(PIPELINE_STAGES)
    if unknown:
        raise ConfigError(f"unknown stages: {sorted(unknown)}")
    raw_cfg = parse_run_config(config_path)
    max_len = raw_cfg.get("max_length", 128)

    for stage in stage_list:
        for need in STAGE_NEEDS[stage]:
            if not (run_dir / need).exists():
                raise ConfigError(
                    f"stage '{stage}' needs {need}: run "
                    f"'{STAGE_BEFORE[need]}' first")
        if stage == "preprocess":
            preprocess_cmd.callback(in_path=str(run_dir / "corpus.jsonl"),
                                    vocab_path=vocab_path, max_len=max_len,
                                    out_path=str(run_dir / "tokens.jsonl"),
                                    gold_path=gold_path)
        elif stage == "balance":
            corpus_balance.callback(in_path=str(run_dir / "tokens.jsonl"),
                                    seed=seed,
                                    out_path=str(run_dir / "balanced.jsonl"))
        elif stage == "split":
            corpus_split.callback(in_path=str(run_dir / "balanced.jsonl"),
                                  holdout=0.3, seed=seed,
                                  train_out=str(run_dir / "train.jsonl"),
                                  val_out=str(run_dir / "val.jsonl"))
        elif stage == "train":
            train.callback(corpus_path=str(run_dir / "train.jsonl"),
                           config_path=config_path,
                           val_path=str(run_dir / "val.jsonl"),
                           out_dir=str(run_dir / "model"))
        elif stage == "evaluate":
            classify.callback(model_dir=str(run_dir / "model"),
                              in_path=str(run_dir / "val.jsonl"),
                              out_path=str(run_dir / "predictions.jsonl"))
            gold_rows = [{"pmid": r["pmid"], "label": r["label"]}
                         for r in read_jsonl(run_dir / "val.jsonl")]
            write_jsonl(run_dir / "gold_val.jsonl", gold_rows)
            evaluate.callback(pred_path=str(run_dir / "predictions.jsonl"),
                              rater_path=None,
                              gold_path=str(run_dir / "gold_val.jsonl"),
                              out_path=str(run_dir / "report.json"))


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.exceptions.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except TransportError as exc:
        click.echo(f"transport error: {exc}", err=True)
        return 3
    except (DataError, ValueError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
