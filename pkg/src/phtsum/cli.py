"""Command-line surface tying the pipeline together.

Subcommands: gen-toy-corpus, build-vocab, train, extract-labels, train-align,
summarize, evaluate. The PHTSUM_SEED environment variable overrides --seed
everywhere.
"""

from __future__ import annotations

import os
from pathlib import Path

import click
import numpy as np

from . import data as D
from . import evaluation as E
from .alignment import (AttentionPredictor, PredictorConfig, load_labels,
                        save_labels, train_predictor)
from .model import ModelConfig, PHTModel
from .pipeline import default_decode_config, extract_sample_label, pipeline_summarize
from .training import TrainConfig, train


def _seed(value: int) -> int:
    env = os.environ.get("PHTSUM_SEED")
    return int(env) if env else value


def _write_sidecar(path: str, extra: dict) -> None:
    with open(path, "a") as f:
        for key, value in extra.items():
            f.write(f"{key}={value}\n")


def _read_sidecar(path: str) -> dict[str, str]:
    kv = {}
    with open(path) as f:
        for line in f:
            key, _, value = line.strip().partition("=")
            if key:
                kv[key] = value
    return kv


def _check_vocab_hash(sidecar: str, vocab: D.Vocabulary, what: str) -> None:
    stored = _read_sidecar(sidecar).get("vocab_hash")
    if stored and stored != vocab.content_hash():
        raise click.ClickException(
            f"{what}: vocabulary hash mismatch (checkpoint {stored}, "
            f"vocab file {vocab.content_hash()})")


@click.group()
def main():
    """Multi-document summarizer with attention-aligned beam search."""


@main.command("gen-toy-corpus")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
@click.option("--samples", default=40, show_default=True)
@click.option("--paragraphs", default=3, show_default=True)
@click.option("--salient", default=2, show_default=True)
@click.option("--val-fraction", default=0.2, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen_toy_corpus_cmd(out, samples, paragraphs, salient, val_fraction, seed):
    """Generate the synthetic toy corpus as train/val/test JSONL files."""
    seed = _seed(seed)
    records = D.gen_toy_corpus(samples, seed=seed, n_paragraphs=paragraphs,
                               n_salient=salient)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n_val = max(1, int(samples * val_fraction / 2))
    D.save_dataset(out / "train.jsonl", records[: samples - 2 * n_val])
    D.save_dataset(out / "val.jsonl", records[samples - 2 * n_val: samples - n_val])
    D.save_dataset(out / "test.jsonl", records[samples - n_val:])
    click.echo(f"wrote {samples} samples under {out}")


@main.command("build-vocab")
@click.option("--data", "data_paths", type=click.Path(exists=True), multiple=True,
              required=True, help="Dataset JSONL file(s).")
@click.option("--size", default=2000, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def build_vocab_cmd(data_paths, size, out):
    """Learn a byte-pair vocabulary from dataset text fields."""
    import json
    lines = []
    for path in data_paths:
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                lines.append(rec.get("title", ""))
                lines.extend(rec["paragraphs"])
                lines.append(rec["summary"])
    vocab = D.build_vocab(lines, size)
    vocab.save(out)
    click.echo(f"vocabulary of {len(vocab)} tokens -> {out}")


@main.command("train")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--val", type=click.Path(exists=True), required=True)
@click.option("--vocab", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--steps", default=500, show_default=True)
@click.option("--batch-size", default=2, show_default=True)
@click.option("--base-rate", default=2.0, show_default=True)
@click.option("--warmup", default=100, show_default=True)
@click.option("--checkpoint-every", default=100, show_default=True)
@click.option("--model-dim", default=64, show_default=True)
@click.option("--ffn-dim", default=256, show_default=True)
@click.option("--heads", default=4, show_default=True)
@click.option("--layers", default=2, show_default=True)
@click.option("--max-paragraphs", default=8, show_default=True)
@click.option("--max-paragraph-len", default=40, show_default=True)
@click.option("--max-target-len", default=60, show_default=True)
@click.option("--dropout", default=0.1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--resume", type=click.Path(exists=True), default=None)
def train_cmd(data, val, vocab, out, steps, batch_size, base_rate, warmup,
              checkpoint_every, model_dim, ffn_dim, heads, layers,
              max_paragraphs, max_paragraph_len, max_target_len, dropout,
              seed, resume):
    """Train the summarization model; writes checkpoints and best.ckpt."""
    seed = _seed(seed)
    voc = D.Vocabulary.load(vocab)
    cfg = ModelConfig(
        vocab_size=len(voc), model_dim=model_dim, ffn_dim=ffn_dim,
        num_heads=heads, num_layers=layers, max_paragraphs=max_paragraphs,
        max_paragraph_len=max_paragraph_len, max_target_len=max_target_len,
        dropout_attention=dropout, dropout_residual=dropout, dropout_ffn=dropout,
    )
    train_samples = D.load_dataset(data, voc, max_paragraphs, max_paragraph_len)
    val_samples = D.load_dataset(val, voc, max_paragraphs, max_paragraph_len)
    model = PHTModel(cfg, seed=seed)
    tcfg = TrainConfig(steps=steps, batch_size=batch_size, base_rate=base_rate,
                       warmup_steps=warmup, checkpoint_every=checkpoint_every,
                       seed=seed)
    result = train(model, train_samples, val_samples, tcfg, out,
                   resume_from=resume)
    if result.diverged:
        raise click.ClickException(
            "training diverged (non-finite loss); last good checkpoint retained")
    _write_sidecar(result.best_checkpoint + ".cfg",
                   {"vocab_hash": voc.content_hash()})
    click.echo(f"best checkpoint {result.best_checkpoint} "
               f"(val loss {result.best_val_loss:.4f})")


@main.command("extract-labels")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--vocab", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def extract_labels_cmd(model_path, data, vocab, out):
    """Teacher-force the trained model and cache optimal attention labels."""
    voc = D.Vocabulary.load(vocab)
    _check_vocab_hash(model_path + ".cfg", voc, "model checkpoint")
    model = PHTModel.load(model_path)
    samples = D.load_dataset(data, voc, model.cfg.max_paragraphs,
                             model.cfg.max_paragraph_len)
    records = []
    for sample in samples:
        eta, _ = extract_sample_label(model, sample)
        records.append((sample.id, eta))
    save_labels(out, records)
    click.echo(f"wrote {len(records)} labels -> {out}")


@main.command("train-align")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--vocab", type=click.Path(exists=True), required=True)
@click.option("--labels", type=click.Path(exists=True), default=None,
              help="Label cache; extracted on the fly when omitted.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--steps", default=1500, show_default=True)
@click.option("--base-rate", default=1.0, show_default=True)
@click.option("--warmup", default=100, show_default=True)
@click.option("--heads", default=4, show_default=True)
@click.option("--dropout", default=0.5, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_align_cmd(model_path, data, vocab, labels, out, steps, base_rate,
                    warmup, heads, dropout, seed):
    """Train the attention predictor on (paragraph embeddings, label) pairs."""
    seed = _seed(seed)
    voc = D.Vocabulary.load(vocab)
    _check_vocab_hash(model_path + ".cfg", voc, "model checkpoint")
    model = PHTModel.load(model_path)
    samples = D.load_dataset(data, voc, model.cfg.max_paragraphs,
                             model.cfg.max_paragraph_len)
    cached = load_labels(labels) if labels else {}
    pairs = []
    for sample in samples:
        eta, phi = extract_sample_label(model, sample)
        if sample.id in cached:
            eta = cached[sample.id]
        pairs.append((phi, eta))
    pcfg = PredictorConfig(model_dim=model.cfg.model_dim, num_heads=heads,
                           dropout=dropout)
    predictor = train_predictor(pairs, pcfg, steps=steps, base_rate=base_rate,
                                warmup_steps=warmup, seed=seed)
    predictor.save(out)
    _write_sidecar(str(out) + ".cfg", {"vocab_hash": voc.content_hash()})
    click.echo(f"predictor -> {out}")


@main.command("summarize")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--predictor", "predictor_path", type=click.Path(exists=True),
              default=None)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--vocab", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--scorer", type=click.Choice(["vanilla", "attalign", "strcov",
                                             "gnmt-cp", "ptrgen-cov"]),
              default="vanilla", show_default=True)
@click.option("--beam", default=5, show_default=True)
@click.option("--max-len", default=200, show_default=True)
@click.option("--beta", default=0.8, show_default=True)
@click.option("--compress-s", default=None, type=int)
@click.option("--block-trigrams", type=click.Choice(["on", "off"]),
              default="on", show_default=True)
@click.option("--seed", default=0, show_default=True)
def summarize_cmd(model_path, predictor_path, data, vocab, out, scorer, beam,
                  max_len, beta, compress_s, block_trigrams, seed):
    """Generate summaries; writes line-delimited generation records."""
    seed = _seed(seed)
    voc = D.Vocabulary.load(vocab)
    _check_vocab_hash(model_path + ".cfg", voc, "model checkpoint")
    model = PHTModel.load(model_path)
    predictor = None
    if predictor_path:
        _check_vocab_hash(predictor_path + ".cfg", voc, "predictor checkpoint")
        predictor = AttentionPredictor.load(predictor_path)
    samples = D.load_dataset(data, voc, model.cfg.max_paragraphs,
                             model.cfg.max_paragraph_len)
    dcfg = default_decode_config(beam_size=beam, max_len=max_len, beta=beta,
                                 scorer=scorer, compress_s=compress_s,
                                 block_trigrams=block_trigrams == "on",
                                 seed=seed)
    try:
        records = pipeline_summarize(model, predictor, samples, dcfg, voc)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    D.save_generation_records(out, records)
    click.echo(f"wrote {len(records)} generation records -> {out}")


@main.command("evaluate")
@click.option("--generated", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True,
              help="Report directory (report.tsv plus figures).")
@click.option("--figures/--no-figures", default=True, show_default=True)
def evaluate_cmd(generated, data, out, figures):
    """Score generation records with ROUGE and the attention analysis."""
    import json
    records = D.load_generation_records(generated)
    references = {}
    with open(data) as f:
        for line in f:
            line = line.strip()
            if line:
                rec = json.loads(line)
                references[str(rec["id"])] = rec
    evals = E.evaluate_records(records, references)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report = E.format_report(evals)
    (out / "report.tsv").write_text(report)
    if figures and evals:
        for p in E.render_figures(evals, out):
            click.echo(f"figure -> {p}")
    click.echo(report.splitlines()[-1])
    click.echo(f"report -> {out / 'report.tsv'}")


if __name__ == "__main__":
    main()
