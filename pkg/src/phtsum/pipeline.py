"""End-to-end generation: encode, predict the attention target, optionally
compress the source, run beam search, detokenize."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .alignment import AttentionPredictor, extract_label
from .data import BOS, EOS, COMMA, Sample, Vocabulary
from .decoding import DecodeConfig, StepOutput, beam_search, compress_source, make_scorer
from .model import EncodedSource, PHTModel


class PHTStepFunction:
    """Adapts an encoded source to the beam-search step interface.

    The per-step paragraph attention row is the layer-mean head-averaged
    attention (rows sum to 1); the word row is the fused global word
    attention, flattened over (paragraph, token).
    """

    def __init__(self, model: PHTModel, source: EncodedSource, bos_id: int = BOS):
        self.model = model
        self.source = source
        self.bos_id = bos_id
        self.num_layers = model.cfg.num_layers

    def __call__(self, prefix: list[int]) -> StepOutput:
        with T.no_grad():
            out = self.model.decode([self.bos_id] + list(prefix), self.source)
            logits = out.logits.data[-1]
            shifted = logits - logits.max()
            log_probs = shifted - np.log(np.exp(shifted).sum())
            para_row = out.paragraph_attention.data[-1] / self.num_layers
            word_row = out.word_attention[-1].reshape(-1)
        return StepOutput(log_probs=log_probs, paragraph_attention=para_row,
                          word_attention=word_row)


def teacher_forced_attention(model: PHTModel, paragraphs: list[list[int]],
                             summary: list[int], bos_id: int = BOS,
                             eos_id: int = EOS) -> tuple[np.ndarray, np.ndarray, EncodedSource]:
    """Across-layer-summed paragraph attention of a teacher-forced pass.

    Returns (attention matrix (k, m), paragraph mask, encoded source).
    """
    model.eval_mode()
    with T.no_grad():
        source = model.encode(paragraphs)
        target = list(summary[: model.cfg.max_target_len - 1]) + [eos_id]
        prefix = [bos_id] + target[:-1]
        out = model.decode(prefix, source)
        return out.paragraph_attention.data.copy(), source.paragraph_mask, source


def extract_sample_label(model: PHTModel, sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    """(label eta, paragraph embeddings Phi) for one sample."""
    paragraphs = sample.source_paragraphs(model.cfg.prepend_title)
    attention, mask, source = teacher_forced_attention(model, paragraphs, sample.summary)
    eta = extract_label(attention, mask)
    return eta, source.paragraph_embeddings.data.copy()


def summarize_sample(model: PHTModel, predictor: AttentionPredictor | None,
                     sample: Sample, dcfg: DecodeConfig,
                     vocab: Vocabulary | None = None) -> dict:
    """Decode one sample; returns the generation record."""
    needs_predictor = dcfg.scorer == "attalign" or dcfg.compress_s is not None
    if needs_predictor and predictor is None:
        raise ValueError(f"scorer {dcfg.scorer!r} / compression requires a "
                         "trained attention predictor")

    model.eval_mode()
    paragraphs = sample.source_paragraphs(model.cfg.prepend_title)
    paragraphs = paragraphs[: model.cfg.max_paragraphs]
    source = model.encode(paragraphs)

    eta_hat = None
    kept = np.arange(len(paragraphs))
    if needs_predictor:
        eta_hat = predictor.predict(source.paragraph_embeddings.data)
        s = dcfg.compress_s
        if s is not None and s < len(paragraphs):
            paragraphs, kept, eta_hat = compress_source(paragraphs, eta_hat, s)
            source = model.encode(paragraphs, ranks=kept)

    scorer = make_scorer(dcfg, eta_hat)
    step_fn = PHTStepFunction(model, source)
    results = beam_search(step_fn, scorer, dcfg)
    best = results[0]
    eta_y = extract_label(best.hypothesis.para_acc.reshape(1, -1))

    record = {
        "id": sample.id,
        "summary": vocab.decode(best.tokens) if vocab is not None else None,
        "tokens": [int(t) for t in best.tokens],
        "score": best.score,
        "eta_y": [float(v) for v in eta_y],
        "eta_hat": [float(v) for v in eta_hat] if eta_hat is not None else None,
        "kept_paragraphs": [int(i) for i in kept],
        "prepend_title": model.cfg.prepend_title,
        "degenerate": bool(best.degenerate),
    }
    return record


def pipeline_summarize(model: PHTModel, predictor: AttentionPredictor | None,
                       samples: list[Sample], dcfg: DecodeConfig,
                       vocab: Vocabulary | None = None) -> list[dict]:
    return [summarize_sample(model, predictor, s, dcfg, vocab) for s in samples]


def default_decode_config(**overrides) -> DecodeConfig:
    return DecodeConfig(comma_id=COMMA, eos_id=EOS, bos_id=BOS, **overrides)
