"""Beam search with pluggable hypothesis scorers and repetition constraints.

The engine is model-agnostic: it consumes a step function mapping a token
prefix to next-token log-probabilities plus the current step's paragraph
and source-word attention rows. Scorers rank live and finished hypotheses
with the same function at every step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .alignment import LOG_CLAMP, att_align_score, extract_label

NEG_INF = float("-inf")


@dataclass
class DecodeConfig:
    beam_size: int = 5
    max_len: int = 200
    beta: float = 0.8
    scorer: str = "vanilla"
    block_trigrams: bool = True
    block_window: int = 2
    comma_id: int | None = None
    eos_id: int = 2
    bos_id: int = 1
    strcov_coeff: float = 1.0
    ptrgen_coeff: float = 1.0
    gnmt_coeff: float = 1.0
    compress_s: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass
class StepOutput:
    """One decoder step: next-token log-probs and attention rows."""

    log_probs: np.ndarray            # (vocab,)
    paragraph_attention: np.ndarray  # (m,) sums to 1
    word_attention: np.ndarray | None = None  # flat per-source-token row


@dataclass
class BeamHypothesis:
    tokens: list[int] = field(default_factory=list)
    log_prob: float = 0.0
    para_acc: np.ndarray | None = None    # running sum of per-step paragraph attention
    word_acc: np.ndarray | None = None    # running sum of per-step word attention
    strcov_sum: float = 0.0
    ptrgen_sum: float = 0.0
    finished: bool = False
    forced: bool = False                  # end-of-sequence appended at the cap

    def length(self) -> int:
        return max(len(self.tokens), 1)

    def extended(self, token: int, logp: float, step: StepOutput) -> "BeamHypothesis":
        para = step.paragraph_attention
        para_acc = para.copy() if self.para_acc is None else self.para_acc + para
        word_acc = self.word_acc
        if step.word_attention is not None:
            word_acc = (step.word_attention.copy() if word_acc is None
                        else word_acc + step.word_attention)
        prev_para = self.para_acc if self.para_acc is not None else np.zeros_like(para)
        strcov = str_cov_score(para, prev_para)
        ptrgen = 0.0
        if step.word_attention is not None:
            prev_word = (self.word_acc if self.word_acc is not None
                         else np.zeros_like(step.word_attention))
            ptrgen = ptrgen_coverage(step.word_attention, prev_word)
        return BeamHypothesis(
            tokens=self.tokens + [token],
            log_prob=self.log_prob + logp,
            para_acc=para_acc,
            word_acc=word_acc,
            strcov_sum=self.strcov_sum + strcov,
            ptrgen_sum=self.ptrgen_sum + ptrgen,
        )


# -- scoring functions ---------------------------------------------------------


def vanilla_score(h: BeamHypothesis) -> float:
    """Length-normalized log-probability: log P(y|x) / |y|."""
    return h.log_prob / h.length()


def att_align_full_score(h: BeamHypothesis, eta_hat: np.ndarray, beta: float) -> float:
    """Length-normalized log-prob plus beta times the alignment score."""
    eta_y = extract_label(h.para_acc.reshape(1, -1))
    return vanilla_score(h) + beta * att_align_score(eta_y, eta_hat)


def str_cov_score(step_attention: np.ndarray, coverage: np.ndarray) -> float:
    """Per-step structural coverage: 1 - sum_i min(alpha_i, coverage_i)."""
    return 1.0 - float(np.minimum(step_attention, coverage).sum())


def gnmt_coverage_penalty(accumulated: np.ndarray, clamp: float = LOG_CLAMP) -> float:
    """Coverage penalty sum_i log(min(accumulated_i, 1)); zero iff all >= 1."""
    acc = np.asarray(accumulated, dtype=np.float64)
    return float(np.log(np.maximum(np.minimum(acc, 1.0), clamp)).sum())


def ptrgen_coverage(step_attention: np.ndarray, coverage: np.ndarray) -> float:
    """Per-step overlap penalty sum_i min(alpha_i, coverage_i)."""
    return float(np.minimum(step_attention, coverage).sum())


class Scorer:
    name = "base"

    def score(self, h: BeamHypothesis) -> float:
        raise NotImplementedError

    def needs_word_attention(self) -> bool:
        return False


class VanillaScorer(Scorer):
    name = "vanilla"

    def score(self, h: BeamHypothesis) -> float:
        return vanilla_score(h)


class AttAlignScorer(Scorer):
    name = "attalign"

    def __init__(self, eta_hat: np.ndarray, beta: float = 0.8):
        self.eta_hat = np.asarray(eta_hat, dtype=np.float64)
        self.beta = beta

    def score(self, h: BeamHypothesis) -> float:
        return att_align_full_score(h, self.eta_hat, self.beta)


class StrCovScorer(Scorer):
    name = "strcov"

    def __init__(self, coeff: float = 1.0):
        self.coeff = coeff

    def score(self, h: BeamHypothesis) -> float:
        return vanilla_score(h) + self.coeff * h.strcov_sum


class GnmtCoverageScorer(Scorer):
    name = "gnmt-cp"

    def __init__(self, coeff: float = 1.0):
        self.coeff = coeff

    def score(self, h: BeamHypothesis) -> float:
        acc = h.word_acc if h.word_acc is not None else np.ones(1)
        return vanilla_score(h) + self.coeff * gnmt_coverage_penalty(acc)

    def needs_word_attention(self) -> bool:
        return True


class PtrGenCoverageScorer(Scorer):
    name = "ptrgen-cov"

    def __init__(self, coeff: float = 1.0):
        self.coeff = coeff

    def score(self, h: BeamHypothesis) -> float:
        return vanilla_score(h) - self.coeff * h.ptrgen_sum

    def needs_word_attention(self) -> bool:
        return True


SCORER_NAMES = ("vanilla", "attalign", "strcov", "gnmt-cp", "ptrgen-cov")


def make_scorer(cfg: DecodeConfig, eta_hat: np.ndarray | None = None) -> Scorer:
    if cfg.scorer == "vanilla":
        return VanillaScorer()
    if cfg.scorer == "attalign":
        if eta_hat is None:
            raise ValueError("attalign scorer requires a predicted attention distribution")
        return AttAlignScorer(eta_hat, cfg.beta)
    if cfg.scorer == "strcov":
        return StrCovScorer(cfg.strcov_coeff)
    if cfg.scorer == "gnmt-cp":
        return GnmtCoverageScorer(cfg.gnmt_coeff)
    if cfg.scorer == "ptrgen-cov":
        return PtrGenCoverageScorer(cfg.ptrgen_coeff)
    raise ValueError(f"unknown scorer {cfg.scorer!r}; choose from {SCORER_NAMES}")


# -- constraints ----------------------------------------------------------------


def apply_constraints(tokens: list[int], log_probs: np.ndarray,
                      cfg: DecodeConfig) -> np.ndarray:
    """Mask tokens that would repeat a trigram or fall in the recent-token window.

    The end-of-sequence token is exempt from both rules; the comma token is
    exempt from the window rule only.
    """
    masked = log_probs.copy()
    if cfg.block_trigrams and len(tokens) >= 2:
        seen = {(tokens[i], tokens[i + 1]): set() for i in range(len(tokens) - 2)}
        for i in range(len(tokens) - 2):
            seen[(tokens[i], tokens[i + 1])].add(tokens[i + 2])
        blocked = seen.get((tokens[-2], tokens[-1]))
        if blocked:
            for t in blocked:
                if t != cfg.eos_id:
                    masked[t] = NEG_INF
    if cfg.block_window > 0:
        for t in tokens[-cfg.block_window:]:
            if t != cfg.eos_id and t != cfg.comma_id:
                masked[t] = NEG_INF
    return masked


# -- beam search ------------------------------------------------------------------


@dataclass
class DecodeResult:
    hypothesis: BeamHypothesis
    score: float
    degenerate: bool = False

    @property
    def tokens(self) -> list[int]:
        return self.hypothesis.tokens


def beam_search(step_fn, scorer: Scorer, cfg: DecodeConfig) -> list[DecodeResult]:
    """Breadth-limited search over token sequences, ranked by the scorer.

    `step_fn(prefix_tokens)` returns a StepOutput for the next position; the
    prefix excludes the begin-of-sequence token, which the step function is
    expected to supply itself. Finished hypotheses (end-of-sequence chosen,
    or forced at the length cap) are pooled and the best `beam_size` are
    returned, highest score first.
    """
    live = [BeamHypothesis()]
    finished: list[tuple[float, BeamHypothesis]] = []
    degenerate = False

    for _ in range(cfg.max_len):
        candidates: list[tuple[float, int, int, BeamHypothesis]] = []
        for hyp_idx, hyp in enumerate(live):
            step = step_fn(hyp.tokens)
            log_probs = apply_constraints(hyp.tokens, step.log_probs, cfg)
            order = np.argsort(log_probs)[::-1]
            width = min(cfg.beam_size + 1, len(order))
            taken = 0
            for token in order:
                if taken >= width:
                    break
                token = int(token)
                if log_probs[token] == NEG_INF:
                    break
                cand = hyp.extended(token, float(log_probs[token]), step)
                candidates.append((scorer.score(cand), token, hyp_idx, cand))
                taken += 1
            if taken == 0:
                # beam exhausted: emit end-of-sequence with the unmasked mass
                degenerate = True
                eos_lp = float(step.log_probs[cfg.eos_id])
                cand = hyp.extended(cfg.eos_id, eos_lp, step)
                candidates.append((scorer.score(cand), cfg.eos_id, hyp_idx, cand))

        # deterministic top-k: score desc, token id asc, parent index asc;
        # only the top beam_size candidates survive, finished or live
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_live: list[BeamHypothesis] = []
        for score, token, _, cand in candidates[: cfg.beam_size]:
            if token == cfg.eos_id:
                cand.finished = True
                finished.append((score, cand))
            else:
                next_live.append(cand)
        finished.sort(key=lambda s: -s[0])
        finished = finished[: cfg.beam_size]
        live = next_live

        if not live:
            break
        if len(finished) >= cfg.beam_size:
            best_live = max(scorer.score(h) for h in live)
            if best_live <= finished[-1][0]:
                break

    # force-terminate survivors at the cap; the forced token adds no probability
    for hyp in live:
        hyp.finished = True
        hyp.forced = True
        finished.append((scorer.score(hyp), hyp))

    if degenerate:
        warnings.warn("beam search exhausted all candidates; emitted end-of-sequence",
                      RuntimeWarning, stacklevel=2)
    finished.sort(key=lambda s: -s[0])
    results = [DecodeResult(hypothesis=h, score=s, degenerate=degenerate or h.forced)
               for s, h in finished[: cfg.beam_size]]
    if not results:
        raise RuntimeError("beam search produced no hypotheses")
    return results


def greedy_decode(step_fn, cfg: DecodeConfig) -> DecodeResult:
    """Beam size 1 with the vanilla scorer."""
    greedy_cfg = replace(cfg, beam_size=1, scorer="vanilla")
    return beam_search(step_fn, VanillaScorer(), greedy_cfg)[0]


# -- source compression --------------------------------------------------------


def compress_source(paragraphs: list, eta_hat: np.ndarray,
                    s: int) -> tuple[list, np.ndarray, np.ndarray]:
    """Keep the s paragraphs with largest predicted attention, in original order.

    Returns (kept paragraphs, kept indices, renormalized eta_hat).
    """
    eta_hat = np.asarray(eta_hat, dtype=np.float64)
    m = len(paragraphs)
    if eta_hat.shape != (m,):
        raise ValueError(f"eta_hat length {eta_hat.shape} != paragraph count {m}")
    if s < 1:
        raise ValueError("s must be >= 1")
    if s > m:
        warnings.warn(f"compress_source: s={s} > m={m}, clamping to m",
                      RuntimeWarning, stacklevel=2)
        s = m
    # stable selection: ties broken by original position
    order = np.argsort(-eta_hat, kind="stable")[:s]
    keep = np.sort(order)
    kept_eta = eta_hat[keep]
    total = kept_eta.sum()
    if total > 0:
        kept_eta = kept_eta / total
    else:
        kept_eta = np.full(s, 1.0 / s)
    return [paragraphs[i] for i in keep], keep, kept_eta
