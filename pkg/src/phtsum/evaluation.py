"""Automatic evaluation: ROUGE-1/2/L F1 and attention-distribution analysis.

ROUGE here is unstemmed, case-folded, with no stopword removal; scores are
comparable across runs of this package, not across implementations. The attention
analysis builds a per-sample tf-idf "gold" paragraph distribution and
compares model attention to it by cosine similarity.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    @staticmethod
    def from_pr(p: float, r: float, degenerate: bool = False) -> "RougeScore":
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return RougeScore(precision=p, recall=r, f1=f1, degenerate=degenerate)


def _normalize(tokens) -> list[str]:
    if isinstance(tokens, str):
        tokens = tokens.split()
    return [t.lower() for t in tokens]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1 for n in {1, 2}."""
    if n not in (1, 2):
        raise ValueError(f"rouge_n supports n in {{1, 2}}, got {n}")
    cand = _normalize(candidate)
    ref = _normalize(reference)
    if len(ref) < n:
        return RougeScore.from_pr(0.0, 0.0, degenerate=True)
    cand_grams = _ngrams(cand, n)
    ref_grams = _ngrams(ref, n)
    overlap = sum((cand_grams & ref_grams).values())
    cand_total = sum(cand_grams.values())
    ref_total = sum(ref_grams.values())
    p = overlap / cand_total if cand_total else 0.0
    r = overlap / ref_total
    return RougeScore.from_pr(p, r)


def lcs_length(a: list, b: list) -> int:
    """Longest common subsequence length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> RougeScore:
    """LCS-based ROUGE-L: R = LCS/|ref|, P = LCS/|cand|."""
    cand = _normalize(candidate)
    ref = _normalize(reference)
    if not cand or not ref:
        return RougeScore.from_pr(0.0, 0.0, degenerate=True)
    lcs = lcs_length(cand, ref)
    return RougeScore.from_pr(lcs / len(cand), lcs / len(ref))


# -- attention analysis --------------------------------------------------------


@dataclass
class GoldAttention:
    values: np.ndarray
    degenerate: bool = False


def _idf(docs: list[list[str]]) -> tuple[dict[str, float], float]:
    """Smoothed idf ln((1+N)/(1+df)) + 1 over `docs`; also the unseen-term value."""
    n_docs = len(docs)
    df: Counter = Counter()
    for doc in docs:
        df.update(set(doc))
    idf = {t: math.log((1 + n_docs) / (1 + c)) + 1.0 for t, c in df.items()}
    return idf, math.log(1 + n_docs) + 1.0


def _tfidf(doc: list[str], idf: dict[str, float], default_idf: float) -> dict[str, float]:
    tf = Counter(doc)
    return {t: c * idf.get(t, default_idf) for t, c in tf.items()}


def _cosine_sparse(a: dict[str, float], b: dict[str, float]) -> float:
    dot = sum(v * b[t] for t, v in a.items() if t in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def gold_attention(summary, paragraphs: list, corpus_idf_docs: list | None = None) -> GoldAttention:
    """Normalized tf-idf cosine similarities of the summary to each paragraph.

    The idf corpus defaults to the sample itself (paragraphs plus summary);
    pass `corpus_idf_docs` for corpus-level idf instead.
    """
    if not paragraphs or all(not p for p in paragraphs):
        raise ValueError("gold_attention requires at least one nonempty paragraph")
    summary_toks = _normalize(summary)
    para_toks = [_normalize(p) for p in paragraphs]
    idf_docs = ([_normalize(d) for d in corpus_idf_docs] if corpus_idf_docs
                else para_toks + [summary_toks])
    idf, default_idf = _idf(idf_docs)
    summary_vec = _tfidf(summary_toks, idf, default_idf)
    para_vecs = [_tfidf(p, idf, default_idf) for p in para_toks]
    sims = np.array([_cosine_sparse(summary_vec, pv) for pv in para_vecs])
    total = sims.sum()
    if total <= 0.0:
        m = len(paragraphs)
        return GoldAttention(values=np.full(m, 1.0 / m), degenerate=True)
    return GoldAttention(values=sims / total)


def attention_similarity(model_attention: np.ndarray, gold: GoldAttention | np.ndarray) -> float:
    """Cosine similarity between a model attention distribution and the gold one."""
    a = np.asarray(model_attention, dtype=np.float64)
    g = gold.values if isinstance(gold, GoldAttention) else np.asarray(gold, dtype=np.float64)
    if a.shape != g.shape:
        raise ValueError(f"distribution lengths differ: {a.shape} vs {g.shape}")
    na, ng = np.linalg.norm(a), np.linalg.norm(g)
    if na == 0.0 or ng == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.dot(a, g) / (na * ng))


# -- report ----------------------------------------------------------------------


@dataclass
class SampleEvaluation:
    sample_id: str
    rouge1: RougeScore
    rouge2: RougeScore
    rougel: RougeScore
    attention_cosine: float | None = None


def evaluate_records(records: list[dict], references: dict[str, dict]) -> list[SampleEvaluation]:
    """Score generation records against the reference dataset.

    Each record needs {id, summary}; optional eta_y enables the attention
    analysis against the tf-idf gold distribution of the source paragraphs.
    """
    results = []
    for rec in records:
        sid = rec["id"]
        if sid not in references:
            raise KeyError(f"generation record {sid!r} has no reference sample")
        ref = references[sid]
        cand = rec["summary"]
        evaluation = SampleEvaluation(
            sample_id=sid,
            rouge1=rouge_n(cand, ref["summary"], 1),
            rouge2=rouge_n(cand, ref["summary"], 2),
            rougel=rouge_l(cand, ref["summary"]),
        )
        eta_y = rec.get("eta_y")
        if eta_y is not None:
            texts = list(ref["paragraphs"])
            if rec.get("prepend_title"):
                texts = [ref.get("title", "")] + texts
            kept = rec.get("kept_paragraphs") or list(range(len(eta_y)))
            if kept and max(kept) < len(texts):
                texts = [texts[i] for i in kept]
            if len(texts) == len(eta_y) and any(t.strip() for t in texts):
                gold = gold_attention(ref["summary"], texts)
                evaluation.attention_cosine = attention_similarity(np.asarray(eta_y), gold)
        results.append(evaluation)
    return results


def format_report(evals: list[SampleEvaluation]) -> str:
    """Tab-separated per-sample lines plus corpus means."""
    lines = ["id\trouge1_f1\trouge2_f1\trougel_f1\tattention_cosine"]
    for e in evals:
        cos = f"{e.attention_cosine:.6f}" if e.attention_cosine is not None else "NA"
        lines.append(f"{e.sample_id}\t{e.rouge1.f1:.6f}\t{e.rouge2.f1:.6f}"
                     f"\t{e.rougel.f1:.6f}\t{cos}")
    if evals:
        r1 = np.mean([e.rouge1.f1 for e in evals])
        r2 = np.mean([e.rouge2.f1 for e in evals])
        rl = np.mean([e.rougel.f1 for e in evals])
        cosines = [e.attention_cosine for e in evals if e.attention_cosine is not None]
        cos = f"{np.mean(cosines):.6f}" if cosines else "NA"
        lines.append(f"MEAN\t{r1:.6f}\t{r2:.6f}\t{rl:.6f}\t{cos}")
    return "\n".join(lines) + "\n"


def render_figures(evals: list[SampleEvaluation], out_dir) -> list[str]:
    """Write evaluation figures as PNGs next to the report; returns the paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    names = ["ROUGE-1", "ROUGE-2", "ROUGE-L"]
    data = [[e.rouge1.f1 for e in evals], [e.rouge2.f1 for e in evals],
            [e.rougel.f1 for e in evals]]
    ax.boxplot(data, tick_labels=names)
    ax.set_ylabel("F1")
    ax.set_title("Per-sample ROUGE F1")
    fig.tight_layout()
    p = out_dir / "rouge_f1.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(str(p))

    cosines = [e.attention_cosine for e in evals if e.attention_cosine is not None]
    if cosines:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(cosines, bins=min(20, max(5, len(cosines) // 2)), edgecolor="black")
        ax.set_xlabel("cosine similarity to gold attention")
        ax.set_ylabel("samples")
        ax.set_title("Attention-distribution similarity")
        fig.tight_layout()
        p = out_dir / "attention_cosine.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(str(p))
    return paths
