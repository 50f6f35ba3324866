"""Attention-label extraction, the shallow attention predictor, and alignment scoring.

Labels are the normalized column sums of the teacher-forced paragraph
attention; the predictor is a small transformer encoder over paragraph
embeddings trained with MSE against those labels; the alignment score
penalizes candidates whose accumulated paragraph attention falls short of
the prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import (
    FeedForward,
    LayerNormBlock,
    ModelConfig,
    MultiHeadAttention,
    sinusoidal_encoding,
)
from .tensor import AdamState, Tensor, adam_step

LOG_CLAMP = 1e-12


def extract_label(paragraph_attention: np.ndarray,
                  paragraph_mask: np.ndarray | None = None) -> np.ndarray:
    """Normalize per-paragraph attention column sums into a distribution.

    `paragraph_attention` is the (k, m) head-averaged, across-layer-summed
    attention of a teacher-forced pass; padded paragraphs are excluded.
    """
    a = np.asarray(paragraph_attention, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a (k, m) matrix, got shape {a.shape}")
    col = a.sum(axis=0)
    if paragraph_mask is not None:
        col = col * np.asarray(paragraph_mask, dtype=np.float64)
    total = col.sum()
    if total <= 0.0:
        raise ValueError("cannot normalize an all-zero attention matrix")
    return col / total


def att_align_score(eta_y: np.ndarray, eta_hat: np.ndarray,
                    clamp: float = LOG_CLAMP) -> float:
    """Sum of log(min(eta_y_p, eta_hat_p)); under-attended paragraphs hurt,
    over-attended ones contribute the constant log(eta_hat_p)."""
    eta_y = np.asarray(eta_y, dtype=np.float64)
    eta_hat = np.asarray(eta_hat, dtype=np.float64)
    if eta_y.shape != eta_hat.shape:
        raise ValueError(f"distribution lengths differ: {eta_y.shape} vs {eta_hat.shape}")
    return float(np.log(np.maximum(np.minimum(eta_y, eta_hat), clamp)).sum())


@dataclass
class PredictorConfig:
    model_dim: int
    num_heads: int = 4
    num_layers: int = 2
    ffn_dim: int = 0  # defaults to 4 * model_dim
    dropout: float = 0.5

    def __post_init__(self):
        if self.ffn_dim <= 0:
            self.ffn_dim = 4 * self.model_dim
        if self.model_dim % self.num_heads != 0:
            raise ValueError("model_dim must be divisible by num_heads")


class AttentionPredictor:
    """Two-layer transformer encoder over paragraph embeddings with a softmax head.

    Fixed positional encodings by paragraph rank let it accept any paragraph
    count at inference.
    """

    def __init__(self, cfg: PredictorConfig, seed: int = 0):
        self.cfg = cfg
        self.training = False
        self._dropout_rng = np.random.default_rng(seed)
        rng = np.random.default_rng(seed)
        d = cfg.model_dim
        self.params: dict[str, Tensor] = {}
        # reuse the model building blocks with a matching ModelConfig shim
        self._block_cfg = ModelConfig(
            vocab_size=1, model_dim=d, ffn_dim=cfg.ffn_dim, num_heads=cfg.num_heads,
            num_layers=cfg.num_layers, dropout_attention=cfg.dropout,
            dropout_residual=cfg.dropout, dropout_ffn=cfg.dropout,
        )
        self.layers = []
        for i in range(cfg.num_layers):
            pre = f"pred.{i}"
            self.layers.append({
                "attn": MultiHeadAttention(f"{pre}.attn", self._block_cfg, self.params, rng),
                "ln1": LayerNormBlock(f"{pre}.ln1", d, self.params),
                "ffn": FeedForward(f"{pre}.ffn", self._block_cfg, self.params, rng),
                "ln2": LayerNormBlock(f"{pre}.ln2", d, self.params),
            })
        self.params["pred.head.w"] = Tensor(T.xavier_uniform(rng, d, 1, (d, 1)),
                                            requires_grad=True)
        self.params["pred.head.b"] = Tensor(np.zeros(1), requires_grad=True)

    def forward(self, phi: np.ndarray | Tensor) -> Tensor:
        """Map paragraph embeddings (m, d) to a length-m distribution."""
        data = phi.data if isinstance(phi, Tensor) else np.asarray(phi, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"expected (m, d) paragraph embeddings, got {data.shape}")
        m, d = data.shape
        if d != self.cfg.model_dim:
            raise ValueError(f"embedding dim {d} != predictor dim {self.cfg.model_dim}")
        x = T.add(Tensor(data), Tensor(sinusoidal_encoding(np.arange(m), d)))
        x = x.reshape(1, m, d)
        for layer in self.layers:
            attn_out, _ = layer["attn"](x, x, x, dropout_rng=self._dropout_rng,
                                        training=self.training)
            if self.training:
                attn_out = T.dropout(attn_out, self.cfg.dropout,
                                     self._dropout_rng, self.training)
            x = layer["ln1"](T.add(x, attn_out))
            ffn_out = layer["ffn"](x, dropout_rng=self._dropout_rng, training=self.training)
            if self.training:
                ffn_out = T.dropout(ffn_out, self.cfg.dropout,
                                    self._dropout_rng, self.training)
            x = layer["ln2"](T.add(x, ffn_out))
        logits = T.add(T.matmul(x.reshape(m, d), self.params["pred.head.w"]),
                       self.params["pred.head.b"])
        return T.softmax(logits.reshape(1, m), axis=-1).reshape(m)

    def predict(self, phi: np.ndarray) -> np.ndarray:
        """Eval-mode prediction of the optimal attention distribution."""
        was_training = self.training
        self.training = False
        try:
            with T.no_grad():
                return self.forward(phi).data.copy()
        finally:
            self.training = was_training

    # -- persistence ----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = dict(self.state_arrays())
        arrays["pred.meta"] = np.array([
            self.cfg.model_dim, self.cfg.num_heads, self.cfg.num_layers,
            self.cfg.ffn_dim, self.cfg.dropout,
        ])
        if extra:
            arrays.update(extra)
        T.save_checkpoint(path, arrays)

    @classmethod
    def load(cls, path, seed: int = 0) -> "AttentionPredictor":
        arrays = T.load_checkpoint(path)
        meta = arrays.pop("pred.meta")
        cfg = PredictorConfig(model_dim=int(meta[0]), num_heads=int(meta[1]),
                              num_layers=int(meta[2]), ffn_dim=int(meta[3]),
                              dropout=float(meta[4]))
        pred = cls(cfg, seed=seed)
        for name, p in pred.params.items():
            p.data = arrays[name].copy()
        return pred


def mse_loss(pred: Tensor, label: np.ndarray) -> Tensor:
    diff = T.add(pred, Tensor(-np.asarray(label, dtype=np.float64)))
    return T.tmean(T.mul(diff, diff))


def train_predictor(pairs: list[tuple[np.ndarray, np.ndarray]],
                    cfg: PredictorConfig,
                    steps: int = 2000,
                    base_rate: float = 1.0,
                    warmup_steps: int = 100,
                    seed: int = 0,
                    log_every: int = 0) -> AttentionPredictor:
    """Fit the predictor by MSE against (paragraph embeddings, label) pairs."""
    if not pairs:
        raise ValueError("train_predictor requires a nonempty dataset")
    predictor = AttentionPredictor(cfg, seed=seed)
    state = AdamState(base_rate=base_rate, warmup_steps=warmup_steps,
                      model_dim=cfg.model_dim)
    order_rng = np.random.default_rng(seed + 1)
    for step in range(steps):
        phi, label = pairs[int(order_rng.integers(len(pairs)))]
        predictor.training = True
        predictor._dropout_rng = np.random.default_rng(seed * 1_000_003 + step)
        loss = mse_loss(predictor.forward(phi), label)
        for p in predictor.params.values():
            p.zero_grad()
        loss.backward()
        grads = {name: p.grad for name, p in predictor.params.items() if p.grad is not None}
        adam_step(predictor.params, grads, state)
        if log_every and (step + 1) % log_every == 0:
            print(f"predictor step {step + 1}: mse {loss.item():.6f}")
    predictor.training = False
    return predictor


# -- label cache --------------------------------------------------------------


def save_labels(path, records: list[tuple[str, np.ndarray]]) -> None:
    """Write per-sample label records as line-delimited JSON."""
    with open(path, "w") as f:
        for sample_id, eta in records:
            eta = np.asarray(eta, dtype=np.float64)
            f.write(json.dumps({"id": sample_id, "m": int(eta.size),
                                "eta": eta.tolist()}) + "\n")


def load_labels(path) -> dict[str, np.ndarray]:
    labels: dict[str, np.ndarray] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            eta = np.asarray(rec["eta"], dtype=np.float64)
            if eta.size != rec["m"]:
                raise ValueError(f"label record {rec['id']}: m={rec['m']} but "
                                 f"{eta.size} entries")
            labels[rec["id"]] = eta
    return labels
