"""Parallel hierarchical summarization model.

A shared transformer encoder turns each paragraph into context-aware token
embeddings; multi-head attention pooling reduces each paragraph to a single
vector; the decoder runs paragraph-level and word-level cross attentions in
parallel and fuses the per-paragraph word contexts with the paragraph
attention weights. All residual blocks use post-norm placement.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF_MASK = -1e9
CONFIG_SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    model_dim: int = 64
    ffn_dim: int = 256
    num_heads: int = 4
    num_layers: int = 2
    max_paragraphs: int = 8
    max_paragraph_len: int = 40
    max_target_len: int = 60
    dropout_attention: float = 0.1
    dropout_residual: float = 0.1
    dropout_ffn: float = 0.1
    prepend_title: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ints = (
            "vocab_size", "model_dim", "ffn_dim", "num_heads", "num_layers",
            "max_paragraphs", "max_paragraph_len", "max_target_len",
        )
        for name in ints:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )
        for name in ("dropout_attention", "dropout_residual", "dropout_ffn"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {rate}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_text(self) -> str:
        lines = [f"schema_version={CONFIG_SCHEMA_VERSION}"]
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        version = int(kv.pop("schema_version", "-1"))
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {version}")
        kwargs = {}
        for f in fields(cls):
            raw = kv[f.name]
            if f.type == "bool":
                kwargs[f.name] = raw == "True"
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


def sinusoidal_encoding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sin/cos positional encoding rows for the given integer positions."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    half = np.arange(dim // 2, dtype=np.float64)
    freqs = np.power(10000.0, -2.0 * half / dim)
    angles = positions * freqs
    enc = np.zeros((positions.shape[0], dim))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


@dataclass
class EncodedSource:
    """Encoder outputs for one sample."""

    word_contexts: Tensor          # (m, n, d)
    paragraph_embeddings: Tensor   # (m, d), ranking encoding already added
    token_mask: np.ndarray         # (m, n) 1 for real tokens
    paragraph_mask: np.ndarray     # (m,) 1 for non-empty paragraphs
    truncated_paragraphs: int = 0
    truncated_tokens: int = 0

    @property
    def num_paragraphs(self) -> int:
        return int(self.paragraph_embeddings.shape[0])


@dataclass
class DecoderOutput:
    logits: Tensor                     # (k, vocab)
    paragraph_attention_layers: list   # per layer, Tensor (k, m) head-averaged
    paragraph_attention: Tensor        # across-layer sum, (k, m)
    word_attention: np.ndarray         # layer-mean fused global word attention (k, m, n)


class MultiHeadAttention:
    """Standard scaled dot-product multi-head attention with post projection.

    Inputs are (B, q, d) / (B, kv, d); returns the (B, q, d) context and the
    head-averaged attention weights (B, q, kv).
    """

    def __init__(self, prefix: str, cfg: ModelConfig, params: dict[str, Tensor],
                 rng: np.random.Generator):
        d = cfg.model_dim
        self.cfg = cfg
        self.names = {k: f"{prefix}.{k}" for k in ("wq", "wk", "wv", "wo")}
        for name in self.names.values():
            if name not in params:
                params[name] = Tensor(T.xavier_uniform(rng, d, d, (d, d)), requires_grad=True)
        self.params = params

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 mask: np.ndarray | None = None,
                 dropout_rng: np.random.Generator | None = None,
                 training: bool = False):
        cfg = self.cfg
        h, dh, d = cfg.num_heads, cfg.head_dim, cfg.model_dim
        B, q_len = query.shape[0], query.shape[1]
        kv_len = key.shape[1]

        def split_heads(x: Tensor, length: int) -> Tensor:
            # (B, L, d) -> (B, h, L, dh)
            return x.reshape(B, length, h, dh).transpose(0, 2, 1, 3)

        q = split_heads(T.matmul(query, self.params[self.names["wq"]]), q_len)
        k = split_heads(T.matmul(key, self.params[self.names["wk"]]), kv_len)
        v = split_heads(T.matmul(value, self.params[self.names["wv"]]), kv_len)

        scores = T.mul(T.matmul(q, k.transpose(0, 1, 3, 2)), Tensor(dh ** -0.5))
        if mask is not None:
            # mask: (B, q, kv) or (q, kv); 1 = attend, 0 = blocked
            m = np.asarray(mask, dtype=np.float64)
            if m.ndim == 2:
                m = m[None, :, :]
            scores = T.add(scores, Tensor((1.0 - m)[:, None, :, :] * NEG_INF_MASK))
        weights = T.softmax(scores, axis=-1)  # (B, h, q, kv)
        if training and dropout_rng is not None:
            weights_used = T.dropout(weights, cfg.dropout_attention, dropout_rng, training)
        else:
            weights_used = weights
        context = T.matmul(weights_used, v)  # (B, h, q, dh)
        context = context.transpose(0, 2, 1, 3).reshape(B, q_len, d)
        out = T.matmul(context, self.params[self.names["wo"]])
        avg_weights = T.tmean(weights, axis=1)  # (B, q, kv)
        return out, avg_weights


class FeedForward:
    """Two-layer FFN with ReLU."""

    def __init__(self, prefix: str, cfg: ModelConfig, params: dict[str, Tensor],
                 rng: np.random.Generator, in_dim: int | None = None):
        d = in_dim or cfg.model_dim
        f = cfg.ffn_dim
        self.cfg = cfg
        self.names = {
            "w1": f"{prefix}.w1", "b1": f"{prefix}.b1",
            "w2": f"{prefix}.w2", "b2": f"{prefix}.b2",
        }
        if self.names["w1"] not in params:
            params[self.names["w1"]] = Tensor(T.xavier_uniform(rng, d, f, (d, f)), requires_grad=True)
            params[self.names["b1"]] = Tensor(np.zeros(f), requires_grad=True)
            params[self.names["w2"]] = Tensor(T.xavier_uniform(rng, f, d, (f, d)), requires_grad=True)
            params[self.names["b2"]] = Tensor(np.zeros(d), requires_grad=True)
        self.params = params

    def __call__(self, x: Tensor, dropout_rng=None, training: bool = False) -> Tensor:
        p = self.params
        hidden = T.relu(T.add(T.matmul(x, p[self.names["w1"]]), p[self.names["b1"]]))
        if training and dropout_rng is not None:
            hidden = T.dropout(hidden, self.cfg.dropout_ffn, dropout_rng, training)
        return T.add(T.matmul(hidden, p[self.names["w2"]]), p[self.names["b2"]])


class LayerNormBlock:
    def __init__(self, prefix: str, dim: int, params: dict[str, Tensor]):
        self.g_name, self.b_name = f"{prefix}.gain", f"{prefix}.bias"
        if self.g_name not in params:
            params[self.g_name] = Tensor(np.ones(dim), requires_grad=True)
            params[self.b_name] = Tensor(np.zeros(dim), requires_grad=True)
        self.params = params

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.params[self.g_name], self.params[self.b_name])


class PHTModel:
    """Encoder/decoder pair over token-id inputs; one sample at a time."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self.training = False
        self._dropout_rng = np.random.default_rng(seed)
        rng = np.random.default_rng(seed)
        d = cfg.model_dim

        self.params["embedding"] = Tensor(
            T.xavier_uniform(rng, cfg.vocab_size, d, (cfg.vocab_size, d)),
            requires_grad=True,
        )

        self.enc_layers = []
        for i in range(cfg.num_layers):
            pre = f"enc.{i}"
            self.enc_layers.append({
                "attn": MultiHeadAttention(f"{pre}.attn", cfg, self.params, rng),
                "ln1": LayerNormBlock(f"{pre}.ln1", d, self.params),
                "ffn": FeedForward(f"{pre}.ffn", cfg, self.params, rng),
                "ln2": LayerNormBlock(f"{pre}.ln2", d, self.params),
            })

        # multi-head attention pooling: W1 (d,d), W2 (dh,1) shared across heads, W3 (d,d)
        self.params["pool.w1"] = Tensor(T.xavier_uniform(rng, d, d, (d, d)), requires_grad=True)
        self.params["pool.w2"] = Tensor(
            T.xavier_uniform(rng, cfg.head_dim, 1, (cfg.head_dim, 1)), requires_grad=True)
        self.params["pool.w3"] = Tensor(T.xavier_uniform(rng, d, d, (d, d)), requires_grad=True)
        self.pool_ffn = FeedForward("pool.ffn", cfg, self.params, rng)
        self.pool_ln = LayerNormBlock("pool.ln", d, self.params)

        self.dec_layers = []
        for i in range(cfg.num_layers):
            pre = f"dec.{i}"
            self.dec_layers.append({
                "self_attn": MultiHeadAttention(f"{pre}.self", cfg, self.params, rng),
                "ln1": LayerNormBlock(f"{pre}.ln1", d, self.params),
                "para_attn": MultiHeadAttention(f"{pre}.para", cfg, self.params, rng),
                "word_attn": MultiHeadAttention(f"{pre}.word", cfg, self.params, rng),
                "ln2": LayerNormBlock(f"{pre}.ln2", d, self.params),
                "ffn": FeedForward(f"{pre}.ffn", cfg, self.params, rng),
                "ln3": LayerNormBlock(f"{pre}.ln3", d, self.params),
            })

    # -- mode handling --------------------------------------------------------

    def train_mode(self, dropout_seed: int | None = None) -> None:
        self.training = True
        if dropout_seed is not None:
            self._dropout_rng = np.random.default_rng(dropout_seed)

    def eval_mode(self) -> None:
        self.training = False

    # -- encoder ---------------------------------------------------------------

    def _embed_tokens(self, ids: np.ndarray) -> Tensor:
        d = self.cfg.model_dim
        emb = T.embedding(self.params["embedding"], ids)
        return T.mul(emb, Tensor(d ** 0.5))

    def encode_paragraphs(self, paragraphs: list[list[int]]) -> tuple[Tensor, np.ndarray, int]:
        """Shared encoder over all paragraphs: returns C (m, n, d) and token mask."""
        cfg = self.cfg
        trunc_tokens = 0
        clipped = []
        for p in paragraphs:
            if len(p) > cfg.max_paragraph_len:
                trunc_tokens += len(p) - cfg.max_paragraph_len
                p = p[: cfg.max_paragraph_len]
            clipped.append(p)
        m = len(clipped)
        n = max((len(p) for p in clipped), default=0)
        n = max(n, 1)  # keep a padded column for fully empty paragraphs
        ids = np.zeros((m, n), dtype=np.int64)
        token_mask = np.zeros((m, n))
        for i, p in enumerate(clipped):
            ids[i, : len(p)] = p
            token_mask[i, : len(p)] = 1.0

        x = self._embed_tokens(ids)  # (m, n, d)
        x = T.add(x, Tensor(sinusoidal_encoding(np.arange(n), cfg.model_dim)))
        attn_mask = np.broadcast_to(token_mask[:, None, :], (m, n, n)).copy()
        for layer in self.enc_layers:
            attn_out, _ = layer["attn"](x, x, x, mask=attn_mask,
                                        dropout_rng=self._dropout_rng, training=self.training)
            if self.training:
                attn_out = T.dropout(attn_out, cfg.dropout_residual,
                                     self._dropout_rng, self.training)
            x = layer["ln1"](T.add(x, attn_out))
            ffn_out = layer["ffn"](x, dropout_rng=self._dropout_rng, training=self.training)
            if self.training:
                ffn_out = T.dropout(ffn_out, cfg.dropout_residual,
                                    self._dropout_rng, self.training)
            x = layer["ln2"](T.add(x, ffn_out))
        return x, token_mask, trunc_tokens

    def pool_paragraphs(self, contexts: Tensor, token_mask: np.ndarray) -> Tensor:
        """Multi-head attention pooling of (m, n, d) contexts to (m, d) embeddings.

        Fully masked paragraphs pool to the zero vector.
        """
        cfg = self.cfg
        m, n, d = contexts.shape
        h, dh = cfg.num_heads, cfg.head_dim
        heads = T.matmul(contexts, self.params["pool.w1"])  # (m, n, d)
        heads = heads.reshape(m, n, h, dh).transpose(0, 2, 1, 3)  # (m, h, n, dh)
        scores = T.matmul(heads, self.params["pool.w2"])  # (m, h, n, 1)
        mask_add = (1.0 - token_mask)[:, None, :, None] * NEG_INF_MASK
        scores = T.add(scores, Tensor(mask_add))
        weights = T.softmax(scores, axis=2)  # softmax over tokens
        pooled = T.matmul(weights.transpose(0, 1, 3, 2), heads)  # (m, h, 1, dh)
        pooled = pooled.reshape(m, h * dh)  # concat head embeddings
        phi = T.matmul(pooled, self.params["pool.w3"].transpose())
        phi = self.pool_ln(T.add(phi, self.pool_ffn(
            phi, dropout_rng=self._dropout_rng, training=self.training)))
        para_mask = (token_mask.sum(axis=1) > 0).astype(np.float64)
        return T.mul(phi, Tensor(para_mask[:, None]))

    def add_ranking_encoding(self, phi: Tensor, ranks: np.ndarray) -> Tensor:
        """Add the sinusoidal encoding of each paragraph's importance rank."""
        return T.add(phi, Tensor(sinusoidal_encoding(np.asarray(ranks), self.cfg.model_dim)))

    def encode(self, paragraphs: list[list[int]], ranks: np.ndarray | None = None) -> EncodedSource:
        cfg = self.cfg
        trunc_paras = 0
        if len(paragraphs) > cfg.max_paragraphs:
            trunc_paras = len(paragraphs) - cfg.max_paragraphs
            paragraphs = paragraphs[: cfg.max_paragraphs]
        if not paragraphs:
            raise ValueError("encode requires at least one paragraph")
        if ranks is None:
            ranks = np.arange(len(paragraphs))
        ranks = np.asarray(ranks)
        if ranks.shape != (len(paragraphs),):
            raise ValueError(f"ranks shape {ranks.shape} != ({len(paragraphs)},)")

        contexts, token_mask, trunc_tokens = self.encode_paragraphs(paragraphs)
        phi = self.pool_paragraphs(contexts, token_mask)
        phi = self.add_ranking_encoding(phi, ranks)
        para_mask = (token_mask.sum(axis=1) > 0).astype(np.float64)
        return EncodedSource(
            word_contexts=contexts,
            paragraph_embeddings=phi,
            token_mask=token_mask,
            paragraph_mask=para_mask,
            truncated_paragraphs=trunc_paras,
            truncated_tokens=trunc_tokens,
        )

    # -- decoder ---------------------------------------------------------------

    def decode(self, prefix: list[int] | np.ndarray, source: EncodedSource) -> DecoderOutput:
        cfg = self.cfg
        prefix = np.asarray(prefix, dtype=np.int64)
        k = len(prefix)
        if k == 0:
            raise ValueError("decode requires a nonempty target prefix")
        if k > cfg.max_target_len + 1:
            raise ValueError(f"prefix length {k} exceeds max_target_len {cfg.max_target_len}")
        if prefix.min() < 0 or prefix.max() >= cfg.vocab_size:
            raise ValueError("prefix contains out-of-vocabulary token id")
        m, n = source.token_mask.shape
        d = cfg.model_dim

        x = self._embed_tokens(prefix).reshape(1, k, d)
        x = T.add(x, Tensor(sinusoidal_encoding(np.arange(k), d)[None, :, :]))
        causal = np.tril(np.ones((k, k)))
        para_mask = np.broadcast_to(source.paragraph_mask[None, :], (k, m)).copy()
        # word-level attention runs batched over paragraphs: (m, k, n) mask
        word_mask = np.broadcast_to(source.token_mask[:, None, :], (m, k, n)).copy()
        contexts = source.word_contexts  # (m, n, d)
        phi = source.paragraph_embeddings.reshape(1, m, d)

        para_attn_layers: list[Tensor] = []
        word_attn_layers: list[Tensor] = []
        for layer in self.dec_layers:
            # part I: masked self attention
            attn_out, _ = layer["self_attn"](x, x, x, mask=causal,
                                             dropout_rng=self._dropout_rng,
                                             training=self.training)
            if self.training:
                attn_out = T.dropout(attn_out, cfg.dropout_residual,
                                     self._dropout_rng, self.training)
            x_i = layer["ln1"](T.add(x, attn_out))

            # part II: parallel paragraph- and word-level cross attentions
            x_para, a_para = layer["para_attn"](x_i, phi, phi, mask=para_mask,
                                                dropout_rng=self._dropout_rng,
                                                training=self.training)
            a_para2d = a_para.reshape(k, m)
            para_attn_layers.append(a_para2d)

            queries = T.add(x_i, Tensor(np.zeros((m, k, d))))  # broadcast to (m, k, d)
            x_word, a_word = layer["word_attn"](queries, contexts, contexts, mask=word_mask,
                                                dropout_rng=self._dropout_rng,
                                                training=self.training)
            word_attn_layers.append(a_word)  # (m, k, n)

            # fusion: stack word contexts to (k, d, m), weight by A<para> (k, m, 1)
            word_stack = x_word.transpose(1, 2, 0)
            x_int = T.matmul(word_stack, a_para2d.reshape(k, m, 1)).reshape(1, k, d)
            x_ii = layer["ln2"](T.add(T.add(x_i, x_para), x_int))

            # part III: feed forward
            ffn_out = layer["ffn"](x_ii, dropout_rng=self._dropout_rng, training=self.training)
            if self.training:
                ffn_out = T.dropout(ffn_out, cfg.dropout_residual,
                                    self._dropout_rng, self.training)
            x = layer["ln3"](T.add(x_ii, ffn_out))

        logits = T.matmul(x.reshape(k, d), self.params["embedding"].transpose())

        para_sum = para_attn_layers[0]
        for a in para_attn_layers[1:]:
            para_sum = T.add(para_sum, a)

        # layer-mean fused global word attention: rows sum to 1 per step
        num_layers = len(self.dec_layers)
        fused = np.zeros((k, m, n))
        for a_para2d, a_word in zip(para_attn_layers, word_attn_layers):
            fused += a_para2d.data[:, :, None] * np.transpose(a_word.data, (1, 0, 2))
        fused /= num_layers

        return DecoderOutput(
            logits=logits,
            paragraph_attention_layers=para_attn_layers,
            paragraph_attention=para_sum,
            word_attention=fused,
        )

    # -- training loss -----------------------------------------------------------

    def sample_loss(self, paragraphs: list[list[int]], summary: list[int],
                    bos_id: int, eos_id: int,
                    ranks: np.ndarray | None = None) -> Tensor:
        """Teacher-forced mean token NLL for one sample."""
        target = list(summary[: self.cfg.max_target_len - 1]) + [eos_id]
        prefix = [bos_id] + target[:-1]
        source = self.encode(paragraphs, ranks=ranks)
        out = self.decode(prefix, source)
        logp = T.log_softmax(out.logits, axis=-1)
        k = len(target)
        picked = T.take_slice(logp, (np.arange(k), np.asarray(target)))
        return T.mul(T.tmean(picked), Tensor(-1.0))

    def training_loss(self, batch: list, bos_id: int, eos_id: int) -> Tensor:
        """Mean teacher-forced NLL over a batch of (paragraphs, summary) pairs."""
        if not batch:
            raise ValueError("training_loss requires a nonempty batch")
        losses = [self.sample_loss(p, s, bos_id, eos_id) for p, s in batch]
        total = losses[0]
        for loss in losses[1:]:
            total = T.add(total, loss)
        return T.mul(total, Tensor(1.0 / len(losses)))

    # -- persistence ----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        arrays = dict(self.state_arrays())
        if extra:
            arrays.update(extra)
        T.save_checkpoint(path, arrays)
        with open(str(path) + ".cfg", "w") as f:
            f.write(self.cfg.to_text())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.shape:
                raise T.ShapeError(
                    f"checkpoint shape {arrays[name].shape} != {p.shape} for {name}")
            p.data = arrays[name].copy()

    @classmethod
    def load(cls, path, seed: int = 0) -> "PHTModel":
        with open(str(path) + ".cfg") as f:
            cfg = ModelConfig.from_text(f.read())
        model = cls(cfg, seed=seed)
        model.load_arrays(T.load_checkpoint(path))
        return model


def params_hash(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(arrays[name].tobytes())
    return digest.hexdigest()[:16]
