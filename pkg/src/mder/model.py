"""The tagger network: rule+character embedding feeding a two-layer BiLSTM
and a 1x1-kernel CNN in parallel, their concatenation passed through
unscaled self-attention and an affine projection to per-character tag
scores Z (one row per character, one column per tag).

Ablation flags drop individual components; dropped components also shrink
the downstream dimensions, so parameter counts fall strictly.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import crf, rules
from .corpus import Corpus
from .errors import CheckpointError, ConfigurationError, VocabularyError
from .rules import NUM_RULE_TAGS, RuleLexicon
from .tagscheme import NUM_TAGS

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mder-checkpoint-v1"


@dataclass
class ModelConfig:
    d_r: int = 40          # rule-embedding dim
    d_c: int = 200         # character-embedding dim
    d_h: int = 200         # hidden units per LSTM direction
    k: int = 30            # conv kernels; CNN output dim equals k
    kernel: tuple = (1, 1)
    stride: tuple = (1, 2)  # (position, feature) strides
    d_q: int = 400         # attention projection dim
    m_max: int = 600       # max characters per sentence
    dropout: float = 0.5
    num_tags: int = NUM_TAGS

    def __post_init__(self):
        self.kernel = tuple(self.kernel)
        self.stride = tuple(self.stride)
        for name in ("d_r", "d_c", "d_h", "k", "d_q", "m_max"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.kernel != (1, 1):
            raise ConfigurationError(f"only 1x1 kernels supported, got {self.kernel}")
        if self.stride[0] != 1 or self.stride[1] < 1:
            raise ConfigurationError(f"stride must be (1, t>=1), got {self.stride}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1): {self.dropout}")
        if self.num_tags != NUM_TAGS:
            raise ConfigurationError(f"num_tags must be {NUM_TAGS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        d["stride"] = list(self.stride)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class AblationFlags:
    use_rule: bool = True
    use_cnn: bool = True
    use_attention: bool = True
    use_crf: bool = True

    COMPONENTS = ("rule", "cnn", "attention", "crf")

    @classmethod
    def from_names(cls, dropped) -> "AblationFlags":
        dropped = set(dropped or ())
        unknown = dropped - set(cls.COMPONENTS)
        if unknown:
            raise ConfigurationError(
                f"unknown ablation component(s) {sorted(unknown)}; "
                f"choose from {cls.COMPONENTS}"
            )
        return cls(
            use_rule="rule" not in dropped,
            use_cnn="cnn" not in dropped,
            use_attention="attention" not in dropped,
            use_crf="crf" not in dropped,
        )

    def dropped(self) -> list[str]:
        out = []
        for name in self.COMPONENTS:
            if not getattr(self, f"use_{name}"):
                out.append(name)
        return out

    def to_dict(self) -> dict:
        return {
            "use_rule": self.use_rule,
            "use_cnn": self.use_cnn,
            "use_attention": self.use_attention,
            "use_crf": self.use_crf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AblationFlags":
        return cls(**d)


FULL_MODEL = AblationFlags()


class CharVocabulary:
    """Character -> index map built from the training corpus only.
    Index 0 is PAD (its embedding row stays pinned at zero), index 1 is UNK.
    """

    PAD = 0
    UNK = 1

    def __init__(self, index: dict[str, int]):
        if len(set(index.values())) != len(index):
            raise VocabularyError("character index is not injective")
        if any(i < 2 for i in index.values()):
            raise VocabularyError("indices 0 and 1 are reserved for PAD/UNK")
        self.index = dict(index)

    @classmethod
    def build(cls, corpus: Corpus) -> "CharVocabulary":
        chars = sorted({ch for sent in corpus for ch in sent.text})
        return cls({ch: i + 2 for i, ch in enumerate(chars)})

    def __len__(self) -> int:
        return len(self.index) + 2

    def encode(self, text: str) -> list[int]:
        return [self.index.get(ch, self.UNK) for ch in text]

    def to_dict(self) -> dict:
        return {"chars": self.index}

    @classmethod
    def from_dict(cls, d: dict) -> "CharVocabulary":
        return cls(d["chars"])


@dataclass
class EncodedSequence:
    """Model-ready view of one sentence; mask is True at real positions."""

    char_ids: list[int]
    rule_ids: list[int]
    mask: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.mask:
            self.mask = [True] * len(self.char_ids)
        if not (len(self.char_ids) == len(self.rule_ids) == len(self.mask)):
            raise VocabularyError("char_ids, rule_ids and mask lengths differ")

    def __len__(self) -> int:
        return len(self.char_ids)


def encode_sentence(
    text: str, vocab: CharVocabulary, lexicon: RuleLexicon, m_max: int = 600
) -> EncodedSequence:
    if len(text) > m_max:
        logger.warning(
            "sentence of %d characters truncated to m_max=%d", len(text), m_max
        )
        text = text[:m_max]
    return EncodedSequence(vocab.encode(text), rules.rule_tag_ids(text, lexicon))


def pad_batch(seqs: list[EncodedSequence], tag_ids: list[list[int]] | None = None):
    """Stack variable-length sequences into (B, m) tensors, padding with the
    PAD indices of each table; returns (char_ids, rule_ids, mask[, tags])."""
    m = max(len(s) for s in seqs)
    batch = len(seqs)
    chars = torch.full((batch, m), CharVocabulary.PAD, dtype=torch.long)
    rtags = torch.full((batch, m), rules.PAD_INDEX, dtype=torch.long)
    mask = torch.zeros((batch, m), dtype=torch.bool)
    for i, s in enumerate(seqs):
        n = len(s)
        chars[i, :n] = torch.tensor(s.char_ids, dtype=torch.long)
        rtags[i, :n] = torch.tensor(s.rule_ids, dtype=torch.long)
        mask[i, :n] = torch.tensor(s.mask, dtype=torch.bool)
    if tag_ids is None:
        return chars, rtags, mask
    from .tagscheme import PAD_INDEX as TAG_PAD

    tags = torch.full((batch, m), TAG_PAD, dtype=torch.long)
    for i, ids in enumerate(tag_ids):
        tags[i, : len(ids)] = torch.tensor(ids[:m], dtype=torch.long)
    return chars, rtags, mask, tags


# --------------------------------------------------------------------------
# Network components
# --------------------------------------------------------------------------


def lstm_direction(x, mask, W_i, W_f, W_o, W_c, b_i, b_f, b_o, b_c, reverse=False):
    """One LSTM direction: gates from [h_{t-1}; x_t], zero initial state,
    state carried through unchanged at masked positions.

    The gate pre-activation W [h; x] + b splits into W_h h + W_x x + b, so
    the input-side term is computed for every timestep in one matmul and
    only the recurrent term stays inside the loop.
    """
    batch, m, _ = x.shape
    hidden = W_i.shape[0]
    W = torch.cat([W_i, W_f, W_o, W_c], dim=0)
    b = torch.cat([b_i, b_f, b_o, b_c])
    W_h, W_x = W[:, :hidden], W[:, hidden:]
    input_gates = x @ W_x.t() + b
    recur = W_h.t()
    h = x.new_zeros(batch, hidden)
    c = x.new_zeros(batch, hidden)
    outputs: list = [None] * m
    steps = range(m - 1, -1, -1) if reverse else range(m)
    for t in steps:
        gates = input_gates[:, t, :] + h @ recur
        gi, gf, go, gc = gates.split(hidden, dim=1)
        gi, gf, go = torch.sigmoid(gi), torch.sigmoid(gf), torch.sigmoid(go)
        gc = torch.tanh(gc)
        c_new = gf * c + gi * gc
        h_new = go * torch.tanh(c_new)
        keep = mask[:, t].unsqueeze(1)
        h = torch.where(keep, h_new, h)
        c = torch.where(keep, c_new, c)
        outputs[t] = h
    return torch.stack(outputs, dim=1)


class LstmDirection(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        total = hidden_dim + input_dim
        for name in ("W_i", "W_f", "W_o", "W_c"):
            setattr(self, name, nn.Parameter(torch.empty(hidden_dim, total)))
        for name in ("b_i", "b_f", "b_o", "b_c"):
            setattr(self, name, nn.Parameter(torch.empty(hidden_dim)))

    def reset_parameters(self):
        bound = (self.W_i.shape[1]) ** -0.5
        for name in ("W_i", "W_f", "W_o", "W_c"):
            nn.init.uniform_(getattr(self, name), -bound, bound)
        for name in ("b_i", "b_o", "b_c"):
            nn.init.zeros_(getattr(self, name))
        nn.init.ones_(self.b_f)  # forget-gate bias 1.0 for training stability

    def forward(self, x, mask, reverse=False):
        return lstm_direction(
            x, mask, self.W_i, self.W_f, self.W_o, self.W_c,
            self.b_i, self.b_f, self.b_o, self.b_c, reverse=reverse,
        )


class BiLstmLayer(nn.Module):
    """Both directions advance in one loop as a stacked pair: the backward
    stream runs on the time-flipped sequence (its padding moves to the
    front, where masking carries the zero state through). Produces exactly
    what two `lstm_direction` passes would, halving the Python-loop cost.
    """

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.fwd = LstmDirection(input_dim, hidden_dim)
        self.bwd = LstmDirection(input_dim, hidden_dim)

    def forward(self, x, mask):
        hidden = self.fwd.hidden_dim
        W = torch.stack(
            [
                torch.cat([d.W_i, d.W_f, d.W_o, d.W_c], dim=0)
                for d in (self.fwd, self.bwd)
            ]
        )
        b = torch.stack(
            [
                torch.cat([d.b_i, d.b_f, d.b_o, d.b_c])
                for d in (self.fwd, self.bwd)
            ]
        )
        W_h = W[:, :, :hidden]
        W_x = W[:, :, hidden:]
        xs = torch.stack([x, torch.flip(x, dims=[1])])
        ms = torch.stack([mask, torch.flip(mask, dims=[1])])
        input_gates = torch.einsum("gbtd,ghd->gbth", xs, W_x) + b[:, None, None, :]
        recur = W_h.transpose(1, 2)

        batch, m, _ = x.shape
        h = x.new_zeros(2, batch, hidden)
        c = x.new_zeros(2, batch, hidden)
        outputs = []
        for t in range(m):
            gates = input_gates[:, :, t, :] + torch.bmm(h, recur)
            gi, gf, go, gc = gates.split(hidden, dim=2)
            gi, gf, go = torch.sigmoid(gi), torch.sigmoid(gf), torch.sigmoid(go)
            gc = torch.tanh(gc)
            c_new = gf * c + gi * gc
            h_new = go * torch.tanh(c_new)
            keep = ms[:, :, t].unsqueeze(2)
            h = torch.where(keep, h_new, h)
            c = torch.where(keep, c_new, c)
            outputs.append(h)
        stacked = torch.stack(outputs, dim=2)
        return torch.cat([stacked[0], torch.flip(stacked[1], dims=[1])], dim=2)


class BiLstmEncoder(nn.Module):
    """Two stacked bidirectional layers; layer 2 consumes layer 1's
    concatenated forward/backward states."""

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.layer1 = BiLstmLayer(input_dim, hidden_dim)
        self.layer2 = BiLstmLayer(2 * hidden_dim, hidden_dim)

    def forward(self, x, mask):
        return self.layer2(self.layer1(x, mask), mask)


class FeatureCnn(nn.Module):
    """k 1x1 kernels over the (position x feature) input with feature-axis
    stride, ReLU, then max pooling along the feature axis per position, so
    every character keeps a k-dim vector."""

    def __init__(self, input_dim: int, k: int, feature_stride: int = 2):
        super().__init__()
        if (input_dim + feature_stride - 1) // feature_stride < 1:
            raise ConfigurationError("CNN feature dimension collapsed to zero")
        self.feature_stride = feature_stride
        self.weight = nn.Parameter(torch.empty(k))
        self.bias = nn.Parameter(torch.empty(k))

    def reset_parameters(self):
        nn.init.uniform_(self.weight, -1.0, 1.0)  # fan-in of a 1x1 kernel is 1
        nn.init.zeros_(self.bias)

    def forward(self, x):
        sub = x[:, :, :: self.feature_stride]
        maps = torch.relu(
            sub.unsqueeze(2) * self.weight.view(1, 1, -1, 1)
            + self.bias.view(1, 1, -1, 1)
        )
        return maps.amax(dim=3)


class SelfAttention(nn.Module):
    """Q = G W^Q, K = G W^K, V = G; row-softmax of QK^T with PAD columns
    masked out. No 1/sqrt(d) scaling on the scores."""

    def __init__(self, g_dim: int, d_q: int):
        super().__init__()
        self.W_q = nn.Parameter(torch.empty(g_dim, d_q))
        self.W_k = nn.Parameter(torch.empty(g_dim, d_q))

    def reset_parameters(self):
        bound = self.W_q.shape[0] ** -0.5
        nn.init.uniform_(self.W_q, -bound, bound)
        nn.init.uniform_(self.W_k, -bound, bound)

    def weights(self, G, mask):
        q = G @ self.W_q
        k = G @ self.W_k
        scores = q @ k.transpose(1, 2)
        scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        return torch.softmax(scores, dim=2)

    def forward(self, G, mask):
        return self.weights(G, mask) @ G


class MethodDatasetTagger(nn.Module):
    """The full network; construct under a fixed torch seed for reproducible
    initialization. `transitions` is the CRF matrix with virtual START/STOP
    states (absent under the crf ablation).
    """

    def __init__(
        self,
        config: ModelConfig,
        vocab_size: int,
        ablation: AblationFlags = FULL_MODEL,
    ):
        super().__init__()
        self.config = config
        self.ablation = ablation
        self.vocab_size = vocab_size

        self.char_embedding = nn.Parameter(torch.empty(vocab_size, config.d_c))
        if ablation.use_rule:
            self.rule_embedding = nn.Parameter(
                torch.empty(NUM_RULE_TAGS, config.d_r)
            )
        self.input_dim = config.d_c + (config.d_r if ablation.use_rule else 0)

        self.bilstm = BiLstmEncoder(self.input_dim, config.d_h)
        if ablation.use_cnn:
            self.cnn = FeatureCnn(self.input_dim, config.k, config.stride[1])
        self.g_dim = 2 * config.d_h + (config.k if ablation.use_cnn else 0)

        if ablation.use_attention:
            self.attention = SelfAttention(self.g_dim, config.d_q)

        self.W_a = nn.Parameter(torch.empty(self.g_dim, config.num_tags))
        self.b_a = nn.Parameter(torch.empty(config.num_tags))

        if ablation.use_crf:
            self.transitions = nn.Parameter(
                torch.empty(crf.TRANS_SIZE, crf.TRANS_SIZE)
            )

        self.dropout = nn.Dropout(config.dropout)
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.uniform_(self.char_embedding, -0.1, 0.1)
        with torch.no_grad():
            self.char_embedding[CharVocabulary.PAD].zero_()
        if self.ablation.use_rule:
            nn.init.uniform_(self.rule_embedding, -0.1, 0.1)
            with torch.no_grad():
                self.rule_embedding[rules.PAD_INDEX].zero_()
        for module in self.modules():
            if module is not self and hasattr(module, "reset_parameters"):
                module.reset_parameters()
        bound = self.g_dim**-0.5
        nn.init.uniform_(self.W_a, -bound, bound)
        nn.init.zeros_(self.b_a)
        if self.ablation.use_crf:
            nn.init.uniform_(self.transitions, -0.1, 0.1)

    def embed(self, char_ids, rule_ids):
        """Per-character input vectors [rule embedding; char embedding]."""
        if int(char_ids.max()) >= self.vocab_size:
            raise VocabularyError(
                f"character id {int(char_ids.max())} out of range "
                f"(vocabulary size {self.vocab_size})"
            )
        x = F.embedding(char_ids, self.char_embedding)
        if self.ablation.use_rule:
            if int(rule_ids.max()) >= NUM_RULE_TAGS:
                raise VocabularyError(f"rule tag id {int(rule_ids.max())} out of range")
            x = torch.cat([F.embedding(rule_ids, self.rule_embedding), x], dim=2)
        return x

    def encode(self, x, mask):
        """Per-position concatenation [BiLSTM state; CNN features]."""
        g = self.bilstm(x, mask)
        if self.ablation.use_cnn:
            g = torch.cat([g, self.cnn(x)], dim=2)
        return g

    def project(self, h):
        return h @ self.W_a + self.b_a

    def forward(self, char_ids, rule_ids, mask):
        """Tag scores Z of shape (B, m, num_tags)."""
        x = self.dropout(self.embed(char_ids, rule_ids))
        g = self.dropout(self.encode(x, mask))
        h = self.attention(g, mask) if self.ablation.use_attention else g
        return self.project(h)

    def sequence_nll(self, char_ids, rule_ids, mask, gold):
        """Per-sequence negative log-likelihood (CRF, or per-position
        cross-entropy under the crf ablation)."""
        z = self(char_ids, rule_ids, mask)
        if self.ablation.use_crf:
            return crf.nll_loss(z, gold, self.transitions, mask)
        return crf.softmax_nll(z, gold, mask)

    @torch.no_grad()
    def decode(self, char_ids, rule_ids, mask) -> list[list[int]]:
        """Best tag path per sequence over real positions only."""
        was_training = self.training
        self.eval()
        try:
            z = self(char_ids, rule_ids, mask)
            lengths = mask.sum(dim=1).tolist()
            paths = []
            for i, n in enumerate(lengths):
                zi = z[i, : int(n)]
                if self.ablation.use_crf:
                    path, _ = crf.viterbi(zi, self.transitions)
                else:
                    path = crf.softmax_decode(zi)
                paths.append(path)
            return paths
        finally:
            self.train(was_training)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def lexicon_fingerprint(lexicon: RuleLexicon) -> str:
    digest = hashlib.sha256()
    for label, terms in (
        ("methods", lexicon.methods),
        ("datasets", lexicon.datasets),
        ("blacklist", lexicon.blacklist),
    ):
        digest.update(label.encode())
        for term in sorted(terms):
            digest.update(b"\x00" + term.encode("utf-8"))
    return digest.hexdigest()


def save_checkpoint(
    path: str | Path,
    model: MethodDatasetTagger,
    vocab: CharVocabulary,
    lexicon_fp: str = "",
    run_config: dict | None = None,
) -> None:
    """One archive: config JSON + named parameter tensors + vocabulary +
    lexicon fingerprint. The transition tensor is stored with its forbidden
    entries pinned to -inf."""
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if "transitions" in state:
        state["transitions"] = (
            crf.full_transition_matrix(model.transitions).cpu().numpy()
        )
    meta = {
        "format": CHECKPOINT_FORMAT,
        "model": model.config.to_dict(),
        "ablation": model.ablation.to_dict(),
        "vocab_size": model.vocab_size,
        "lexicon_fingerprint": lexicon_fp,
        "run_config": run_config or {},
    }
    buf = io.BytesIO()
    np.savez(buf, **state)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(meta, indent=2))
        zf.writestr("vocab.json", json.dumps(vocab.to_dict()))
        zf.writestr("params.npz", buf.getvalue())


def load_checkpoint(path: str | Path):
    """Rebuild (model, vocab, meta) from an archive, validating every
    parameter shape against the stored config."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("config.json"))
            vocab_dict = json.loads(zf.read("vocab.json"))
            arrays = np.load(io.BytesIO(zf.read("params.npz")))
    except (KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}")
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format {meta.get('format')!r}")

    config = ModelConfig.from_dict(meta["model"])
    ablation = AblationFlags.from_dict(meta["ablation"])
    vocab = CharVocabulary.from_dict(vocab_dict)
    if len(vocab) != meta["vocab_size"]:
        raise CheckpointError(
            f"vocabulary size {len(vocab)} does not match stored "
            f"{meta['vocab_size']}"
        )
    model = MethodDatasetTagger(config, len(vocab), ablation)
    expected = model.state_dict()
    missing = set(expected) - set(arrays.files)
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
    with torch.no_grad():
        for name, param in expected.items():
            loaded = torch.as_tensor(arrays[name])
            if tuple(loaded.shape) != tuple(param.shape):
                raise CheckpointError(
                    f"tensor {name}: stored shape {tuple(loaded.shape)} != "
                    f"expected {tuple(param.shape)}"
                )
            param.copy_(loaded)
    model.eval()
    return model, vocab, meta
