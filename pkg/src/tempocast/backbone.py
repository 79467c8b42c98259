"""Frozen decoder-only transformer backbone over a byte-level vocabulary.

A stack of pre-norm blocks (causal self-attention then a GELU feed-forward,
both residual) with learned absolute positional embeddings and a final
layer norm. Weights are drawn once from a seeded generator and registered
frozen; the stand-in plays the role a small pretrained language model would
play at scale, and nothing downstream depends on its weights being trained.

The byte tokenizer maps text to bytes 0..255 plus BOS=256 and EOS=257.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LengthError, TokenizeError
from .params import STREAM_BACKBONE, make_rng, normal_init
from .tensor import Tensor, concat, gelu, layer_norm, matmul, softmax_rows

BOS = 256
EOS = 257
VOCAB = 258

INIT_STD = 0.02
POS_STD = 0.01


@dataclass
class DecoderConfig:
    depth: int = 6
    width: int = 64
    heads: int = 4
    ffn_mult: int = 4
    vocab: int = VOCAB
    max_seq: int = 256

    def validate(self):
        if self.depth < 1:
            raise ConfigError("decoder depth must be >= 1")
        if self.width % self.heads != 0:
            raise ConfigError("width %d not divisible by heads %d" % (self.width, self.heads))
        if self.vocab != VOCAB:
            raise ConfigError("vocab is fixed at %d (bytes + BOS + EOS)" % VOCAB)
        if self.max_seq < 4:
            raise ConfigError("max_seq too small")
        return self


def tokenize(text):
    """Text -> [BOS, byte..., EOS]. Only ASCII bytes are in-alphabet."""
    ids = [BOS]
    for ch in text:
        b = ord(ch)
        if b > 127:
            raise TokenizeError("non-ASCII character %r in %r" % (ch, text))
        ids.append(b)
    ids.append(EOS)
    return ids


def detokenize(ids):
    """Inverse of tokenize for in-alphabet ids; specials are dropped."""
    chars = []
    for i in ids:
        if i in (BOS, EOS):
            continue
        if not 0 <= i <= 127:
            raise TokenizeError("id %d is not an ASCII byte" % i)
        chars.append(chr(i))
    return "".join(chars)


def causal_mask(n):
    """Additive (n, n) mask: position i sees positions <= i."""
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    return m


class Backbone:
    """Frozen transformer stack; exposes hook points between sublayers.

    Parameters are registered under `backbone.` in the given registry.
    ``lora`` maps (layer, proj) -> (down, up) tensors; when present the
    low-rank delta is added to that projection's output.
    """

    def __init__(self, config, registry, seed=0):
        self.config = config.validate()
        self.registry = registry
        self.lora = {}
        r = make_rng(seed, STREAM_BACKBONE)
        d = config.width
        f = config.ffn_mult * d
        # residual-branch output projections get the usual depth-scaled std
        out_std = INIT_STD / np.sqrt(2.0 * config.depth)

        def reg(name, data):
            return registry.register("backbone." + name, data, trainable=False)

        reg("token_emb", normal_init(r, (config.vocab, d), INIT_STD))
        reg("pos_emb", normal_init(r, (config.max_seq, d), POS_STD))
        for l in range(config.depth):
            pre = "layer%d." % l
            reg(pre + "ln1.g", np.ones(d))
            reg(pre + "ln1.b", np.zeros(d))
            for proj in ("wq", "wk", "wv"):
                reg(pre + "attn." + proj, normal_init(r, (d, d), INIT_STD))
                reg(pre + "attn." + proj + "_b", np.zeros(d))
            reg(pre + "attn.wo", normal_init(r, (d, d), out_std))
            reg(pre + "attn.wo_b", np.zeros(d))
            reg(pre + "ln2.g", np.ones(d))
            reg(pre + "ln2.b", np.zeros(d))
            reg(pre + "ffn.w1", normal_init(r, (d, f), INIT_STD))
            reg(pre + "ffn.w1_b", np.zeros(f))
            reg(pre + "ffn.w2", normal_init(r, (f, d), out_std))
            reg(pre + "ffn.w2_b", np.zeros(d))
        reg("final_ln.g", np.ones(d))
        reg("final_ln.b", np.zeros(d))

    def p(self, name):
        return self.registry["backbone." + name]

    def fingerprint(self):
        return self.registry.fingerprint("backbone.")

    # ---- sublayers ----

    def _project(self, h, layer, proj):
        w = self.p("layer%d.attn.%s" % (layer, proj))
        b = self.p("layer%d.attn.%s_b" % (layer, proj))
        out = matmul(h, w) + b
        delta = self.lora.get((layer, proj))
        if delta is not None:
            down, up = delta
            out = out + matmul(matmul(h, down), up)
        return out

    def attention(self, x, mask, layer):
        cfg = self.config
        hd = cfg.width // cfg.heads
        h = layer_norm(x, self.p("layer%d.ln1.g" % layer), self.p("layer%d.ln1.b" % layer))
        q = self._project(h, layer, "wq")
        k = self._project(h, layer, "wk")
        v = self._project(h, layer, "wv")
        scale = 1.0 / np.sqrt(hd)
        outs = []
        for i in range(cfg.heads):
            cols = slice(i * hd, (i + 1) * hd)
            scores = matmul(q[:, cols], k[:, cols].T) * scale
            probs = softmax_rows(scores, mask)
            outs.append(matmul(probs, v[:, cols]))
        ctx = outs[0] if len(outs) == 1 else concat(outs, axis=1)
        proj = matmul(ctx, self.p("layer%d.attn.wo" % layer)) + self.p("layer%d.attn.wo_b" % layer)
        return x + proj

    def ffn(self, x, layer):
        h = layer_norm(x, self.p("layer%d.ln2.g" % layer), self.p("layer%d.ln2.b" % layer))
        h = gelu(matmul(h, self.p("layer%d.ffn.w1" % layer)) + self.p("layer%d.ffn.w1_b" % layer))
        h = matmul(h, self.p("layer%d.ffn.w2" % layer)) + self.p("layer%d.ffn.w2_b" % layer)
        return x + h

    def decoder(self, h0, mask, hooks=None):
        """Run all blocks; a hook at layer l transforms the stream right
        before that block, so the block's own attention immediately mixes
        whatever the hook added."""
        x = h0
        for l in range(self.config.depth):
            if hooks and l in hooks:
                x = hooks[l](x)
            x = self.attention(x, mask, l)
            x = self.ffn(x, l)
        return layer_norm(x, self.p("final_ln.g"), self.p("final_ln.b"))

    # ---- text encoding (always the frozen pathway) ----

    def embed_ids(self, ids):
        n = len(ids)
        if n > self.config.max_seq:
            raise LengthError("sequence of %d tokens exceeds max_seq %d" % (n, self.config.max_seq))
        tok = self.p("token_emb").data[np.asarray(ids, dtype=np.int64)]
        return tok + self.p("pos_emb").data[:n]

    def encode_ids(self, ids):
        """Full causal pass over a token sequence; mean-pooled hidden states.

        Mean pooling rather than the final position: with randomly
        initialized weights the last hidden state is dominated by the most
        recent tokens, so texts sharing a suffix collapse to nearly the
        same vector. Averaging keeps every position's contribution.
        """
        h0 = Tensor(self.embed_ids(ids))
        h = self.decoder(h0, causal_mask(len(ids)))
        return h.data.mean(axis=0)

    def encode_text(self, text):
        return self.encode_ids(tokenize(text))
