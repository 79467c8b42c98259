"""Gated conditioning layers that bind a temporal bank into a frozen stack.

A small set of learnable fusion tokens rides along with the patch stream.
At chosen depths a conditioning layer lets those tokens cross-attend into
the bank of temporal embeddings and then applies a gated feed-forward; both
branches are scaled by sigmoid gates whose raw parameters start at zero, so
a fresh model mixes each branch at weight 0.5. Patch positions never read
the bank directly; information flows bank -> tokens -> patches through the
backbone's own attention.
"""

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, concat, gelu, layer_norm, matmul, sigmoid, softmax_rows

VISIBILITY_MODES = ("suffix-global", "prefix")


def default_insert_layers(depth):
    """Half the depth (at least one), spread two apart ending at the top."""
    n = max(1, depth // 2)
    layers = [depth - 1 - 2 * k for k in range(n)]
    layers = sorted(l for l in layers if l >= 0)
    return layers


def fused_mask(n_patches, n_tokens, mode):
    """Additive attention mask for the fused patch+token sequence.

    suffix-global: tokens sit after the patches; patch->patch is causal,
    every patch sees every token, tokens see each other but not the
    patches (so no future patch content can flow back into an earlier
    patch through a token). prefix: tokens sit first under a plain causal
    mask, so later rows simply see them.
    """
    if mode not in VISIBILITY_MODES:
        raise ConfigError("unknown visibility mode %r" % mode)
    n = n_patches + n_tokens
    m = np.zeros((n, n))
    m[np.triu_indices(n, k=1)] = -np.inf
    if mode == "suffix-global":
        p = n_patches
        m[:p, p:] = 0.0  # patches may look ahead at the token block
        m[p:, :p] = -np.inf  # tokens never read patches
        m[p:, p:] = 0.0  # tokens all see each other
    return m


class ConditioningLayer:
    """One insertion point: gated cross-attention into the bank plus a
    gated feed-forward, applied to the fused sequence just ahead of the
    backbone block at the same depth."""

    def __init__(self, registry, layer, width, heads=1, ffn_mult=4, ffn_scope="sequence", rng=None, std=0.02):
        if width % heads != 0:
            raise ConfigError("conditioning width %d not divisible by heads %d" % (width, heads))
        if ffn_scope not in ("sequence", "tokens"):
            raise ConfigError("unknown ffn_scope %r" % ffn_scope)
        self.layer = layer
        self.width = width
        self.heads = heads
        self.ffn_scope = ffn_scope
        pre = "cond.layer%d." % layer
        f = ffn_mult * width

        def reg(name, data):
            return registry.register(pre + name, data, trainable=True)

        self.wq = reg("attn.wq", rng.normal(0.0, std, (width, width)))
        self.wk = reg("attn.wk", rng.normal(0.0, std, (width, width)))
        self.wv = reg("attn.wv", rng.normal(0.0, std, (width, width)))
        self.qn_g = reg("attn.norm.g", np.ones(width))
        self.qn_b = reg("attn.norm.b", np.zeros(width))
        self.gate_attn = reg("attn.gate", np.zeros(()))
        self.fn_g = reg("ffn.norm.g", np.ones(width))
        self.fn_b = reg("ffn.norm.b", np.zeros(width))
        self.w1 = reg("ffn.w1", rng.normal(0.0, std, (width, f)))
        self.b1 = reg("ffn.b1", np.zeros(f))
        self.w2 = reg("ffn.w2", rng.normal(0.0, std, (f, width)))
        self.b2 = reg("ffn.b2", np.zeros(width))
        self.gate_ffn = reg("ffn.gate", np.zeros(()))

    def gates(self):
        """Current (attention, feed-forward) gate values in (0, 1)."""
        g1 = float(sigmoid(Tensor(self.gate_attn.data)).data)
        g2 = float(sigmoid(Tensor(self.gate_ffn.data)).data)
        return g1, g2

    def cross_attend(self, tokens, bank):
        """tokens: (n_f, d) Tensor; bank: (M, d) Tensor (constant)."""
        hd = self.width // self.heads
        q = matmul(layer_norm(tokens, self.qn_g, self.qn_b), self.wq)
        k = matmul(bank, self.wk)
        v = matmul(bank, self.wv)
        scale = 1.0 / np.sqrt(hd)
        outs = []
        for i in range(self.heads):
            cols = slice(i * hd, (i + 1) * hd)
            scores = matmul(q[:, cols], k[:, cols].T) * scale
            probs = softmax_rows(scores)
            outs.append(matmul(probs, v[:, cols]))
        ca = outs[0] if len(outs) == 1 else concat(outs, axis=1)
        return tokens + sigmoid(self.gate_attn) * ca

    def gated_ffn(self, h):
        f = gelu(matmul(layer_norm(h, self.fn_g, self.fn_b), self.w1) + self.b1)
        f = matmul(f, self.w2) + self.b2
        return h + sigmoid(self.gate_ffn) * f

    def apply(self, h, bank, n_patches, n_tokens, mode):
        """Transform the fused stream (patches + tokens) at this depth."""
        if n_tokens > 0:
            if mode == "suffix-global":
                patches, tokens = h[:n_patches], h[n_patches:]
            else:
                tokens, patches = h[:n_tokens], h[n_tokens:]
            tokens = self.cross_attend(tokens, bank)
            if self.ffn_scope == "tokens":
                tokens = self.gated_ffn(tokens)
                parts = [patches, tokens] if mode == "suffix-global" else [tokens, patches]
                return concat(parts, axis=0)
            parts = [patches, tokens] if mode == "suffix-global" else [tokens, patches]
            h = concat(parts, axis=0)
            return self.gated_ffn(h)
        if self.ffn_scope == "tokens":
            return h
        return self.gated_ffn(h)
