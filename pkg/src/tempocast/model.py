"""The patch forecaster: embedding, fused forward pass, training, rollout.

Each variable of a window is normalized per instance, cut into patches,
linearly embedded, and pushed through the frozen backbone. How the temporal
bank enters depends on the variant:

  conditioned   learnable fusion tokens ride with the patch stream and
                cross-attend into the bank through gated layers (default)
  pos-embed     bank vectors are added elementwise to the patch embeddings
  prefix-prompt bank vectors are prepended as ordinary sequence rows
  full-ft       pos-embed with every backbone weight unfrozen (reduced lr)
  partial-ft    pos-embed with the blocks at the insertion depths unfrozen
  lora          pos-embed with low-rank deltas on the query/value projections

A linear head maps each patch position's final state to the next patch; at
inference the last fully-observed position's prediction is appended to the
history and the window slides forward until the horizon is covered.
"""

import math
from dataclasses import asdict, dataclass, field
from datetime import datetime

import numpy as np

from .backbone import Backbone, DecoderConfig, causal_mask
from .conditioning import ConditioningLayer, default_insert_layers, fused_mask
from .data import (
    TIME_FORMAT,
    granularity_delta,
    n_target_positions,
    next_patch_targets,
    patch_count,
    patchify,
    revin_apply,
    revin_invert,
    revin_stats,
)
from .errors import ConfigError, DivergenceError, NonFiniteError
from .optim import AdamW
from .params import (
    STREAM_BATCH,
    STREAM_MODEL,
    ParamRegistry,
    load_checkpoint,
    make_rng,
    read_checkpoint,
    save_checkpoint,
)
from .prompts import BankBuilder, spans_for_window
from .tensor import Tensor, concat, matmul, no_grad

VARIANTS = ("conditioned", "pos-embed", "prefix-prompt", "full-ft", "partial-ft", "lora")

# architecture used by each variant; the last three are training policies
# layered onto the pos-embed shape
_ARCH = {
    "conditioned": "conditioned",
    "pos-embed": "pos-embed",
    "prefix-prompt": "prefix-prompt",
    "full-ft": "pos-embed",
    "partial-ft": "pos-embed",
    "lora": "pos-embed",
}

FULL_FT_BACKBONE_LR_SCALE = 0.1


@dataclass
class ModelConfig:
    depth: int = 6
    width: int = 64
    heads: int = 4
    ffn_mult: int = 4
    max_seq: int = 256
    lookback: int = 96
    patch_len: int = 16
    patch_stride: int = 16
    n_tokens: int = 4
    insert_layers: tuple = None
    visibility: str = "suffix-global"
    cross_heads: int = 1
    cond_ffn_scope: str = "sequence"
    span_policy: str = "per-patch"
    loss_positions: str = "all"
    variant: str = "conditioned"
    lora_rank: int = 4
    seed: int = 0
    backbone_seed: int = 0

    def __post_init__(self):
        if self.insert_layers is None:
            self.insert_layers = tuple(default_insert_layers(self.depth))
        else:
            self.insert_layers = tuple(int(l) for l in self.insert_layers)

    @property
    def arch(self):
        return _ARCH[self.variant]

    @property
    def n_patches(self):
        return patch_count(self.lookback, self.patch_len, self.patch_stride)

    def decoder_config(self):
        return DecoderConfig(
            depth=self.depth,
            width=self.width,
            heads=self.heads,
            ffn_mult=self.ffn_mult,
            max_seq=self.max_seq,
        )

    def validate(self):
        self.decoder_config().validate()
        if self.variant not in VARIANTS:
            raise ConfigError("unknown variant %r (one of %s)" % (self.variant, ", ".join(VARIANTS)))
        if self.visibility not in ("suffix-global", "prefix"):
            raise ConfigError("unknown visibility %r" % self.visibility)
        if self.span_policy not in ("per-patch", "whole-window"):
            raise ConfigError("unknown span policy %r" % self.span_policy)
        if self.loss_positions not in ("all", "last"):
            raise ConfigError("loss_positions must be 'all' or 'last'")
        if self.lookback < self.patch_len:
            raise ConfigError("lookback %d shorter than patch_len %d" % (self.lookback, self.patch_len))
        # rollout appends whole predicted patches, so offsets must line up
        if self.patch_len % self.patch_stride != 0:
            raise ConfigError(
                "patch_stride %d must divide patch_len %d" % (self.patch_stride, self.patch_len)
            )
        if (self.lookback - self.patch_len) % self.patch_stride != 0:
            raise ConfigError(
                "patch_stride %d must divide lookback - patch_len = %d"
                % (self.patch_stride, self.lookback - self.patch_len)
            )
        if self.n_tokens < 0:
            raise ConfigError("n_tokens must be >= 0")
        for l in self.insert_layers:
            if not 0 <= l < self.depth:
                raise ConfigError("insertion layer %d outside depth %d" % (l, self.depth))
        if len(set(self.insert_layers)) != len(self.insert_layers):
            raise ConfigError("duplicate insertion layers %s" % (self.insert_layers,))
        if self.arch == "pos-embed" and self.span_policy != "per-patch":
            raise ConfigError("variant %r adds one bank vector per patch and needs span_policy=per-patch" % self.variant)
        if self.variant == "lora" and not 1 <= self.lora_rank < self.width:
            raise ConfigError("lora_rank must be in [1, width)")
        seq = self.n_patches + (self.n_tokens if self.arch == "conditioned" else 0)
        if self.arch == "prefix-prompt":
            seq = self.n_patches + len(
                spans_for_window(
                    datetime(2000, 1, 3), "hourly", self.lookback, self.patch_len, self.patch_stride, self.span_policy
                )
            )
        if seq > self.max_seq:
            raise ConfigError("fused sequence of %d rows exceeds max_seq %d" % (seq, self.max_seq))
        return self


class ForecastModel:
    """A backbone, the trainable pieces for one variant, and a bank builder."""

    def __init__(self, config, cache_path=None):
        self.config = config.validate()
        self.registry = ParamRegistry()
        self.backbone = Backbone(config.decoder_config(), self.registry, seed=config.backbone_seed)
        r = make_rng(config.seed, STREAM_MODEL)
        d = config.width

        self.embed_w = self.registry.register(
            "embed.w", r.normal(0.0, 0.02, (config.patch_len, d)), trainable=True
        )
        self.embed_b = self.registry.register("embed.b", np.zeros(d), trainable=True)
        self.cond_layers = {}
        self.tokens = None
        if config.arch == "conditioned":
            self.tokens = self.registry.register(
                "tokens", r.normal(0.0, 0.02, (config.n_tokens, d)), trainable=True
            )
            for l in config.insert_layers:
                self.cond_layers[l] = ConditioningLayer(
                    self.registry,
                    l,
                    d,
                    heads=config.cross_heads,
                    ffn_mult=config.ffn_mult,
                    ffn_scope=config.cond_ffn_scope,
                    rng=r,
                )
        self.head_w = self.registry.register("head.w", r.normal(0.0, 0.02, (d, config.patch_len)), trainable=True)
        self.head_b = self.registry.register("head.b", np.zeros(config.patch_len), trainable=True)

        if config.variant == "full-ft":
            self.registry.set_trainable("backbone.", True)
        elif config.variant == "partial-ft":
            for l in config.insert_layers:
                self.registry.set_trainable("backbone.layer%d." % l, True)
        elif config.variant == "lora":
            rank = config.lora_rank
            for l in range(config.depth):
                for proj in ("wq", "wv"):
                    down = self.registry.register(
                        "lora.layer%d.%s.down" % (l, proj), np.zeros((d, rank)), trainable=True
                    )
                    up = self.registry.register(
                        "lora.layer%d.%s.up" % (l, proj), r.normal(0.0, 0.02, (rank, d)), trainable=True
                    )
                    self.backbone.lora[(l, proj)] = (down, up)

        self.bank_builder = BankBuilder(self.backbone, cache_path)

    # ---- bank construction ----

    def window_spans(self, t0, granularity):
        return spans_for_window(
            t0,
            granularity,
            self.config.lookback,
            self.config.patch_len,
            self.config.patch_stride,
            self.config.span_policy,
        )

    def bank_for(self, t0, granularity):
        """(M, width) bank for the window starting at t0."""
        return self.bank_builder.build(self.window_spans(t0, granularity))

    # ---- forward ----

    def forward_patches(self, patches, bank):
        """Predictions (one next-patch vector per patch row) for one window.

        patches: (P, patch_len) numpy, already normalized.
        bank: (M, width) numpy of temporal embeddings.
        Returns a (P, patch_len) Tensor.
        """
        cfg = self.config
        p = patches.shape[0]
        if p != cfg.n_patches:
            raise ConfigError("expected %d patches, got %d" % (cfg.n_patches, p))
        bank = np.asarray(bank, dtype=np.float64)
        emb = matmul(Tensor(patches), self.embed_w) + self.embed_b
        pos = self.registry["backbone.pos_emb"]
        arch = cfg.arch
        if arch == "conditioned":
            nf = cfg.n_tokens
            if nf > 0:
                parts = [emb, self.tokens] if cfg.visibility == "suffix-global" else [self.tokens, emb]
                rows = concat(parts, axis=0)
            else:
                rows = emb
            rows = rows + pos[0 : p + nf]
            mask = fused_mask(p, nf, cfg.visibility)
            bank_t = Tensor(bank)
            hooks = {
                l: (lambda h, _c=c: _c.apply(h, bank_t, p, nf, cfg.visibility))
                for l, c in self.cond_layers.items()
            }
            states = self.backbone.decoder(rows, mask, hooks)
            patch_states = states[0:p] if cfg.visibility == "suffix-global" else states[nf : nf + p]
        elif arch == "pos-embed":
            if bank.shape[0] != p:
                raise ConfigError("pos-embed needs one bank vector per patch (%d vs %d)" % (bank.shape[0], p))
            rows = emb + Tensor(bank)
            rows = rows + pos[0:p]
            states = self.backbone.decoder(rows, causal_mask(p))
            patch_states = states
        else:  # prefix-prompt
            m = bank.shape[0]
            rows = concat([Tensor(bank), emb], axis=0)
            rows = rows + pos[0 : m + p]
            states = self.backbone.decoder(rows, causal_mask(m + p))
            patch_states = states[m : m + p]
        return matmul(patch_states, self.head_w) + self.head_b

    def window_loss(self, window, bank):
        """Teacher-forced next-patch MSE for one training window."""
        cfg = self.config
        stats = revin_stats(window.values)
        norm = revin_apply(window.values, stats)
        fut = revin_apply(window.future[: cfg.patch_len], stats)
        patches = patchify(norm, cfg.patch_len, cfg.patch_stride)
        targets = next_patch_targets(norm, fut, cfg.patch_len, cfg.patch_stride)
        preds = self.forward_patches(patches, bank)
        k = targets.shape[0]
        if cfg.loss_positions == "last":
            diff = preds[k - 1 : k] - Tensor(targets[k - 1 : k])
        else:
            diff = preds[0:k] - Tensor(targets)
        return (diff * diff).mean()

    # ---- rollout ----

    def forecast(self, values, t0, granularity, horizon, bank_t0=None):
        """Iterative multi-step forecast in the original scale.

        values: (n_vars, lookback) history ending just before the forecast
        origin; t0 is the timestamp of the first history step. The window
        slides forward by one predicted patch per iteration. ``bank_t0``
        optionally builds the bank as if the history started at a
        different time (used by the signal-substitution experiments).
        """
        cfg = self.config
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != cfg.lookback:
            raise ConfigError("forecast needs (n_vars, %d) history, got %s" % (cfg.lookback, values.shape))
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        delta = granularity_delta(granularity)
        hist = [values[v].copy() for v in range(values.shape[0])]
        cur_bank_t0 = bank_t0 if bank_t0 is not None else t0
        last = n_target_positions(cfg.lookback, cfg.patch_stride) - 1
        steps = math.ceil(horizon / cfg.patch_len)
        out = [[] for _ in hist]
        with no_grad():
            for _ in range(steps):
                bank = self.bank_for(cur_bank_t0, granularity)
                for v in range(len(hist)):
                    window = hist[v][-cfg.lookback :]
                    stats = revin_stats(window)
                    patches = patchify(revin_apply(window, stats), cfg.patch_len, cfg.patch_stride)
                    preds = self.forward_patches(patches, bank)
                    step_vals = revin_invert(preds.data[last], stats)
                    hist[v] = np.concatenate([hist[v], step_vals])
                    out[v].append(step_vals)
                cur_bank_t0 = cur_bank_t0 + cfg.patch_len * delta
        return np.stack([np.concatenate(o)[:horizon] for o in out])

    # ---- persistence ----

    def save(self, path, extra_meta=None):
        meta = {"model": asdict(self.config)}
        meta["model"]["insert_layers"] = list(self.config.insert_layers)
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.registry, meta)

    @classmethod
    def load(cls, path, cache_path=None):
        meta, _ = read_checkpoint(path)
        if "model" not in meta:
            raise ConfigError("%s: checkpoint has no model config" % path)
        cfg = ModelConfig(**meta["model"])
        model = cls(cfg, cache_path=cache_path)
        load_checkpoint(path, model.registry)
        return model, meta


# ---- training ----


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    patience: int = 3
    max_steps: int = 0  # 0 = no cap
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        return self


def param_groups(model, tcfg):
    """Optimizer groups; full backbone fine-tuning runs at a reduced rate."""
    trainable = model.registry.trainable_items()
    if model.config.variant == "full-ft":
        bb = [(n, p) for n, p in trainable if n.startswith("backbone.")]
        rest = [(n, p) for n, p in trainable if not n.startswith("backbone.")]
        groups = [
            {"params": rest, "lr": tcfg.lr},
            {"params": bb, "lr": tcfg.lr * FULL_FT_BACKBONE_LR_SCALE},
        ]
        meta = {"backbone_lr_scale": FULL_FT_BACKBONE_LR_SCALE}
    else:
        groups = [{"params": trainable, "lr": tcfg.lr}]
        meta = {}
    return groups, meta


def _default_bank_fn(model):
    def fn(window):
        return model.bank_for(window.t0, window.granularity)

    return fn


def fit(model, train_windows, val_windows, tcfg, bank_fn=None):
    """Minibatch AdamW training with early stopping on validation loss.

    bank_fn maps a window to its (M, width) bank; the default builds it
    from the window's own timestamps. Returns a history dict; the model is
    left at the best-validation parameters.
    """
    tcfg.validate()
    if not train_windows:
        raise ConfigError("no training windows")
    bank_fn = bank_fn or _default_bank_fn(model)
    groups, opt_meta = param_groups(model, tcfg)
    opt = AdamW(
        groups,
        lr=tcfg.lr,
        betas=(tcfg.beta1, tcfg.beta2),
        eps=1e-8,
        weight_decay=tcfg.weight_decay,
    )
    rng = make_rng(tcfg.seed, STREAM_BATCH)
    history = {"train_loss": [], "val_loss": [], "steps": 0, "best_epoch": -1, "stopped_early": False}
    history.update(opt_meta)
    best_val = np.inf
    best_state = None
    bad_epochs = 0
    step = 0
    done = False
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(train_windows))
        epoch_losses = []
        for start in range(0, len(order), tcfg.batch_size):
            idxs = order[start : start + tcfg.batch_size]
            opt.zero_grad()
            try:
                total = None
                for i in idxs:
                    w = train_windows[int(i)]
                    loss = model.window_loss(w, bank_fn(w))
                    total = loss if total is None else total + loss
                batch_loss = total * (1.0 / len(idxs))
                batch_loss.backward()
            except NonFiniteError as e:
                raise DivergenceError("non-finite loss at step %d: %s" % (step + 1, e)) from e
            opt.step()
            step += 1
            epoch_losses.append(float(batch_loss.data))
            if tcfg.max_steps and step >= tcfg.max_steps:
                done = True
                break
        history["train_loss"].append(float(np.mean(epoch_losses)))
        try:
            val = evaluate_loss(model, val_windows, bank_fn) if val_windows else float(np.mean(epoch_losses))
        except NonFiniteError as e:
            raise DivergenceError("non-finite validation loss after step %d: %s" % (step, e)) from e
        history["val_loss"].append(val)
        if val < best_val:
            best_val = val
            history["best_epoch"] = epoch
            best_state = {n: p.data.copy() for n, p in model.registry.trainable_items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                history["stopped_early"] = True
                done = True
        if done:
            break
    history["steps"] = step
    if best_state is not None:
        for n, p in model.registry.trainable_items():
            p.data[...] = best_state[n]
    return history


def evaluate_loss(model, windows, bank_fn=None):
    """Mean teacher-forced loss over windows (no gradient bookkeeping)."""
    bank_fn = bank_fn or _default_bank_fn(model)
    with no_grad():
        losses = [float(model.window_loss(w, bank_fn(w)).data) for w in windows]
    return float(np.mean(losses))


# ---- evaluation and baselines ----


def mse_mae(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ConfigError("metric shapes differ: %s vs %s" % (pred.shape, truth.shape))
    err = pred - truth
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def persistence_forecast(values, horizon):
    """Repeat each variable's last observed value across the horizon."""
    values = np.asarray(values, dtype=np.float64)
    return np.repeat(values[:, -1:], horizon, axis=1)


def evaluate_rollout(model, windows, horizon, bank_shift=None):
    """Rollout MSE/MAE over per-variable windows in original scale.

    bank_shift: optional timedelta (or callable window -> timedelta) added
    to a window's timestamps when building banks (data unchanged); used to
    feed a model banks describing the wrong time range.
    """
    preds = []
    truths = []
    for w in windows:
        if len(w.future) < horizon:
            raise ConfigError("window horizon %d shorter than %d" % (len(w.future), horizon))
        if bank_shift is None:
            bank_t0 = None
        else:
            shift = bank_shift(w) if callable(bank_shift) else bank_shift
            bank_t0 = w.t0 + shift
        p = model.forecast(w.values[None, :], w.t0, w.granularity, horizon, bank_t0=bank_t0)
        preds.append(p[0])
        truths.append(w.future[:horizon])
    return mse_mae(np.concatenate(preds), np.concatenate(truths))


# ---- parameter accounting ----

_GROUPS = ("backbone", "embed", "tokens", "cond", "head", "lora")


def param_report(registry):
    """Per-group parameter totals and trainable counts."""
    groups = {}
    for g in _GROUPS:
        prefix = g if g == "tokens" else g + "."
        total = sum(p.data.size for n, p in registry.items() if n == g or n.startswith(prefix))
        trainable = sum(
            p.data.size for n, p in registry.items() if (n == g or n.startswith(prefix)) and p.requires_grad
        )
        if total:
            groups[g] = {"total": int(total), "trainable": int(trainable)}
    total = sum(v["total"] for v in groups.values())
    trainable = sum(v["trainable"] for v in groups.values())
    assert total == registry.count()
    return {
        "groups": groups,
        "total": int(total),
        "trainable": int(trainable),
        "trainable_fraction": trainable / total if total else 0.0,
    }


def format_param_report(report):
    lines = ["%-10s %12s %12s" % ("group", "total", "trainable")]
    for g, v in report["groups"].items():
        lines.append("%-10s %12d %12d" % (g, v["total"], v["trainable"]))
    lines.append("%-10s %12d %12d" % ("all", report["total"], report["trainable"]))
    lines.append("trainable fraction: %.4f" % report["trainable_fraction"])
    return "\n".join(lines)
