"""Timestamp prompts and the cached temporal embedding bank.

Each covered time range is rendered as a fixed English sentence, encoded by
the frozen backbone, and the resulting vectors form the bank a forecaster
conditions on. Encodings are cached in memory and optionally in an
append-only file keyed by the rendered sentence and the backbone's weight
fingerprint, so repeated spans are encoded once per backbone ever.
"""

import struct
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .data import TIME_FORMAT, granularity_delta, patch_count
from .errors import DataError

_MAGIC = b"TBNK"
_VERSION = 1

PROMPT_TEMPLATE = "This series spans {start} to {end}. Sampling granularity: {granularity}."


@dataclass(frozen=True)
class TemporalSpan:
    """An inclusive timestamp range at a sampling granularity."""

    start: datetime
    end: datetime
    granularity: str

    def __post_init__(self):
        granularity_delta(self.granularity)
        if self.end < self.start:
            raise DataError("span end %s precedes start %s" % (self.end, self.start))


def render_prompt(span):
    return PROMPT_TEMPLATE.format(
        start=span.start.strftime(TIME_FORMAT),
        end=span.end.strftime(TIME_FORMAT),
        granularity=span.granularity,
    )


def span_for_range(t0, n_steps, granularity):
    """Span covering n_steps samples: the end is the last sample's stamp."""
    delta = granularity_delta(granularity)
    return TemporalSpan(start=t0, end=t0 + (n_steps - 1) * delta, granularity=granularity)


def spans_for_window(t0, granularity, n_steps, patch_len, patch_stride, policy="per-patch"):
    """Spans describing one lookback window.

    per-patch: one span per patch, aligned with the patch offsets (the
    final padded patch gets the span its offset implies). whole-window: a
    single span covering the window.
    """
    delta = granularity_delta(granularity)
    if policy == "whole-window":
        return [span_for_range(t0, n_steps, granularity)]
    if policy != "per-patch":
        raise DataError("unknown span policy %r" % policy)
    p = patch_count(n_steps, patch_len, patch_stride)
    out = []
    for k in range(p):
        start = t0 + k * patch_stride * delta
        out.append(span_for_range(start, patch_len, granularity))
    return out


class BankCache:
    """Append-only prompt -> vector store bound to one backbone fingerprint."""

    def __init__(self, path, fingerprint, width):
        self.path = path
        self.fingerprint = fingerprint
        self.width = width
        self.entries = {}
        if path is not None:
            try:
                self._load()
            except FileNotFoundError:
                self._write_header()

    def _write_header(self):
        fp = self.fingerprint.encode()
        with open(self.path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<IHI", _VERSION, len(fp), self.width))
            f.write(fp)

    def _load(self):
        with open(self.path, "rb") as f:
            if f.read(4) != _MAGIC:
                raise DataError("%s: not a bank cache file" % self.path)
            version, fplen, width = struct.unpack("<IHI", f.read(10))
            if version != _VERSION:
                raise DataError("%s: unsupported bank cache version %d" % (self.path, version))
            fp = f.read(fplen).decode()
            if fp != self.fingerprint:
                raise DataError(
                    "%s: cache was built for a different backbone (fingerprint mismatch)" % self.path
                )
            if width != self.width:
                raise DataError("%s: cache width %d, backbone width %d" % (self.path, width, self.width))
            while True:
                head = f.read(4)
                if not head:
                    break
                (klen,) = struct.unpack("<I", head)
                key = f.read(klen).decode()
                vec = np.frombuffer(f.read(8 * self.width), dtype="<f8").astype(np.float64)
                self.entries[key] = vec

    def get(self, key):
        return self.entries.get(key)

    def put(self, key, vec):
        self.entries[key] = np.asarray(vec, dtype=np.float64)
        if self.path is not None:
            kb = key.encode()
            with open(self.path, "ab") as f:
                f.write(struct.pack("<I", len(kb)))
                f.write(kb)
                f.write(np.ascontiguousarray(vec, dtype="<f8").tobytes())

    def __len__(self):
        return len(self.entries)


# Raw encodings of span prompts are extremely anisotropic: all prompts share
# most of their text, so the vectors sit in a thin ellipsoid whose dominant
# axes carry the shared template and whose tiny axes carry the dates. A
# gradient-trained reader of such keys converges along each axis at a rate
# proportional to its variance, which makes the date information effectively
# unlearnable. Bank rows are therefore whitened: mean and covariance are
# estimated once from a fixed calibration grid of spans, and every encoding
# is mapped through the inverse square root of that covariance. The
# discriminative directions come out at O(1) scale. (An encoder trained on
# text produces well-spread prompt vectors on its own; a randomly
# initialized one does not.)
_CALIBRATION_EPOCH = datetime(2001, 1, 8)
_CALIBRATION_GRANULARITIES = ("hourly", "daily", "5-minute", "weekly")
_CALIBRATION_COUNT = 128
_COV_SHRINKAGE = 1e-4


def calibration_spans():
    """A fixed, backbone-independent grid of spans for whitening statistics."""
    out = []
    for i in range(_CALIBRATION_COUNT):
        g = _CALIBRATION_GRANULARITIES[i % len(_CALIBRATION_GRANULARITIES)]
        start = _CALIBRATION_EPOCH + timedelta(hours=317 * i)
        out.append(span_for_range(start, 16, g))
    return out


class BankBuilder:
    """Encodes spans through a backbone, with caching."""

    def __init__(self, backbone, cache_path=None):
        self.backbone = backbone
        self.cache = BankCache(cache_path, backbone.fingerprint(), backbone.config.width)
        self._mean = None
        self._whiten = None

    def _encode(self, span):
        key = render_prompt(span)
        vec = self.cache.get(key)
        if vec is None:
            vec = self.backbone.encode_text(key)
            self.cache.put(key, vec)
        return vec

    def _fit_whitener(self):
        c = np.stack([self._encode(s) for s in calibration_spans()])
        self._mean = c.mean(axis=0)
        x = c - self._mean
        cov = x.T @ x / len(x)
        lam = _COV_SHRINKAGE * np.trace(cov) / cov.shape[0]
        vals, vecs = np.linalg.eigh(cov + lam * np.eye(cov.shape[0]))
        self._whiten = vecs @ np.diag(vals**-0.5) @ vecs.T / np.sqrt(cov.shape[0])

    def encode_span(self, span):
        if self._whiten is None:
            self._fit_whitener()
        return self._whiten @ (self._encode(span) - self._mean)

    def build(self, spans):
        """Stack span encodings into an (M, width) bank."""
        if not spans:
            raise DataError("cannot build an empty bank (no spans)")
        return np.stack([self.encode_span(s) for s in spans])
