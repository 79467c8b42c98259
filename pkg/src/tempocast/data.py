"""Series loading, synthetic generation, normalization, patching, windows."""

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import ConfigError, DataError
from .params import STREAM_DATA, make_rng

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

GRANULARITIES = {
    "minutely": timedelta(minutes=1),
    "5-minute": timedelta(minutes=5),
    "10-minute": timedelta(minutes=10),
    "15-minute": timedelta(minutes=15),
    "30-minute": timedelta(minutes=30),
    "hourly": timedelta(hours=1),
    "daily": timedelta(days=1),
    "weekly": timedelta(weeks=1),
}

REVIN_EPS = 1e-8

# Weekly occupancy levels for the synthetic generator: five weekdays at the
# high level, two weekend days at the low one, zero-mean over a week.
WEEKDAY_LEVEL = 0.5
WEEKEND_LEVEL = -1.25


def granularity_delta(granularity):
    try:
        return GRANULARITIES[granularity]
    except KeyError:
        raise ConfigError(
            "unknown granularity %r (known: %s)" % (granularity, ", ".join(sorted(GRANULARITIES)))
        ) from None


@dataclass
class RawSeries:
    """A regularly sampled multivariate series."""

    start: datetime
    granularity: str
    values: np.ndarray  # (n_vars, n_steps)
    names: list

    @property
    def n_vars(self):
        return self.values.shape[0]

    @property
    def n_steps(self):
        return self.values.shape[1]

    def timestamp(self, i):
        return self.start + i * granularity_delta(self.granularity)


def load_csv(path, granularity):
    """Read a `date,<var>,...` CSV into a RawSeries.

    Lines starting with `#` are skipped. Timestamps must be uniformly
    spaced at the given granularity; any violation raises DataError with
    the offending row.
    """
    delta = granularity_delta(granularity)
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataError("%s: no data rows" % path)
    header = [c.strip() for c in rows[0]]
    if not header or header[0] != "date":
        raise DataError("%s: first header column must be 'date', got %r" % (path, header[:1]))
    names = header[1:]
    if not names:
        raise DataError("%s: no value columns" % path)
    n = len(header)
    stamps = []
    values = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != n:
            raise DataError("%s row %d: expected %d columns, got %d" % (path, i, n, len(row)))
        try:
            ts = datetime.strptime(row[0].strip(), TIME_FORMAT)
        except ValueError:
            raise DataError("%s row %d: bad timestamp %r" % (path, i, row[0])) from None
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise DataError("%s row %d: non-numeric value" % (path, i)) from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError("%s row %d: non-finite value" % (path, i))
        stamps.append(ts)
        values.append(vals)
    for i in range(1, len(stamps)):
        if stamps[i] - stamps[i - 1] != delta:
            raise DataError(
                "%s row %d: timestamp %s breaks %s spacing"
                % (path, i + 2, stamps[i].strftime(TIME_FORMAT), granularity)
            )
    arr = np.asarray(values, dtype=np.float64).T.copy()
    return RawSeries(start=stamps[0], granularity=granularity, values=arr, names=names)


def write_csv(path, series, comments=None):
    """Write a RawSeries with optional `# key = value` comment header lines."""
    delta = granularity_delta(series.granularity)
    with open(path, "w", newline="") as f:
        for line in comments or []:
            f.write("# %s\n" % line)
        w = csv.writer(f)
        w.writerow(["date"] + list(series.names))
        for i in range(series.n_steps):
            ts = (series.start + i * delta).strftime(TIME_FORMAT)
            w.writerow([ts] + ["%.10g" % v for v in series.values[:, i]])


def generate_synthetic(
    n_steps,
    n_vars=1,
    start="2020-01-06 00:00:00",
    granularity="hourly",
    kappa=1.0,
    noise_std=0.1,
    ar_std=0.35,
    ar_rho=0.98,
    daily_amp=0.0,
    seed=0,
):
    """Weekday/weekend square wave plus AR(1) drift and white noise.

    x_v(t) = kappa * w(t) + A * sin(clock) + d_v(t) + eps, where w is the
    weekly occupancy profile (high Mon-Fri, low Sat-Sun) and d_v is a slow
    stationary AR(1) drift drawn per variable. The drift and noise carry no
    date information at all, and a lookback shorter than a week frequently
    sits entirely inside the five flat weekdays — nothing in those values
    says how far away the weekend step is, so anticipating it requires the
    calendar. The optional daily sine (amplitude daily_amp, off by default)
    adds an intraday cycle that is easy to continue from values alone but
    also pins the clock phase, so leave it at zero when value-ambiguity
    matters.
    """
    start_ts = datetime.strptime(start, TIME_FORMAT) if isinstance(start, str) else start
    delta = granularity_delta(granularity)
    r = make_rng(seed, STREAM_DATA)
    weekly = np.empty(n_steps)
    day_frac = np.empty(n_steps)
    for i in range(n_steps):
        ts = start_ts + i * delta
        weekly[i] = WEEKDAY_LEVEL if ts.weekday() < 5 else WEEKEND_LEVEL
        day_frac[i] = (ts.hour * 3600 + ts.minute * 60 + ts.second) / 86400.0
    daily = daily_amp * np.sin(2.0 * np.pi * day_frac)
    drift = np.empty((n_vars, n_steps))
    innov = r.normal(0.0, ar_std * np.sqrt(1.0 - ar_rho**2), size=(n_vars, n_steps))
    state = r.normal(0.0, ar_std, size=n_vars)
    for i in range(n_steps):
        state = ar_rho * state + innov[:, i]
        drift[:, i] = state
    noise = r.normal(0.0, noise_std, size=(n_vars, n_steps))
    values = (kappa * weekly + daily)[None, :] + drift + noise
    names = ["v%d" % i for i in range(n_vars)]
    return RawSeries(start=start_ts, granularity=granularity, values=values, names=names)


# ---- instance normalization ----


def revin_stats(values):
    """Per-window mean and (floored, population) std over the last axis."""
    mu = values.mean(axis=-1, keepdims=True)
    sigma = values.std(axis=-1, keepdims=True) + REVIN_EPS
    return mu, sigma


def revin_apply(values, stats):
    mu, sigma = stats
    return (values - mu) / sigma


def revin_invert(values, stats):
    mu, sigma = stats
    return values * sigma + mu


# ---- patching ----


def patch_count(n_steps, patch_len, stride):
    """Number of patches for a window, final partially-covered patch included."""
    if patch_len < 1 or stride < 1:
        raise ConfigError("patch_len and stride must be >= 1")
    if n_steps < patch_len:
        raise ConfigError("window of %d steps is shorter than patch_len %d" % (n_steps, patch_len))
    return (n_steps - patch_len) // stride + 2


def patchify(values, patch_len, stride):
    """Cut a 1-D window into overlapping patches of length patch_len.

    The window is extended by a copy of its last `stride` values so the
    final patch (which starts past the last full offset) is defined.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ConfigError("patchify expects a 1-D window, got shape %s" % (values.shape,))
    n = values.shape[0]
    p = patch_count(n, patch_len, stride)
    padded = np.concatenate([values, values[-stride:]])
    out = np.empty((p, patch_len))
    for k in range(p):
        out[k] = padded[k * stride : k * stride + patch_len]
    return out


def n_target_positions(n_steps, stride):
    """Patch positions whose next-patch target lies within one horizon step."""
    return n_steps // stride


def next_patch_targets(window, future, patch_len, stride):
    """Teacher-forcing targets: for each valid position p, the patch_len
    values starting at (p+1)*stride. `future` supplies at least the first
    patch_len values after the window, in the same normalized scale."""
    ext = np.concatenate([np.asarray(window, dtype=np.float64), np.asarray(future, dtype=np.float64)[:patch_len]])
    if ext.shape[0] < window.shape[0] + patch_len:
        raise DataError("need at least patch_len future values for targets")
    k = n_target_positions(window.shape[0], stride)
    out = np.empty((k, patch_len))
    for p in range(k):
        out[p] = ext[(p + 1) * stride : (p + 1) * stride + patch_len]
    return out


# ---- windows and splits ----


@dataclass
class Window:
    """One univariate training example: lookback plus future at a time offset."""

    var: int
    name: str
    pos: int
    t0: datetime
    granularity: str
    values: np.ndarray  # (lookback,)
    future: np.ndarray  # (horizon,)


def make_windows(series, lookback, horizon, stride=1):
    """Slide a (lookback + horizon) window over the series.

    Each variable becomes its own univariate example (channel
    independence); examples are ordered position-major so chronological
    splits operate on time, not on variables.
    """
    total = lookback + horizon
    if series.n_steps < total:
        raise DataError(
            "series has %d steps, need at least %d (lookback %d + horizon %d)"
            % (series.n_steps, total, lookback, horizon)
        )
    delta = granularity_delta(series.granularity)
    out = []
    starts = range(0, series.n_steps - total + 1, stride)
    for pos, s in enumerate(starts):
        t0 = series.start + s * delta
        for v in range(series.n_vars):
            out.append(
                Window(
                    var=v,
                    name=series.names[v],
                    pos=pos,
                    t0=t0,
                    granularity=series.granularity,
                    values=series.values[v, s : s + lookback].copy(),
                    future=series.values[v, s + lookback : s + total].copy(),
                )
            )
    return out


def split_windows(windows, scheme="chronological", fractions=(0.7, 0.1, 0.2)):
    """Partition windows into train/val/test by window position.

    chronological: contiguous blocks in time order. interleaved: position
    modulo 10 (7 train, 1 val, 2 test), which keeps the proportions while
    interleaving the three sets along the series.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    n_pos = max(w.pos for w in windows) + 1 if windows else 0
    if scheme == "chronological":
        n_train = int(fractions[0] * n_pos)
        n_val = int(fractions[1] * n_pos)

        def bucket(pos):
            if pos < n_train:
                return 0
            if pos < n_train + n_val:
                return 1
            return 2

    elif scheme == "interleaved":
        cut_a = round(fractions[0] * 10)
        cut_b = cut_a + round(fractions[1] * 10)

        def bucket(pos):
            m = pos % 10
            if m < cut_a:
                return 0
            if m < cut_b:
                return 1
            return 2

    else:
        raise ConfigError("unknown split scheme %r" % scheme)
    parts = ([], [], [])
    for w in windows:
        parts[bucket(w.pos)].append(w)
    return parts
