"""End-to-end walkthrough: synthesize a series, train, roll out a forecast.

Run from the repo root:  python demos/train_and_forecast.py
"""

import numpy as np

from tempocast.data import generate_synthetic, make_windows, split_windows
from tempocast.model import (
    ForecastModel,
    ModelConfig,
    TrainConfig,
    evaluate_rollout,
    fit,
    persistence_forecast,
    mse_mae,
)

HORIZON = 32


def main():
    # a month and a half of hourly data: weekday/weekend profile, slow drift,
    # a daily cycle, and noise
    series = generate_synthetic(1100, daily_amp=1.0, seed=11)
    windows = make_windows(series, lookback=96, horizon=HORIZON, stride=8)
    train, val, test = split_windows(windows, "chronological")
    print("windows: %d train / %d val / %d test" % (len(train), len(val), len(test)))

    cfg = ModelConfig(depth=3, width=32, lookback=96, patch_len=16, patch_stride=16)
    model = ForecastModel(cfg, cache_path="demo_bank.bin")
    history = fit(model, train, val, TrainConfig(epochs=8, batch_size=8, lr=0.01, patience=100))
    print("train loss %.3f -> %.3f" % (history["train_loss"][0], history["train_loss"][-1]))

    mse, mae = evaluate_rollout(model, test, HORIZON)
    p_preds = np.concatenate([persistence_forecast(w.values[None, :], HORIZON)[0] for w in test])
    p_truth = np.concatenate([w.future[:HORIZON] for w in test])
    p_mse, p_mae = mse_mae(p_preds, p_truth)
    print("rollout  mse %.4f  mae %.4f" % (mse, mae))
    print("persist  mse %.4f  mae %.4f" % (p_mse, p_mae))

    # one concrete forecast, next two days from the end of the series
    hist = series.values[:, -96:]
    t0 = series.timestamp(series.n_steps - 96)
    preds = model.forecast(hist, t0, series.granularity, 48)
    print("next 12 hours:", np.round(preds[0, :12], 2))


if __name__ == "__main__":
    main()
