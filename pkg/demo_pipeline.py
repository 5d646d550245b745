#!/usr/bin/env python3
"""
Demo script running a small simulate -> preprocess -> train -> evaluate loop.
Everything runs locally on a scaled-down network so it finishes in a minute or two.
"""

import tempfile
from pathlib import Path

import numpy as np

from molcom_demod.channel_models import ChannelParams, hitting_peak_time
from molcom_demod.demodulator import (
    CnnConfig,
    TrainConfig,
    build_network,
    count_parameters,
    predict_batch,
    save_model,
    threshold_baseline_fit,
    threshold_baseline_predict_batch,
    train,
)
from molcom_demod.eval_metrics import accuracy, confusion, report
from molcom_demod.preprocess import build_dataset, save_dataset
from molcom_demod.testbed_sim import ModulationConfig, NoiseConfig, generate_corpus


def demo_scenario(alphabet_size: int, symbol_rate: float, out_dir: Path):
    """Run one (C, rate) scenario end to end and return its report."""
    print(f"\n{'=' * 60}")
    print(f"Scenario: C={alphabet_size}, {symbol_rate} Hz")
    print("=" * 60)

    mod = ModulationConfig(alphabet_size=alphabet_size, symbol_rate=symbol_rate)
    corpus = generate_corpus(30, 40, mod, ChannelParams(), NoiseConfig(), master_seed=0)
    print(f"  Transmissions: {len(corpus)} x {corpus[0].n_symbols} symbols")

    dataset = build_dataset(corpus, mode="slope", split_seed=0)
    counts = {name: len(idx) for name, idx in dataset.split.items()}
    print(f"  Segments: {len(dataset.y)} (train {counts['train']}, val {counts['val']}, test {counts['test']})")
    save_dataset(dataset, out_dir / "dataset")

    cnn = CnnConfig(alphabet_size=alphabet_size, fc_width=128)
    net = build_network(cnn, np.random.default_rng(0))
    print(f"  Network parameters: {count_parameters(net):,}")

    net, history = train(net, dataset, TrainConfig(max_epochs=20, plateau_patience=3, early_stop_patience=6))
    print(f"  Epochs run: {len(history.epochs)} (best epoch {history.best_epoch})")
    save_model(net, cnn, out_dir / "model")

    X, y = dataset.subset("test")
    labels, _ = predict_batch(net, X)
    cm = confusion(y, labels, alphabet_size)

    means = threshold_baseline_fit(dataset)
    baseline = accuracy(confusion(y, threshold_baseline_predict_batch(means, X), alphabet_size))

    result = report(cm, symbol_rate, baseline_accuracy=baseline)
    print()
    for line in result.summary().splitlines():
        print(f"  {line}")
    return result


def main():
    ch = ChannelParams()
    print("Molecular Communication Demodulation Demo")
    print(f"Channel: r={ch.receiver_radius}, d={ch.distance}, D={ch.diffusion_coeff}")
    print(f"First-hitting peak at {hitting_peak_time(ch):.3f} s")

    results = []
    with tempfile.TemporaryDirectory() as tmp:
        for rate in (2.0, 4.0):
            out_dir = Path(tmp) / f"C4_{rate:g}Hz"
            results.append(demo_scenario(4, rate, out_dir))

    # Summary
    print(f"\n{'=' * 60}")
    print("SUMMARY")
    print("=" * 60)
    print(f"{'Scenario':<15} {'Accuracy':>10} {'Baseline':>10} {'Net rate':>10}")
    print("-" * 60)
    for r in results:
        print(f"{r.scenario:<15} {r.accuracy:>10.3f} {r.baseline_accuracy:>10.3f} {r.net_rate:>10.3f}")


if __name__ == "__main__":
    main()
