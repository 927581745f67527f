"""What a latent layer's rate promises about downstream classifiers.

The information a layer carries about the labels can never exceed the
rate accumulated from the top of the hierarchy down to it, and
classification accuracy is capped by a monotone function of that
information. This script measures both sides of the chain on a trained
model: estimated mutual information, probe accuracies on the inferred
modes, and the analytic accuracy ceiling.
"""

import math

import numpy as np

from hitlab import (
    HvaeConfig,
    NoiseSource,
    TrainSpec,
    accuracy_bound_f,
    accuracy_bound_inverse,
    fit_probe,
    gen_labeled_mixture,
    infer,
    layer_rates,
    mi_estimate,
    predict_accuracy,
    train,
)

config = HvaeConfig(data_dim=8, latent_dims=(4, 2), hidden=(16,))
data = gen_labeled_mixture(4, 8, separation=3.0, n=2048 + 4096, seed=11,
                           entropy_mc=10_000)
train_ds, eval_ds = data.split(2048)

model, _ = train(config, train_ds, (1.0, 1.0),
                 TrainSpec(steps=2000, batch_size=128, seed=5))
trace = infer(model, eval_ds.x, NoiseSource(99))
rates = layer_rates(trace)
h_y = eval_ds.label_entropy_nats
m = eval_ds.n_classes

print(f"labels: {m} classes, H[y] = {h_y:.4f} nats")
print(f"layer rates (coarse to fine): {tuple(round(r, 4) for r in rates)}")

half = len(eval_ds) // 2
for ell, accumulated in ((2, rates[0]), (1, sum(rates))):
    lay = trace.layer(ell)
    mi, se = mi_estimate(lay.q_mean, lay.q_std, eval_ds.y, NoiseSource(100 + ell))
    ceiling = accuracy_bound_inverse(accumulated, h_y, m)
    print(f"\nlayer {ell}: accumulated rate {accumulated:.4f} nats")
    print(f"  estimated I(y; z_{ell}) = {mi:.4f} +- {se:.4f} nats "
          f"(<= rate, and <= log M = {math.log(m):.4f})")
    print(f"  accuracy ceiling f^-1(rate) = {ceiling:.4f}")
    feats = trace.mode(ell)
    for kind in ("logreg", "knn"):
        clf = fit_probe(kind, feats[:half], eval_ds.y[:half])
        acc = predict_accuracy(clf, feats[half:], eval_ds.y[half:])
        print(f"  {kind:>6} probe accuracy on mu_{ell}: {acc:.4f}")

# the ceiling curve itself, for intuition
print("\ninformation needed for a given accuracy (M = 4, uniform labels):")
for alpha in (0.25, 0.4, 0.6, 0.8, 0.95, 1.0):
    need = accuracy_bound_f(alpha, math.log(4), 4)
    print(f"  accuracy {alpha:.2f} needs >= {need:.4f} nats")
