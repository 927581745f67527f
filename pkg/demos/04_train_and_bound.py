"""Train one model and watch the entropy floor hold.

Rate plus distortion can never drop below the data entropy, whatever the
multipliers do. On a Gaussian dataset the entropy is known in closed
form, so the floor is checkable to the digit. This script trains a
small model with unit multipliers and tracks R + D toward that floor,
then round-trips the result through a checkpoint file.
"""

import os
import tempfile

from hitlab import (
    HvaeConfig,
    NoiseSource,
    TrainSpec,
    distortion,
    gen_gaussian,
    infer,
    layer_rates,
    load_checkpoint,
    save_checkpoint,
    train,
)

config = HvaeConfig(data_dim=2, latent_dims=(2, 1), hidden=(16,))
data = gen_gaussian(2, 1.0, 2048 + 2048, seed=3)
train_ds, eval_ds = data.split(2048)
print(f"dataset entropy H = {data.entropy_nats:.4f} nats (closed form)")

spec = TrainSpec(steps=2000, batch_size=128, seed=1, eval_interval=250)
model, trace = train(config, train_ds, (1.0, 1.0), spec)

print("step    loss        D         rates")
for point in trace.points:
    rates = ", ".join(f"{r:.3f}" for r in point.layer_rates)
    print(f"{point.step:>5} {point.loss:>9.4f} {point.distortion:>9.4f}   ({rates})")

eval_trace = infer(model, eval_ds.x, NoiseSource(77))
r = sum(layer_rates(eval_trace))
d = distortion(model, eval_trace, eval_ds.x)
print(f"\nheld-out R + D = {r + d:.4f} >= H = {data.entropy_nats:.4f}")
assert r + d >= data.entropy_nats - 0.05

with tempfile.TemporaryDirectory() as td:
    path = os.path.join(td, "checkpoint.json")
    save_checkpoint(model, path, betas=(1.0, 1.0), seed=spec.seed)
    reloaded = load_checkpoint(path)
    same = reloaded.params() == model.params()
    print(f"checkpoint round trip exact: {same} ({os.path.getsize(path)} bytes)")
