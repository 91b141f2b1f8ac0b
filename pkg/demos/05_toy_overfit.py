"""End-to-end gradients: overfit the synthetic two-scale blob set.

Class 0 images hold several small blobs, class 1 a single large one, so
blob scale is the label. A reduced-width trunk with a pooled classifier
must separate them quickly; this drives gradients through every fusion
lane, split, concat and reparameterized branch in the stack.
"""

from mafnet import ToyClassifier, make_blob_dataset, toy_config, train_toy

ds = make_blob_dataset(n=64, size=64, seed=0)
print(f"dataset: {ds.images.shape}, class balance {ds.labels.mean():.2f}")

model = ToyClassifier(toy_config(seed=0))
print(f"classifier parameters: {model.param_count() / 1e3:.0f}k")

steps = 120


def log(step, loss):
    if step % 20 == 0:
        print(f"  step {step:4d}  loss {loss:.4f}")


result = train_toy(model, ds, steps=steps, lr=0.05, batch_size=16, log_fn=log)
print(f"final loss {result.final_loss:.4f}, training accuracy {result.accuracy:.3f}")

ma = result.moving_average(20)
drops = sum(1 for i in range(len(ma) - 1) if ma[i + 1] <= ma[i])
print(f"20-step moving average decreased on {drops}/{len(ma) - 1} transitions")
