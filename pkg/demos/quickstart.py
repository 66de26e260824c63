"""Fit one sampler on a simulated model and score it against the exact conditional law.

Run with ``python3 demos/quickstart.py``; takes well under a minute.
"""
import numpy as np

from cdebench import datagen, ddpm, harness

train = datagen.generate("M1", 2000, seed=0)
test = datagen.generate("M1", 200, seed=1)

# a short diffusion fit; the benchmark default is 50 epochs
model = ddpm.fit(train, seed=0, epochs=15)
print(f"final training loss {model.loss_history[-1]:.4f} after {model.epochs_run} epochs")

samples = model.sample_batch(test.x, 500, seed=2)
mse_mean, mse_sd, w1 = harness.evaluate_samples("M1", test.x, samples, ref_seed=3)
print(f"MSE of conditional mean {mse_mean:.4f}")
print(f"MSE of conditional sd   {mse_sd:.4f}")
print(f"mean W1 to true law     {w1:.4f}")

# the same test points scored with draws from the true law give the Monte Carlo floor
oracle = datagen.true_cond_sample("M1", test.x, 500, seed=4)
print("oracle floor: MSE-mean {:.4f}, MSE-sd {:.4f}, W1 {:.4f}".format(
    *harness.evaluate_samples("M1", test.x, oracle, ref_seed=3)))

x0 = test.x[0]
draws = model.sample(x0, 2000, seed=5)[:, 0]
print(f"at x = {np.round(x0, 2)}: sampled mean {draws.mean():.3f}, "
      f"true mean {datagen.true_cond_mean('M1', x0)[0]:.3f}")
