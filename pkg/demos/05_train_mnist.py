"""
Randomized-aware training on MNIST
==================================

Trains the 784-512-512-10 MLP with the stochastic SC neuron in the middle
layer, then evaluates it with the hardware simulator for several window
lengths. The defaults use a 10k-sample subset and 3 epochs (a few minutes);
pass --full for the 60k / 25 epoch run used by the acceptance suite (about 25 minutes on one core).

    python demos/05_train_mnist.py --data ../data/mnist [--full]
"""
import argparse

from aqfpbnn.bnn.train import TrainConfig, train
from aqfpbnn.data import load_mnist
from aqfpbnn.inference import HardwareConfig, accuracy, evaluate_logits, simulate_logits

ap = argparse.ArgumentParser()
ap.add_argument("--data", default="../data/mnist")
ap.add_argument("--full", action="store_true")
args = ap.parse_args()

train_set = load_mnist(args.data, "train")
test_set = load_mnist(args.data, "test")
cfg = TrainConfig(epochs=25 if args.full else 3, att_b=1.75, seed=0,
                  train_samples=0 if args.full else 10_000)
print(f"gray zone in column-sum units: {cfg.delta_v_in:.2f}")

model, history = train(cfg, train_set, test_set,
                       log=lambda r: print(f"epoch {r['epoch']}: loss {r['loss']:.4f}, "
                                           f"software accuracy {100 * r['test_accuracy']:.2f}%"))

for L in (1, 4, 16, 32):
    hw = HardwareConfig(16, 2.4, L, 70.0, 1.75)
    soft = accuracy(evaluate_logits(model, test_set.x, hw), test_set.y)
    hard = accuracy(simulate_logits(model, test_set.x, hw, seed=1), test_set.y)
    print(f"L = {L:2d}: software {100 * soft:.2f}%, simulated hardware {100 * hard:.2f}%")
