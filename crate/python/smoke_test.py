#!/usr/bin/env python3
"""Smoke test for the gestrec_py extension module.

Run ./python/build_ext.sh first (or build the cdylib yourself and put
gestrec_py.so next to this file).
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import gestrec_py as g


def check(name, condition):
    status = "ok" if condition else "FAIL"
    print(f"  [{status}] {name}")
    if not condition:
        sys.exit(1)


def main():
    print("gestrec_py smoke test")

    # Tensor arithmetic against hand values.
    a = g.Tensor([1, 2], [1.0, 2.0])
    b = g.Tensor([2, 1], [3.0, 4.0])
    check("matmul [[1,2]]x[[3],[4]] == [[11]]", a.matmul(b).data == [11.0])
    x = g.Tensor([2], [2.0, -3.0])
    y = g.Tensor([2], [4.0, 5.0])
    check("hadamard [2,-3]*[4,5] == [8,-15]", x.hadamard(y).data == [8.0, -15.0])
    try:
        g.Tensor([2, 2], [1.0])
        check("shape/data mismatch rejected", False)
    except ValueError:
        check("shape/data mismatch rejected", True)

    # Deterministic generator.
    r1, r2 = g.Rng(42), g.Rng(42)
    check("same seed, same draws", all(r1.next_u64() == r2.next_u64() for _ in range(100)))

    # Synthetic data -> training -> evaluation round trip.
    samples = g.generate_sequences(trials=8, num_classes=4, feature_dim=8,
                                   frames=60, noise=0.05, seed=0)
    check("generator returns trials", len(samples) == 8)
    train_set, test_set = samples[:6], samples[6:]
    model = g.SequenceModel(input_dim=8, num_classes=4, layers=[16, 16], seed=0)
    log = model.train(train_set, epochs=10, lr0=0.2, batch_size=2, seed=0)
    check("training logged every epoch", len(log) == 10)
    first_loss, last_loss = log[0][1], log[-1][1]
    check(f"loss fell ({first_loss:.3f} -> {last_loss:.3f})", last_loss < first_loss)

    y_true, y_pred = [], []
    for features, labels in test_set:
        y_true.extend(labels)
        y_pred.extend(model.predict(features))
    report = g.evaluate(y_true, y_pred, 4)
    check(f"held-out micro accuracy {report['micro']:.3f} is sane",
          0.0 <= report["micro"] <= 1.0 and report["micro"] > 0.5)
    check("macro F1 present", 0.0 <= report["macro_f1"] <= 1.0)
    check("perfect self-evaluation", g.evaluate(y_true, y_true, 4)["micro"] == 1.0)

    # Bitwise determinism of an identically rebuilt + retrained model.
    model_b = g.SequenceModel(input_dim=8, num_classes=4, layers=[16, 16], seed=0)
    model_b.train(train_set, epochs=10, lr0=0.2, batch_size=2, seed=0)
    logits_a = model.logits(test_set[0][0]).data
    logits_b = model_b.logits(test_set[0][0]).data
    check("retraining with the same seed is bitwise identical", logits_a == logits_b)

    # Checkpoint round trip.
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.ckpt")
        model.save(path)
        restored = g.SequenceModel.load(path)
        check("checkpoint round trip preserves logits",
              restored.logits(test_set[0][0]).data == logits_a)

    check("uniform draw in range", 0.0 <= g.Rng(1).uniform(0.0, 1.0) < 1.0)
    check("gaussian draw finite", math.isfinite(g.Rng(2).gaussian(0.0, 1.0)))
    print("smoke test passed")


if __name__ == "__main__":
    main()
