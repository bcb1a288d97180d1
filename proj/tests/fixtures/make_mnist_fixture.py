#!/usr/bin/env python3
"""Builds the MNIST-subset MLP fixture used by the test suites.

Source data: the 5,000-image MNIST sample (500 per class) redistributed inside
the mlxtend wheel as mlxtend/data/data/mnist_5k.csv.gz. The last 100 images of
every class form the held-out IDX test set; the rest train a 784-64-32-10 ReLU
network. Accuracy in the manifest is recomputed in float64 from the exported
decimal weights, which is the exact arithmetic the C++ loader performs.

Usage: make_mnist_fixture.py /path/to/mnist_5k.csv OUTDIR
"""
import json
import struct
import sys

import numpy as np
import torch


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    csv_path, out_dir = sys.argv[1], sys.argv[2]
    raw = np.loadtxt(csv_path, delimiter=",", dtype=np.int64)
    pixels, labels = raw[:, :-1], raw[:, -1]

    train_idx, test_idx = [], []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        train_idx.extend(idx[:400])
        test_idx.extend(idx[400:])
    train_idx, test_idx = np.array(train_idx), np.array(test_idx)

    torch.manual_seed(7)
    x_train = torch.tensor(pixels[train_idx] / 255.0, dtype=torch.float32)
    y_train = torch.tensor(labels[train_idx])
    model = torch.nn.Sequential(
        torch.nn.Linear(784, 64), torch.nn.ReLU(),
        torch.nn.Linear(64, 32), torch.nn.ReLU(),
        torch.nn.Linear(32, 10))
    opt = torch.optim.Adam(model.parameters(), lr=1e-3, weight_decay=1e-4)
    for epoch in range(40):
        perm = torch.randperm(len(x_train))
        for start in range(0, len(perm), 64):
            b = perm[start:start + 64]
            opt.zero_grad()
            loss = torch.nn.functional.cross_entropy(model(x_train[b]), y_train[b])
            loss.backward()
            opt.step()

    layers = []
    linears = [m for m in model if isinstance(m, torch.nn.Linear)]
    for i, lin in enumerate(linears):
        w = lin.weight.detach().numpy().astype(np.float64)
        b = lin.bias.detach().numpy().astype(np.float64)
        layers.append({
            "rows": int(w.shape[0]),
            "cols": int(w.shape[1]),
            "weight": [float("%.9g" % v) for v in w.reshape(-1)],
            "bias": [float("%.9g" % v) for v in b],
            "activation": "relu" if i + 1 < len(linears) else "none",
        })

    def forward(x):
        h = x
        for layer in layers:
            w = np.array(layer["weight"]).reshape(layer["rows"], layer["cols"])
            h = h @ w.T + np.array(layer["bias"])
            if layer["activation"] == "relu":
                h = np.maximum(h, 0.0)
        return np.argmax(h, axis=1)

    x_test = pixels[test_idx] / 255.0
    accuracy = float(np.mean(forward(x_test) == labels[test_idx]))

    doc = {
        "format": "advcma-dense-v1",
        "manifest": {
            "num_classes": 10,
            "input_dim": 784,
            "provenance": "784-64-32-10 ReLU MLP trained on 4000 images of the "
                          "mlxtend MNIST 5k sample; see make_mnist_fixture.py",
            "test_images": "t10k-subset-images-idx3-ubyte",
            "test_labels": "t10k-subset-labels-idx1-ubyte",
            "test_accuracy": accuracy,
        },
        "layers": layers,
    }
    with open(f"{out_dir}/mlp.json", "w") as f:
        json.dump(doc, f, separators=(",", ":"))
    write_idx_images(f"{out_dir}/t10k-subset-images-idx3-ubyte", pixels[test_idx])
    write_idx_labels(f"{out_dir}/t10k-subset-labels-idx1-ubyte", labels[test_idx])
    print("test accuracy", accuracy)


if __name__ == "__main__":
    main()
