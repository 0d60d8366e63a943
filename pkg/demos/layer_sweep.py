"""Accuracy against the number of graph layers on a corpus with a decoy chain.

Each wrong candidate carries a neutral chain as long as the gold one, so the
question-bearing sentence sits two hops away from every candidate node.  One
layer cannot carry it that far.

    python3 demos/layer_sweep.py [--layers 1 2 3]
"""

import argparse

from pathrgcn.embeddings import HashEmbeddings
from pathrgcn.model import ModelConfig
from pathrgcn.synth import SynthSpec, generate_corpus
from pathrgcn.training import TrainConfig, sweep_layers


def corpus(n, seed):
    spec = SynthSpec(num_samples=n, hop_depth=2, num_distractor_docs=3, decoy_chain=True, seed=seed)
    return [s.sample for s in generate_corpus(spec)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--layers", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()

    model = ModelConfig(d=32, embed_dim=50, max_docs=3)
    cfg = TrainConfig(batch_size=16, learning_rate=2e-3, epochs=args.epochs, seed=7, model=model)
    results = sweep_layers(corpus(500, 7), cfg, args.layers, corpus(100, 8), HashEmbeddings(50))
    for L, row in results.items():
        print(f"L={L}: dev accuracy {row['accuracy']:.2f} ({row['parameters']} parameters)")


if __name__ == "__main__":
    main()
