"""Compare the trained selection policy with the exhaustive optimum on tiny episodes.

With K=1 and n=2 an episode has two steps and three actions per step, so
every action sequence can be enumerated.  The script trains on frame pairs
from many tiny benchmarks and reports, on held-out pairs, how close the
argmax policy and the keep-everything (all-NoOp) policy get to the optimum.

    python3 demos/policy_vs_oracle.py [--episodes 20000]
"""
import argparse

import numpy as np

from vidage.bench import BenchmarkSizes, generate_synthetic_benchmark
from vidage.embedder import EmbedderSpec, make_embedder
from vidage.gallery import Gallery
from vidage.mdp import encode_features
from vidage.pipeline import RunConfig, initial_states
from vidage.policy import PolicyParams, TrainConfig, Trainer, bruteforce_optimal, rollout

SIZES = BenchmarkSizes(entries_per_group=8, videos=1, frames=8, height=6, width=6, clusters=2,
                       attributes=2)


def states(seed):
    bench = generate_synthetic_benchmark(seed, SIZES)
    spec = EmbedderSpec(kind="synthetic", seed=seed, height=6, width=6)
    return initial_states(bench.videos, Gallery(bench.entries, make_embedder(spec)),
                          RunConfig(embedder=spec, K=1, n=2))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--episodes", type=int, default=20_000)
    args = ap.parse_args()

    train = [s for seed in range(200) for s in states(seed)]
    held = [states(10_000 + i)[3] for i in range(50)]
    X = [np.concatenate(encode_features(s)) for s in train]
    params = PolicyParams.init(len(X[0]), 3, (64, 32), rng=0).fit_normalizer(X)
    trainer = Trainer(params, TrainConfig(optimizer="adam"))
    trainer.fit(lambda p, rng: rollout(train[int(rng.integers(len(train)))], p, "sample", rng),
                args.episodes)

    opt = np.array([bruteforce_optimal(s, 100)[1] for s in held])
    for label, p in (("all-NoOp", None), ("trained", trainer.params)):
        ret = np.array([rollout(s, p, "argmax").total_return for s in held])
        print(f"{label:<9} mean return/optimum {np.mean(ret / opt):.3f}  "
              f">= 90% of optimum on {np.mean(ret >= 0.9 * opt):.0%} of held-out pairs")
    best = [bruteforce_optimal(s, 100)[0] for s in held]
    keep = np.mean([a == [s.N, s.N] for a, s in zip(best, held)])
    print(f"held-out pairs where keeping every neighbor is optimal: {keep:.0%}")

if __name__ == "__main__":
    main()
