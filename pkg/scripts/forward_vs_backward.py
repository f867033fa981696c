"""Bias of column-row sampling in the forward aggregation vs the backward SpMM.

Averages many sampled gradients on a small random GCN and reports the relative
deviation of the mean from the exact gradient for each sample count k.
"""

import argparse
import csv
import sys

import numpy as np

from topkgnn.approx import approx_spmm_sampled
from topkgnn.data_io import _symmetric_binary, make_rng
from topkgnn.dense_core import softmax_cross_entropy
from topkgnn.gnn_engine import GCN, SampledBackward, normalize_adjacency


def fixture(seed, n=30, p=0.15, dims=(8, 16, 3)):
    rng = make_rng(seed, "graph")
    iu = np.triu_indices(n, 1)
    hit = rng.random(len(iu[0])) < p
    adj = normalize_adjacency(_symmetric_binary(iu[0][hit], iu[1][hit], n))
    x = rng.standard_normal((n, dims[0]))
    y = rng.integers(0, dims[-1], n)
    mask = rng.random(n) < 0.6
    return adj, x, y, mask, GCN(list(dims), make_rng(seed, "init"))


def flat(gs):
    return np.concatenate([g.ravel() for g in gs])


def deviations(seed, k, trials):
    adj, x, y, mask, model = fixture(seed)
    _, g = softmax_cross_entropy(model.forward(adj, x), y, mask)
    exact = flat(model.backward(g))
    ops = {l: op for l, (op, _) in model.backward_ops().items()}
    sampler = SampledBackward(ops, k, make_rng(seed, "sampling"))
    bwd = sum(flat(model.backward(g, sampler)) for _ in range(trials)) / trials

    rng = make_rng(seed + 1, "sampling")
    fwd_spmm = lambda a, b: approx_spmm_sampled(a, b, k, rng)
    fwd = np.zeros_like(exact)
    for _ in range(trials):
        _, gf = softmax_cross_entropy(model.forward(adj, x, forward_spmm=fwd_spmm), y, mask)
        fwd += flat(model.backward(gf))
    fwd /= trials
    nrm = np.linalg.norm(exact)
    return np.linalg.norm(bwd - exact) / nrm, np.linalg.norm(fwd - exact) / nrm


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--ks", default="10,20,30")
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh)
    w.writerow(["seed", "k", "backward_dev", "forward_dev"])
    for seed in range(args.seeds):
        for k in map(int, args.ks.split(",")):
            b, f = deviations(seed, k, args.trials)
            w.writerow([seed, k, f"{b:.6g}", f"{f:.6g}"])
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
