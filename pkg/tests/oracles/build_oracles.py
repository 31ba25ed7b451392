"""Independent reference values, computed without importing the package.

Run ``python tests/oracles/build_oracles.py`` to regenerate ``frozen.json``
and the CDR fixtures.  Everything here is plain Python arithmetic so that a
bug in the library cannot leak into its own reference values.
"""

import json
import math
import random
from fractions import Fraction
from pathlib import Path

HERE = Path(__file__).resolve().parent
FIXTURES = HERE.parent / "fixtures"
BIN_MS = 600_000


def delay_three_domains():
    tau = 1000.0
    gaps = [1000.0, 2000.0, 4000.0]
    return sum(tau / g for g in gaps)


def jain(xs):
    xs = [Fraction(x) for x in xs]
    return float(sum(xs) ** 2 / (len(xs) * sum(x * x for x in xs)))


def softmax_weights(v, kappa):
    ex = [math.exp(kappa * x) for x in v]
    tot = sum(ex)
    return [e / tot for e in ex]


def discounted_to_go(rewards, beta):
    out = []
    for t in range(len(rewards)):
        out.append(sum(beta ** (k - t) * rewards[k] for k in range(t, len(rewards))))
    return out


def clip_loss(ratio, adv, eps):
    clipped = min(max(ratio, 1 - eps), 1 + eps)
    return -min(ratio * adv, clipped * adv)


def single_queue(arrival, rate, dt, steps):
    """Hand simulation of one user's queue under a fixed service rate."""
    backlog = 0.0
    trace = []
    for _ in range(steps):
        offered = backlog + arrival * dt
        served = min(rate * dt, offered)
        backlog = max(0.0, offered - served)
        trace.append((served, backlog))
    return trace


def write_fixtures():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    rng = random.Random(2024)
    t0 = 1383260400000  # 2013-11-01 00:00 (Europe/Rome) in epoch ms, bin aligned
    lines = []
    for i in range(50):
        for cell in (1001, 1002):
            acts = [f"{rng.uniform(0, 5):.6f}" for _ in range(4)] + [f"{rng.uniform(10, 90):.6f}"]
            lines.append("\t".join([str(cell), str(t0 + i * BIN_MS), "39"] + acts))
    (FIXTURES / "cdr_100rows_2cells.txt").write_text("\n".join(lines) + "\n")

    spike = [1.0, 2.0, 10.0, 4.0, 5.0]
    rows = []
    for i, x in enumerate(spike):
        rows.append("\t".join(["7", str(t0 + i * BIN_MS), "39", "", "", "", "", repr(x)]))
    (FIXTURES / "cdr_spike_5bins.txt").write_text("\n".join(rows) + "\n")
    return [x / max(spike) for x in spike]


def per_cell_line_counts(path):
    counts = {}
    for line in path.read_text().splitlines():
        if line.strip():
            cell = line.split("\t", 1)[0]
            counts[cell] = counts.get(cell, 0) + 1
    return counts


def main():
    spike_norm = write_fixtures()
    w = softmax_weights([1, 0, 0, 0, 0], 2.0)
    frozen = {
        "delay_three_domains": delay_three_domains(),
        "jain_1_2_3": jain([1, 2, 3]),
        "weights_v10000_k2": w,
        "base_reward_u10000": w[0] * 1 + sum(x * 0 for x in w[1:]),
        "gae_111_beta05": discounted_to_go([1, 1, 1], 0.5),
        "clip_ratio05_advm1": clip_loss(0.5, -1.0, 0.2),
        "clip_ratio2_adv1": clip_loss(2.0, 1.0, 0.2),
        "budget_ratios_ln123": [1 / 6, 2 / 6, 3 / 6],
        "single_queue_double_rate": single_queue(1000.0, 2000.0, 1.0, 3),
        "cdr_spike_normalized": spike_norm,
        "cdr_fixture_cell_counts": per_cell_line_counts(FIXTURES / "cdr_100rows_2cells.txt"),
    }
    (HERE / "frozen.json").write_text(json.dumps(frozen, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
