"""Randomized case suites shared by the unit and acceptance tests."""

import itertools

import numpy as np

from noisyges.scoring import Dataset, LocalScoreKey, ScoreConfig, local_clipped_bic


def all_keys(d):
    return [
        LocalScoreKey(j, ps)
        for j in range(d)
        for r in range(d)
        for ps in itertools.combinations([k for k in range(d) if k != j], r)
    ]


def sensitivity_sweep(n_cases, seed=0, replacements=3):
    """Worst observed |s(D) - s(D')| / tau over single-row replacements.

    Returns (comparisons, violations, worst_ratio) where a violation is a
    deviation above tau + 1e-12.
    """
    rng = np.random.default_rng(seed)
    compared = violations = 0
    worst = 0.0
    for _ in range(n_cases):
        n = int(rng.integers(3, 21))
        d = int(rng.integers(1, 4))
        x = rng.standard_normal((n, d)) * rng.choice([0.5, 1.0, 3.0])
        if d > 1 and rng.random() < 0.5:
            x[:, -1] += 2 * x[:, 0]
        clip = float(rng.choice([0.3, 1.0, 2.5, 6.0]))
        sigma2 = float(rng.choice([0.5, 1.0, 2.0]))
        cfg = ScoreConfig(clip=clip)
        tau = clip / (n * sigma2)
        reps = rng.uniform(-4, 4, size=(replacements, d))
        data = Dataset(x, sigma2)
        keys = all_keys(d)
        base = {k: local_clipped_bic(data, cfg, k) for k in keys}
        for i in range(n):
            for rep in reps:
                x2 = x.copy()
                x2[i] = rep
                other = Dataset(x2, sigma2)
                for k in keys:
                    dev = abs(local_clipped_bic(other, cfg, k) - base[k])
                    compared += 1
                    worst = max(worst, dev / tau)
                    if dev > tau + 1e-12:
                        violations += 1
    return compared, violations, worst
