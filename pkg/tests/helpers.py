"""Independent oracles shared by unit and acceptance tests."""

import numpy as np


def brute_force_pareto(coords):
    """O(n^2) double loop: keep p iff nothing dominates it (maximize both)."""
    kept = []
    for i, (px, py) in enumerate(coords):
        dominated = False
        for j, (qx, qy) in enumerate(coords):
            if j == i:
                continue
            if qx >= px and qy >= py and (qx > px or qy > py):
                dominated = True
                break
        if not dominated:
            kept.append(i)
    return kept


def mc_hypervolume(coords, reference=(0.0, 0.0), n_samples=1_000_000, seed=0):
    """Monte-Carlo containment estimate of the dominated area."""
    coords = np.asarray(coords, dtype=np.float64)
    rx, ry = reference
    if len(coords) == 0:
        return 0.0
    hi_x = coords[:, 0].max()
    hi_y = coords[:, 1].max()
    if hi_x <= rx or hi_y <= ry:
        return 0.0
    rng = np.random.default_rng(seed)
    xs = rng.uniform(rx, hi_x, size=n_samples)
    ys = rng.uniform(ry, hi_y, size=n_samples)
    inside = np.zeros(n_samples, dtype=bool)
    for px, py in coords:
        inside |= (xs <= px) & (ys <= py)
    return float(inside.mean() * (hi_x - rx) * (hi_y - ry))
