"""Synthetic sessions with a planted price-level signal.

Items form a grid of ``n_categories`` x ``rho`` (one item per category and
price level).  A training session picks a price level L and visits level-L items of
the *warm* categories; the item visited most often is the label.  Items of
the last category are *cold*: they never occur in training sessions.  Test
sessions repeat one cold item of level L and are labelled with a fixed warm
category's level-L item, so the price level is the only usable cue.
"""

from __future__ import annotations

import numpy as np

from .dataset import ItemCatalog, Session, SplitDataset, assign_levels

# Relative prices that the logistic discretizer maps to levels 0..4.
_TEMPLATE_5 = (1.0, 2.2, 3.0, 3.8, 5.0)


def price_template(rho: int) -> list[float]:
    if rho == 5:
        return list(_TEMPLATE_5)
    # equal-probability quantile midpoints of a standard logistic
    q = (np.arange(rho) + 0.5) / rho
    return (np.log(q / (1.0 - q)) + 10.0).tolist()


def make_catalog(n_categories: int = 4, rho: int = 5) -> ItemCatalog:
    template = price_template(rho)
    ids, cats, prices = [], [], []
    for c in range(n_categories):
        for level in range(rho):
            ids.append(f"c{c}l{level}")
            cats.append(c)
            prices.append(round(template[level] * 10.0 * (c + 1), 6))
    catalog = ItemCatalog(item_ids=ids, categories=[f"cat{c}" for c in range(n_categories)],
                          item_category=cats, prices=prices)
    assign_levels(catalog, rho, "logistic")
    expected = [level for _ in range(n_categories) for level in range(rho)]
    if catalog.levels != expected:
        raise RuntimeError(f"price template did not yield a level grid: {catalog.levels}")
    return catalog


def price_affinity_dataset(
    seed: int = 0,
    n_train: int = 200,
    n_valid: int = 50,
    n_test: int = 100,
    n_categories: int = 4,
    rho: int = 5,
    max_prefix: int = 4,
) -> SplitDataset:
    """Train/valid sessions use warm items; test prefixes use only cold items."""
    rng = np.random.default_rng(seed)
    catalog = make_catalog(n_categories, rho)
    warm = n_categories - 1
    cold = n_categories - 1

    def item(c: int, level: int) -> int:
        return c * rho + level

    def warm_session(key: str, t: int) -> Session:
        level = int(rng.integers(rho))
        m = int(rng.integers(1, max_prefix + 1))
        target = int(rng.integers(warm))
        others = [c for c in range(warm) if c != target]
        # target strictly most frequent: ceil((m + 1) / 2) copies
        n_target = m // 2 + 1
        cats = [target] * n_target + rng.choice(others, size=m - n_target).tolist()
        cats = [int(c) for c in rng.permutation(cats)]
        prefix = [item(c, level) for c in cats]
        return Session(key, t, tuple(prefix + [item(target, level)]))

    def cold_session(key: str, t: int) -> Session:
        level = int(rng.integers(rho))
        m = int(rng.integers(1, max_prefix + 1))
        prefix = [item(cold, level)] * m
        label = item((cold + 1) % warm, level)
        return Session(key, t, tuple(prefix + [label]))

    train = [warm_session(f"s{t:05d}", t) for t in range(n_train)]
    valid = [warm_session(f"s{t:05d}", t) for t in range(n_train, n_train + n_valid)]
    start = n_train + n_valid
    test = [cold_session(f"s{t:05d}", t) for t in range(start, start + n_test)]
    return SplitDataset(catalog, train, valid, test)
