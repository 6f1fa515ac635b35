import csv
from pathlib import Path

import numpy as np
import pytest

from cohhn.cli import main
from cohhn.dataset import ItemCatalog


def write_log(path: Path, n_sessions: int = 150, n_items: int = 24, seed: int = 7,
              newline: str = "\n") -> Path:
    """A small interaction log where every item is frequent enough to survive filtering."""
    rng = np.random.default_rng(seed)
    cats = ["shoes", "hats", "bags"]
    rows = []
    t = 1_600_000_000
    for s in range(n_sessions):
        length = int(rng.integers(2, 6))
        for item in rng.choice(n_items, size=length):
            item = int(item)
            c = item % 3
            price = round(5.0 * (c + 1) + 2.5 * (item // 3), 2)
            rows.append([f"u{s:04d}", t, f"it{item:02d}", price, cats[c]])
            t += 37
        t += 3600
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator=newline)
        writer.writerow(["session", "timestamp", "item", "price", "category"])
        writer.writerows(rows)
    return path


def tiny_catalog(levels, cats=None, rho=None) -> ItemCatalog:
    n = len(levels)
    cats = cats if cats is not None else [0] * n
    return ItemCatalog(
        item_ids=[chr(ord("a") + i) for i in range(n)],
        categories=[f"c{c}" for c in range(max(cats) + 1)],
        item_category=list(cats),
        prices=[float(i + 1) for i in range(n)],
        rho=rho or max(levels) + 1,
        levels=list(levels),
    )


@pytest.fixture(scope="session")
def raw_log(tmp_path_factory) -> Path:
    return write_log(tmp_path_factory.mktemp("raw") / "log.csv")


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory, raw_log) -> Path:
    out = tmp_path_factory.mktemp("data") / "ds"
    assert main(["preprocess", "--input", str(raw_log), "--out", str(out), "--rho", "4"]) == 0
    return out
