"""Interaction logs to indexed, price-levelled sessions.

Pipeline: :func:`load_interactions` -> :func:`sessionize_daily` (or
:func:`sessionize_by_key`) -> :func:`filter_and_index` ->
:func:`split_chronological`.  Price levels are attached to the catalog by
:func:`assign_levels` using per-category logistic statistics.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

MAX_LEN = 19
SECONDS_PER_DAY = 86400
DEFAULT_COLUMNS = {
    "session": "session",
    "timestamp": "timestamp",
    "item": "item",
    "price": "price",
    "category": "category",
}


class DataError(ValueError):
    """Malformed input data or a dataset that cannot be built."""


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class Interaction:
    session_key: str
    timestamp: int
    item_id: str
    price: float
    category: str


@dataclass(frozen=True)
class RawSession:
    key: str
    start: int
    interactions: tuple[Interaction, ...]


@dataclass(frozen=True)
class Session:
    key: str
    start: int
    items: tuple[int, ...]

    @property
    def label(self) -> int:
        return self.items[-1]

    def model_input(self, max_len: int = MAX_LEN) -> tuple[int, ...]:
        """Prefix (all but the label), truncated to the most recent ``max_len`` items."""
        return self.items[:-1][-max_len:]


@dataclass(frozen=True)
class PriceStats:
    category: str
    mu: float
    delta: float
    min: float
    max: float


@dataclass
class ItemCatalog:
    item_ids: list[str]
    categories: list[str]
    item_category: list[int]
    prices: list[float]
    rho: int = 0
    levels: list[int] = field(default_factory=list)
    stats: dict[str, PriceStats] = field(default_factory=dict)
    mode: str = "logistic"

    def __post_init__(self):
        self._index = {item: i for i, item in enumerate(self.item_ids)}

    @property
    def n(self) -> int:
        return len(self.item_ids)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise DataError(f"unknown item {item_id!r}") from None

    def to_json(self) -> dict:
        return {
            "rho": self.rho,
            "mode": self.mode,
            "categories": self.categories,
            "items": [
                {
                    "index": i,
                    "item_id": self.item_ids[i],
                    "category": self.item_category[i],
                    "price": self.prices[i],
                    "price_level": self.levels[i] if self.levels else None,
                }
                for i in range(self.n)
            ],
            "stats": {
                c: {"mu": s.mu, "delta": s.delta, "min": s.min, "max": s.max}
                for c, s in sorted(self.stats.items())
            },
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "ItemCatalog":
        items = sorted(payload["items"], key=lambda row: row["index"])
        catalog = cls(
            item_ids=[row["item_id"] for row in items],
            categories=list(payload["categories"]),
            item_category=[int(row["category"]) for row in items],
            prices=[float(row["price"]) for row in items],
            rho=int(payload["rho"]),
            levels=[int(row["price_level"]) for row in items],
            mode=payload.get("mode", "logistic"),
        )
        catalog.stats = {
            c: PriceStats(c, s["mu"], s["delta"], s["min"], s["max"])
            for c, s in payload.get("stats", {}).items()
        }
        return catalog


@dataclass
class SplitDataset:
    catalog: ItemCatalog
    train: list[Session]
    valid: list[Session]
    test: list[Session]


# ---------------------------------------------------------------- loading


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
        if value.is_integer():
            return int(value)
    except ValueError:
        pass
    stamp = text.replace(" UTC", "+00:00").replace("Z", "+00:00")
    parsed = datetime.fromisoformat(stamp)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return int(parsed.timestamp())


def load_interactions(
    path: str | Path,
    columns: Mapping[str, str] | None = None,
    event_column: str | None = None,
    keep_events: Sequence[str] | None = None,
) -> list[Interaction]:
    """Read a headered CSV into interactions sorted by (session_key, timestamp).

    ``columns`` maps the logical fields (session, timestamp, item, price,
    category) to CSV header names.  When ``event_column`` is given only rows
    whose event value is in ``keep_events`` are kept.
    """
    mapping = {**DEFAULT_COLUMNS, **(columns or {})}
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    keep = set(keep_events or ())
    rows: list[tuple[int, Interaction]] = []
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        wanted = list(mapping.values()) + ([event_column] if event_column else [])
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing} (header: {header})")
        for lineno, row in enumerate(reader, start=2):
            if event_column and row[event_column].strip() not in keep:
                continue
            try:
                values = {k: (row[c] or "").strip() for k, c in mapping.items()}
                if not all(values.values()):
                    raise ValueError("empty field")
                price = float(values["price"])
                if not math.isfinite(price) or price < 0:
                    raise ValueError(f"invalid price {values['price']!r}")
                inter = Interaction(
                    session_key=values["session"],
                    timestamp=_parse_timestamp(values["timestamp"]),
                    item_id=values["item"],
                    price=price,
                    category=values["category"],
                )
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
            rows.append((lineno, inter))
    rows.sort(key=lambda pair: (pair[1].session_key, pair[1].timestamp, pair[0]))
    return [inter for _, inter in rows]


def sessionize_by_key(interactions: Iterable[Interaction]) -> list[RawSession]:
    """One session per distinct session key (input assumed sorted)."""
    groups: dict[str, list[Interaction]] = defaultdict(list)
    for inter in interactions:
        groups[inter.session_key].append(inter)
    return [
        RawSession(key, events[0].timestamp, tuple(events))
        for key, events in sorted(groups.items())
    ]


def sessionize_daily(interactions: Iterable[Interaction]) -> list[RawSession]:
    """Split each user's interactions into UTC calendar-day sessions.

    The session key of the input is treated as a user key; the resulting
    session keys are ``"<user>@<day index>"``.
    """
    out: list[RawSession] = []
    for user, events in ((s.key, s.interactions) for s in sessionize_by_key(interactions)):
        run: list[Interaction] = []
        for inter in events:
            if run and inter.timestamp // SECONDS_PER_DAY != run[-1].timestamp // SECONDS_PER_DAY:
                out.append(_close_run(user, run))
                run = []
            run.append(inter)
        if run:
            out.append(_close_run(user, run))
    return out


def _close_run(user: str, run: list[Interaction]) -> RawSession:
    day = run[0].timestamp // SECONDS_PER_DAY
    return RawSession(f"{user}@{day}", run[0].timestamp, tuple(run))


# ---------------------------------------------------------------- filtering


def _filter_fixed_point(
    sessions: list[tuple[str, int, list[str]]], min_item_count: int, min_session_len: int
) -> list[tuple[str, int, list[str]]]:
    while True:
        counts = Counter(item for _, _, items in sessions for item in items)
        kept = []
        changed = False
        for key, start, items in sessions:
            pruned = [it for it in items if counts[it] >= min_item_count]
            if len(pruned) != len(items):
                changed = True
            if len(pruned) >= min_session_len:
                kept.append((key, start, pruned))
            else:
                changed = True
        sessions = kept
        if not changed:
            return sessions


def filter_and_index(
    sessions: Sequence[RawSession], min_item_count: int = 10, min_session_len: int = 2
) -> tuple[ItemCatalog, list[Session]]:
    """Drop rare items and short sessions until stable, then index items.

    Item indices follow sorted item_id order; category indices follow
    sorted category order.  An item's price and category are taken from its
    most recent interaction.
    """
    latest: dict[str, Interaction] = {}
    for raw in sessions:
        for inter in raw.interactions:
            prev = latest.get(inter.item_id)
            if prev is None or inter.timestamp >= prev.timestamp:
                latest[inter.item_id] = inter
    plain = [(s.key, s.start, [i.item_id for i in s.interactions]) for s in sessions]
    plain = _filter_fixed_point(plain, min_item_count, min_session_len)
    if not plain:
        raise DataError("empty dataset: every session was filtered away")
    item_ids = sorted({item for _, _, items in plain for item in items})
    categories = sorted({latest[item].category for item in item_ids})
    cat_index = {c: i for i, c in enumerate(categories)}
    catalog = ItemCatalog(
        item_ids=item_ids,
        categories=categories,
        item_category=[cat_index[latest[item].category] for item in item_ids],
        prices=[latest[item].price for item in item_ids],
    )
    indexed = [
        Session(key, start, tuple(catalog.index_of(it) for it in items))
        for key, start, items in plain
    ]
    return catalog, indexed


def split_chronological(
    sessions: Sequence[Session], catalog: ItemCatalog, fractions=(0.7, 0.2, 0.1)
) -> SplitDataset:
    """Sort by (start, key); first 70% train, next 20% valid, rest test."""
    if len(sessions) < 10:
        raise DataError(f"need at least 10 sessions to split, got {len(sessions)}")
    ordered = sorted(sessions, key=lambda s: (s.start, s.key))
    n_train = int(round(len(ordered) * fractions[0]))
    n_valid = int(round(len(ordered) * fractions[1]))
    return SplitDataset(
        catalog=catalog,
        train=ordered[:n_train],
        valid=ordered[n_train:n_train + n_valid],
        test=ordered[n_train + n_valid:],
    )


# ---------------------------------------------------------------- prices


def fit_price_stats(catalog: ItemCatalog) -> dict[str, PriceStats]:
    """Mean and population standard deviation of the distinct prices per category."""
    by_cat: dict[int, set[float]] = defaultdict(set)
    for cat, price in zip(catalog.item_category, catalog.prices):
        by_cat[cat].add(price)
    stats = {}
    for cat, prices in sorted(by_cat.items()):
        values = sorted(prices)
        mu = math.fsum(values) / len(values)
        var = math.fsum((p - mu) ** 2 for p in values) / len(values)
        delta = math.sqrt(var)
        name = catalog.categories[cat]
        stats[name] = PriceStats(name, mu, delta if delta > 0 else 1.0, values[0], values[-1])
    return stats


def logistic_cdf(x: float, stats: PriceStats) -> float:
    z = -math.pi * (x - stats.mu) / (math.sqrt(3.0) * stats.delta)
    if z > 700:
        return 0.0
    return 1.0 / (1.0 + math.exp(z))


def _check_rho(rho: int) -> None:
    if not isinstance(rho, int) or rho < 2:
        raise ConfigError(f"rho must be an integer >= 2, got {rho!r}")


# fractions that land on a bucket edge in exact arithmetic may come out a few ulps low
_EDGE_TOL = 1e-9


def _bucket(fraction: float, rho: int) -> int:
    return min(max(int(math.floor(fraction * rho + _EDGE_TOL)), 0), rho - 1)


def discretize_price(x_p: float, stats: PriceStats, rho: int) -> int:
    """Equal-probability price level under the category's logistic distribution."""
    _check_rho(rho)
    lo, hi = logistic_cdf(stats.min, stats), logistic_cdf(stats.max, stats)
    if stats.min >= stats.max or hi <= lo:
        return rho // 2
    return _bucket((logistic_cdf(x_p, stats) - lo) / (hi - lo), rho)


def discretize_price_uniform(x_p: float, stats: PriceStats, rho: int) -> int:
    """Equal-width price level over the category's [min, max] range."""
    _check_rho(rho)
    if stats.min >= stats.max:
        return rho // 2
    return _bucket((x_p - stats.min) / (stats.max - stats.min), rho)


DISCRETIZERS = {"logistic": discretize_price, "uniform": discretize_price_uniform}


def assign_levels(catalog: ItemCatalog, rho: int, mode: str = "logistic") -> ItemCatalog:
    """Fit per-category stats (if absent) and set every item's price level in place."""
    if mode not in DISCRETIZERS:
        raise ConfigError(f"unknown discretization mode {mode!r}")
    _check_rho(rho)
    if not catalog.stats:
        catalog.stats = fit_price_stats(catalog)
    fn = DISCRETIZERS[mode]
    catalog.levels = [
        fn(price, catalog.stats[catalog.categories[cat]], rho)
        for cat, price in zip(catalog.item_category, catalog.prices)
    ]
    catalog.rho = rho
    catalog.mode = mode
    return catalog


# ---------------------------------------------------------------- persistence


def dataset_stats(split: SplitDataset) -> dict:
    sessions = split.train + split.valid + split.test
    interactions = sum(len(s.items) for s in sessions)
    return {
        "items": split.catalog.n,
        "price_levels": split.catalog.rho,
        "categories": split.catalog.n_categories,
        "interactions": interactions,
        "sessions": len(sessions),
        "avg_length": round(interactions / len(sessions), 2),
    }


def save_dataset(split: SplitDataset, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "catalog.json").write_text(json.dumps(split.catalog.to_json(), indent=1) + "\n")
    for name in ("train", "valid", "test"):
        lines = [json.dumps(list(s.items)) for s in getattr(split, name)]
        (out / f"{name}.jsonl").write_text("".join(line + "\n" for line in lines))
    return out


def load_dataset(data_dir: str | Path) -> SplitDataset:
    root = Path(data_dir)
    try:
        catalog = ItemCatalog.from_json(json.loads((root / "catalog.json").read_text()))
        parts = {}
        for name in ("train", "valid", "test"):
            lines = (root / f"{name}.jsonl").read_text().splitlines()
            parts[name] = [
                Session(f"{name}:{i}", i, tuple(json.loads(line)))
                for i, line in enumerate(lines) if line.strip()
            ]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load dataset from {root}: {exc}") from exc
    for name, sessions in parts.items():
        for s in sessions:
            if len(s.items) < 2 or any(not 0 <= i < catalog.n for i in s.items):
                raise DataError(f"{root}/{name}.jsonl: invalid session {list(s.items)}")
    return SplitDataset(catalog, parts["train"], parts["valid"], parts["test"])


def preprocess(
    path: str | Path,
    columns: Mapping[str, str] | None = None,
    rho: int = 10,
    mode: str = "logistic",
    sessionize: str = "key",
    min_item_count: int = 10,
    min_session_len: int = 2,
    event_column: str | None = None,
    keep_events: Sequence[str] | None = None,
) -> SplitDataset:
    interactions = load_interactions(path, columns, event_column, keep_events)
    if sessionize == "daily":
        raw = sessionize_daily(interactions)
    elif sessionize == "key":
        raw = sessionize_by_key(interactions)
    else:
        raise ConfigError(f"unknown sessionize mode {sessionize!r}")
    catalog, sessions = filter_and_index(raw, min_item_count, min_session_len)
    assign_levels(catalog, rho, mode)
    return split_chronological(sessions, catalog)
