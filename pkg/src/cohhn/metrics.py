"""Prec@k / MRR@k and evaluation reports with per-price-level breakdowns."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .dataset import ItemCatalog, Session


class Recommender(Protocol):
    def predict_topk(self, session: Sequence[int], k: int) -> list[int]: ...


def prec_at_k(ranked: Sequence[int], target: int, k: int) -> int:
    return int(target in ranked[:k])


def mrr_at_k(ranked: Sequence[int], target: int, k: int) -> float:
    for pos, item in enumerate(ranked[:k], start=1):
        if item == target:
            return 1.0 / pos
    return 0.0


@dataclass
class EvalReport:
    model: str
    ks: list[int]
    n_sessions: int
    overall: dict[str, float]
    level_k: int
    per_level: dict[int, dict[str, float]]
    level_counts: dict[int, int]
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "ks": self.ks,
            "n_sessions": self.n_sessions,
            "overall": self.overall,
            "level_k": self.level_k,
            "per_level": {str(k): v for k, v in sorted(self.per_level.items())},
            "level_counts": {str(k): v for k, v in sorted(self.level_counts.items())},
            "meta": self.meta,
        }

    def table(self) -> str:
        cols = [f"{m}@{k}" for k in self.ks for m in ("Prec", "MRR")]
        width = max(len(c) for c in cols) + 2
        lines = [f"model: {self.model}   sessions: {self.n_sessions}", ""]
        lines.append("".join(c.rjust(width) for c in cols))
        lines.append("".join(f"{self.overall[c]:.2f}".rjust(width) for c in cols))
        lines.append("")
        lk = self.level_k
        head = ["level", "count", f"Prec@{lk}", f"MRR@{lk}"]
        lines.append("".join(h.rjust(width) for h in head))
        for level in sorted(self.per_level):
            row = self.per_level[level]
            cells = [str(level), str(self.level_counts[level]),
                     f"{row[f'Prec@{lk}']:.2f}", f"{row[f'MRR@{lk}']:.2f}"]
            lines.append("".join(c.rjust(width) for c in cells))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "report") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / f"{stem}.json", "txt": out / f"{stem}.txt",
                 "csv": out / f"{stem}_levels.csv"}
        paths["json"].write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        paths["txt"].write_text(self.table())
        lk = self.level_k
        rows = ["level,count,prec,mrr"] + [
            f"{lv},{self.level_counts[lv]},{self.per_level[lv][f'Prec@{lk}']:.2f},"
            f"{self.per_level[lv][f'MRR@{lk}']:.2f}"
            for lv in sorted(self.per_level)
        ]
        paths["csv"].write_text("\n".join(rows) + "\n")
        return paths


def _rank_all(recommender, prefixes: list[tuple[int, ...]], k: int) -> list[list[int]]:
    batch = getattr(recommender, "predict_topk_batch", None)
    if batch is not None:
        return batch(prefixes, k)
    return [recommender.predict_topk(p, k) for p in prefixes]


def evaluate(recommender, sessions: Sequence[Session], ks: Sequence[int], catalog: ItemCatalog,
             model: str = "model", max_len: int = 19, level_k: int | None = None,
             meta: dict | None = None) -> EvalReport:
    """Average Prec@k / MRR@k (percent, 2 decimals) over ``sessions``.

    The per-level breakdown groups sessions by the price level of their label.
    """
    if not sessions:
        raise ValueError("cannot evaluate on an empty session list")
    ks = sorted(set(int(k) for k in ks))
    level_k = level_k or (20 if 20 in ks else ks[-1])
    kmax = max(ks + [level_k])
    ranked = _rank_all(recommender, [s.model_input(max_len) for s in sessions], kmax)

    sums = {f"{m}@{k}": 0.0 for k in ks for m in ("Prec", "MRR")}
    level_sums: dict[int, list[float]] = {}
    for s, ranks in zip(sessions, ranked):
        for k in ks:
            sums[f"Prec@{k}"] += prec_at_k(ranks, s.label, k)
            sums[f"MRR@{k}"] += mrr_at_k(ranks, s.label, k)
        level = catalog.levels[s.label] if catalog.levels else 0
        acc = level_sums.setdefault(level, [0.0, 0.0, 0])
        acc[0] += prec_at_k(ranks, s.label, level_k)
        acc[1] += mrr_at_k(ranks, s.label, level_k)
        acc[2] += 1

    n = len(sessions)
    overall = {key: round(100.0 * v / n, 2) for key, v in sums.items()}
    per_level = {
        lv: {f"Prec@{level_k}": round(100.0 * a[0] / a[2], 2),
             f"MRR@{level_k}": round(100.0 * a[1] / a[2], 2)}
        for lv, a in level_sums.items()
    }
    counts = {lv: int(a[2]) for lv, a in level_sums.items()}
    return EvalReport(model, ks, n, overall, level_k, per_level, counts, dict(meta or {}))
