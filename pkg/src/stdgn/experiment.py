"""Baseline U-Net versus STDGN on a held-out phantom vendor."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from stdgn.data import PhantomParams, generate_phantom_splits
from stdgn.data.types import STRUCTURES
from stdgn.evaluation import EvalRecord, evaluate_dataset, mean_dice, write_records
from stdgn.training import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

METHODS = ("baseline", "stdgn")


@dataclass
class SeedResult:
    seed: int
    seen_vendors: List[str]
    unseen_vendors: List[str]
    records: Dict[str, List[EvalRecord]]
    seconds: float = 0.0
    # trained models and histories; kept in memory only
    train_result: Optional[TrainResult] = field(default=None, repr=False)

    def dice(self, method: str, vendors: Sequence[str], structure: Optional[str] = None) -> float:
        recs = [
            r for r in self.records[method]
            if r.vendor_id in vendors and (structure is None or r.structure == structure)
        ]
        return mean_dice(recs)

    def seen(self, method: str) -> float:
        return self.dice(method, self.seen_vendors)

    def unseen(self, method: str) -> float:
        return self.dice(method, self.unseen_vendors)


@dataclass
class ComparisonReport:
    seeds: List[SeedResult] = field(default_factory=list)

    @property
    def rows(self) -> List[Dict[str, object]]:
        """One row per (method, structure): unseen-vendor Dice averaged over seeds."""
        out = []
        for method in METHODS:
            for structure in STRUCTURES.values():
                per_seed = [s.dice(method, s.unseen_vendors, structure) for s in self.seeds]
                out.append({
                    "method": method,
                    "structure": structure,
                    "seeds": len(per_seed),
                    "dice_mean": float(np.mean(per_seed)),
                    "dice_std": float(np.std(per_seed)),
                })
        return out

    def seed_summary(self) -> List[Dict[str, object]]:
        return [
            {
                "seed": s.seed,
                **{f"{m}_seen": s.seen(m) for m in METHODS},
                **{f"{m}_unseen": s.unseen(m) for m in METHODS},
                "stdgn_wins": s.unseen("stdgn") >= s.unseen("baseline"),
                "seconds": s.seconds,
            }
            for s in self.seeds
        ]

    def stdgn_wins(self) -> int:
        return sum(s.unseen("stdgn") >= s.unseen("baseline") for s in self.seeds)

    def seen_exceeds_unseen(self) -> bool:
        return all(s.seen(m) > s.unseen(m) for s in self.seeds for m in METHODS)

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"comparison": out / "comparison.csv", "seeds": out / "seeds.csv"}
        for key, rows in (("comparison", self.rows), ("seeds", self.seed_summary())):
            with paths[key].open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return paths


def run_seed(
    config: TrainConfig,
    seed: int,
    phantom: Optional[PhantomParams] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> SeedResult:
    """Train both methods on one phantom draw and evaluate them on its test split."""
    start = time.perf_counter()
    config = replace(config, seed=seed)
    phantom = replace(phantom or PhantomParams(image_size=config.image_size), seed=seed)
    splits = generate_phantom_splits(phantom)
    train_ds, test_ds = splits["train"], splits["test"]
    seen = [info.vendor_id for info in train_ds.domain_registry.values() if info.labeled]
    present = {info.vendor_id for info in train_ds.domain_registry.values()}
    unseen = sorted({info.vendor_id for info in test_ds.domain_registry.values()} - present)
    if not unseen:
        raise ValueError("test split has no vendor absent from training")
    run_dir = Path(out_dir) / f"seed{seed}" if out_dir is not None else None
    result = train(config, train_ds, splits.get("val"), run_dir)
    records = {
        "baseline": evaluate_dataset(result.baseline, test_ds),
        "stdgn": evaluate_dataset(result.trainer.models.generator, test_ds),
    }
    if run_dir is not None:
        for method, recs in records.items():
            write_records(recs, run_dir / f"records_{method}.csv")
    elapsed = time.perf_counter() - start
    log.info("seed %d finished in %.0f s", seed, elapsed)
    return SeedResult(seed, seen, unseen, records, elapsed, result)


def reproduce_generalization_experiment(
    config: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    phantom: Optional[PhantomParams] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> ComparisonReport:
    """Train baseline and STDGN per seed, evaluate on the held-out vendor, and tabulate."""
    report = ComparisonReport([run_seed(config, s, phantom, out_dir) for s in seeds])
    if out_dir is not None:
        report.write(out_dir)
    return report
