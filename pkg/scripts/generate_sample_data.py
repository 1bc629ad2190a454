#!/usr/bin/env python3
"""
Sample data generator for trying out the IDFF toolkit.

Writes every toy distribution and both attractor trajectories into one
directory so the CLI can be exercised without extra setup.
"""

import argparse
from pathlib import Path
from typing import List

from src.core.rng import make_rng
from src.data.datasets import (
    Dataset,
    gen_toy2d,
    integrate_attractor,
    standardize,
    subsample,
    write_dataset,
    write_trajectory,
)
from src.data.models import AttractorConfig, AttractorKind, ToyName
from src.utils.logging import setup_logging


class SampleDataGenerator:
    """Generate sample datasets for testing."""

    def __init__(self, out_dir: Path, seed: int = 0):
        self.out_dir = out_dir
        self.rng = make_rng(seed)

    def toy_sets(self, rows: int) -> List[Path]:
        """One file per 2D toy distribution."""
        return [
            write_dataset(gen_toy2d(toy, rows, self.rng), self.out_dir / f"{toy.value}.csv")
            for toy in ToyName
        ]

    def attractors(self, steps: int, every: int = 5) -> List[Path]:
        """Standardized Lorenz and Rossler trajectories of ``steps`` rows each."""
        paths = []
        for kind in AttractorKind:
            cfg = AttractorConfig(kind=kind, steps=1000 + every * steps, burn_in=1000)
            states = subsample(integrate_attractor(cfg), every)[:steps]
            ds, _ = standardize(Dataset(name=kind.value, rows=states))
            paths.append(write_trajectory(ds.rows, self.out_dir / f"{kind.value}.csv", kind.value))
        return paths


def main() -> None:
    """Generate and save sample data."""
    parser = argparse.ArgumentParser(description="Write sample datasets for the IDFF toolkit.")
    parser.add_argument("--out", default="sample_data", help="Output directory")
    parser.add_argument("--rows", type=int, default=4096, help="Rows per toy dataset")
    parser.add_argument("--steps", type=int, default=2000, help="Rows per attractor trajectory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    setup_logging()
    generator = SampleDataGenerator(Path(args.out), args.seed)
    files = generator.toy_sets(args.rows) + generator.attractors(args.steps)

    print("Sample data generation complete!")
    print("Files created:")
    for path in files:
        print(f"- {path}")


if __name__ == "__main__":
    main()
