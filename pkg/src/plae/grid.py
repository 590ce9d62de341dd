"""Augmentation grid search.

One fresh PL-AE per transform spec (singles on the diagonal, pairs above it),
all from the same initial seed, each scored by its final probe accuracy.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from plae.augment import GRID_KINDS, Policy, TransformSpec, specs_for_kinds
from plae.train import TrainConfig, train


class GridRunError(RuntimeError):
    pass


@dataclass
class GridResult:
    dataset: str
    kinds: list  # axis labels, catalogue order
    specs: list  # TransformSpec, in run order
    accuracy: dict  # spec name -> final probe accuracy
    label_reads: dict = field(default_factory=dict)  # spec name -> label reads during training

    @property
    def matrix(self) -> np.ndarray:
        """``[k,k]`` accuracies; diagonal = singles, upper triangle = pairs, ``nan`` elsewhere."""
        pos = {k: i for i, k in enumerate(self.kinds)}
        out = np.full((len(self.kinds), len(self.kinds)), np.nan)
        for spec in self.specs:
            i = pos[spec.first.kind]
            j = i if spec.second is None else pos[spec.second.kind]
            out[min(i, j), max(i, j)] = self.accuracy[spec.name]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("," + ",".join(self.kinds) + "\n")
        for name, row in zip(self.kinds, self.matrix):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in row]
            buf.write(name + "," + ",".join(cells) + "\n")
        return buf.getvalue()

    def ranked(self) -> list:
        """``(spec name, accuracy)`` by descending accuracy, ties by spec name."""
        return sorted(self.accuracy.items(), key=lambda kv: (-kv[1], kv[0]))

    def ranked_csv(self) -> str:
        lines = ["rank,spec,accuracy"]
        lines += [f"{i},{name},{acc!r}" for i, (name, acc) in enumerate(self.ranked(), 1)]
        return "\n".join(lines) + "\n"

    def top(self, k: int = 10) -> list:
        return [name for name, _ in self.ranked()[:k]]


def _run_one(args):
    spec, base, epochs, data, test = args
    cfg = replace(base, regime="plae", policy=Policy(spec.name, (spec,), "single"), epochs=epochs, checkpoint_every=0)
    try:
        result = train(cfg, data, test)
    except Exception as e:  # annotate and re-raise
        raise GridRunError(f"grid run for {spec.name!r} failed: {e}") from e
    return spec.name, result.metrics[-1].probe_accuracy, result.label_reads


def grid_search(data, test, base: TrainConfig, kinds, epochs: int = 30, jobs: int = 1, dataset: str | None = None) -> GridResult:
    """Train one PL-AE per single/pair of ``kinds``; every run shares ``base.seeds``."""
    if test is None:
        raise ValueError("grid search needs a test split for probe accuracy")
    kinds = list(kinds)
    specs = specs_for_kinds(kinds)
    work = [(s, base, epochs, data, test) for s in specs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    return GridResult(
        dataset or data.name, kinds, specs,
        {name: acc for name, acc, _ in results},
        {name: reads for name, _, reads in results},
    )


def parse_kinds(text: str) -> list:
    text = text.strip()
    if text.lower() in GRID_KINDS:
        return list(GRID_KINDS[text.lower()])
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    for k in kinds:
        TransformSpec.parse(k)  # validates
    return kinds
