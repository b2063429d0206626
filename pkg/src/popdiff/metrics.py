"""Distributional similarity, feasibility, and diversity metrics.

Similarity is SRMSE between categorical distributions (RMSE over cells
divided by the mean reference proportion).  Feasibility is precision: the
share of generated records whose full attribute combination occurs in the
reference; its complement is the structural-zero rate.  Diversity is recall:
the share of reference records whose combination the generated set covers.
The sampling-zero curve quantifies how much of a population's combination
variety survives subsampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .schema import AttributeSchema, Population

__all__ = [
    "CategoricalDistribution",
    "EvalReport",
    "CurvePoint",
    "marginal_distribution",
    "bivariate_distribution",
    "srmse",
    "precision",
    "recall",
    "f1",
    "unique_combinations",
    "sampling_zero_count",
    "sampling_zero_curve",
    "evaluate_populations",
]

_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CategoricalDistribution:
    """Cell proportions plus a structure tag that must match for comparison.

    Marginal structure: ("marginal", per-attribute category counts) with one
    cell per global category, so each attribute's block sums to 1.  Bivariate
    structure: ("bivariate", i, j, K_i, K_j) with row-major (K_i * K_j,)
    proportions summing to 1.
    """

    structure: tuple
    proportions: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.proportions, dtype=np.float64)
        object.__setattr__(self, "proportions", p)
        if p.ndim != 1:
            raise ValueError("proportions must be a flat vector")
        if np.any(p < 0):
            raise ValueError("proportions must be non-negative")
        kind = self.structure[0]
        if kind == "marginal":
            sizes = self.structure[1]
            if p.size != sum(sizes):
                raise ValueError(
                    f"marginal needs {sum(sizes)} cells, got {p.size}"
                )
            start = 0
            for d, size in enumerate(sizes):
                block = p[start : start + size].sum()
                if abs(block - 1.0) > _SUM_TOL:
                    raise ValueError(
                        f"attribute {d} proportions sum to {block!r}, not 1"
                    )
                start += size
        elif kind == "bivariate":
            _, _, _, k_i, k_j = self.structure
            if p.size != k_i * k_j:
                raise ValueError(f"bivariate needs {k_i * k_j} cells, got {p.size}")
            total = p.sum()
            if abs(total - 1.0) > _SUM_TOL:
                raise ValueError(f"pair proportions sum to {total!r}, not 1")
        else:
            raise ValueError(f"unknown distribution kind {kind!r}")

    @property
    def n_cells(self) -> int:
        return self.proportions.size


def _require_non_empty(pop: Population, role: str) -> None:
    if len(pop) == 0:
        raise ValueError(f"{role} population is empty")


def marginal_distribution(pop: Population) -> CategoricalDistribution:
    """Relative frequency of every global category, all attributes stacked."""
    _require_non_empty(pop, "input")
    schema = pop.schema
    flat = np.asarray(pop.records, dtype=np.int64).ravel()
    counts = np.bincount(flat, minlength=schema.num_categories)
    sizes = tuple(len(c) for c in schema.categories)
    return CategoricalDistribution(
        structure=("marginal", sizes),
        proportions=counts / len(pop),
    )


def bivariate_distribution(
    pop: Population, attr_i: int, attr_j: int
) -> CategoricalDistribution:
    """Joint relative frequencies of one attribute pair, row-major."""
    _require_non_empty(pop, "input")
    schema = pop.schema
    d = schema.num_attributes
    if attr_i == attr_j:
        raise ValueError("bivariate distribution needs two distinct attributes")
    if not (0 <= attr_i < d and 0 <= attr_j < d):
        raise ValueError(f"attribute index out of range for D={d}")
    idx = np.asarray(pop.records, dtype=np.int64)
    start_i, stop_i = schema.spans[attr_i]
    start_j, stop_j = schema.spans[attr_j]
    k_i, k_j = stop_i - start_i, stop_j - start_j
    cells = (idx[:, attr_i] - start_i) * k_j + (idx[:, attr_j] - start_j)
    counts = np.bincount(cells, minlength=k_i * k_j)
    return CategoricalDistribution(
        structure=("bivariate", attr_i, attr_j, k_i, k_j),
        proportions=counts / len(pop),
    )


def srmse(
    reference: CategoricalDistribution, generated: CategoricalDistribution
) -> float:
    """RMSE over cells divided by the mean *reference* proportion."""
    if reference.structure != generated.structure:
        raise ValueError(
            f"distribution structures differ: {reference.structure} vs "
            f"{generated.structure}"
        )
    mean_ref = float(reference.proportions.mean())
    if mean_ref == 0.0:
        raise ValueError("reference distribution is all-zero")
    diff = reference.proportions - generated.proportions
    rmse = math.sqrt(float(np.mean(diff * diff)))
    return rmse / mean_ref


def precision(reference: Population, generated: Population) -> float:
    """Share of generated records whose combination occurs in the reference."""
    _require_non_empty(reference, "reference")
    _require_non_empty(generated, "generated")
    known = set(reference.records)
    hits = sum(1 for r in generated.records if r in known)
    return hits / len(generated)


def recall(reference: Population, generated: Population) -> float:
    """Share of reference records whose combination the generated set covers."""
    _require_non_empty(reference, "reference")
    _require_non_empty(generated, "generated")
    produced = set(generated.records)
    hits = sum(1 for r in reference.records if r in produced)
    return hits / len(reference)


def f1(precision_value: float, recall_value: float) -> float:
    """Harmonic mean; defined as 0 when both inputs are 0."""
    for v in (precision_value, recall_value):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"precision/recall must lie in [0, 1], got {v}")
    total = precision_value + recall_value
    if total == 0.0:
        return 0.0
    return 2.0 * precision_value * recall_value / total


def unique_combinations(pop: Population) -> int:
    return len(set(pop.records))


def sampling_zero_count(
    reference: Population, training: Population, generated: Population
) -> int:
    """Generated combinations present in the reference but absent from
    training — the regenerated-variety count."""
    ref = set(reference.records)
    train = set(training.records)
    gen = set(generated.records)
    return len((gen & ref) - train)


@dataclass(frozen=True)
class CurvePoint:
    rate: float
    combination_share: float
    coverage: float


def sampling_zero_curve(
    reference: Population, rates: list[float], seed: int
) -> list[CurvePoint]:
    """Combination share and record coverage of nested seeded subsamples.

    One seeded permutation is drawn; the subsample at rate r is its first
    ceil(r*N) records, so smaller rates are strict prefixes of larger ones
    and both outputs are non-decreasing in r by construction.
    """
    _require_non_empty(reference, "reference")
    if not rates:
        raise ValueError("need at least one rate")
    for r in rates:
        if not 0.0 < r <= 1.0:
            raise ValueError(f"rate {r} outside (0, 1]")
    n = len(reference)
    records = reference.records
    perm = np.random.default_rng(seed).permutation(n)
    ref_combo_counts: dict[tuple, int] = {}
    for rec in records:
        ref_combo_counts[rec] = ref_combo_counts.get(rec, 0) + 1
    total_unique = len(ref_combo_counts)

    sizes = {r: min(n, max(1, math.ceil(r * n))) for r in rates}
    by_size = sorted(set(sizes.values()))
    share_at: dict[int, float] = {}
    coverage_at: dict[int, float] = {}
    seen: set[tuple] = set()
    covered = 0
    cursor = 0
    for size in by_size:
        while cursor < size:
            rec = records[perm[cursor]]
            if rec not in seen:
                seen.add(rec)
                covered += ref_combo_counts[rec]
            cursor += 1
        share_at[size] = len(seen) / total_unique
        coverage_at[size] = covered / n
    return [
        CurvePoint(rate=r, combination_share=share_at[sizes[r]],
                   coverage=coverage_at[sizes[r]])
        for r in rates
    ]


@dataclass
class EvalReport:
    """Everything the evaluation emits; None fields mean "not computed"."""

    marginal_srmse: float
    bivariate_srmse: float | None
    bivariate_pairs: list[tuple[str, str, float]]
    precision: float
    recall: float
    f1: float
    structural_zero_rate: float
    unique_reference: int
    unique_generated: int
    unique_training: int | None = None
    sampling_zero_count: int | None = None

    def to_json_dict(self) -> dict:
        return {
            "marginal_srmse": self.marginal_srmse,
            "bivariate_srmse": self.bivariate_srmse,
            "bivariate_pairs": [
                {"attribute_a": a, "attribute_b": b, "srmse": v}
                for a, b, v in self.bivariate_pairs
            ],
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "structural_zero_rate": self.structural_zero_rate,
            "unique_combinations": {
                "reference": self.unique_reference,
                "generated": self.unique_generated,
                "training": self.unique_training,
            },
            "sampling_zero_count": self.sampling_zero_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


def _check_same_schema(a: AttributeSchema, b: AttributeSchema) -> None:
    if a.names != b.names:
        extra = set(b.names).symmetric_difference(a.names)
        name = sorted(extra)[0] if extra else a.names[0]
        raise ValueError(f"schema mismatch: attribute {name!r} not shared")
    for n, ca, cb in zip(a.names, a.categories, b.categories):
        if ca != cb:
            raise ValueError(f"schema mismatch: attribute {n!r} categories differ")


def evaluate_populations(
    reference: Population,
    generated: Population,
    training: Population | None = None,
) -> EvalReport:
    """Full similarity/feasibility/diversity report for one generated set."""
    _check_same_schema(reference.schema, generated.schema)
    if training is not None:
        _check_same_schema(reference.schema, training.schema)
    schema = reference.schema
    marg = srmse(marginal_distribution(reference), marginal_distribution(generated))
    pairs: list[tuple[str, str, float]] = []
    d = schema.num_attributes
    for i in range(d):
        for j in range(i + 1, d):
            value = srmse(
                bivariate_distribution(reference, i, j),
                bivariate_distribution(generated, i, j),
            )
            pairs.append((schema.names[i], schema.names[j], value))
    p = precision(reference, generated)
    r = recall(reference, generated)
    return EvalReport(
        marginal_srmse=marg,
        bivariate_srmse=(sum(v for _, _, v in pairs) / len(pairs)) if pairs else None,
        bivariate_pairs=pairs,
        precision=p,
        recall=r,
        f1=f1(p, r),
        structural_zero_rate=1.0 - p,
        unique_reference=unique_combinations(reference),
        unique_generated=unique_combinations(generated),
        unique_training=unique_combinations(training) if training is not None else None,
        sampling_zero_count=(
            sampling_zero_count(reference, training, generated)
            if training is not None
            else None
        ),
    )
