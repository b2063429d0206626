"""Desk-scale ground truth: explicit joint tables with known structure.

A toy joint stores the full probability table over every attribute
combination, so marginals and bivariates are analytic, infeasible
combinations (probability exactly zero) are placed deliberately, and drawn
populations have a known generating measure.  The module also recomputes
every evaluation metric with naive nested loops — no hashing, no shared
arithmetic with the metrics module — to serve as an independent oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .metrics import CategoricalDistribution
from .schema import AttributeSchema, Population

__all__ = [
    "ToyJointSpec",
    "default_toy_joint",
    "sample_toy_population",
    "exact_marginals",
    "exact_bivariate",
    "exact_bivariates",
    "brute_force_metrics",
]

_MAX_ATTRIBUTES = 4
_MAX_CATEGORIES = 12
_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ToyJointSpec:
    """Explicit joint over all combinations of a small schema.

    ``probs`` is flat in row-major combination order (last attribute fastest).
    ``forbidden`` lists combinations (global-index records) whose probability
    is exactly zero by construction.
    """

    schema: AttributeSchema
    probs: np.ndarray
    forbidden: frozenset[tuple[int, ...]] = frozenset()

    def __post_init__(self) -> None:
        if self.schema.num_attributes > _MAX_ATTRIBUTES:
            raise ValueError(f"toy joints support at most {_MAX_ATTRIBUTES} attributes")
        if self.schema.num_categories > _MAX_CATEGORIES:
            raise ValueError(f"toy joints support at most {_MAX_CATEGORIES} categories")
        p = np.asarray(self.probs, dtype=np.float64).ravel()
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "forbidden", frozenset(self.forbidden))
        if p.size != self.num_combinations:
            raise ValueError(
                f"need {self.num_combinations} probabilities, got {p.size}"
            )
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        for record in self.forbidden:
            self.schema.validate_record(record)
            if p[self.combination_index(record)] != 0.0:
                raise ValueError(
                    f"forbidden combination {record} has non-zero probability"
                )

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.schema.categories)

    @property
    def num_combinations(self) -> int:
        return int(np.prod(self.sizes))

    def combination_index(self, record: tuple[int, ...]) -> int:
        """Row-major index of a record (given as global category indices)."""
        index = 0
        for (start, _), size, g in zip(self.schema.spans, self.sizes, record):
            index = index * size + (g - start)
        return index

    def all_records(self) -> list[tuple[int, ...]]:
        """Every combination as a global-index record, row-major order."""
        starts = [s for s, _ in self.schema.spans]
        return [
            tuple(start + local for start, local in zip(starts, combo))
            for combo in np.ndindex(*self.sizes)
        ]

    def table(self) -> np.ndarray:
        """The joint reshaped to one axis per attribute."""
        return self.probs.reshape(self.sizes)

    def to_json_dict(self) -> dict:
        return {
            "schema": self.schema.to_json_dict(),
            "probabilities": self.probs.tolist(),
            "forbidden": sorted(list(r) for r in self.forbidden),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ToyJointSpec":
        return cls(
            schema=AttributeSchema.from_json_dict(obj["schema"]),
            probs=np.asarray(obj["probabilities"], dtype=np.float64),
            forbidden=frozenset(tuple(r) for r in obj.get("forbidden", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ToyJointSpec":
        return cls.from_json_dict(json.loads(text))


def default_toy_joint() -> ToyJointSpec:
    """A 4x3x2 joint (24 combinations) with correlations and 4 forbidden cells.

    Children never own a vehicle and never earn a high income — those four
    combinations carry probability exactly 0.  Several senior/high-income
    cells are deliberately rare so that small subsamples miss combinations
    that do exist in larger draws.
    """
    schema = AttributeSchema(
        names=("age", "income", "vehicle"),
        categories=(
            ("child", "young", "adult", "senior"),
            ("low", "mid", "high"),
            ("none", "car"),
        ),
    )
    age = np.array([0.22, 0.30, 0.30, 0.18])
    income = np.array([0.40, 0.42, 0.18])
    vehicle = np.array([0.55, 0.45])
    table = age[:, None, None] * income[None, :, None] * vehicle[None, None, :]

    def boost(factor, age_i=None, income_i=None, vehicle_i=None):
        sel = (
            slice(None) if age_i is None else age_i,
            slice(None) if income_i is None else income_i,
            slice(None) if vehicle_i is None else vehicle_i,
        )
        table[sel] *= factor

    # age-income correlation
    boost(1.8, age_i=0, income_i=0)   # children: low income dominates
    boost(1.4, age_i=1, income_i=1)
    boost(0.40, age_i=1, income_i=2)  # young high earners rare
    boost(0.60, age_i=2, income_i=0)
    boost(2.40, age_i=2, income_i=2)  # adults dominate high income
    boost(1.6, age_i=3, income_i=0)
    boost(0.25, age_i=3, income_i=2)  # senior high earners very rare
    # income-vehicle correlation
    boost(1.5, income_i=0, vehicle_i=0)
    boost(0.6, income_i=0, vehicle_i=1)
    boost(1.9, income_i=2, vehicle_i=1)
    # age-vehicle correlation
    boost(1.3, age_i=2, vehicle_i=1)
    boost(0.5, age_i=3, vehicle_i=1)  # seniors rarely drive

    forbidden = (
        (0, 4, 8),  # child, low, car
        (0, 5, 8),  # child, mid, car
        (0, 6, 8),  # child, high, car
        (0, 6, 7),  # child, high, none
    )
    starts = [s for s, _ in schema.spans]
    for record in forbidden:
        local = tuple(g - s for g, s in zip(record, starts))
        table[local] = 0.0
    table /= table.sum()
    return ToyJointSpec(
        schema=schema, probs=table.ravel(), forbidden=frozenset(forbidden)
    )


def sample_toy_population(spec: ToyJointSpec, n: int, seed: int) -> Population:
    """n i.i.d. draws via inverse CDF; zero-probability cells are unreachable."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cdf = np.cumsum(spec.probs)
    cdf[-1] = 1.0  # guard against cumulative rounding
    u = np.random.default_rng(seed).random(n)
    cells = np.searchsorted(cdf, u, side="right")
    records = spec.all_records()
    return Population(
        schema=spec.schema, records=tuple(records[int(c)] for c in cells)
    )


def exact_marginals(spec: ToyJointSpec) -> CategoricalDistribution:
    """Analytic per-category marginals, all attributes stacked (K cells)."""
    table = spec.table()
    d = spec.schema.num_attributes
    blocks = []
    for axis in range(d):
        other = tuple(a for a in range(d) if a != axis)
        blocks.append(table.sum(axis=other))
    return CategoricalDistribution(
        structure=("marginal", spec.sizes),
        proportions=np.concatenate(blocks),
    )


def exact_bivariate(spec: ToyJointSpec, attr_i: int, attr_j: int) -> CategoricalDistribution:
    """Analytic joint of one attribute pair, row-major (K_i * K_j,)."""
    d = spec.schema.num_attributes
    if attr_i == attr_j:
        raise ValueError("bivariate needs two distinct attributes")
    if not (0 <= attr_i < d and 0 <= attr_j < d):
        raise ValueError(f"attribute index out of range for D={d}")
    table = spec.table()
    other = tuple(a for a in range(d) if a not in (attr_i, attr_j))
    pair = table.sum(axis=other)
    if attr_j < attr_i:
        pair = pair.T
    sizes = spec.sizes
    return CategoricalDistribution(
        structure=("bivariate", attr_i, attr_j, sizes[attr_i], sizes[attr_j]),
        proportions=pair.ravel(),
    )


def exact_bivariates(spec: ToyJointSpec) -> dict[tuple[int, int], CategoricalDistribution]:
    """Analytic bivariates for every attribute pair i < j."""
    d = spec.schema.num_attributes
    return {
        (i, j): exact_bivariate(spec, i, j)
        for i in range(d)
        for j in range(i + 1, d)
    }


def brute_force_metrics(reference: Population, generated: Population) -> dict:
    """Naive recomputation of every comparison metric, for cross-checking.

    Quadratic membership scans and handwritten counting loops only — no sets,
    no numpy counting — so it shares no arithmetic path with the metrics
    module.  Intended for populations of at most ~1000 records.
    """
    if len(reference) == 0 or len(generated) == 0:
        raise ValueError("populations must be non-empty")
    schema = reference.schema
    n, m = len(reference), len(generated)

    precision_hits = 0
    for g in generated.records:
        for r in reference.records:
            if g == r:
                precision_hits += 1
                break
    precision_value = precision_hits / m

    recall_hits = 0
    for r in reference.records:
        for g in generated.records:
            if r == g:
                recall_hits += 1
                break
    recall_value = recall_hits / n

    if precision_value + recall_value == 0.0:
        f1_value = 0.0
    else:
        f1_value = (
            2.0 * precision_value * recall_value / (precision_value + recall_value)
        )

    k = schema.num_categories
    ref_marginal = [0.0] * k
    gen_marginal = [0.0] * k
    for rec in reference.records:
        for g in rec:
            ref_marginal[g] += 1.0
    for rec in generated.records:
        for g in rec:
            gen_marginal[g] += 1.0
    for c in range(k):
        ref_marginal[c] /= n
        gen_marginal[c] /= m
    square_sum = 0.0
    for c in range(k):
        diff = ref_marginal[c] - gen_marginal[c]
        square_sum += diff * diff
    mean_ref = 0.0
    for c in range(k):
        mean_ref += ref_marginal[c]
    mean_ref /= k
    marginal_srmse = math.sqrt(square_sum / k) / mean_ref

    d = schema.num_attributes
    pair_values = []
    for i in range(d):
        for j in range(i + 1, d):
            start_i, stop_i = schema.spans[i]
            start_j, stop_j = schema.spans[j]
            k_i, k_j = stop_i - start_i, stop_j - start_j
            ref_pair = [[0.0] * k_j for _ in range(k_i)]
            gen_pair = [[0.0] * k_j for _ in range(k_i)]
            for rec in reference.records:
                ref_pair[rec[i] - start_i][rec[j] - start_j] += 1.0
            for rec in generated.records:
                gen_pair[rec[i] - start_i][rec[j] - start_j] += 1.0
            square_sum = 0.0
            mean_ref = 0.0
            for a in range(k_i):
                for b in range(k_j):
                    rp = ref_pair[a][b] / n
                    gp = gen_pair[a][b] / m
                    diff = rp - gp
                    square_sum += diff * diff
                    mean_ref += rp
            cells = k_i * k_j
            mean_ref /= cells
            pair_values.append(math.sqrt(square_sum / cells) / mean_ref)
    if pair_values:
        bivariate_srmse = 0.0
        for v in pair_values:
            bivariate_srmse += v
        bivariate_srmse /= len(pair_values)
    else:
        bivariate_srmse = None

    return {
        "precision": precision_value,
        "recall": recall_value,
        "f1": f1_value,
        "marginal_srmse": marginal_srmse,
        "bivariate_srmse": bivariate_srmse,
        "bivariate_pair_srmse": pair_values,
    }
