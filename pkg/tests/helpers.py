"""Shared construction helpers for the test suite."""

import numpy as np

from popdiff.schema import AttributeSchema, Population


def random_schema(rng) -> AttributeSchema:
    num_attributes = int(rng.integers(1, 5))
    sizes = [int(rng.integers(2, 5)) for _ in range(num_attributes)]
    return AttributeSchema(
        names=tuple(f"attr{i}" for i in range(num_attributes)),
        categories=tuple(
            tuple(f"v{i}_{j}" for j in range(k)) for i, k in enumerate(sizes)
        ),
    )


def random_population(schema: AttributeSchema, n: int, rng) -> Population:
    records = []
    for _ in range(n):
        records.append(
            tuple(int(rng.integers(start, stop)) for start, stop in schema.spans)
        )
    return Population(schema=schema, records=tuple(records))


def random_instance(seed: int, max_records: int = 400):
    """A reference/generated population pair over one random small schema."""
    rng = np.random.default_rng(seed)
    schema = random_schema(rng)
    n = int(rng.integers(50, max_records + 1))
    m = int(rng.integers(50, max_records + 1))
    return random_population(schema, n, rng), random_population(schema, m, rng)
