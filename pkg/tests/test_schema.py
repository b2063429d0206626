"""Schema construction, one-hot codec, and population CSV round trips."""

import numpy as np
import pytest

from popdiff.schema import (
    AttributeSchema,
    Population,
    SchemaError,
    UndecodableSample,
    build_schema,
    decode_batch,
    decode_matrix,
    encode_population,
    encode_record,
    load_population_csv,
    save_population_csv,
)


def test_two_column_layout():
    schema = build_schema(
        [["male", "young"], ["female", "old"], ["male", "old"]],
        names=["sex", "age"],
    )
    assert schema.num_attributes == 2
    assert schema.num_categories == 4
    assert schema.spans == ((0, 2), (2, 4))
    assert schema.categories == (("male", "female"), ("young", "old"))


def test_reference_shape_thirteen_attributes():
    # 13 attributes whose category counts sum to 70
    counts = [17, 2, 5, 6, 2, 2, 4, 9, 4, 7, 2, 6, 4]
    assert sum(counts) == 70
    rows = [
        [f"a{d}_v{min(r, c - 1)}" for d, c in enumerate(counts)]
        for r in range(max(counts))
    ]
    schema = build_schema(rows)
    assert schema.num_attributes == 13
    assert schema.num_categories == 70
    assert [len(c) for c in schema.categories] == counts


def test_single_attribute_single_category():
    schema = build_schema([["only"]])
    assert schema.num_attributes == 1
    assert schema.num_categories == 1
    assert schema.spans == ((0, 1),)


def test_category_order_is_first_appearance():
    schema = build_schema([["zebra"], ["apple"], ["zebra"], ["mango"]])
    assert schema.categories == (("zebra", "apple", "mango"),)


def test_build_schema_rejects_bad_tables():
    with pytest.raises(SchemaError):
        build_schema([])
    with pytest.raises(SchemaError, match="row 2"):
        build_schema([["a", "b"], ["a"]])
    with pytest.raises(SchemaError, match="empty value"):
        build_schema([["a", ""]])
    with pytest.raises(SchemaError):
        build_schema([["a"]], names=["x", "y"])


def test_schema_rejects_duplicates():
    with pytest.raises(SchemaError, match="duplicate attribute names"):
        AttributeSchema(names=("x", "x"), categories=(("a",), ("b",)))
    with pytest.raises(SchemaError, match="duplicate categories"):
        AttributeSchema(names=("x",), categories=(("a", "a"),))


@pytest.fixture
def sex_age_schema():
    return AttributeSchema(
        names=("sex", "age"), categories=(("male", "female"), ("young", "old"))
    )


def test_encode_example(sex_age_schema):
    record = sex_age_schema.record_from_labels(["female", "young"])
    matrix = encode_record(record, sex_age_schema)
    assert matrix.tolist() == [[0, 1, 0, 0], [0, 0, 1, 0]]


def test_encoded_rows_sum_to_one(sex_age_schema):
    rng = np.random.default_rng(0)
    for _ in range(50):
        record = tuple(
            int(rng.integers(start, stop)) for start, stop in sex_age_schema.spans
        )
        matrix = encode_record(record, sex_age_schema)
        assert np.array_equal(matrix.sum(axis=1), np.ones(2))


def test_decode_encode_round_trip_1000_random_records():
    schema = build_schema(
        [[f"a{i}", f"b{j}", f"c{k}"] for i in range(4) for j in range(3) for k in range(2)]
    )
    rng = np.random.default_rng(42)
    for _ in range(1000):
        record = tuple(int(rng.integers(start, stop)) for start, stop in schema.spans)
        matrix = encode_record(record, schema)
        assert decode_matrix(matrix, schema, mode="masked") == record
        assert decode_matrix(matrix, schema, mode="global") == record


def test_decode_tie_break_lowest_index(sex_age_schema):
    matrix = np.array([[0.3, 0.3, 0.2, 0.2], [0.0, 0.0, 0.5, 0.5]])
    record = decode_matrix(matrix, sex_age_schema, mode="masked")
    assert record == (0, 2)


def test_global_mode_flags_out_of_span_argmax(sex_age_schema):
    matrix = np.array([[0.1, 0.2, 0.0, 0.9], [0.0, 0.0, 1.0, 0.0]])
    with pytest.raises(UndecodableSample, match="sex"):
        decode_matrix(matrix, sex_age_schema, mode="global")
    # masked mode decodes the same matrix fine
    assert decode_matrix(matrix, sex_age_schema, mode="masked") == (1, 2)


def test_masked_mode_always_decodes(sex_age_schema):
    rng = np.random.default_rng(7)
    matrices = rng.normal(size=(200, 2, 4))
    population, dropped = decode_batch(matrices, sex_age_schema, mode="masked")
    assert dropped == 0
    assert len(population) == 200


def test_decode_batch_counts_undecodable(sex_age_schema):
    matrices = np.zeros((3, 2, 4))
    matrices[0, 0, 0] = matrices[0, 1, 2] = 1.0  # decodable
    matrices[1, 0, 3] = 1.0  # row 0 argmax inside age's span
    matrices[1, 1, 2] = 1.0
    matrices[2, 0, 1] = matrices[2, 1, 3] = 1.0  # decodable
    population, dropped = decode_batch(matrices, sex_age_schema, mode="global")
    assert dropped == 1
    assert len(population) == 2


def test_decode_validates_shape_and_mode(sex_age_schema):
    with pytest.raises(SchemaError):
        decode_matrix(np.zeros((3, 4)), sex_age_schema)
    with pytest.raises(ValueError, match="mode"):
        decode_matrix(np.zeros((2, 4)), sex_age_schema, mode="softmax")


def test_encode_population_shape(sex_age_schema):
    pop = Population(sex_age_schema, ((0, 2), (1, 3), (1, 2)))
    x = encode_population(pop)
    assert x.shape == (3, 2, 4)
    assert np.array_equal(x.sum(axis=2), np.ones((3, 2)))
    assert encode_population(pop, dtype=np.float32).dtype == np.float32


def test_population_validates_records(sex_age_schema):
    with pytest.raises(SchemaError):
        Population(sex_age_schema, ((0, 1),))  # 1 is sex's span, not age's


def test_schema_json_round_trip_and_determinism(sex_age_schema):
    text = sex_age_schema.to_json()
    again = AttributeSchema.from_json(text)
    assert again == sex_age_schema
    assert again.to_json() == text
    rows = [["male", "young"], ["female", "old"]]
    assert build_schema(rows).to_json() == build_schema(rows).to_json()


def test_csv_round_trip(tmp_path, sex_age_schema):
    pop = Population(sex_age_schema, ((0, 2), (1, 3), (0, 3), (1, 2)))
    path = tmp_path / "pop.csv"
    save_population_csv(pop, path)
    again = load_population_csv(path)
    assert again.schema == sex_age_schema
    assert again.records == pop.records
    save_population_csv(again, tmp_path / "pop2.csv")
    assert (tmp_path / "pop2.csv").read_bytes() == path.read_bytes()


def test_csv_unknown_category_names_row_and_attribute(tmp_path, sex_age_schema):
    path = tmp_path / "bad.csv"
    path.write_text("sex,age\nmale,young\nother,old\n")
    with pytest.raises(SchemaError, match=r"row 2.*'other'.*'sex'"):
        load_population_csv(path, schema=sex_age_schema)


def test_csv_header_mismatch(tmp_path, sex_age_schema):
    path = tmp_path / "bad.csv"
    path.write_text("sex,years\nmale,young\n")
    with pytest.raises(SchemaError, match="header"):
        load_population_csv(path, schema=sex_age_schema)


def test_csv_ragged_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("sex,age\nmale,young\nfemale\n")
    with pytest.raises(SchemaError, match="row 2"):
        load_population_csv(path)


def test_csv_missing_and_empty_files(tmp_path):
    with pytest.raises(OSError):
        load_population_csv(tmp_path / "nope.csv")
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SchemaError, match="empty"):
        load_population_csv(empty)
