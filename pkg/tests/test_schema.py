from __future__ import annotations

import pytest

from adinstall.errors import SchemaError
from adinstall.schema import FeatureSchema, parse_delimiter, read_schema_file, write_schema_file


def simple_schema(**kwargs) -> FeatureSchema:
    return FeatureSchema(
        columns=(
            ("f_0", "row_id"),
            ("f_1", "ignore"),
            ("f_2", "categorical"),
            ("f_3", "binary"),
            ("f_4", "numerical"),
            ("is_installed", "label"),
        ),
        **kwargs,
    )


def test_roles_partition_and_lookup():
    s = simple_schema()
    assert s.names() == ("f_0", "f_1", "f_2", "f_3", "f_4", "is_installed")
    assert s.role_of("f_2") == "categorical"
    assert s.feature_names() == ("f_2", "f_3", "f_4")
    assert s.label_names == ("is_installed",)


def test_duplicate_names_rejected():
    with pytest.raises(SchemaError, match="duplicate"):
        FeatureSchema(columns=(("a", "categorical"), ("a", "binary"), ("l", "label")))


def test_unknown_role_rejected():
    with pytest.raises(SchemaError, match="unknown role"):
        FeatureSchema(columns=(("a", "wibble"), ("l", "label")))


def test_schema_without_features_rejected():
    with pytest.raises(SchemaError, match="no feature columns"):
        FeatureSchema(columns=(("id", "row_id"), ("l", "label")))


def test_multichar_delimiter_rejected():
    with pytest.raises(SchemaError, match="single character"):
        simple_schema(delimiter="::")


def test_label_free_schema_is_constructible_but_flagged():
    s = simple_schema().without_labels()
    assert s.label_names == ()
    with pytest.raises(SchemaError, match="labels are required"):
        s.require_labels()


def test_drop_unknown_column():
    with pytest.raises(SchemaError, match="unknown"):
        simple_schema().drop(["nope"])


@pytest.mark.parametrize(
    "text,expected",
    [("tab", "\t"), ("comma", ","), ("\\t", "\t"), (";", ";"), ("|", "|")],
)
def test_parse_delimiter(text, expected):
    assert parse_delimiter(text) == expected


def test_schema_file_round_trip(tmp_path):
    s = simple_schema(delimiter=",", has_header=False)
    path = tmp_path / "schema.txt"
    write_schema_file(s, path)
    assert read_schema_file(path) == s


def test_schema_file_comments_and_errors(tmp_path):
    path = tmp_path / "schema.txt"
    path.write_text("# comment\ndelimiter = tab\nhas_header = true\nf_2 = categorical\nl = label\n")
    s = read_schema_file(path)
    assert s.delimiter == "\t" and s.has_header
    path.write_text("f_2 categorical\n")
    with pytest.raises(SchemaError, match="expected 'name = role'"):
        read_schema_file(path)
    path.write_text("has_header = maybe\nf_2 = categorical\n")
    with pytest.raises(SchemaError, match="has_header"):
        read_schema_file(path)
