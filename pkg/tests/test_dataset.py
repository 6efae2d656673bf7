import json
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grouplatent.dataset import (
    DemographicSchema,
    GroupSelector,
    LatentDataset,
    Standardizer,
    apply_standardizer,
    dataset_from_bytes,
    dataset_to_bytes,
    fit_standardizer,
    load_dataset,
    make_batches,
    save_dataset,
    save_dataset_jsonl,
    select_group,
    split_dataset,
    synth_toy_dataset,
)
from grouplatent.errors import EmptyGroupError, FormatError, ValidationError

HEADER = struct.calcsize("<4sIIQHI")


# -- schema and selectors ---------------------------------------------------


def test_schema_rejects_single_valued_axis():
    with pytest.raises(ValidationError):
        DemographicSchema((("gender", ("male",)),))


def test_schema_json_round_trip(schema):
    assert DemographicSchema.from_json(json.loads(json.dumps(schema.to_json()))) == schema
    assert schema.combinations() == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_with_unknown_appends_reserved_value(schema):
    ext = schema.with_unknown()
    assert ext.sizes() == [3, 3]
    assert ext.values("race")[-1] == "?unknown"


def test_empty_selector_selects_everything(toy):
    assert GroupSelector.parse("").mask(toy).all()
    assert len(select_group(toy, GroupSelector(()))) == len(toy)


def test_selector_unknown_axis_or_value(schema):
    with pytest.raises(ValidationError):
        GroupSelector.parse("age=old").validate(schema)
    with pytest.raises(ValidationError):
        GroupSelector.parse("gender=robot").validate(schema)
    with pytest.raises(ValidationError):
        GroupSelector.parse("gender")


def test_selector_conjunction_counts(schema):
    ds, _ = synth_toy_dataset(schema, 500, 8, 64, 4.0, seed=7)
    train, test = split_dataset(ds, 0.25, seed=1)
    sel = GroupSelector.parse("gender=female,race=hispanic")
    assert sel.mask(ds).sum() == 500
    assert sel.mask(train).sum() == 375 and sel.mask(test).sum() == 125


def test_select_group_empty_raises(toy, schema):
    sub = select_group(toy, GroupSelector.parse("gender=male"))
    with pytest.raises(EmptyGroupError):
        select_group(sub, GroupSelector.parse("gender=female"))


# -- dataset invariants -----------------------------------------------------


def test_dataset_validates_labels_and_ids(schema):
    v = np.zeros((3, 4))
    with pytest.raises(ValidationError):
        LatentDataset(schema, v, [[0, 0], [0, 2], [1, 1]], None)
    with pytest.raises(ValidationError):
        LatentDataset(schema, v, [[0, 0]] * 3, [1, 1, 2])
    with pytest.raises(ValidationError):
        LatentDataset(schema, np.zeros((0, 4)), np.zeros((0, 2)), None)
    bad = v.copy()
    bad[1, 2] = np.nan
    with pytest.raises(ValidationError, match="record 1"):
        LatentDataset(schema, bad, [[0, 0]] * 3, None)


def test_dataset_arrays_read_only(toy):
    with pytest.raises(ValueError):
        toy.vectors[0, 0] = 1.0


# -- persistence ------------------------------------------------------------


finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(1, 12),
    d=st.integers(1, 9),
    data=st.data(),
)
def test_latd_round_trip_property(n, d, data):
    schema = DemographicSchema((("a", ("x", "y", "z")), ("b", ("p", "q"))))
    vec = np.array(data.draw(st.lists(finite32, min_size=n * d, max_size=n * d)), dtype=np.float64).reshape(n, d)
    a = data.draw(st.lists(st.integers(0, 2), min_size=n, max_size=n))
    b = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    ids = data.draw(st.lists(st.integers(0, 2**64 - 1), min_size=n, max_size=n, unique=True))
    ds = LatentDataset(schema, vec, np.column_stack([a, b]), np.array(ids, dtype=np.uint64))
    back = dataset_from_bytes(dataset_to_bytes(ds))
    assert back.equals(ds)


def test_save_is_deterministic_and_sized(tmp_path, schema):
    ds, _ = synth_toy_dataset(schema, 1000, 8, 64, 4.0, seed=0)
    p1, p2 = tmp_path / "a.latd", tmp_path / "b.latd"
    save_dataset(ds, p1)
    save_dataset(ds, p2)
    assert p1.read_bytes() == p2.read_bytes()
    schema_len = len(schema.to_bytes())
    assert p1.stat().st_size == HEADER + schema_len + 4000 * 64 * 4 + 4000 * 2 * 2 + 4000 * 8
    back = load_dataset(p1)
    assert len(back) == 4000 and back.dim == 64
    assert back.equals(ds)


def test_truncated_or_corrupt_latd(tmp_path, toy):
    buf = dataset_to_bytes(toy)
    with pytest.raises(FormatError):
        dataset_from_bytes(buf[:-3])
    with pytest.raises(FormatError):
        dataset_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(FormatError):
        dataset_from_bytes(buf[:10])


def test_jsonl_round_trip_and_dim_check(tmp_path, toy):
    path = tmp_path / "d.jsonl"
    save_dataset_jsonl(toy, path)
    assert load_dataset(path).equals(toy)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["vector"] = rec["vector"][:-1]
    lines[0] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_jsonl_declared_dim_mismatch(tmp_path, toy):
    path = tmp_path / "d.jsonl"
    save_dataset_jsonl(toy, path)
    side = json.loads((tmp_path / "d.jsonl.schema.json").read_text())
    side["dim"] = toy.dim + 1
    (tmp_path / "d.jsonl.schema.json").write_text(json.dumps(side))
    with pytest.raises(ValidationError, match="declared dim"):
        load_dataset(path)


def test_unknown_file_kind(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"\x00\x01\x02\x03")
    with pytest.raises(FormatError):
        load_dataset(p)


# -- toy generator ----------------------------------------------------------


def test_toy_counts_and_determinism(schema):
    ds, truth = synth_toy_dataset(schema, 500, 8, 64, 4.0, seed=7)
    assert len(ds) == 2000
    _, counts = np.unique(ds.group_keys(), return_counts=True)
    assert counts.tolist() == [500] * 4
    again, _ = synth_toy_dataset(schema, 500, 8, 64, 4.0, seed=7)
    assert again.equals(ds)
    assert np.allclose(truth.mixing.T @ truth.mixing, np.eye(8))


def test_toy_zero_separation_has_equal_means(schema):
    _, truth = synth_toy_dataset(schema, 10, 4, 8, 0.0, seed=0)
    assert np.all(truth.means == 0.0)


def test_toy_semantic_means(schema):
    _, truth = synth_toy_dataset(schema, 5, 4, 8, 4.0, seed=0)
    # (gender=female, race=white) sits at +2 on coordinate 0 and -2 on coordinate 1
    np.testing.assert_array_equal(truth.means[2], [2.0, -2.0, 0.0, 0.0])


def test_toy_rejects_bad_dims(schema):
    with pytest.raises(ValidationError):
        synth_toy_dataset(schema, 5, 8, 4, 1.0, seed=0)
    with pytest.raises(ValidationError):
        synth_toy_dataset(schema, 5, 4, 8, -1.0, seed=0)


# -- split ------------------------------------------------------------------


def test_split_stratified_arithmetic(schema):
    ds, _ = synth_toy_dataset(schema, 500, 8, 64, 4.0, seed=7)
    train, test = split_dataset(ds, 0.25, seed=3)
    assert (len(train), len(test)) == (1500, 500)
    _, counts = np.unique(test.group_keys(), return_counts=True)
    assert counts.tolist() == [125] * 4
    assert set(train.ids.tolist()).isdisjoint(test.ids.tolist())
    t2, s2 = split_dataset(ds, 0.25, seed=3)
    assert t2.equals(train) and s2.equals(test)


def test_split_keeps_one_train_record(schema):
    ds, _ = synth_toy_dataset(schema, 10, 4, 8, 1.0, seed=0)
    train, _ = split_dataset(ds, 0.999, seed=0)
    _, counts = np.unique(train.group_keys(), return_counts=True)
    assert counts.min() >= 1 and len(counts) == 4


def test_split_tiny_group_named(schema):
    ds = LatentDataset(schema, np.eye(3), [[0, 0], [0, 0], [1, 1]], None)
    with pytest.raises(ValidationError, match="gender=female,race=hispanic"):
        split_dataset(ds, 0.5, seed=0)


# -- batching ---------------------------------------------------------------


def test_batches_sizes_and_permutation():
    batches = make_batches(10, 4, seed=0, epoch=0)
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))
    again = make_batches(10, 4, seed=0, epoch=0)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    other = make_batches(10, 4, seed=0, epoch=1)
    assert not all(np.array_equal(a, b) for a, b in zip(batches, other))


def test_batches_drop_singleton_tail():
    assert [len(b) for b in make_batches(9, 4, 0, 0)] == [4, 4]
    with pytest.raises(ValidationError):
        make_batches(9, 1, 0, 0)


# -- standardizer -----------------------------------------------------------


def test_standardizer_constant_column_floored():
    X = np.full((5, 2), 3.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        st_ = fit_standardizer(X)
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    np.testing.assert_array_equal(st_.mean, [3.0, 3.0])
    np.testing.assert_array_equal(st_.scale, [1e-8, 1e-8])


def test_standardizer_round_trip(toy):
    st_ = fit_standardizer(toy)
    back = apply_standardizer(st_, apply_standardizer(st_, toy), "inverse")
    np.testing.assert_allclose(back.vectors, toy.vectors, atol=1e-10)


def test_standardizer_unit_scale_on_normal_columns(rng):
    st_ = fit_standardizer(rng.standard_normal((2000, 16)))
    assert np.all((st_.scale > 0.95) & (st_.scale < 1.05))
    assert isinstance(st_, Standardizer)
