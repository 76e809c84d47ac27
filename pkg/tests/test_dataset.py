import numpy as np
import pytest

from wtcformer.dataset import (
    DataPoint, SyntheticSpec, TimeSeriesFile, dataset_stats, generate_synthetic, load_corpus,
    load_yahoo_csv, synthesize, write_corpus, write_csv,
)
from wtcformer.errors import ConfigError, ContractError, IntegrityError, ParseError


def _write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_two_rows_map_directly(tmp_path):
    p = _write(tmp_path, "timestamp,value,is_anomaly\n1,83.0,0\n2,605.0,1\n")
    f = load_yahoo_csv(p)
    assert f.file_id == "s"
    assert [pt.value for pt in f.points] == [83.0, 605.0]
    assert [pt.is_anomaly for pt in f.points] == [False, True]
    assert not f.typed


def test_column_order_is_free(tmp_path):
    p = _write(tmp_path, "is_anomaly,value,timestamp\n0,1.5,10\n1,2.5,11\n")
    f = load_yahoo_csv(p)
    assert [(pt.timestamp, pt.value, pt.is_anomaly) for pt in f.points] == [(10, 1.5, False), (11, 2.5, True)]


def test_empty_data_section_is_integrity_error(tmp_path):
    with pytest.raises(IntegrityError):
        load_yahoo_csv(_write(tmp_path, "timestamp,value,is_anomaly\n"))


@pytest.mark.parametrize("row, fragment", [
    ("1,abc,0", "non-numeric"),
    ("x,1.0,0", "non-integer"),
    ("1,1.0,2", "is_anomaly"),
    ("1,1.0", "fields"),
    ("1,nan,0", "non-finite"),
])
def test_malformed_rows_report_line(tmp_path, row, fragment):
    p = _write(tmp_path, "timestamp,value,is_anomaly\n0,1.0,0\n" + row + "\n")
    with pytest.raises(ParseError) as info:
        load_yahoo_csv(p)
    assert info.value.line == 3
    assert fragment in str(info.value)
    assert str(info.value).startswith(f"{p}:3:")


def test_missing_column_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        load_yahoo_csv(_write(tmp_path, "timestamp,value\n1,2\n"))


def test_non_increasing_timestamps_rejected(tmp_path):
    with pytest.raises(IntegrityError):
        load_yahoo_csv(_write(tmp_path, "timestamp,value,is_anomaly\n2,1,0\n2,1,0\n"))


def test_type_on_normal_point_rejected(tmp_path):
    p = _write(tmp_path, "timestamp,value,is_anomaly,anomaly_type\n1,1,0,point\n")
    with pytest.raises(ParseError):
        load_yahoo_csv(p)
    with pytest.raises(ContractError):
        DataPoint(1, 1.0, False, "point")


def test_generated_file_round_trips(tmp_path):
    f = generate_synthetic(SyntheticSpec(num_files=1, points_per_file=1500, seed=5))[0]
    assert len(f) == 1500
    path = tmp_path / "one.csv"
    write_csv(f, path)
    back = load_yahoo_csv(path)
    assert back.points == f.points
    assert back.file_id == "one"


def test_corpus_round_trip_sorted(tmp_path):
    files = generate_synthetic(SyntheticSpec(num_files=3, points_per_file=200))
    write_corpus(files, tmp_path)
    loaded = load_corpus(tmp_path)
    assert [f.file_id for f in loaded] == sorted(f.file_id for f in files)
    assert all(a.points == b.points for a, b in zip(loaded, files))


def test_zero_rates_give_no_anomalies():
    spec = SyntheticSpec(num_files=3, points_per_file=400, point_rate=0.0,
                         contextual_rate=0.0, collective_rate=0.0)
    assert dataset_stats(generate_synthetic(spec)).anomalous_points == 0


def test_same_spec_is_bit_identical():
    spec = SyntheticSpec(num_files=4, points_per_file=300, seed=11)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert all(x.points == y.points for x, y in zip(a, b))
    assert [f.values.tobytes() for f in a] == [f.values.tobytes() for f in b]


def test_different_seed_differs():
    a = generate_synthetic(SyntheticSpec(num_files=1, points_per_file=300, seed=1))[0]
    b = generate_synthetic(SyntheticSpec(num_files=1, points_per_file=300, seed=2))[0]
    assert not np.array_equal(a.values, b.values)


def test_benchmark_corpus_size_and_fraction():
    spec = SyntheticSpec()
    stats = dataset_stats(generate_synthetic(spec))
    assert stats.num_files == 67
    assert stats.total_points == 100500
    assert abs(stats.anomalous_fraction - spec.total_rate) <= 0.2 * spec.total_rate


def test_stats_match_injection_log():
    files, events = synthesize(SyntheticSpec(num_files=10, points_per_file=600, seed=3))
    stats = dataset_stats(files)
    by_type = {}
    for e in events:
        by_type[e.kind] = by_type.get(e.kind, 0) + e.length
    assert stats.by_type == dict(sorted(by_type.items()))
    assert stats.anomalous_points == sum(e.length for e in events)
    # every logged span is flagged with its own type
    series = {f.file_id: f for f in files}
    for e in events:
        pts = series[e.file_id].points[e.start : e.start + e.length]
        assert all(p.is_anomaly and p.anomaly_type == e.kind for p in pts)


def test_all_three_types_present():
    stats = dataset_stats(generate_synthetic(SyntheticSpec(num_files=10)))
    assert set(stats.by_type) == {"point", "contextual", "collective"}


def test_single_normal_file_fraction_zero():
    f = TimeSeriesFile("a", [DataPoint(i, 1.0, False) for i in range(5)])
    assert dataset_stats([f]).anomalous_fraction == 0.0


def test_point_spikes_leave_the_envelope():
    spec = SyntheticSpec(num_files=5, seed=9)
    files, events = synthesize(spec)
    series = {f.file_id: f for f in files}
    for e in (e for e in events if e.kind == "point"):
        v = series[e.file_id].values
        others = np.delete(v, e.start)
        # the spike is outside the range of the local normal neighbourhood
        near = others[max(0, e.start - 30) : e.start + 30]
        assert v[e.start] > near.max() or v[e.start] < near.min()


@pytest.mark.parametrize("override", [
    {"point_rate": 0.15, "contextual_rate": 0.1},
    {"points_per_file": 100},
    {"point_magnitude": 3.0},
    {"collective_length": (5, 2)},
])
def test_invalid_specs_rejected(override):
    with pytest.raises(ConfigError):
        SyntheticSpec(**override).validate()


def test_spec_dict_round_trip_and_unknown_keys():
    spec = SyntheticSpec(seed=4, collective_length=(3, 9))
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError):
        SyntheticSpec.from_dict({"bogus": 1})
