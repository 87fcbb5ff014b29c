import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrsdwmoe.ingest import (ConfigError, Interactions, ParseError, StreamConfig, binarize,
                             chronological_split, dump_mapping, filter_min_interactions,
                             load_dataset, parse_interactions, parse_text, sample_users,
                             stream_chunks)


def test_parse_sorts_by_timestamp():
    log = parse_text("10,5,4,300\n11,6,3,100\n10,7,5,200\n")
    inter = log.interactions
    assert inter.seq.tolist() == [0, 1, 2]
    # timestamp order: (11,6), (10,7), (10,5); dense ids by first appearance
    assert log.user_ids[inter.user].tolist() == [11, 10, 10]
    assert log.item_ids[inter.item].tolist() == [6, 7, 5]
    assert inter.user.tolist() == [0, 1, 1]
    assert log.ratings.tolist() == [3, 5, 4]


def test_timestamp_ties_keep_input_order():
    log = parse_text("1,1,1,5\n2,2,1,5\n3,3,1,5\n")
    assert log.user_ids.tolist() == [1, 2, 3]


def test_parse_empty():
    log = parse_text("")
    assert len(log) == 0
    assert len(log.interactions) == 0


def test_parse_error_names_line():
    with pytest.raises(ParseError, match="line 2"):
        parse_text("1,2,3,4\nbob,2,3,4\n")
    with pytest.raises(ParseError, match="line 1"):
        parse_text("1,2,3\n")


def test_movielens_delimiter():
    log = parse_interactions(io.StringIO("1::1193::5::978300760\n1::661::3::978302109\n"), "::")
    assert len(log) == 2
    assert log.item_ids.tolist() == [1193, 661]


def _log_with_counts(counts):
    rows = []
    t = 0
    for user, c in enumerate(counts):
        for i in range(c):
            rows.append(f"{user},{i},4,{t}")
            t += 1
    return parse_text("\n".join(rows))


def test_filter_is_strict():
    log = filter_min_interactions(_log_with_counts([11, 10]), 10)
    assert len(log) == 11
    assert log.n_users == 1
    assert set(log.interactions.user.tolist()) == {0}


def test_filter_zero_is_identity():
    log = _log_with_counts([3, 1, 2])
    out = filter_min_interactions(log, 0)
    assert out.interactions == log.interactions


def test_filter_redensifies_and_preserves_order():
    log = parse_text("5,1,1,0\n6,2,1,1\n5,3,1,2\n7,4,1,3\n6,5,1,4\n5,6,1,5\n6,7,1,6\n")
    out = filter_min_interactions(log, 2)
    assert out.user_ids.tolist() == [5, 6]
    assert out.item_ids.tolist() == [1, 2, 3, 5, 6, 7]
    assert out.interactions.user.tolist() == [0, 1, 0, 1, 0, 1]
    assert out.interactions.item.tolist() == [0, 1, 2, 3, 4, 5]
    assert out.interactions.seq.tolist() == list(range(6))


@given(st.lists(st.integers(1, 15), min_size=1, max_size=12), st.integers(0, 12))
@settings(max_examples=50, deadline=None)
def test_filter_property(counts, m):
    out = filter_min_interactions(_log_with_counts(counts), m)
    if len(out):
        assert np.bincount(out.interactions.user).min() > m
    assert len(out) == sum(c for c in counts if c > m)


def test_binarize():
    log = binarize(parse_text("1,1,1,0\n1,2,3,1\n1,3,5,2\n"))
    assert log.interactions.label.tolist() == [1, 1, 1]
    assert log.ratings.tolist() == [1, 1, 1]
    assert len(binarize(parse_text(""))) == 0


def test_binarize_keeps_duplicates():
    log = binarize(parse_text("1,1,4,0\n1,1,2,1\n"))
    assert log.interactions.pairs() == [(0, 0), (0, 0)]
    assert log.interactions.label.tolist() == [1, 1]


def test_chronological_split():
    inter = Interactions(np.arange(10), np.arange(10))
    train, test = chronological_split(inter, 0.9)
    assert (len(train), len(test)) == (9, 1)
    assert test.seq.tolist() == [9]
    train, test = chronological_split(Interactions([0], [0]), 0.5)
    assert (len(train), len(test)) == (0, 1)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            chronological_split(inter, bad)


def test_stream_chunks():
    inter = Interactions(np.arange(1000), np.arange(1000))
    assert [len(c) for c in stream_chunks(inter, 512)] == [512, 488]
    assert [len(c) for c in stream_chunks(inter, 5000)] == [1000]
    assert [len(c) for c in stream_chunks(inter, 128)][:2] == [128, 128]


@given(st.integers(0, 300), st.integers(1, 64))
@settings(max_examples=50, deadline=None)
def test_chunks_concatenate_to_input(n, s_r):
    inter = Interactions(np.arange(n) % 7, np.arange(n) % 11)
    assert Interactions.concat(stream_chunks(inter, s_r)) == inter


def test_stream_config_scenarios():
    assert StreamConfig(256, 128).scenario == "underload"
    assert StreamConfig(256, 512).scenario == "overload"
    assert StreamConfig(256, 256).scenario == "balanced"
    with pytest.raises(ConfigError):
        StreamConfig(0, 1)


def test_pipeline_deterministic(tmp_path):
    rng = np.random.default_rng(3)
    lines = [f"{u}::{v}::{r}::{t}" for u, v, r, t in
             zip(rng.integers(50, size=2000), rng.integers(80, size=2000),
                 rng.integers(1, 6, size=2000), rng.integers(10**6, size=2000))]
    path = tmp_path / "ratings.dat"
    path.write_text("\n".join(lines))
    a = load_dataset(path, "::", 10)
    b = load_dataset(path, "::", 10)
    assert a.interactions == b.interactions
    assert np.array_equal(a.user_ids, b.user_ids)
    train_a, test_a = chronological_split(a.interactions, 0.9)
    train_b, test_b = chronological_split(b.interactions, 0.9)
    assert train_a == train_b and test_a == test_b


def test_sample_users_seeded():
    log = _log_with_counts([12] * 20)
    a = sample_users(log, 5, seed=1)
    b = sample_users(log, 5, seed=1)
    assert a.n_users == 5 and len(a) == 60
    assert np.array_equal(a.user_ids, b.user_ids)


def test_dump_mapping(tmp_path):
    log = parse_text("42,7,1,0\n13,7,1,1\n")
    dump_mapping(log.user_ids, tmp_path / "users.tsv")
    assert (tmp_path / "users.tsv").read_text() == "0\t42\n1\t13\n"
