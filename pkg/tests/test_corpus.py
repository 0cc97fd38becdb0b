import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualemb.corpus import (CorpusError, Events, Observations, SplitSpec, Vocabulary,
                            build_observations, ingest, read_manifest, split, write_manifest)

from conftest import write


def orders_file(tmp_path, rows, name="orders.tsv"):
    return write(tmp_path / name, ["\t".join(str(x) for x in r) for r in rows])


def test_item_below_threshold_is_dropped(tmp_path):
    rows = [("u1", f"o{n}", n, "rare") for n in range(9)] + [("u1", f"o{n}", n, "common") for n in range(10)]
    vocab, ev = ingest(orders_file(tmp_path, rows), min_transactions=10)
    assert "rare" not in vocab.items
    assert "common" in vocab.items
    assert len(ev) == 10


def test_threshold_one_keeps_singletons(tmp_path):
    rows = [("u1", "o1", 1, "a"), ("u2", "o2", 1, "b"), ("u3", "o3", 1, "c")]
    vocab, ev = ingest(orders_file(tmp_path, rows), min_transactions=1)
    assert set(vocab.items.keys) == {"a", "b", "c"}
    assert len(ev) == 3


def test_toy_filter_drops_event_not_user(tmp_path):
    rows = [("u1", "o1", 1, "a"), ("u1", "o1", 1, "b"), ("u2", "o2", 1, "a")]
    vocab, ev = ingest(orders_file(tmp_path, rows), min_transactions=2)
    assert vocab.items.keys == ["a"]
    assert set(vocab.users.keys) == {"u1", "u2"}
    assert len(ev) == 2


def test_context_tokens_only_for_kept_items(tmp_path):
    orders = orders_file(tmp_path, [("u1", "o1", 1, "a"), ("u1", "o2", 2, "b")])
    items = write(tmp_path / "items.tsv", ["a\tx y x", "zz\tghost", "b\ty  w"])
    users = write(tmp_path / "users.tsv", ["u1\tf1"])
    vocab, _ = ingest(orders, items, users, min_transactions=1)
    assert "ghost" not in vocab.item_tokens
    a = vocab.items.index["a"]
    assert [vocab.item_tokens.keys[w] for w in vocab.tokens_of_item(a)] == ["x", "y"]
    assert vocab.n_user_tokens == 1


@pytest.mark.parametrize("line,msg", [
    ("u1\to1\tnot-a-time\ta", "not an integer"),
    ("u1\to1\t5", "4 tab-separated fields"),
    ("u1\t\t5\ta", "empty field"),
])
def test_malformed_orders_report_line(tmp_path, line, msg):
    path = write(tmp_path / "o.tsv", ["u0\to0\t1\ta", line])
    with pytest.raises(CorpusError, match=r":2:") as e:
        ingest(path, min_transactions=1)
    assert msg in str(e.value)


def test_empty_after_filter_errors(tmp_path):
    with pytest.raises(CorpusError):
        ingest(orders_file(tmp_path, [("u1", "o1", 1, "a")]), min_transactions=2)


def events_from(rows):
    """rows of (user, order, time, item) ints, already sorted"""
    u, o, t, i = (np.array(c, dtype=np.int64) for c in zip(*rows))
    return Events(u.astype(np.int32), i.astype(np.int32), t, o)


def test_last_order_split():
    ev = events_from([(0, 1, 1, 0), (0, 2, 2, 1), (0, 3, 3, 2)])
    tr, va, te = split(ev, SplitSpec())
    assert tr.order.tolist() == [1] and va.order.tolist() == [2] and te.order.tolist() == [3]


def test_single_order_user_goes_to_train():
    ev = events_from([(0, 1, 1, 0), (0, 1, 1, 1)])
    tr, va, te = split(ev, SplitSpec())
    assert len(tr) == 2 and len(va) == 0 and len(te) == 0


def test_time_cutoff_split():
    ev = events_from([(0, 1, 50, 0), (0, 2, 150, 1), (0, 3, 250, 2)])
    tr, va, te = split(ev, SplitSpec(mode="time-cutoff", train_end=100, valid_end=200))
    assert tr.time.tolist() == [50] and va.time.tolist() == [150] and te.time.tolist() == [250]


def test_sliding_windows():
    a, b, c, d = 0, 1, 2, 3
    ev = events_from([(0, n, n, item) for n, item in enumerate([a, b, c, d])])
    obs = build_observations(ev, SplitSpec(k=2))
    got = {(o.target, o.context) for o in obs}
    assert got == {(b, (a,)), (c, (b, a)), (d, (c, b))}


def test_single_purchase_gives_nothing():
    obs = build_observations(events_from([(0, 0, 0, 5)]), SplitSpec())
    assert len(obs) == 0


def test_day_window():
    day = 86400
    ev = events_from([(0, 0, 0, 10), (0, 1, 1 * day, 11), (0, 2, 5 * day, 12)])
    obs = build_observations(ev, SplitSpec(d1=3, context="days", time_kind="seconds"))
    got = {(o.target, o.context) for o in obs}
    assert got == {(11, (10,))}


def test_same_order_items_not_in_context():
    ev = events_from([(0, 0, 0, 1), (0, 0, 0, 2), (0, 1, 1, 3)])
    obs = build_observations(ev, SplitSpec(k=5))
    assert {(o.target, o.context) for o in obs} == {(3, (2, 1))}


def test_duplicates_in_window_kept():
    ev = events_from([(0, n, n, item) for n, item in enumerate([4, 4, 7])])
    obs = build_observations(ev, SplitSpec(k=2))
    assert (7, (4, 4)) in {(o.target, o.context) for o in obs}


user_logs = st.lists(
    st.lists(st.tuples(st.integers(0, 6), st.integers(0, 4)), min_size=1, max_size=12),
    min_size=1, max_size=6)


def random_events(logs):
    rows = []
    for u, log in enumerate(logs):
        for n, (dt, item) in enumerate(sorted(log)):
            rows.append((u, 100 * u + dt, dt, item))
    rows.sort(key=lambda r: (r[0], r[2]))
    return events_from(rows)


@settings(max_examples=60, deadline=None)
@given(user_logs, st.integers(1, 4), st.sampled_from(["window", "days"]))
def test_context_strictly_earlier(logs, k, mode):
    ev = random_events(logs)
    spec = SplitSpec(k=k, d1=2, context=mode)
    obs = build_observations(ev, spec)
    for q in range(len(obs)):
        u, t = obs.user[q], obs.time[q]
        mine = ev.user == u
        ctx = obs.context_of(q)
        assert 1 <= len(ctx)
        if mode == "window":
            assert len(ctx) <= k
        # each context item exists in the user's history strictly before t
        earlier = ev.item[mine & (ev.time < t)]
        assert set(ctx.tolist()) <= set(earlier.tolist())
    again = build_observations(ev, spec)
    assert all(np.array_equal(getattr(obs, f), getattr(again, f)) for f in ("user", "target", "ctx_ptr", "ctx"))


@settings(max_examples=60, deadline=None)
@given(user_logs)
def test_test_orders_equal_users_with_three_orders(logs):
    ev = random_events(logs)
    _, _, te = split(ev, SplitSpec())
    n_orders = {u: len(np.unique(ev.order[ev.user == u])) for u in np.unique(ev.user)}
    expected = sum(1 for n in n_orders.values() if n >= 3)
    got = len({(u, o) for u, o in zip(te.user.tolist(), te.order.tolist())})
    assert got == expected


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5)), min_size=1, max_size=30), st.integers(1, 4))
def test_no_observation_uses_filtered_item(tmp_path_factory, rows, threshold):
    path = tmp_path_factory.mktemp("c") / "o.tsv"
    write(path, [f"u{u}\to{n}\t{n}\ti{i}" for n, (u, i) in enumerate(rows)])
    counts = {}
    for _, i in rows:
        counts[f"i{i}"] = counts.get(f"i{i}", 0) + 1
    try:
        vocab, ev = ingest(path, min_transactions=threshold)
    except CorpusError:
        assert max(counts.values()) < threshold
        return
    obs = build_observations(ev, SplitSpec(k=3))
    used = set(obs.target.tolist()) | set(obs.ctx.tolist())
    assert all(counts[vocab.items.keys[i]] >= threshold for i in used)


def test_observation_and_vocab_round_trip(tmp_path):
    orders = orders_file(tmp_path, [("u1", "o1", 1, "a"), ("u1", "o2", 2, "b"), ("u2", "o3", 1, "a")])
    items = write(tmp_path / "items.tsv", ["a\tx y", "b\ty"])
    vocab, ev = ingest(orders, items, min_transactions=1)
    vocab.save(tmp_path / "v")
    back = Vocabulary.load(tmp_path / "v")
    assert back.items.keys == vocab.items.keys and back.items.counts == vocab.items.counts
    assert np.array_equal(back.item_tok, vocab.item_tok) and np.array_equal(back.item_tok_ptr, vocab.item_tok_ptr)
    obs = build_observations(ev, SplitSpec())
    obs.save(tmp_path / "obs.npz")
    o2 = Observations.load(tmp_path / "obs.npz")
    assert [o for o in o2] == [o for o in obs]
    full = obs.get(0, vocab)
    assert full.item_tokens[0] == tuple(vocab.tokens_of_item(full.target).tolist())


def test_manifest_round_trip(tmp_path):
    write_manifest(tmp_path / "m", {"n_items": 3, "x": "y"})
    assert read_manifest(tmp_path / "m") == {"n_items": "3", "x": "y"}


@pytest.mark.parametrize("kw", [dict(mode="nope"), dict(k=0), dict(mode="time-cutoff"),
                                dict(mode="time-cutoff", train_end=5, valid_end=5), dict(context="x")])
def test_bad_split_spec(kw):
    with pytest.raises(ValueError):
        SplitSpec(**kw)
