import itertools
import json
from collections import Counter
from fractions import Fraction
from math import comb
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from droptriple.corpus import CorpusConfig, generate_corpus, load_corpus, save_corpus
from droptriple.errors import CorruptRecord, FormatVersionMismatch, InvalidConfig

GOLDEN = Path(__file__).parent / "data" / "golden_corpus.jsonl"
GOLDEN_CFG = CorpusConfig(num_actions=3, pose_dim=2, frames_per_action=(2, 3), num_fillers=2, num_train=3, num_test=1, seed=42)


def tiny(**kw):
    base = dict(num_actions=3, pose_dim=2, frames_per_action=(2, 4), num_train=3, num_test=1, duplicate_rate=0.0)
    base.update(kw)
    return CorpusConfig(**base)


def test_all_distinct_probability_matches_enumeration():
    # each sample: size uniform on {1,2,3}, then a uniform subset of that size
    sets = [frozenset(c) for k in (1, 2, 3) for c in itertools.combinations(range(3), k)]
    p = {s: Fraction(1, 3) / comb(3, len(s)) for s in sets}
    exact = sum(
        p[a] * p[b] * p[c] * p[d]
        for a, b, c, d in itertools.product(sets, repeat=4)
        if len({a, b, c, d}) == 4
    )
    trials = 3000
    hits = sum(
        len({s.equivalence_class_id for s in generate_corpus(tiny(), seed).samples}) == 4
        for seed in range(trials)
    )
    sd = (float(exact) * (1 - float(exact)) / trials) ** 0.5
    assert abs(hits / trials - float(exact)) <= 4 * sd


def test_action_set_distribution_matches_enumeration():
    counts = Counter()
    for seed in range(1500):
        for s in generate_corpus(tiny(), seed).samples:
            counts[s.action_set] += 1
    total = sum(counts.values())
    for size in (1, 2, 3):
        for combo in itertools.combinations(range(3), size):
            expected = 1 / 3 / comb(3, size)
            sd = (expected * (1 - expected) / total) ** 0.5
            assert abs(counts[combo] / total - expected) <= 4.5 * sd


def test_full_duplication_single_class():
    c = generate_corpus(CorpusConfig(num_train=8, num_test=2, duplicate_rate=1.0, seed=5))
    assert len({s.equivalence_class_id for s in c.samples}) == 1


def test_exact_duplicate_count():
    c = generate_corpus(CorpusConfig(num_actions=200, actions_per_sample=(3, 3), num_train=90, num_test=11, duplicate_rate=0.3, seed=1))
    # 30 of the 100 later samples copy an earlier set; fresh 3-of-200 draws essentially never collide
    assert len({s.action_set for s in c.samples}) == 101 - 30


def test_noiseless_identical_sets_identical_motions():
    cfg = CorpusConfig(num_actions=2, frames_per_action=(5, 5), actions_per_sample=(1, 1), noise_sigma=0.0, num_train=10, num_test=0, seed=3)
    by_set = {}
    for s in generate_corpus(cfg).samples:
        if s.action_set in by_set:
            assert np.array_equal(by_set[s.action_set], s.motion)
        by_set.setdefault(s.action_set, s.motion)
    assert len(by_set) == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_structural_invariants(seed, dup):
    cfg = CorpusConfig(num_actions=5, num_train=12, num_test=4, duplicate_rate=dup, seed=seed)
    c = generate_corpus(cfg)
    m = c.manifest
    assert set(m.train_ids).isdisjoint(m.test_ids)
    assert sorted(m.train_ids + m.test_ids) == list(range(16))
    fillers = set(m.vocabulary.fillers)
    assert all(fillers.isdisjoint(t) for t in m.vocabulary.action_tokens)
    for s in c.samples:
        assert list(s.action_set) == sorted(set(s.action_set))
        lo, hi = cfg.frames_per_action
        assert len(s.action_set) * lo <= s.motion.shape[0] <= len(s.action_set) * hi
        assert np.all(np.isfinite(s.motion))
        assert 1 <= len(s.texts) <= 5
        expected = [t for a in s.action_set for t in m.vocabulary.action_tokens[a]]
        for text in s.texts:
            assert [t for t in text if t not in fillers] == expected
    for a, b in itertools.combinations(c.samples, 2):
        assert (a.equivalence_class_id == b.equivalence_class_id) == (a.action_set == b.action_set)


def test_regeneration_bitwise():
    a, b = generate_corpus(tiny(), 9), generate_corpus(tiny(), 9)
    for x, y in zip(a.samples, b.samples):
        assert np.array_equal(x.motion, y.motion) and x.texts == y.texts


def test_invalid_configs():
    with pytest.raises(InvalidConfig, match="num_actions"):
        generate_corpus(CorpusConfig(num_actions=1))
    with pytest.raises(InvalidConfig):
        generate_corpus(CorpusConfig(duplicate_rate=1.5))
    with pytest.raises(InvalidConfig):
        generate_corpus(CorpusConfig(num_train=1, num_test=0))


def test_round_trip_bitwise(tmp_path):
    c = generate_corpus(tiny(num_train=4, num_test=1, noise_sigma=0.37), 11)
    path = tmp_path / "c.jsonl"
    save_corpus(c.manifest, c.samples, path)
    d = load_corpus(path)
    assert d.manifest == c.manifest
    for x, y in zip(c.samples, d.samples):
        assert x.motion.tobytes() == y.motion.tobytes()
        assert (x.texts, x.action_set, x.equivalence_class_id) == (y.texts, y.action_set, y.equivalence_class_id)


def test_truncated_file_names_record(tmp_path):
    c = generate_corpus(tiny(num_train=4, num_test=1), 0)
    path = tmp_path / "c.jsonl"
    save_corpus(c.manifest, c.samples, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 40])
    with pytest.raises(CorruptRecord) as err:
        load_corpus(path)
    assert err.value.index == 4
    lines = raw.decode().split("\n")
    path.write_text("\n".join(lines[:3]) + "\n")
    with pytest.raises(CorruptRecord) as err:
        load_corpus(path)
    assert err.value.index == 2


def test_unknown_version(tmp_path):
    lines = GOLDEN.read_text().split("\n")
    head = json.loads(lines[0])
    head["version"] = 99
    path = tmp_path / "v.jsonl"
    path.write_text("\n".join([json.dumps(head)] + lines[1:]))
    with pytest.raises(FormatVersionMismatch):
        load_corpus(path)


def test_missing_file():
    with pytest.raises(OSError):
        load_corpus("/nonexistent/corpus.jsonl")


def test_golden_file(tmp_path):
    c = generate_corpus(GOLDEN_CFG)
    path = tmp_path / "g.jsonl"
    save_corpus(c.manifest, c.samples, path)
    assert path.read_bytes() == GOLDEN.read_bytes()
    lines = GOLDEN.read_text().splitlines()
    head = json.loads(lines[0])
    assert set(head) == {"format", "version", "num_samples", "config", "vocabulary", "splits"}
    assert set(head["vocabulary"]) == {"vocab_size", "fillers", "action_tokens"}
    assert set(json.loads(lines[1])) == {"id", "actions", "class_id", "frames", "dim", "motion", "texts"}
