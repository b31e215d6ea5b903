import itertools
import json
import os
import pathlib

import numpy as np
import pytest

import kfv

ROOT = pathlib.Path(os.environ.get("KFV_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
FIXTURES = ROOT / "tests" / "fixtures"


@pytest.fixture(scope="module")
def lexicon():
    return kfv.Lexicon.load(str(ROOT / "data" / "lexicon.tsv"))


def test_motivating_caption(lexicon):
    got = {t[:3] for t in kfv.parse_caption("A little cute dog on the sofa is eating an apple.", lexicon)}
    assert got == {("dog", "is_eating", "apple"), ("dog", "on", "sofa")}


def test_gold_corpus(lexicon):
    parsed = kfv.parse_captions_jsonl((FIXTURES / "gold_captions.jsonl").read_text(), lexicon)
    gold = set()
    for line in (FIXTURES / "gold_triplets.tsv").read_text().splitlines():
        if line and not line.startswith("#"):
            gold.add(tuple(line.split("\t")[:4]))
    assert set(parsed) == gold


def test_graph_filters_match_bfs():
    g = kfv.KnowledgeGraph.deserialize((FIXTURES / "fixture_kg.tsv").read_text())
    anchors = {"dog", "man", "table"}
    adj = {}
    for s, _, o, _ in g.edges:
        adj.setdefault(s, set()).add(o)
        adj.setdefault(o, set()).add(s)
    one_hop = set(anchors) | {n for a in anchors for n in adj.get(a, ())}
    got = g.filter("1hop", anchors)
    assert {e[:3] for e in got.edges} == {e[:3] for e in g.edges if e[0] in one_hop and e[2] in one_hop}
    zero = g.filter("0hop", anchors)
    assert all(e[0] in anchors and e[2] in anchors for e in zero.edges)
    assert g.filter("all") == g
    assert kfv.KnowledgeGraph.deserialize(g.serialize()) == g


def test_bad_filter_mode():
    with pytest.raises(kfv.ConfigError):
        kfv.KnowledgeGraph().filter("2hop")


def test_ordered_pairs_subject_major():
    assert kfv.ordered_pairs(3) == [p for p in itertools.product(range(3), repeat=2) if p[0] != p[1]]


def test_recall_matches_numpy_topk():
    rng = np.random.default_rng(5)
    pair_scores, n_objects, gt = [], [], []
    hits = total = 0
    k = 4
    for _ in range(6):
        n = int(rng.integers(2, 5))
        m = 4  # three predicates plus no-relation
        pairs = [p for p in itertools.product(range(n), repeat=2) if p[0] != p[1]]
        scores = [rng.random(m) for _ in pairs]
        flat = [(-scores[q][p], q, p) for q in range(len(pairs)) for p in range(m - 1)]
        top = {(q, p) for _, q, p in sorted(flat)[:k]}
        truth = []
        for q, (s, o) in enumerate(pairs):
            for p in range(m - 1):
                if rng.random() < 0.2:
                    truth.append((s, p, o))
                    hits += (q, p) in top
        total += len(truth)
        pair_scores.append(scores)
        n_objects.append(n)
        gt.append(truth)
    assert total > 0
    assert kfv.recall_at_k(pair_scores, n_objects, gt, k) == pytest.approx(hits / total, abs=1e-15)


def test_synthetic_run_and_cli_digest(tmp_path):
    spec = kfv.SyntheticSpec()
    spec.test_images = 20
    data = kfv.generate_synthetic(spec)
    assert data.train_images == spec.train_images and data.test_images == 20
    g = kfv.knowledge_graph(data)
    assert len(g) > 0 and g.relations <= set(data.relations)

    a = kfv.run_experiment(data, seed=2, epochs=10, vrk_epochs=20)
    b = kfv.run_experiment(data, seed=2, epochs=10, vrk_epochs=20)
    assert a == b
    for key in ("recall", "mean_recall"):
        values = a[key]
        assert all(0.0 <= v <= 1.0 for v in values.values() if v is not None)
    json.dumps(a)

    assert kfv.sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    code, _, err = kfv.cli_main(["gen-synth", "--out-dir", str(tmp_path), "--test-images", "5"])
    assert code == 0, err
    assert (tmp_path / "captions.jsonl").exists()
    code, _, err = kfv.cli_main(["no-such-command"])
    assert code == 2 and "error" in err
