import json
import math
import random

import pytest

from layman_eval.embedkit import EmbeddingCache, LocalHashProvider, cosine, embed
from layman_eval.lexmetrics import bleu
from layman_eval.semeval import (
    EvalConfig,
    build_index,
    evaluate_corpus,
    evaluate_report,
    load_index,
    match_proportion,
    substitute_layman,
)
from layman_eval.textcore import tokenize

from conftest import ScriptedProvider, load_fixture


def make_corpus(tmp_path, name, rows):
    path = tmp_path / name
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return str(path)


class TestSubstituteLayman:
    def test_exact_match_dominates(self, local_provider):
        index = build_index(
            [
                ("No evidence of pleural effusion", "There is no extra fluid around the lungs"),
                ("Both lung fields are clear", "Both lungs look healthy"),
            ],
            local_provider,
        )
        out = substitute_layman(["No evidence of pleural effusion"], index)
        assert out == ["There is no extra fluid around the lungs"]

    def test_singleton_index_maps_everything(self, local_provider):
        index = build_index([("anything at all", "the only layman text")], local_provider)
        out = substitute_layman(["completely unrelated words", "other tokens"], index)
        assert out == ["the only layman text"] * 2

    def test_two_entry_disjoint_vocabulary(self, local_provider):
        index = build_index(
            [("alpha beta gamma", "layman one"), ("delta epsilon zeta", "layman two")],
            local_provider,
        )
        out = substitute_layman(["epsilon zeta eta"], index)
        assert out == ["layman two"]

    def test_floor_keeps_originals(self, local_provider, caplog):
        index = build_index([("alpha beta gamma", "layman one")], local_provider)
        with caplog.at_level("WARNING"):
            out = substitute_layman(["totally unrelated sentence"], index, floor=0.9)
        assert out == ["totally unrelated sentence"]
        assert "floor" in caplog.text

    def test_degenerate_sentence_kept(self, local_provider, caplog):
        index = build_index([("alpha beta", "layman")], local_provider)
        with caplog.at_level("WARNING"):
            out = substitute_layman(["..."], index)
        assert out == ["..."]

    def test_empty_list(self, local_provider):
        index = build_index([("a b", "l")], local_provider)
        assert substitute_layman([], index) == []

    def test_tie_breaks_to_lowest_entry(self):
        provider = ScriptedProvider(
            {"query": [1.0, 0.0], "entry one": [2.0, 0.0], "entry two": [3.0, 0.0]}
        )
        index = build_index(
            [("entry one", "first layman"), ("entry two", "second layman")], provider
        )
        assert substitute_layman(["query"], index) == ["first layman"]

    def test_idempotent_through_identity_index(self, local_provider):
        laymans = ["the lungs look fine", "the heart looks fine"]
        identity_index = build_index([(t, t) for t in laymans], local_provider)
        once = substitute_layman(laymans, identity_index)
        assert once == laymans
        assert substitute_layman(once, identity_index) == once


class TestMatchProportion:
    def test_identity_lists(self, local_provider):
        p, r, f1, _ = match_proportion(["a b c", "d e f"], ["a b c", "d e f"], 0.8, local_provider)
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_token_disjoint(self, local_provider):
        p, r, f1, pairs = match_proportion(["alpha beta"], ["gamma delta"], 0.8, local_provider)
        assert (p, r, f1) == (0.0, 0.0, 0.0)
        assert pairs == []

    def test_two_against_three_hand_values(self, local_provider):
        cands = ["the heart is big", "lungs are clear"]
        refs = ["the heart is big", "no fracture seen", "bones intact"]
        p, r, f1, pairs = match_proportion(cands, refs, 0.8, local_provider)
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(1 / 3)
        assert f1 == pytest.approx(0.4)
        assert pairs == [(0, 0, 1.0)]

    def test_empty_side_is_error(self, local_provider):
        with pytest.raises(ValueError, match="empty report"):
            match_proportion([], ["a"], 0.8, local_provider)

    def test_symmetry_swaps_precision_and_recall(self, local_provider):
        rng = random.Random(5)
        vocab = [f"w{i}" for i in range(10)]
        cands = [" ".join(rng.choices(vocab, k=4)) for _ in range(3)]
        refs = [" ".join(rng.choices(vocab, k=4)) for _ in range(4)]
        p1, r1, f1a, _ = match_proportion(cands, refs, 0.5, local_provider)
        p2, r2, f1b, _ = match_proportion(refs, cands, 0.5, local_provider)
        assert (p1, r1) == (r2, p2)
        assert f1a == pytest.approx(f1b, abs=1e-15)

    def test_monotone_in_theta(self, local_provider):
        rng = random.Random(11)
        vocab = [f"w{i}" for i in range(8)]
        cands = [" ".join(rng.choices(vocab, k=5)) for _ in range(4)]
        refs = [" ".join(rng.choices(vocab, k=5)) for _ in range(4)]
        thetas = [0.1, 0.3, 0.5, 0.7, 0.9]
        precisions, recalls = [], []
        for theta in thetas:
            p, r, _, _ = match_proportion(cands, refs, theta, local_provider)
            precisions.append(p)
            recalls.append(r)
        assert precisions == sorted(precisions, reverse=True)
        assert recalls == sorted(recalls, reverse=True)

    def test_oracle_equivalence_small_instances(self, local_provider):
        rng = random.Random(42)
        vocab = [f"w{i}" for i in range(9)]
        for _ in range(60):
            cands = [
                " ".join(rng.choices(vocab, k=rng.randint(1, 6)))
                for _ in range(rng.randint(1, 5))
            ]
            refs = [
                " ".join(rng.choices(vocab, k=rng.randint(1, 6)))
                for _ in range(rng.randint(1, 5))
            ]
            theta = rng.choice([0.3, 0.5, 0.8])
            p, r, f1, _ = match_proportion(cands, refs, theta, local_provider)

            cand_vecs = embed(cands, local_provider)
            ref_vecs = embed(refs, local_provider)
            matrix = [[cosine(cv, rv) for rv in ref_vecs] for cv in cand_vecs]
            oracle_p = sum(any(s >= theta for s in row) for row in matrix) / len(cands)
            oracle_r = sum(
                any(matrix[i][j] >= theta for i in range(len(cands)))
                for j in range(len(refs))
            ) / len(refs)
            oracle_f1 = (
                0.0
                if oracle_p + oracle_r == 0
                else 2 * oracle_p * oracle_r / (oracle_p + oracle_r)
            )
            assert (p, r, f1) == (oracle_p, oracle_r, oracle_f1)

    def test_best_match_changes_pairs_not_counts(self):
        provider = ScriptedProvider(
            {
                "query": [1.0, 0.0, 0.0],
                "close": [0.9, math.sqrt(1 - 0.81), 0.0],
                "closer": [0.99, math.sqrt(1 - 0.9801), 0.0],
            }
        )
        first_p, _, _, first_pairs = match_proportion(
            ["query"], ["close", "closer"], 0.8, provider
        )
        best_p, _, _, best_pairs = match_proportion(
            ["query"], ["close", "closer"], 0.8, provider, best_match=True
        )
        assert first_p == best_p == 1.0
        assert first_pairs[0][1] == 0
        assert best_pairs[0][1] == 1


class TestEvaluateReport:
    def test_identity_no_substitution(self, local_provider):
        config = EvalConfig(provider=local_provider, substitution=False)
        text = "No pneumonia. Heart size is normal. Bones are intact."
        report = evaluate_report(text, text, None, config)
        for name in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge1", "rouge2", "rougeL"):
            assert getattr(report, name) == pytest.approx(1.0, abs=1e-12)
        assert report.semantic_f1 == 1.0

    def test_mirage_pair_high_bleu_zero_semantics(self):
        cand = "There is a definite focal consolidation, no pneumothorax is appreciated"
        ref = "There is no focal consolidation, effusion, or pneumothorax"
        provider = ScriptedProvider(
            {cand: [1.0, 0.0], ref: [0.5, math.sqrt(0.75)]}  # cosine exactly 0.5
        )
        config = EvalConfig(provider=provider, substitution=False)
        report = evaluate_report(cand, ref, None, config)
        assert report.bleu1 >= 0.6
        assert report.semantic_precision == 0.0
        assert report.semantic_f1 == 0.0

    def test_full_substitution_output_is_index_laymans(self, local_provider):
        entries = [
            ("No acute process is seen", "nothing urgent shows up"),
            ("The heart is enlarged", "the heart looks bigger than normal"),
        ]
        index = build_index(entries, local_provider)
        config = EvalConfig(provider=local_provider, substitution=True)
        report = evaluate_report(
            "No acute process is seen. The heart is enlarged.",
            "The heart is enlarged.",
            index,
            config,
        )
        # Substituted candidate = both layman texts; reference = second layman.
        joined_cand = tokenize("nothing urgent shows up the heart looks bigger than normal")
        joined_ref = tokenize("the heart looks bigger than normal")
        assert report.bleu1 == pytest.approx(
            bleu(joined_cand, joined_ref, max_n=1), abs=1e-12
        )
        assert report.semantic_recall == 1.0

    def test_empty_report_is_error(self, local_provider):
        config = EvalConfig(provider=local_provider, substitution=False)
        with pytest.raises(ValueError, match="empty report"):
            evaluate_report("", "text", None, config)

    def test_provider_mismatch_with_index(self, local_provider):
        index = build_index([("a b", "c")], LocalHashProvider(dim=64))
        config = EvalConfig(provider=local_provider, substitution=True)
        with pytest.raises(ValueError, match="does not match"):
            evaluate_report("a b.", "a b.", index, config)


class TestEvaluateCorpus:
    def test_identity_corpus(self, tmp_path, local_provider):
        rows = [
            {"id": "a", "text": "No pneumonia. Clear lungs."},
            {"id": "b", "text": "Heart size is normal."},
        ]
        cands = make_corpus(tmp_path, "c.jsonl", rows)
        refs = make_corpus(tmp_path, "r.jsonl", rows)
        config = EvalConfig(provider=local_provider, substitution=False)
        aggregate, reports, sims = evaluate_corpus(cands, refs, None, config)
        assert aggregate["semantic_f1"] == 1.0
        assert aggregate["reports"] == 2
        assert len(sims) == sum(len(r.matched_pairs) for _, r in reports)

    def test_id_mismatch_lists_offenders(self, tmp_path, local_provider):
        cands = make_corpus(tmp_path, "c.jsonl", [{"id": "a", "text": "x y"}])
        refs = make_corpus(tmp_path, "r.jsonl", [{"id": "b", "text": "x y"}])
        config = EvalConfig(provider=local_provider, substitution=False)
        with pytest.raises(ValueError, match=r"only in candidates \['a'\].*\['b'\]"):
            evaluate_corpus(cands, refs, None, config)

    def test_aggregate_is_arithmetic_mean(self, tmp_path):
        # Three reports engineered to per-report precision 1.0, 0.5, 0.0.
        vectors = {
            "m1.": [1.0, 0.0, 0.0, 0.0], "m2.": [0.0, 1.0, 0.0, 0.0],
            "x1.": [0.0, 0.0, 1.0, 0.0], "x2.": [0.0, 0.0, 0.0, 1.0],
        }
        provider = ScriptedProvider(vectors)
        cands = [
            {"id": "1", "text": "m1."},
            {"id": "2", "text": "m1. x1."},
            {"id": "3", "text": "x1."},
        ]
        refs = [
            {"id": "1", "text": "m1."},
            {"id": "2", "text": "m1. x2."},
            {"id": "3", "text": "x2."},
        ]
        config = EvalConfig(provider=provider, substitution=False)
        aggregate, reports, _ = evaluate_corpus(
            make_corpus(tmp_path, "c.jsonl", cands),
            make_corpus(tmp_path, "r.jsonl", refs),
            None,
            config,
        )
        per_report = {rid: r.semantic_precision for rid, r in reports}
        assert per_report == {"1": 1.0, "2": 0.5, "3": 0.0}
        assert aggregate["semantic_precision"] == pytest.approx(0.5, abs=1e-12)


class TestDiagnosticDirections:
    def _index(self, diagnostic_sets, provider):
        entries = []
        for subset in ("ds_se", "ss_de"):
            for pair in diagnostic_sets[subset]:
                entries.append((pair["candidate"], pair["candidate_layman"]))
                entries.append((pair["reference"], pair["reference_layman"]))
        return build_index(entries, provider)

    def _mean_bleu1(self, pairs, diagnostic_provider, index, substitution):
        config = EvalConfig(provider=diagnostic_provider, substitution=substitution)
        scores = [
            evaluate_report(p["candidate"], p["reference"], index, config).bleu1
            for p in pairs
        ]
        return sum(scores) / len(scores)

    def test_substitution_reverses_lexical_illusions(
        self, diagnostic_sets, diagnostic_provider
    ):
        index = self._index(diagnostic_sets, diagnostic_provider)
        ds_raw = self._mean_bleu1(diagnostic_sets["ds_se"], diagnostic_provider, None, False)
        ds_sub = self._mean_bleu1(diagnostic_sets["ds_se"], diagnostic_provider, index, True)
        ss_raw = self._mean_bleu1(diagnostic_sets["ss_de"], diagnostic_provider, None, False)
        ss_sub = self._mean_bleu1(diagnostic_sets["ss_de"], diagnostic_provider, index, True)
        assert ds_sub < ds_raw
        assert ss_sub > ss_raw

    def test_semantic_scores_track_meaning_not_wording(
        self, diagnostic_sets, diagnostic_provider
    ):
        index = self._index(diagnostic_sets, diagnostic_provider)
        config = EvalConfig(provider=diagnostic_provider, substitution=True)
        ds_precision = [
            evaluate_report(p["candidate"], p["reference"], index, config).semantic_precision
            for p in diagnostic_sets["ds_se"]
        ]
        ss_precision = [
            evaluate_report(p["candidate"], p["reference"], index, config).semantic_precision
            for p in diagnostic_sets["ss_de"]
        ]
        assert sum(ds_precision) / len(ds_precision) <= 0.05
        assert sum(ss_precision) / len(ss_precision) > 0.5


class TestLoadIndex:
    def test_from_dataset_file_with_sidecar(self, tmp_path, local_provider):
        rows = [
            {"id": "1", "professional": "No effusion is seen", "layman": "no extra fluid",
             "similarity": 0.9, "status": "accepted", "iterations": 1},
        ]
        path = make_corpus(tmp_path, "dataset.jsonl", rows)
        sidecar = str(tmp_path / "dataset.jsonl.vec")
        index = load_index(path, local_provider, EmbeddingCache(sidecar))
        assert index.entries == [("No effusion is seen", "no extra fluid")]
        assert len(EmbeddingCache(sidecar)) == 1  # vectors persisted
