import math
import random
from functools import lru_cache

import pytest
from hypothesis import given, settings, strategies as st

from mrcgen.conllu import DependencyParse, Token, parse_conllu_block, read_conllu
from mrcgen.metrics import (
    bleu,
    find_interrogative,
    levenshtein,
    metric_report,
    positional_bias,
    qa_score,
    self_bleu,
    summarize,
    syntactic_divergence,
)


class TestBleu:
    def test_identical_is_one(self):
        assert bleu("what is the capital?", ["what is the capital?"]) == pytest.approx(1.0)

    def test_disjoint_unigrams_is_zero(self):
        assert bleu("a b c d", ["e f g h"]) == 0.0

    def test_hand_computed_partial_overlap(self):
        # candidate "a b c d" vs reference "a b x y":
        # p1 = 2/4; p2 = (1+1)/(3+1); p3 = (0+1)/(2+1); p4 = (0+1)/(1+1); BP = 1
        expected = math.exp(sum(math.log(p) for p in (0.5, 0.5, 1 / 3, 0.5)) / 4)
        assert bleu("a b c d", ["a b x y"]) == pytest.approx(expected, abs=1e-12)

    def test_brevity_penalty(self):
        # all modified precisions are 1, so the score is exactly the penalty
        assert bleu("a b", ["a b c d"]) == pytest.approx(math.exp(1 - 4 / 2), abs=1e-12)

    def test_closest_reference_length_wins(self):
        assert bleu("a b c", ["a b c", "a b c d e f"]) == pytest.approx(1.0)

    def test_empty_inputs(self):
        assert bleu("", ["a b"]) == 0.0
        assert bleu("a b", []) == 0.0

    def test_range(self):
        rng = random.Random(0)
        vocab = list("abcdefg")
        for _ in range(100):
            cand = " ".join(rng.choices(vocab, k=rng.randint(1, 8)))
            ref = " ".join(rng.choices(vocab, k=rng.randint(1, 8)))
            assert 0.0 <= bleu(cand, [ref]) <= 1.0


class TestSelfBleu:
    def test_needs_two(self):
        assert self_bleu(["only one"]) is None
        assert self_bleu([]) is None

    def test_identical_set_is_one(self):
        assert self_bleu(["a b c", "a b c", "a b c"]) == pytest.approx(1.0)

    def test_disjoint_unigram_set_is_zero(self):
        assert self_bleu(["a b", "c d"]) == pytest.approx(0.0)

    def test_permutation_invariance(self):
        texts = ["what is x?", "where is y?", "what is z?"]
        shuffled = [texts[2], texts[0], texts[1]]
        assert self_bleu(texts) == pytest.approx(self_bleu(shuffled))

    def test_diverse_below_repetitive(self):
        repetitive = ["what is the a?", "what is the b?", "what is the c?"]
        diverse = ["what is the a?", "where did b go yesterday morning?",
                   "how many c were counted?"]
        assert self_bleu(diverse) < self_bleu(repetitive)


class TestPositionalBias:
    def test_answer_at_start(self):
        assert positional_bias("alpha beta gamma delta", "alpha") == pytest.approx(0.0)

    def test_answer_at_end(self):
        assert positional_bias("alpha beta gamma delta", "delta") == pytest.approx(1.0)

    def test_middle(self):
        assert positional_bias("a b c", "b") == pytest.approx(0.5)

    def test_multiword_span_merged_to_one_word(self):
        # "c d" merges into one word: [a, b, cd] -> index 2 over 2 -> 1.0
        assert positional_bias("a b c d", "c d") == pytest.approx(1.0)

    def test_multiword_mid(self):
        assert positional_bias("a b c d", "b c") == pytest.approx(0.5)

    def test_char_start_disambiguates(self):
        assert positional_bias("x y x", "x", char_start=4) == pytest.approx(1.0)
        assert positional_bias("x y x", "x", char_start=0) == pytest.approx(0.0)

    def test_single_word_context(self):
        assert positional_bias("alpha", "alpha") == pytest.approx(0.0)

    def test_missing_answer_raises(self):
        with pytest.raises(ValueError):
            positional_bias("a b c", "zz")

    def test_wrong_char_start_raises(self):
        with pytest.raises(ValueError):
            positional_bias("a b c", "b", char_start=0)

    @given(st.integers(min_value=0, max_value=19), st.integers(min_value=1, max_value=20))
    def test_bounds(self, pos, extra):
        n = max(pos + 1, extra)
        words = [f"w{i}" for i in range(n)]
        words[pos] = "target"
        v = positional_bias(" ".join(words), "target")
        assert 0.0 <= v <= 1.0


@lru_cache(maxsize=None)
def lev_recursive(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    cost = 0 if a[-1] == b[-1] else 1
    return min(lev_recursive(a[:-1], b) + 1,
               lev_recursive(a, b[:-1]) + 1,
               lev_recursive(a[:-1], b[:-1]) + cost)


class TestLevenshtein:
    @pytest.mark.parametrize("a,b,d", [
        ([], [], 0),
        (["x"], [], 1),
        (["a", "b"], ["a", "b"], 0),
        (["a", "b", "c"], ["a", "x", "c"], 1),
        (list("kitten"), list("sitting"), 3),
    ])
    def test_known_cases(self, a, b, d):
        assert levenshtein(a, b) == d

    def test_matches_recursive_oracle(self):
        rng = random.Random(7)
        alphabet = ["nsubj", "obj", "det", "amod", "root"]
        for _ in range(300):
            a = tuple(rng.choices(alphabet, k=rng.randint(0, 6)))
            b = tuple(rng.choices(alphabet, k=rng.randint(0, 6)))
            assert levenshtein(list(a), list(b)) == lev_recursive(a, b)

    @given(st.lists(st.sampled_from("abc"), max_size=8),
           st.lists(st.sampled_from("abc"), max_size=8),
           st.lists(st.sampled_from("abc"), max_size=8))
    @settings(max_examples=100)
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, a) == 0
        assert levenshtein(a, b) == levenshtein(b, a)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
        assert levenshtein(a, b) <= max(len(a), len(b))


QUESTION_BLOCK = [
    "# text = What lies in sector two?",
    "1\tWhat\twhat\tPRON\t_\t_\t2\tnsubj\t_\t_",
    "2\tlies\tlie\tVERB\t_\t_\t0\troot\t_\t_",
    "3\tin\tin\tADP\t_\t_\t4\tcase\t_\t_",
    "4\tsector\tsector\tNOUN\t_\t_\t2\tobl\t_\t_",
    "5\ttwo\ttwo\tNUM\t_\t_\t4\tnummod\t_\t_",
    "6\t?\t?\tPUNCT\t_\t_\t2\tpunct\t_\t_",
]

CONTEXT_BLOCK = [
    "# text = The site lies in sector two of the district.",
    "1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_",
    "2\tsite\tsite\tNOUN\t_\t_\t3\tnsubj\t_\t_",
    "3\tlies\tlie\tVERB\t_\t_\t0\troot\t_\t_",
    "4\tin\tin\tADP\t_\t_\t5\tcase\t_\t_",
    "5\tsector\tsector\tNOUN\t_\t_\t3\tobl\t_\t_",
    "6\ttwo\ttwo\tNUM\t_\t_\t5\tnummod\t_\t_",
    "7\tof\tof\tADP\t_\t_\t9\tcase\t_\t_",
    "8\tthe\tthe\tDET\t_\t_\t9\tdet\t_\t_",
    "9\tdistrict\tdistrict\tNOUN\t_\t_\t5\tnmod\t_\t_",
    "10\t.\t.\tPUNCT\t_\t_\t3\tpunct\t_\t_",
]


class TestConllu:
    def test_parse_block(self):
        parse = parse_conllu_block(QUESTION_BLOCK)
        assert parse.text == "What lies in sector two?"
        assert [t.form for t in parse.tokens][:2] == ["What", "lies"]
        assert parse.tokens[1].deprel == "root"

    def test_skips_multiword_and_empty_node_lines(self):
        block = ["1-2\tcannot\t_\t_\t_\t_\t_\t_\t_\t_",
                 "1\tcan\tcan\tAUX\t_\t_\t0\troot\t_\t_",
                 "1.1\tnot\tnot\tPART\t_\t_\t_\t_\t_\t_"]
        parse = parse_conllu_block(block)
        assert len(parse.tokens) == 1

    def test_rejects_cycle(self):
        bad = ["1\ta\ta\tNOUN\t_\t_\t2\tdep\t_\t_",
               "2\tb\tb\tNOUN\t_\t_\t1\tdep\t_\t_",
               "3\tc\tc\tNOUN\t_\t_\t0\troot\t_\t_"]
        with pytest.raises(ValueError):
            parse_conllu_block(bad)

    def test_rejects_multiple_roots(self):
        bad = ["1\ta\ta\tNOUN\t_\t_\t0\troot\t_\t_",
               "2\tb\tb\tNOUN\t_\t_\t0\troot\t_\t_"]
        with pytest.raises(ValueError):
            parse_conllu_block(bad)

    def test_short_line_rejected(self):
        with pytest.raises(ValueError):
            parse_conllu_block(["1\ta\ta"])

    def test_edge_path_through_lca(self):
        parse = parse_conllu_block(CONTEXT_BLOCK)
        # site(2) up nsubj to lies(3), down obl to sector(5), nmod to district(9)
        assert parse.edge_path(2, 9) == ["nsubj", "obl", "nmod"]

    def test_edge_path_self_empty(self):
        parse = parse_conllu_block(CONTEXT_BLOCK)
        assert parse.edge_path(3, 3) == []

    def test_edge_path_symmetric_length(self):
        parse = parse_conllu_block(CONTEXT_BLOCK)
        assert len(parse.edge_path(2, 9)) == len(parse.edge_path(9, 2))

    def test_read_conllu_blocks(self, tmp_path):
        path = tmp_path / "parses.conllu"
        path.write_text("\n".join(QUESTION_BLOCK) + "\n\n"
                        + "\n".join(CONTEXT_BLOCK) + "\n", encoding="utf-8")
        parses = list(read_conllu(path))
        assert len(parses) == 2
        assert parses[0].text.startswith("What")


class TestSyntacticDivergence:
    def test_hand_computed_single_anchor(self):
        q = parse_conllu_block(QUESTION_BLOCK)
        c = parse_conllu_block(CONTEXT_BLOCK)
        # Shared content lemmas between question (minus the wh word) and the
        # context (minus answer span [5, 6] = "sector two"): only "lie".
        # Question path lie->What = [nsubj]; context path lie->sector = [obl];
        # edit distance 1.
        assert syntactic_divergence(q, c, [5, 6]) == pytest.approx(1.0)

    def test_parallel_structure_zero(self):
        q = parse_conllu_block(QUESTION_BLOCK)
        # Same sentence as the question with the wh word replaced by a noun:
        # paths coincide, distance 0.
        c = parse_conllu_block([
            "1\tWater\twater\tNOUN\t_\t_\t2\tnsubj\t_\t_",
            "2\tlies\tlie\tVERB\t_\t_\t0\troot\t_\t_",
            "3\tin\tin\tADP\t_\t_\t4\tcase\t_\t_",
            "4\tsector\tsector\tNOUN\t_\t_\t2\tobl\t_\t_",
            "5\ttwo\ttwo\tNUM\t_\t_\t4\tnummod\t_\t_",
        ])
        assert syntactic_divergence(q, c, [1]) == pytest.approx(0.0)

    def test_min_not_above_mean(self):
        q = parse_conllu_block(QUESTION_BLOCK)
        c = parse_conllu_block(CONTEXT_BLOCK)
        d_min = syntactic_divergence(q, c, [5, 6], aggregate="min")
        d_mean = syntactic_divergence(q, c, [5, 6], aggregate="mean")
        assert d_min <= d_mean

    def test_no_interrogative_returns_none(self):
        c = parse_conllu_block(CONTEXT_BLOCK)
        assert syntactic_divergence(c, c, [5]) is None

    def test_no_shared_anchor_returns_none(self):
        q = parse_conllu_block(QUESTION_BLOCK)
        other = parse_conllu_block([
            "1\tWho\twho\tPRON\t_\t_\t2\tnsubj\t_\t_",
            "2\tsang\tsing\tVERB\t_\t_\t0\troot\t_\t_",
        ])
        assert syntactic_divergence(q, other, [2]) is None

    def test_empty_span_raises(self):
        q = parse_conllu_block(QUESTION_BLOCK)
        with pytest.raises(ValueError):
            syntactic_divergence(q, q, [])

    def test_out_of_range_span_raises(self):
        q = parse_conllu_block(QUESTION_BLOCK)
        with pytest.raises(ValueError):
            syntactic_divergence(q, q, [99])

    def test_find_interrogative(self):
        assert find_interrogative(parse_conllu_block(QUESTION_BLOCK)) == 1
        assert find_interrogative(parse_conllu_block(CONTEXT_BLOCK)) is None


class _StubMLM:
    def mlm_logprob(self, text, indices):
        return [-0.25 * (i + 1) for i in indices]


class TestQAScore:
    def test_sums_answer_word_logprobs(self):
        # layout "a b q? x y": answer words at word indices 3 and 4
        score = qa_score(_StubMLM(), "a b", "q?", "x y")
        assert score == pytest.approx(-0.25 * 4 + -0.25 * 5)

    def test_single_word_answer(self):
        assert qa_score(_StubMLM(), "c", "q?", "z") == pytest.approx(-0.25 * 3)

    def test_empty_answer(self):
        assert qa_score(_StubMLM(), "c", "q?", "") == 0.0


class TestSummarize:
    def test_statistics(self):
        s = summarize([1.0, 2.0, 3.0, 4.0])
        assert s["mean"] == pytest.approx(2.5)
        assert s["min"] == 1.0 and s["max"] == 4.0
        assert s["std"] == pytest.approx(math.sqrt(1.25))
        assert s["count"] == 4
        assert len(s["histogram"]) == 10
        assert sum(s["histogram"]) == 4

    def test_constant_values(self):
        s = summarize([2.0, 2.0])
        assert s["std"] == 0.0
        assert sum(s["histogram"]) == 2

    def test_empty(self):
        assert summarize([]) == {"count": 0}


class TestMetricReport:
    def test_rows_and_skip_bookkeeping(self):
        samples = [
            {"question_id": "s1", "context_id": "c1",
             "question": "what is a?", "answer": "b"},
            {"question_id": "s2", "context_id": "c1",
             "question": "what is b?", "answer": "zz"},
        ]
        contexts = {"c1": "a b c"}
        report = metric_report(samples, contexts, parses=None,
                               mlm_backend=_StubMLM())
        assert report.n_samples == 2
        rows = {r["question_id"]: r for r in report.per_sample}
        assert isinstance(rows["s1"]["positional_bias"], float)
        assert rows["s2"]["positional_bias"] == "skipped:answer_not_found"
        assert report.skipped["positional_bias:answer_not_found"] == 1
        assert report.skipped["syntactic_divergence:no_parse"] == 2
        assert report.summaries["positional_bias"]["count"] == 1
        # both questions share a context, so self-BLEU is computable
        assert isinstance(rows["s1"]["self_bleu"], float)
        assert isinstance(rows["s1"]["qa_score"], float)

    def test_single_question_context_skips_self_bleu(self):
        samples = [{"question_id": "s1", "context_id": "c1",
                    "question": "what is a?", "answer": "b"}]
        report = metric_report(samples, {"c1": "a b c"},
                               enabled=("self_bleu",))
        assert report.per_sample[0]["self_bleu"] == "skipped:insufficient_questions"
        assert report.summaries["self_bleu"] == {"count": 0}

    def test_no_mlm_backend_skips_qa_score(self):
        samples = [{"question_id": "s1", "context_id": "c1",
                    "question": "q?", "answer": "b"}]
        report = metric_report(samples, {"c1": "a b"}, enabled=("qa_score",))
        assert report.skipped["qa_score:no_backend"] == 1

    def test_syntactic_divergence_via_parses(self):
        samples = [{"question_id": "s1", "context_id": "c1",
                    "question": "What lies in sector two?", "answer": "sector two"}]
        parses = {"s1": {"question": parse_conllu_block(QUESTION_BLOCK),
                         "answer": parse_conllu_block(CONTEXT_BLOCK),
                         "answer_span": [5, 6]}}
        report = metric_report(samples, {"c1": "The site lies in sector two."},
                               parses=parses, enabled=("syntactic_divergence",))
        assert report.per_sample[0]["syntactic_divergence"] == pytest.approx(1.0)
