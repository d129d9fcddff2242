"""WER against a brute-force oracle, benchmark set construction, judges."""
import dataclasses
import functools
import json

import numpy as np
import pytest

from speechmime.corpus import Utterance
from speechmime.errors import ConfigError, DataError
from speechmime.evalbench import (BLOCKLIST_CHARS, MATH_PROMPT, ROLE_OPTIONS,
                                  ROLE_PROMPT, build_asr_set, build_eval_prefix,
                                  build_families, build_math_set,
                                  build_prompt_gen_set, build_role_set,
                                  extract_math_answer, filter_math_problem,
                                  judge_prompt_gen, load_math_shot, parse_role,
                                  read_math_problems, run_eval, wer)
from speechmime.sampling import GenerationConfig
from speechmime.synth import SynthConfig


def oracle_distance(ref, hyp):
    """Plain recursive Levenshtein over words, memoized; independent of wer()."""
    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        same = 0 if ref[i] == hyp[j] else 1
        return min(go(i + 1, j + 1) + same, go(i + 1, j) + 1, go(i, j + 1) + 1)

    return go(0, 0)


def test_wer_fixed_examples():
    assert wer("a b c", "a b c") == 0.0
    assert wer("a b c", "a x c") == pytest.approx(1 / 3)
    assert wer("a", "") == 1.0


def test_wer_empty_reference_rejected():
    with pytest.raises(DataError):
        wer("", "something")


def test_wer_matches_brute_force_on_random_pairs():
    rng = np.random.Generator(np.random.PCG64(0))
    alphabet = ["a", "b", "c", "d", "e"]
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(0, 9))
        ref = [alphabet[int(k)] for k in rng.integers(0, 5, size=n)]
        hyp = [alphabet[int(k)] for k in rng.integers(0, 5, size=m)]
        expected = oracle_distance(tuple(ref), tuple(hyp)) / len(ref)
        assert wer(" ".join(ref), " ".join(hyp)) == pytest.approx(expected)


def test_wer_can_exceed_one():
    assert wer("a", "x y z") == 3.0


# --- instruction families ---------------------------------------------------

def test_family_inventory(families):
    assert len(families) == 10
    seen = [f for f in families if f.seen]
    unseen = [f for f in families if not f.seen]
    assert len(seen) == 5 and len(unseen) == 5
    assert len({f.family_id for f in families}) == 10


def test_family_answers_satisfy_their_own_judges(families, grammar):
    from speechmime.corpus import generate_sentence
    for i in range(20):
        transcript = generate_sentence(grammar, i)
        for fam in families:
            answer = fam.answer(transcript)
            assert answer, (fam.family_id, transcript)
            assert fam.predicate(answer), (fam.family_id, transcript, answer)
            assert wer(transcript, fam.normalize(answer)) <= 0.2, fam.family_id


def test_uppercase_family_judges_case(families):
    fam = next(f for f in families if "upper" in f.family_id)
    assert fam.predicate("THE CAT RUNS")
    assert not fam.predicate("the cat runs")


def test_wrong_content_fails_judge(families):
    transcript = "the cat runs quickly"
    for fam in families:
        item_like = fam.answer("the dog naps alone today")
        assert wer(transcript, fam.normalize(item_like)) > 0.2


# --- prompt generalization set ----------------------------------------------

def clips(n, grammar):
    from speechmime.corpus import generate_sentence
    return [Utterance(id=f"clip{i:02d}", text=generate_sentence(grammar, i),
                      split="held_out_eval") for i in range(n)]


def test_prompt_gen_set_is_10_by_10(families, grammar, synth_cfg):
    items = build_prompt_gen_set(clips(10, grammar), families, synth_cfg)
    assert len(items) == 100
    fams = {i.metadata["family"] for i in items}
    assert len(fams) == 10
    per = {}
    for it in items:
        per[it.metadata["family"]] = per.get(it.metadata["family"], 0) + 1
    assert set(per.values()) == {10}
    assert all(it.task == "prompt_gen" for it in items)


def test_prompt_gen_wrong_clip_count(families, grammar, synth_cfg):
    with pytest.raises(ConfigError, match="10"):
        build_prompt_gen_set(clips(9, grammar), families, synth_cfg)
    with pytest.raises(ConfigError):
        build_prompt_gen_set(clips(11, grammar), families, synth_cfg)


def test_prompt_gen_duplicate_families(families, grammar, synth_cfg):
    dup = families[:9] + [families[0]]
    with pytest.raises(ConfigError):
        build_prompt_gen_set(clips(10, grammar), dup, synth_cfg)


def test_prompt_gen_judge_round_trip(families, grammar, synth_cfg):
    items = build_prompt_gen_set(clips(10, grammar), families, synth_cfg)
    by_id = {f.family_id: f for f in families}
    item = items[0]
    fam = by_id[item.metadata["family"]]
    good = fam.answer(item.reference)
    assert judge_prompt_gen(item, good, by_id).passed
    assert not judge_prompt_gen(item, "", by_id).passed


# --- role set ----------------------------------------------------------------

def test_role_set_composition(role_templates, grammar, synth_cfg):
    rng = np.random.Generator(np.random.PCG64(3))
    items = build_role_set(role_templates, grammar, synth_cfg, rng)
    assert len(items) == 60
    per = {}
    for it in items:
        per[it.reference] = per.get(it.reference, 0) + 1
    assert per == {role: 12 for role in ROLE_OPTIONS}
    assert all(it.prompt == ROLE_PROMPT for it in items)


def test_role_set_deterministic(role_templates, grammar, synth_cfg):
    a = build_role_set(role_templates, grammar, synth_cfg,
                       np.random.Generator(np.random.PCG64(4)))
    b = build_role_set(role_templates, grammar, synth_cfg,
                       np.random.Generator(np.random.PCG64(4)))
    assert [i.item_id for i in a] == [i.item_id for i in b]
    assert [i.reference for i in a] == [i.reference for i in b]
    assert [np.asarray(i.speech.frames).sum() for i in a] == \
           [np.asarray(i.speech.frames).sum() for i in b]


def test_role_set_needs_twelve_patterns(role_templates, grammar, synth_cfg):
    starved = dict(role_templates)
    starved["doctor"] = role_templates["doctor"][:11]
    rng = np.random.Generator(np.random.PCG64(5))
    with pytest.raises(ConfigError, match="12"):
        build_role_set(starved, grammar, synth_cfg, rng)


def test_parse_role_examples():
    assert parse_role("the speaker is a doctor") == "doctor"
    assert parse_role("The speaker is a doctor.") == "doctor"
    assert parse_role("maybe a doctor or a teacher") is None
    assert parse_role("no role mentioned here") is None
    assert parse_role("doctors everywhere") is None  # word-level mention only


# --- math --------------------------------------------------------------------

def test_math_filter_triplet():
    keep = ("Natalia sold clips to 48 of her friends in April, and then she "
            "sold half as many clips in May. How many clips did Natalia sell "
            "altogether in April and May?")
    assert filter_math_problem(keep)
    assert not filter_math_problem("Compute 3^2 + x = 7")
    assert not filter_math_problem("She split 1/2 of the pie")


def test_math_filter_blocklist_is_exact():
    for ch in BLOCKLIST_CHARS:
        assert not filter_math_problem(f"count {ch} this")


def test_extract_math_answer():
    assert extract_math_answer("she sold 72 clips total. #### 18") == 18
    assert extract_math_answer("altogether she spent $18.\n#### 18") == 18
    assert extract_math_answer("The total is 1,250 apples.") == 1250
    assert extract_math_answer("I am not sure.") is None


def test_extract_prefers_last_marker():
    assert extract_math_answer("#### 3 no wait #### 7") == 7


def test_packaged_math_problems_pass_filter():
    problems = read_math_problems()
    assert len(problems) >= 30
    for p in problems:
        assert filter_math_problem(p["question"]), p["id"]
        float(p["answer"])


def test_math_set_construction(synth_cfg):
    problems = read_math_problems()
    zero = build_math_set(problems, synth_cfg, shots=0)
    assert len(zero) == len(problems)
    assert zero[0].item_id.startswith("math0:")
    assert zero[0].text_prefix is None
    shot = load_math_shot()
    one = build_math_set(problems, synth_cfg, shots=1, shot_text=shot)
    assert one[0].item_id.startswith("math1:")
    assert one[0].text_prefix
    assert all(it.prompt == MATH_PROMPT for it in one)


def test_math_one_shot_needs_text(synth_cfg):
    problems = read_math_problems()
    with pytest.raises(ConfigError):
        build_math_set(problems, synth_cfg, shots=1, shot_text=None)
    with pytest.raises(ConfigError):
        build_math_set(problems, synth_cfg, shots=2, shot_text="x")


def test_read_math_problems_reports_line(tmp_path):
    path = tmp_path / "math.jsonl"
    path.write_text('{"id": "m1", "question": "one and one", "answer": "2"}\nnot json\n')
    with pytest.raises(DataError, match="line 2"):
        read_math_problems(path)


# --- asr set and the full eval loop ------------------------------------------

def test_asr_set(grammar, synth_cfg):
    utts = clips(7, grammar)
    items = build_asr_set(utts, synth_cfg, "write down the exact words you hear")
    assert len(items) == 7
    assert items[0].item_id == "asr:clip00"
    assert items[0].reference == utts[0].text


class ScriptedModel:
    """Eval model returning a canned response per item id."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = []

    def generate_text(self, item, prefix, cfg, rng):
        self.calls.append(item.item_id)
        return self.fn(item)


def run_suite(items, tokenizer, families=None, seed=23):
    return run_eval(ScriptedModel(lambda it: it.reference), items, tokenizer,
                    "you are a helpful assistant", GenerationConfig(seed=0),
                    seed=seed, families=families,
                    metadata={"checkpoint_checksum": "f" * 16})


def test_transcript_echo_model_gets_zero_wer(grammar, synth_cfg, tokenizer):
    items = build_asr_set(clips(6, grammar), synth_cfg, "transcribe")
    report = run_suite(items, tokenizer)
    assert report.scores["asr_wer"] == 0.0


def test_constant_student_scores_one_fifth(role_templates, grammar, synth_cfg,
                                           tokenizer):
    rng = np.random.Generator(np.random.PCG64(6))
    items = build_role_set(role_templates, grammar, synth_cfg, rng)
    model = ScriptedModel(lambda it: "the speaker is a student")
    report = run_eval(model, items, tokenizer, "sys", GenerationConfig(seed=0),
                      seed=23, families=None,
                      metadata={"checkpoint_checksum": "0" * 16})
    assert report.scores["role"] == pytest.approx(0.2)


def test_echo_model_aces_math(synth_cfg, tokenizer):
    problems = read_math_problems()
    items = build_math_set(problems, synth_cfg, shots=0)
    model = ScriptedModel(lambda it: f"#### {it.reference}")
    report = run_eval(model, items, tokenizer, "sys", GenerationConfig(seed=0),
                      seed=23, families=None,
                      metadata={"checkpoint_checksum": "0" * 16})
    assert report.scores["math"] == 1.0


def test_transcript_model_prompt_gen_rate(families, grammar, synth_cfg, tokenizer):
    """Echoing the raw transcript passes exactly the families whose own judge
    accepts the unmodified transcript; the expected rate is recomputed here."""
    items = build_prompt_gen_set(clips(10, grammar), families, synth_cfg)
    by_id = {f.family_id: f for f in families}
    expected = np.mean([judge_prompt_gen(it, it.reference, by_id).passed
                        for it in items])
    report = run_suite(items, tokenizer, families=families)
    assert report.scores["prompt_gen"] == pytest.approx(expected)


def test_run_eval_sorts_items_and_is_deterministic(grammar, synth_cfg, tokenizer):
    items = build_asr_set(clips(5, grammar), synth_cfg, "transcribe")
    a = run_suite(list(reversed(items)), tokenizer)
    b = run_suite(items, tokenizer)
    assert [v.item_id for v in a.verdicts] == [v.item_id for v in b.verdicts]
    assert a.scores == b.scores


def test_run_eval_survives_model_failure(grammar, synth_cfg, tokenizer):
    items = build_asr_set(clips(4, grammar), synth_cfg, "transcribe")

    def flaky(item):
        if item.item_id.endswith("01"):
            raise RuntimeError("boom")
        return item.reference

    report = run_eval(ScriptedModel(flaky), items, tokenizer, "sys",
                      GenerationConfig(seed=0), seed=23, families=None,
                      metadata={"checkpoint_checksum": "0" * 16})
    failed = [v for v in report.verdicts if v.detail.get("model_failure")]
    assert len(failed) == 1
    assert not failed[0].passed
    assert len(report.verdicts) == 4


def test_math_budget_is_larger(grammar, synth_cfg, tokenizer):
    problems = read_math_problems()[:2]
    items = build_math_set(problems, synth_cfg, shots=0)
    seen_budget = {}

    class Probe:
        def generate_text(self, item, prefix, cfg, rng):
            seen_budget[item.item_id] = cfg.max_new_tokens
            return "#### 1"

    run_eval(Probe(), items, tokenizer, "sys", GenerationConfig(seed=0),
             seed=23, families=None, metadata={"checkpoint_checksum": "0" * 16})
    assert set(seen_budget.values()) == {200}


def test_eval_prefix_layout(grammar, synth_cfg, tokenizer):
    problems = read_math_problems()[:1]
    shot = load_math_shot()
    item = build_math_set(problems, synth_cfg, shots=1, shot_text=shot)[0]
    seq = build_eval_prefix(item, tokenizer, "sys prompt")
    kinds = [type(seg).__name__ for seg in seq.segments]
    assert kinds.count("SpeechSegment") == 1
    # the worked example rides along as text before the speech
    joined = " ".join(
        tokenizer.decode(list(seg.ids)) for seg in seq.segments
        if type(seg).__name__ == "TextSegment")
    assert "####" in joined
