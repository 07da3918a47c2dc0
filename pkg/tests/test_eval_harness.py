import json
from dataclasses import replace

import httpx
import pytest

from changekit.corpus import scan_corpus
from changekit.errors import ConfigError, UnparseableAnswer
from changekit.eval_harness import (
    EchoEndpoint,
    EvalPrompts,
    HttpEndpoint,
    ScriptedEndpoint,
    cot_prompt_sequence,
    evaluate_task,
    make_endpoint,
    parse_count,
    parse_yes_no,
    read_transcripts,
    run_cot_session,
    run_task,
    score_transcripts,
    single_shot_prompt,
    write_transcripts,
)
from changekit.gpt_assist import EndpointConfig


def load(corpus):
    root, config = corpus
    return scan_corpus(root, config.corpus), config


# ---------------------------------------------------------------------------
# answer parsing
# ---------------------------------------------------------------------------

def test_parse_yes_no_cases():
    assert parse_yes_no("Yes, several buildings were built.") is True
    assert parse_yes_no("no") is False
    assert parse_yes_no("There are no changes between the images.") is False
    assert parse_yes_no("NO CHANGE") is False
    assert parse_yes_no("I would say yes.") is True
    with pytest.raises(UnparseableAnswer):
        parse_yes_no("There might be.")


def test_parse_count_cases():
    assert parse_count("Two buildings were constructed.", "building") == 2
    assert parse_count("There are no new roads.", "road") == 0
    assert parse_count("twenty-one houses appeared", "house") == 21
    assert parse_count("I count 14 changed buildings and 2 roads.", "road") == 2
    assert parse_count("I count 14 changed buildings and 2 roads.", "building") == 14
    assert parse_count("roads: 7", "road") == 7
    assert parse_count("none", "road") == 0
    assert parse_count("about five", "building") == 5  # category absent: first count
    with pytest.raises(UnparseableAnswer):
        parse_count("several buildings appeared", "building")


def test_parse_count_digit_identity():
    for n in range(0, 101):
        assert parse_count(f"the second image shows {n} changed roads .", "road") == n


def test_parse_count_prefers_same_sentence():
    text = "There are 4 changed buildings. The roads did not change, none were added."
    assert parse_count(text, "road") == 0
    assert parse_count(text, "building") == 4


# ---------------------------------------------------------------------------
# endpoints
# ---------------------------------------------------------------------------

def test_scripted_endpoint_replays_and_fails():
    script = {"s1": {"binary": "yes", "caption_cot": ["yes", "2 roads", "a caption"]}}
    ep = ScriptedEndpoint(script)
    meta = {"sample_id": "s1", "task": "binary", "round": 0}
    assert ep.chat([], (None, None), meta) == "yes"
    from changekit.errors import EndpointUnavailable

    with pytest.raises(EndpointUnavailable):
        ep.chat([], (None, None), {"sample_id": "s1", "task": "quantify", "round": 0})


def test_http_endpoint_attachments_wire_format(corpus):
    manifest, config = load(corpus)
    sample = manifest.samples[0]
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content.decode())
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    endpoint = HttpEndpoint(
        EndpointConfig(base_url="http://model.test", model="m", backoff_base=0.0),
        image_mode="attachments",
        transport=httpx.MockTransport(handler),
    )
    out = endpoint.chat(
        [{"role": "user", "content": "question?"}],
        (sample.image_a_ref, sample.image_b_ref),
        {"sample_id": sample.sample_id, "task": "binary", "round": 0},
    )
    assert out == "ok"
    content = seen["body"]["messages"][0]["content"]
    assert content[0] == {"type": "text", "text": "question?"}
    images = [p for p in content if p["type"] == "image_url"]
    assert len(images) == 2
    assert all(p["image_url"]["url"].startswith("data:image/png;base64,") for p in images)


def test_http_endpoint_stitched_sends_one_image(corpus):
    manifest, config = load(corpus)
    sample = manifest.samples[0]
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content.decode())
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    endpoint = HttpEndpoint(
        EndpointConfig(base_url="http://model.test", model="m"),
        image_mode="stitched",
        transport=httpx.MockTransport(handler),
    )
    endpoint.chat([{"role": "user", "content": "q"}], (sample.image_a_ref, sample.image_b_ref),
                  {"sample_id": sample.sample_id, "task": "binary", "round": 0})
    images = [p for p in seen["body"]["messages"][0]["content"] if p["type"] == "image_url"]
    assert len(images) == 1


def test_make_endpoint_specs(corpus, tmp_path):
    manifest, config = load(corpus)
    assert isinstance(make_endpoint("echo", manifest, config), EchoEndpoint)
    script_path = tmp_path / "script.json"
    script_path.write_text("{}")
    assert isinstance(make_endpoint(f"scripted:{script_path}", manifest, config), ScriptedEndpoint)
    assert isinstance(make_endpoint("http://model.test", manifest, config), HttpEndpoint)
    with pytest.raises(ConfigError):
        make_endpoint("bogus", manifest, config)


# ---------------------------------------------------------------------------
# CoT sessions
# ---------------------------------------------------------------------------

def test_cot_session_records_three_rounds(corpus):
    manifest, config = load(corpus)
    sample = next(s for s in manifest.samples if s.sample_id == "t03")
    answers = ["yes", "1 road and 1 building changed", "a road and a building appear ."]
    endpoint = ScriptedEndpoint({"t03": {"caption_cot": answers}})
    prompts = EvalPrompts.from_config(config)
    transcript = run_cot_session(endpoint, sample, prompts, manifest.palette)
    assert not transcript.failed
    assert [r[1] for r in transcript.rounds] == answers
    assert [r[0] for r in transcript.rounds] == cot_prompt_sequence(prompts, manifest.palette)
    assert transcript.final_caption == answers[2]
    # prompts are byte-identical across runs
    again = run_cot_session(ScriptedEndpoint({"t03": {"caption_cot": answers}}), sample, prompts, manifest.palette)
    assert [r[0] for r in again.rounds] == [r[0] for r in transcript.rounds]


def test_cot_session_failure_keeps_completed_rounds(corpus):
    manifest, config = load(corpus)
    sample = next(s for s in manifest.samples if s.sample_id == "t03")
    endpoint = ScriptedEndpoint({"t03": {"caption_cot": ["yes"]}})  # round 2 missing
    transcript = run_cot_session(endpoint, sample, EvalPrompts(), manifest.palette)
    assert transcript.failed
    assert len(transcript.rounds) == 1
    assert transcript.rounds[0][1] == "yes"
    assert transcript.final_caption is None


def test_cot_prompts_escalate_difficulty(corpus):
    manifest, config = load(corpus)
    prompts = cot_prompt_sequence(EvalPrompts(), manifest.palette)
    assert "yes or no" in prompts[0]
    assert "roads" in prompts[1] and "buildings" in prompts[1]
    assert prompts[2] == EvalPrompts().caption


def test_prompt_overrides_apply(corpus):
    manifest, config = load(corpus)
    config = replace(config, prompt_overrides={"binary": "Changed? Please answer yes or no."})
    prompts = EvalPrompts.from_config(config)
    assert prompts.binary == "Changed? Please answer yes or no."
    assert single_shot_prompt("binary", prompts, manifest.palette) == prompts.binary


# ---------------------------------------------------------------------------
# evaluation and scoring
# ---------------------------------------------------------------------------

def test_echo_endpoint_attains_optima(corpus, tmp_path):
    manifest, config = load(corpus)
    echo = EchoEndpoint(manifest, config)
    report, _ = evaluate_task(echo, manifest, "binary", config)
    assert report.accuracy == 1.0 and report.recall == 1.0
    report, _ = evaluate_task(echo, manifest, "quantify", config)
    assert report.mae == {"road": 0.0, "building": 0.0}
    report, _ = evaluate_task(echo, manifest, "localize", config)
    assert report.mean_iou == 1.0
    report, _ = evaluate_task(echo, manifest, "caption_direct", config)
    assert report.bleu1 == 1.0 and report.meteor == 1.0 and report.rouge_l == 1.0


def test_always_no_stub_scores_unchanged_fraction(corpus):
    manifest, config = load(corpus)
    script = {s.sample_id: {"binary": "no"} for s in manifest.samples}
    report, _ = evaluate_task(ScriptedEndpoint(script), manifest, "binary", config)
    # test split: t03 changed, t04 unchanged, t05 changed -> accuracy 1/3, recall 0
    assert report.accuracy == pytest.approx(1 / 3)
    assert report.recall == 0.0


def test_unparseable_binary_counts_as_wrong(corpus):
    manifest, config = load(corpus)
    script = {s.sample_id: {"binary": "hard to tell"} for s in manifest.samples}
    report, _ = evaluate_task(ScriptedEndpoint(script), manifest, "binary", config)
    assert report.accuracy == 0.0
    assert report.unparseable == 3


def test_unparseable_count_costs_true_count(corpus):
    manifest, config = load(corpus)
    script = {s.sample_id: {"quantify": "several things changed maybe"} for s in manifest.samples}
    report, _ = evaluate_task(ScriptedEndpoint(script), manifest, "quantify", config)
    # treated as 0: road gt over test split = 1 (t03) + 0 (t04) + 1 (t05) -> MAE 2/3
    assert report.mae["road"] == pytest.approx(2 / 3)
    assert report.mae["building"] == pytest.approx(2 / 3)


def test_localize_unparseable_scores_zero_overlap(corpus):
    manifest, config = load(corpus)
    script = {s.sample_id: {"localize": "around the middle somewhere"} for s in manifest.samples}
    report, _ = evaluate_task(ScriptedEndpoint(script), manifest, "localize", config)
    # t04 has no change and no claimed polygons -> IoU 1; the two changed samples -> 0
    assert report.mean_iou == pytest.approx(1 / 3)


def test_failed_sessions_logged_not_fatal(corpus):
    manifest, config = load(corpus)
    script = {"t03": {"binary": "yes"}, "t04": {"binary": "no"}}  # t05 missing -> failure
    report, entries = evaluate_task(ScriptedEndpoint(script), manifest, "binary", config)
    assert report.failed == 1
    assert report.evaluated == 3
    assert sum(1 for e in entries if e["failed"]) == 1


def test_transcripts_round_trip_and_rescore(corpus, tmp_path):
    manifest, config = load(corpus)
    echo = EchoEndpoint(manifest, config)
    path = tmp_path / "transcripts.jsonl"
    report, entries = evaluate_task(echo, manifest, "caption_cot", config, transcripts_path=path)
    assert path.is_file()
    reloaded = read_transcripts(path)
    assert reloaded == entries
    rescored = score_transcripts(reloaded, manifest, config, "caption_cot")
    assert rescored.to_json() == report.to_json()


def test_direct_and_cot_prompt_streams_differ(corpus):
    manifest, config = load(corpus)
    echo = EchoEndpoint(manifest, config)
    direct = run_task(echo, manifest, "caption_direct", config)
    cot = run_task(echo, manifest, "caption_cot", config)
    direct_prompts = [r["prompt"] for e in direct for r in e["rounds"]]
    cot_prompts = [r["prompt"] for e in cot for r in e["rounds"]]
    assert direct_prompts != cot_prompts
    assert len(cot_prompts) == 3 * len(direct_prompts)
    # both end with the same fixed captioning question
    assert set(direct_prompts) == {EvalPrompts().caption}
    assert cot_prompts[2] == EvalPrompts().caption


def test_eval_split_must_be_nonempty(corpus):
    manifest, config = load(corpus)
    config = replace(config, eval_split="val")
    with pytest.raises(ConfigError):
        run_task(EchoEndpoint(manifest, config), manifest, "binary", config)


def test_write_read_transcripts(tmp_path):
    entries = [{"sample_id": "s", "task": "binary",
                "rounds": [{"prompt": "p", "response": "r"}], "failed": False, "error": None}]
    path = tmp_path / "t.jsonl"
    write_transcripts(entries, path)
    assert read_transcripts(path) == entries
