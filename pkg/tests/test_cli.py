import json

from click.testing import CliRunner

from changekit.cli import main
from changekit.config import parse_config_text


def run(*args):
    return CliRunner().invoke(main, list(args))


def test_generate_and_stats(corpus, tmp_path):
    root, _config = corpus
    out = tmp_path / "out"
    result = run("generate", str(root), str(out), "--config", str(root / "corpus.cfg"))
    assert result.exit_code == 0, result.output
    assert (out / "records.jsonl").is_file()
    assert (out / "stats.json").is_file()
    assert "caption" in result.output

    stats = run("stats", str(out / "records.jsonl"))
    assert stats.exit_code == 0
    assert "Change captioning" in stats.output
    assert "Total" in stats.output


def test_generate_deterministic_bytes(corpus, tmp_path):
    root, _config = corpus
    runs = []
    for name in ("x", "y"):
        out = tmp_path / name
        result = run("generate", str(root), str(out), "--config", str(root / "corpus.cfg"),
                     "--gpt", "stub", "--seed", "3")
        assert result.exit_code == 0, result.output
        runs.append((out / "records.jsonl").read_bytes() + (out / "stats.json").read_bytes())
    assert runs[0] == runs[1]


def test_generate_skip_gpt_only_rule_based(corpus, tmp_path):
    root, _config = corpus
    out = tmp_path / "out"
    result = run("generate", str(root), str(out), "--config", str(root / "corpus.cfg"), "--skip-gpt")
    assert result.exit_code == 0
    provenances = {json.loads(line)["provenance"] for line in (out / "records.jsonl").read_text().splitlines()}
    assert provenances == {"rule_based"}


def test_generate_invalid_corpus_exits_one(corpus, tmp_path):
    root, _config = corpus
    (root / "train" / "A" / "t01.png").unlink()
    (root / "test" / "B" / "t03.png").unlink()
    result = run("generate", str(root), str(tmp_path / "o"), "--config", str(root / "corpus.cfg"))
    assert result.exit_code == 1
    assert "t01" in result.output and "t03" in result.output


def test_generate_missing_root_exits_two(tmp_path):
    result = run("generate", str(tmp_path / "nope"), str(tmp_path / "o"))
    assert result.exit_code == 2


def test_print_config_round_trips(corpus):
    root, _config = corpus
    result = run("generate", str(root), "unused", "--config", str(root / "corpus.cfg"),
                 "--seed", "42", "--precision", "3", "--print-config")
    assert result.exit_code == 0
    effective = parse_config_text(result.output)
    assert effective.seed == 42
    assert effective.precision == 3
    assert effective.corpus.image_width == 32


def test_validate_clean_and_broken(corpus, tmp_path):
    root, _config = corpus
    out = tmp_path / "out"
    assert run("generate", str(root), str(out), "--config", str(root / "corpus.cfg")).exit_code == 0
    dataset = out / "records.jsonl"
    assert run("validate", str(dataset)).exit_code == 0

    lines = dataset.read_text().splitlines()
    record = json.loads(lines[0])
    record["conversations"].append({"from": "assistant", "value": "double assistant"})
    lines.append(json.dumps(record))
    dataset.write_text("\n".join(lines) + "\n")
    result = run("validate", str(dataset))
    assert result.exit_code == 1
    assert "alternate" in result.output


def test_validate_missing_file_exits_two(tmp_path):
    assert run("validate", str(tmp_path / "none.jsonl")).exit_code == 2


def test_evaluate_echo_and_rescore(corpus, tmp_path):
    root, _config = corpus
    transcripts = tmp_path / "t.jsonl"
    report_path = tmp_path / "report.json"
    result = run("evaluate", str(root), "--task", "quantify", "--config", str(root / "corpus.cfg"),
                 "--endpoint", "echo", "--transcripts", str(transcripts), "--report", str(report_path))
    assert result.exit_code == 0, result.output
    assert "MAE" in result.output
    first_report = report_path.read_text()

    rescore = run("evaluate", str(root), "--task", "quantify", "--config", str(root / "corpus.cfg"),
                  "--rescore", "--transcripts", str(transcripts), "--report", str(report_path))
    assert rescore.exit_code == 0
    assert report_path.read_text() == first_report


def test_evaluate_rescore_without_transcripts_fails(corpus):
    root, _config = corpus
    result = run("evaluate", str(root), "--task", "binary", "--config", str(root / "corpus.cfg"), "--rescore")
    assert result.exit_code == 1


def test_evaluate_scripted_endpoint(corpus, tmp_path):
    root, _config = corpus
    script = {sid: {"binary": "no"} for sid in ("t03", "t04", "t05")}
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script))
    result = run("evaluate", str(root), "--task", "binary", "--config", str(root / "corpus.cfg"),
                 "--endpoint", f"scripted:{script_path}")
    assert result.exit_code == 0
    assert "Accuracy 33.33%" in result.output
