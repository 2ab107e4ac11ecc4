import json

import pytest
from click.testing import CliRunner

from arenakit.cli import cli
from arenakit.votelog import VoteOutcome, append_record

from conftest import make_record, make_tag, synthetic_log


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def log_path(tmp_path):
    path = tmp_path / "votes.jsonl"
    for r in synthetic_log({"A": 1080, "B": 1000, "C": 920}, 120, seed=1):
        append_record(path, r)
    return str(path)


class TestStats:
    def test_stdout_json(self, runner, log_path):
        res = runner.invoke(cli, ["stats", log_path])
        assert res.exit_code == 0
        body = json.loads(res.output)
        assert body["total_votes"] == 120

    def test_missing_file(self, runner):
        res = runner.invoke(cli, ["stats", "/nope/none.jsonl"])
        assert res.exit_code != 0


class TestRank:
    def test_bt_csv_default(self, runner, log_path):
        res = runner.invoke(cli, ["rank", log_path])
        assert res.exit_code == 0
        lines = res.output.strip().splitlines()
        assert lines[0] == "model,rating,battles,lower,upper"
        assert [l.split(",")[0] for l in lines[1:]] == ["A", "B", "C"]

    def test_elo_method(self, runner, log_path):
        res = runner.invoke(cli, ["rank", log_path, "--method", "elo", "--k-factor", "16"])
        assert res.exit_code == 0
        assert res.output.splitlines()[0].startswith("model,")

    def test_bootstrap_adds_intervals(self, runner, log_path):
        res = runner.invoke(
            cli, ["rank", log_path, "--bootstrap-rounds", "10", "--seed", "1"]
        )
        assert res.exit_code == 0
        first = res.output.strip().splitlines()[1].split(",")
        assert first[3] != "" and first[4] != ""  # lower/upper populated

    def test_json_format_and_out_file(self, runner, log_path, tmp_path):
        out = tmp_path / "table.json"
        res = runner.invoke(cli, ["rank", log_path, "--format", "json", "--out", str(out)])
        assert res.exit_code == 0
        assert json.loads(out.read_text())["models"]

    def test_model_anchor(self, runner, log_path):
        res = runner.invoke(
            cli, ["rank", log_path, "--anchor", "model:B:1200", "--format", "json"]
        )
        body = json.loads(res.output)
        b = next(m for m in body["models"] if m["model"] == "B")
        assert b["rating"] == pytest.approx(1200.0)


class TestMatrix:
    def test_count(self, runner, log_path):
        res = runner.invoke(cli, ["matrix", log_path, "--kind", "count"])
        assert res.exit_code == 0
        assert res.output.splitlines()[0] == "model,A,B,C"

    def test_winfrac(self, runner, log_path):
        res = runner.invoke(cli, ["matrix", log_path, "--kind", "winfrac"])
        assert res.exit_code == 0


class TestSlice:
    def test_slice_csv(self, runner, tmp_path):
        path = tmp_path / "tagged.jsonl"
        for i in range(8):
            append_record(
                path,
                make_record(
                    rid=f"r{i}",
                    outcome=VoteOutcome.LEFT_WIN if i % 2 else VoteOutcome.RIGHT_WIN,
                    tag=make_tag(domain="Urban"),
                ),
            )
        res = runner.invoke(
            cli, ["slice", str(path), "--axis", "image_domain", "--value", "Urban"]
        )
        assert res.exit_code == 0
        assert len(res.output.strip().splitlines()) == 3  # header + 2 models


class TestBench:
    def write_inputs(self, tmp_path):
        bench = tmp_path / "bench.jsonl"
        bench.write_text(
            "\n".join(
                json.dumps({"id": f"s{i}", "question": f"q{i}", "reference_answer": "ref"})
                for i in range(4)
            )
            + "\n"
        )
        providers = tmp_path / "providers.json"
        providers.write_text(
            json.dumps(
                [
                    {"name": "test-m", "type": "mock", "fallback": "an answer"},
                    {"name": "judge-m", "type": "mock", "fallback": "verdict [[A>B]]"},
                ]
            )
        )
        return str(bench), str(providers)

    def test_run_then_score(self, runner, tmp_path):
        bench, providers = self.write_inputs(tmp_path)
        verdicts = tmp_path / "verdicts.jsonl"
        res = runner.invoke(
            cli,
            ["bench", "run", bench, "--providers", providers,
             "--test-model", "test-m", "--judge-model", "judge-m",
             "--out", str(verdicts)],
        )
        assert res.exit_code == 0
        assert len(verdicts.read_text().strip().splitlines()) == 4
        res = runner.invoke(
            cli,
            ["bench", "score", str(verdicts), "--model", "test-m",
             "--bootstrap-rounds", "10"],
        )
        assert res.exit_code == 0
        lines = res.output.strip().splitlines()
        row = dict(zip(lines[0].split(","), lines[1].split(",")))
        assert row["model"] == "test-m"
        assert float(row["score"]) == pytest.approx(100.0)  # all [[A>B]]


class TestTag:
    def test_tags_untagged_records(self, runner, tmp_path):
        path = tmp_path / "log.jsonl"
        append_record(path, make_record(rid="u1"))
        providers = tmp_path / "providers.json"
        providers.write_text(
            json.dumps(
                [{"name": "judge-m", "type": "mock",
                  "fallback": "Descriptive [&] s [&] Urban [&] d"}]
            )
        )
        out = tmp_path / "tagged.jsonl"
        res = runner.invoke(
            cli,
            ["tag", str(path), "--providers", str(providers),
             "--judge-model", "judge-m", "--out", str(out)],
        )
        assert res.exit_code == 0
        obj = json.loads(out.read_text().strip())
        assert obj["tag"]["question_category"] == "Descriptive"


class TestAgree:
    def test_agree_json(self, runner, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("vote\nleftvote\nrightvote\ntievote\n")
        b.write_text("vote\nleftvote\nrightvote\nbothbad_vote\n")
        res = runner.invoke(cli, ["agree", str(a), str(b), "--mode", "four_way"])
        assert res.exit_code == 0
        body = json.loads(res.output)
        assert body["percent_agreement"] == pytest.approx(2 / 3)
        assert body["n_pairs"] == 3


class TestCurate:
    def test_curate_writes_bench_dir(self, runner, tmp_path):
        path = tmp_path / "log.jsonl"
        cats = ["Descriptive", "Analytical"]
        for i in range(30):
            append_record(
                path,
                make_record(rid=f"r{i:02d}", image_ids=(),
                            tag=make_tag(category=cats[i % 2])),
            )
        out = tmp_path / "bench"
        res = runner.invoke(
            cli,
            ["curate", str(path), "--out", str(out), "--target-size", "10", "--seed", "3"],
        )
        assert res.exit_code == 0, res.output
        assert len((out / "bench.jsonl").read_text().strip().splitlines()) == 10
        assert (out / "manifest.json").exists()
        assert (out / "removed.jsonl").exists()

    def test_insufficient_records_is_error(self, runner, tmp_path):
        path = tmp_path / "log.jsonl"
        append_record(path, make_record())
        res = runner.invoke(
            cli, ["curate", str(path), "--out", str(tmp_path / "o"), "--target-size", "5"]
        )
        assert res.exit_code != 0


class TestCorrelate:
    def test_spearman_output(self, runner, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text("model,rating\nA,1100\nB,1000\nC,900\n")
        b.write_text("model,score\nA,88\nB,61\nC,12\n")
        res = runner.invoke(cli, ["correlate", str(a), str(b)])
        assert res.exit_code == 0
        assert json.loads(res.output)["spearman"] == pytest.approx(1.0)


class TestMain:
    def test_usage_error_exit_code(self, monkeypatch, capsys):
        import sys

        from arenakit.cli import main

        monkeypatch.setattr(sys, "argv", ["arenakit", "rank"])  # missing LOG
        assert main() == 1
