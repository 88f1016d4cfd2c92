import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from condec.cli import main
from condec.clients import ENV_CHECKER_URL, ENV_GENERATOR_URL, ENV_SCORER_URL
from condec.losskernel import random_batch, save_batch
from conftest import FIXTURES

CASE = str(FIXTURES / "case_study.jsonl")
FIVE = str(FIXTURES / "five_trees.jsonl")


@pytest.fixture(autouse=True)
def no_service_env(monkeypatch):
    for var in (ENV_GENERATOR_URL, ENV_CHECKER_URL, ENV_SCORER_URL):
        monkeypatch.delenv(var, raising=False)


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


class TestParse:
    def test_happy_path(self, capsys):
        assert main(["parse", "sent1 & sent2 -> hypothesis;"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out == [{"premises": ["sent1", "sent2"],
                        "conclusion": "hypothesis", "conclusion_text": None}]

    def test_malformed_proof_is_data_error(self, capsys):
        assert main(["parse", "sent1 sent2 hypothesis"]) == 2
        assert "data error" in capsys.readouterr().err

    def test_missing_subcommand_is_usage_error(self, capsys):
        assert main([]) == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["parse", "--bogus"]) == 1

    def test_from_file(self, tmp_path, capsys):
        f = tmp_path / "proof.txt"
        f.write_text("sent1 -> hypothesis;")
        assert main(["parse", "--file", str(f)]) == 0
        assert json.loads(capsys.readouterr().out)[0]["premises"] == ["sent1"]


class TestValidate:
    def test_five_trees(self, capsys):
        assert main(["validate", "--input", FIVE]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["instances"] == 5
        assert summary["diagnostics"] == []

    def test_missing_file_is_data_error(self, capsys):
        assert main(["validate", "--input", "/nonexistent.jsonl"]) == 2

    def test_bad_record_strict_vs_tolerant(self, tmp_path, capsys):
        f = tmp_path / "mixed.jsonl"
        good = json.loads((FIXTURES / "five_trees.jsonl").read_text().splitlines()[0])
        f.write_text(json.dumps(good) + "\n" + '{"id": "broken"}' + "\n")
        assert main(["validate", "--input", str(f)]) == 2
        assert main(["validate", "--input", str(f), "--tolerant"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["instances"] == 1
        assert len(summary["diagnostics"]) == 1


class TestMakeStepwise:
    def test_per_step_counts(self, tmp_path):
        out = tmp_path / "steps.jsonl"
        assert main(["make-stepwise", "--input", FIVE, "--output", str(out)]) == 0
        records = read_jsonl(out)
        assert "_config" in records[0]
        assert len(records) - 1 == 11  # total gold steps across the five trees
        body = records[1]
        assert set(body) == {"instance_id", "input", "target"}
        assert body["input"].startswith("$hypothesis$ = ")

    def test_full_tree_counts(self, tmp_path):
        out = tmp_path / "full.jsonl"
        assert main(["make-stepwise", "--input", FIVE, "--strategy", "full-tree",
                     "--output", str(out)]) == 0
        assert len(read_jsonl(out)) - 1 == 5


class TestExportReasonerPairs:
    def test_counts_and_shape(self, tmp_path):
        out = tmp_path / "pairs.jsonl"
        assert main(["export-reasoner-pairs", "--input", FIVE,
                     "--output", str(out)]) == 0
        records = read_jsonl(out)
        assert len(records) - 1 == 11
        pair = records[1]
        assert pair["input"].startswith("Because ")
        assert pair["target"].startswith("Therefore, ")


class TestMakeNegatives:
    def test_vanilla(self, tmp_path):
        out = tmp_path / "neg.jsonl"
        assert main(["make-negatives", "--input", FIVE, "--seed", "7",
                     "--output", str(out)]) == 0
        records = read_jsonl(out)
        negs = [r for r in records if r.get("kind") == "vanilla"]
        assert len(negs) == 11

    def test_deterministic_across_runs(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        argv = ["make-negatives", "--input", FIVE, "--seed", "3"]
        assert main(argv + ["--output", str(a)]) == 0
        assert main(argv + ["--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_enhanced_without_services_is_service_error(self, tmp_path, capsys):
        assert main(["make-negatives", "--input", FIVE, "--mode", "enhanced",
                     "--output", str(tmp_path / "x.jsonl")]) == 3
        assert "service error" in capsys.readouterr().err

    def test_stats_roundtrip(self, tmp_path, capsys):
        out = tmp_path / "neg.jsonl"
        main(["make-negatives", "--input", FIVE, "--output", str(out)])
        assert main(["stats", "--corpus", str(out)]) == 0
        stats = json.loads(capsys.readouterr().out)
        assert stats["retained_by_kind"] == {"vanilla": 11}
        assert stats["errors"] == []


class TestLossCheck:
    def test_passing_batch(self, tmp_path, capsys):
        path = tmp_path / "batch.bin"
        save_batch(path, random_batch(0, n=3, d=4, p=2))
        assert main(["loss-check", "--batch", str(path), "--tau", "0.5"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["passed"] is True
        assert out["max_relative_error"] < 1e-4

    def test_impossible_bound_fails(self, tmp_path, capsys):
        path = tmp_path / "batch.json"
        save_batch(path, random_batch(1, n=3, d=4, p=2))
        assert main(["loss-check", "--batch", str(path), "--tau", "0.5",
                     "--bound", "1e-18"]) == 2
        assert json.loads(capsys.readouterr().out)["passed"] is False

    def test_garbage_batch_is_data_error(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"garbage")
        assert main(["loss-check", "--batch", str(path)]) == 2


class TestEvaluate:
    def test_case_study_summary(self, tmp_path):
        pred = tmp_path / "pred.jsonl"
        pred.write_text((FIXTURES / "pred_gpt4.jsonl").read_text()
                        + (FIXTURES / "pred_gpt35.jsonl").read_text())
        out = tmp_path / "eval.jsonl"
        assert main(["evaluate", "--pred", str(pred), "--gold", CASE,
                     "--per-tree", "--output", str(out)]) == 0
        records = read_jsonl(out)
        assert records[0]["_config"]["trees"] == 2
        per_tree = {r["id"]: r for r in records[1:-1]}
        assert per_tree["case-nys-sunlight"]["overall_all"] in (0.0, 1.0)
        summary = records[-1]["summary"]
        assert summary["overall_all"] == 0.5
        assert summary["leaves_f1"] == pytest.approx((1.0 + 2 / 3) / 2, abs=1e-4)

    def test_unknown_prediction_id_is_data_error(self, tmp_path, capsys):
        pred = tmp_path / "pred.jsonl"
        pred.write_text('{"id": "no-such-tree", "proof": "sent1 -> hypothesis;"}\n')
        assert main(["evaluate", "--pred", str(pred), "--gold", CASE]) == 2

    def test_remote_scorer_without_url_is_service_error(self, tmp_path):
        assert main(["evaluate", "--pred", str(FIXTURES / "pred_gpt4.jsonl"),
                     "--gold", CASE, "--scorer", "remote"]) == 3


class _ProofHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        prior = body["prompt"].rsplit("$proof$ = ", 1)[1]
        steps = [
            "sent14 & sent5 -> int1: new york state is located in the northern hemisphere;",
            "int1 & sent23 -> int2: december is during the winter for new york state;",
            "int2 & sent15 -> hypothesis;",
        ]
        reply = steps[len([c for c in prior if c == ";"])]
        data = json.dumps({"text": reply}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class TestInfer:
    def test_without_url_is_service_error(self, capsys):
        assert main(["infer", "--input", CASE]) == 3
        assert "service error" in capsys.readouterr().err

    def test_end_to_end_against_stub(self, tmp_path):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _ProofHandler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            out = tmp_path / "infer.jsonl"
            url = f"http://127.0.0.1:{server.server_address[1]}"
            assert main(["infer", "--input", CASE, "--generator-url", url,
                         "--output", str(out)]) == 0
            records = read_jsonl(out)
            record = records[1]
            assert record["id"] == "case-nys-sunlight"
            assert record["proof"].endswith("int2 & sent15 -> hypothesis;")
            assert record["diagnostics"] == []
            assert len(record["generations"]) == 3
        finally:
            server.shutdown()
