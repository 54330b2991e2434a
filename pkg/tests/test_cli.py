"""CLI surface tests: verb behavior and exit-code mapping."""
import json

import pytest

from viewdiv.cli import main


@pytest.fixture()
def run_config(small_corpus, tmp_path):
    cfg = {
        "corpus_manifest": str(small_corpus),
        "configs": ["baseline", "zero_overlap", "smaller_crop_zero_overlap"],
        "data_fraction": 0.25,
        "seed": 13,
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def read_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_score_writes_artifacts_and_is_deterministic(run_config, tmp_path):
    out1 = tmp_path / "o1"
    out8 = tmp_path / "o8"
    assert main(["score", "--config", str(run_config), "--out-dir", str(out1)]) == 0
    assert (
        main(
            ["score", "--config", str(run_config), "--out-dir", str(out8), "--workers", "8"]
        )
        == 0
    )
    for name in ("report.json", "pairs.csv", "plotdata.json"):
        assert (out1 / name).read_bytes() == (out8 / name).read_bytes()
    assert (out1 / "timings.json").exists()
    report = json.loads((out1 / "report.json").read_text())
    assert set(report) == {"per_config", "run"}


def test_sample_emits_pairs(run_config, tmp_path, capsys):
    assert main(["sample", "--config", str(run_config)]) == 0
    payload = read_json(capsys)
    assert set(payload) == {"pairs", "skipped", "run"}
    pair = payload["pairs"][0]
    assert len(pair["patches_1"]) == 9  # grid3 default
    assert len(pair["v1"]) == 4
    assert pair["target_side"] is None
    out = tmp_path / "pairs.json"
    assert main(["sample", "--config", str(run_config), "--out", str(out)]) == 0
    assert json.loads(out.read_text()) == payload


def test_range_verb(run_config, tmp_path, capsys):
    out = tmp_path / "scored"
    main(["score", "--config", str(run_config), "--out-dir", str(out)])
    assert main(["range", "--report", str(out / "report.json")]) == 0
    rule = read_json(capsys)
    assert rule["verdicts"]["baseline"] == "inside"
    assert set(rule) == {"upper", "lower", "verdicts"}


def test_range_missing_anchor_is_input_error(small_corpus, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(
        json.dumps(
            {"corpus_manifest": str(small_corpus), "configs": ["baseline"], "data_fraction": 0.1}
        )
    )
    out = tmp_path / "scored"
    main(["score", "--config", str(cfg), "--out-dir", str(out)])
    assert main(["range", "--report", str(out / "report.json")]) == 2


def test_fractions_verb(small_corpus, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(
        json.dumps(
            {"corpus_manifest": str(small_corpus), "configs": ["baseline"], "seed": 2}
        )
    )
    out = tmp_path / "fractions.json"
    code = main(
        ["fractions", "--config", str(cfg), "--fractions", "1.0,0.5", "--out", str(out)]
    )
    assert code == 0
    table = json.loads(out.read_text())
    assert table["fractions"] == [0.5, 1.0]
    assert "wall_clock_ms" not in table
    sidecar = json.loads(out.with_suffix(".timings.json").read_text())
    assert set(sidecar["wall_clock_ms"]) == {"0.5", "1.0"}
    # stability reference is mandatory
    assert main(["fractions", "--config", str(cfg), "--fractions", "0.5,0.25"]) == 2


def test_oracle_verb(capsys):
    assert main(["oracle", "--instances", "5", "--seed", "1"]) == 0
    payload = read_json(capsys)
    assert payload["all_ok"] is True
    assert payload["instances"] == 5
    assert payload["max_overshoot"] <= 1e-9


def test_loss_verb(tmp_path, capsys):
    payload = {
        "info_nce": {
            "q": [1.0, 0.0],
            "k_pos": [0.0, 1.0],
            "k_negs": [[0.0, 1.0]],
            "tau": 0.5,
        },
        "dino": {
            "teacher_probs": [0.5, 0.5],
            "student_log_probs": [-0.6931471805599453, -0.6931471805599453],
        },
    }
    inp = tmp_path / "loss.json"
    inp.write_text(json.dumps(payload))
    assert main(["loss", "--input", str(inp)]) == 0
    out = read_json(capsys)
    # equal positive/negative logits: loss = ln 2; matched distributions: CE = ln 2
    assert out["info_nce"]["loss"] == pytest.approx(0.6931471805599453, abs=1e-12)
    assert len(out["info_nce"]["grad_q"]) == 2
    assert out["dino"]["cross_entropy"] == pytest.approx(0.6931471805599453, abs=1e-12)


def test_loss_numerical_error_exit_code(tmp_path):
    inp = tmp_path / "loss.json"
    inp.write_text(
        json.dumps(
            {"info_nce": {"q": [1.0, 0.0], "k_pos": [1.0, 0.0], "k_negs": [], "tau": 1e-12}}
        )
    )
    assert main(["loss", "--input", str(inp)]) == 3


def test_loss_empty_payload_is_input_error(tmp_path):
    inp = tmp_path / "loss.json"
    inp.write_text(json.dumps({"unrelated": 1}))
    assert main(["loss", "--input", str(inp)]) == 2


def test_input_error_exit_codes(tmp_path):
    assert main(["score", "--config", str(tmp_path / "nope.json"), "--out-dir", "x"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    assert main(["score", "--config", str(bad), "--out-dir", "x"]) == 2
    # corpus manifest missing -> input error
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"corpus_manifest": "missing/manifest.json"}))
    assert main(["score", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2


def test_unknown_verb_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
