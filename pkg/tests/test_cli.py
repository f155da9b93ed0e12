import json
import sys

import pytest

from promptseg.cli import EXIT_ADAPTER, EXIT_OK, EXIT_VALIDATION, main

PY = sys.executable
ORACLE = f"{PY} -m promptseg.builtin_adapters oracle --frames {{frames}}"


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_fixtures")
    code = main(
        [
            "fixtures", "--out", str(out), "--seed", "9",
            "--images", "3", "--search", "1",
            "--width", "96", "--height", "96",
            "--rectangles", "2", "--l-shapes", "1", "--ribbons", "0",
        ]
    )
    assert code == EXIT_OK
    return out / "manifest.json"


def test_fixtures_and_concavity(dataset, tmp_path):
    code = main(
        ["concavity", "--manifest", str(dataset), "--out", str(tmp_path), "--seed", "9"]
    )
    assert code == EXIT_OK
    assert (tmp_path / "concavity.csv").exists()
    payload = json.loads((tmp_path / "concavity.json").read_text())
    assert "bins" in payload


def test_prompts_gen(dataset, tmp_path):
    code = main(
        [
            "prompts-gen", "--manifest", str(dataset), "--out", str(tmp_path),
            "--seed", "9", "--combos", "p1,bbox_p4_n8",
        ]
    )
    assert code == EXIT_OK
    files = sorted((tmp_path / "prompts").glob("*.json"))
    assert len(files) == 6  # 3 images x 2 combos


def test_preprocess_tile(dataset, tmp_path):
    code = main(
        [
            "preprocess", "--manifest", str(dataset), "--out", str(tmp_path),
            "--mode", "tile", "--window", "64", "--step", "32",
        ]
    )
    assert code == EXIT_OK
    payload = json.loads((tmp_path / "frames.json").read_text())
    assert len(payload["frames"]) == 3 * 4  # 2x2 tiles per 96px image


def test_eval_interactive_cli(dataset, tmp_path, capsys):
    code = main(
        [
            "eval-interactive", "--manifest", str(dataset),
            "--adapter-cmd", ORACLE, "--combos", "p1",
            "--seed", "9", "--mode", "resize", "--target-size", "192",
            "--out", str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    assert "p1: mean=1.0000" in capsys.readouterr().out


def test_eval_auto_cli(dataset, tmp_path, capsys):
    code = main(
        [
            "eval-auto", "--manifest", str(dataset),
            "--adapter-cmd", ORACLE, "--seed", "9",
            "--mode", "resize", "--target-size", "192",
            "--out", str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    assert "mean=1.0000" in capsys.readouterr().out


def test_grid_search_cli(dataset, tmp_path, capsys):
    code = main(
        [
            "grid-search", "--manifest", str(dataset),
            "--adapter-cmd", ORACLE, "--seed", "9",
            "--mode", "resize", "--target-size", "192",
            "--grid", '{"erosion": [0, 1]}',
            "--out", str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    assert '"erosion": 0' in capsys.readouterr().out


def test_agreement_cli(dataset, tmp_path):
    code = main(
        [
            "agreement", "--manifest-a", str(dataset), "--manifest-b", str(dataset),
            "--out", str(tmp_path), "--seed", "9",
        ]
    )
    assert code == EXIT_OK
    assert (tmp_path / "agreement.json").exists()


def test_validation_error_exit_code(tmp_path):
    code = main(
        ["concavity", "--manifest", str(tmp_path / "missing.json"), "--out", str(tmp_path)]
    )
    assert code == EXIT_VALIDATION


def test_bad_combo_exit_code(dataset, tmp_path):
    code = main(
        [
            "eval-interactive", "--manifest", str(dataset),
            "--adapter-cmd", ORACLE, "--combos", "zz9",
            "--out", str(tmp_path),
        ]
    )
    assert code == EXIT_VALIDATION


def test_adapter_fault_exit_code(dataset, tmp_path):
    code = main(
        [
            "eval-interactive", "--manifest", str(dataset),
            "--adapter-cmd", f"{PY} -c \"import sys; sys.exit(1)\"",
            "--combos", "p1", "--seed", "9",
            "--mode", "resize", "--target-size", "192",
            "--out", str(tmp_path),
        ]
    )
    assert code == EXIT_ADAPTER
