"""End-to-end: the evaluation harness drives this adapter (stub mode)
through the wire protocol exactly as it would a real model."""

import sys

import pytest

promptseg_fixtures = pytest.importorskip("promptseg.fixtures")

from promptseg.fixtures import FixtureSpec, synth_fixtures  # noqa: E402
from promptseg.harness import EvalRun, eval_automatic, eval_interactive  # noqa: E402


@pytest.fixture()
def stub_cmd(tmp_path):
    config = tmp_path / "config.json"
    config.write_text('{"checkpoint": null, "backbone": "ViT-B", "device": "cpu"}\n')
    return f"{sys.executable} -m sam_adapter {config} --dry-run"


@pytest.fixture()
def dataset(tmp_path):
    spec = FixtureSpec(
        n_images=2, n_search=0, width=96, height=96,
        rectangles=2, l_shapes=1, ribbons=0, min_size=8, max_size=14,
    )
    return synth_fixtures(42, spec, tmp_path / "data")


def test_interactive_run_completes(dataset, tmp_path, stub_cmd):
    run = EvalRun(
        manifest=dataset,
        mode="interactive",
        preprocessing="resize",
        adapter_cmd=stub_cmd,
        seed=42,
        out_dir=tmp_path / "out",
        combos=("bbox", "p1"),
        target_size=192,
    )
    result = eval_interactive(run)
    for dq in result.per_combo.values():
        assert 0.0 <= dq.mean_quality <= 1.0
    # a box prompt makes the stub fill the (mapped) tight box, which for
    # rectangular objects is nearly the object itself
    assert result.per_combo["bbox"].mean_quality > result.per_combo["p1"].mean_quality


def test_automatic_run_completes(dataset, tmp_path, stub_cmd):
    run = EvalRun(
        manifest=dataset,
        mode="automatic",
        preprocessing="tile",
        adapter_cmd=stub_cmd,
        seed=42,
        out_dir=tmp_path / "out",
        window=64,
        step=32,
    )
    result = eval_automatic(run)
    assert 0.0 <= result.mean_quality <= 1.0
