import json
import sys
from pathlib import Path

import numpy as np
import pytest

import promptseg.mask
import promptseg.preprocess
from promptseg.fixtures import FixtureSpec, synth_fixtures
from promptseg.geometry import concavity
from promptseg.harness import (
    EvalRun,
    ValidationError,
    agreement,
    eval_automatic,
    eval_interactive,
    grid_search,
)
from promptseg.mask import (
    DatasetRecord,
    LabelMask,
    extract_instances,
    load_label_mask,
    load_manifest,
    save_label_mask,
    save_manifest,
)
from promptseg.metrics import quality
from promptseg.rng import derive_seed

PY = sys.executable
ORACLE = f"{PY} -m promptseg.builtin_adapters oracle --frames {{frames}}"
NULL = f"{PY} -m promptseg.builtin_adapters null"

SMALL_SPEC = FixtureSpec(
    n_images=3,
    n_search=1,
    width=96,
    height=96,
    rectangles=2,
    l_shapes=1,
    ribbons=0,
    min_size=8,
    max_size=14,
)

RECT_SPEC = FixtureSpec(
    n_images=2,
    n_search=1,
    width=96,
    height=96,
    rectangles=3,
    l_shapes=0,
    ribbons=0,
    min_size=8,
    max_size=14,
)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures_small")
    return synth_fixtures(11, SMALL_SPEC, out)


@pytest.fixture(scope="module")
def rect_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures_rect")
    return synth_fixtures(17, RECT_SPEC, out)


def make_run(manifest, out, mode="interactive", preprocessing="resize", **kw):
    defaults = dict(
        manifest=Path(manifest),
        mode=mode,
        preprocessing=preprocessing,
        adapter_cmd=ORACLE,
        seed=5,
        out_dir=Path(out),
        target_size=192,  # integer multiple of the 96 px fixtures: lossless
        window=64,
        step=32,
    )
    defaults.update(kw)
    if mode == "interactive" and "combos" not in defaults:
        defaults["combos"] = ("p1", "bbox")
    return EvalRun(**defaults)


class TestFixtures:
    def test_two_runs_byte_identical(self, tmp_path):
        m1 = synth_fixtures(3, SMALL_SPEC, tmp_path / "a")
        m2 = synth_fixtures(3, SMALL_SPEC, tmp_path / "b")
        for r1, r2 in zip(load_manifest(m1), load_manifest(m2)):
            assert r1.image.read_bytes() == r2.image.read_bytes()
            assert r1.mask.read_bytes() == r2.mask.read_bytes()
            assert r1.split == r2.split
        assert m1.read_text() == m2.read_text()

    def test_rectangle_spec_all_convex(self, rect_dataset):
        for record in load_manifest(rect_dataset):
            for inst in extract_instances(load_label_mask(record.mask)):
                assert concavity(inst) == 0.0

    def test_ribbon_heavy_spec_is_concave(self, tmp_path):
        spec = FixtureSpec(
            n_images=2, n_search=0, width=256, height=256,
            rectangles=0, l_shapes=0, ribbons=6,
        )
        manifest = synth_fixtures(23, spec, tmp_path)
        values = []
        for record in load_manifest(manifest):
            values.extend(
                concavity(m) for m in extract_instances(load_label_mask(record.mask))
            )
        assert len(values) == 12
        over = sum(1 for v in values if v > 0.2)
        assert over / len(values) > 0.5

    def test_split_assignment(self, small_dataset):
        records = load_manifest(small_dataset)
        assert [r.split for r in records] == ["search", "eval", "eval"]

    def test_infeasible_spec_rejected(self, tmp_path):
        from promptseg.fixtures import FixtureError

        spec = FixtureSpec(n_images=1, n_search=0, width=24, height=24,
                           rectangles=30, l_shapes=0, ribbons=0,
                           min_size=8, max_size=10, max_retries=20)
        with pytest.raises(FixtureError):
            synth_fixtures(1, spec, tmp_path)


class TestEvalInteractive:
    def test_exact_oracle_scores_one_resize(self, small_dataset, tmp_path):
        run = make_run(small_dataset, tmp_path / "out")
        result = eval_interactive(run)
        for combo, dq in result.per_combo.items():
            assert dq.mean_quality == 1.0, combo
            assert dq.pooled_quality == 1.0

    def test_exact_oracle_scores_one_tile(self, small_dataset, tmp_path):
        run = make_run(small_dataset, tmp_path / "out", preprocessing="tile")
        result = eval_interactive(run)
        for dq in result.per_combo.values():
            assert dq.mean_quality == 1.0

    def test_null_adapter_scores_zero(self, small_dataset, tmp_path):
        run = make_run(small_dataset, tmp_path / "out", adapter_cmd=NULL)
        result = eval_interactive(run)
        for dq in result.per_combo.values():
            assert dq.mean_quality == 0.0

    def test_erosion_strictly_ordered(self, small_dataset, tmp_path):
        qualities = {}
        for radius in (1, 2):
            run = make_run(
                small_dataset,
                tmp_path / f"e{radius}",
                preprocessing="tile",
                adapter_cmd=ORACLE + f" --erosion {radius}",
                combos=("p1",),
            )
            qualities[radius] = eval_interactive(run).per_combo["p1"].mean_quality
        assert qualities[1] > qualities[2]

    def test_report_files_written_with_seed(self, small_dataset, tmp_path):
        run = make_run(small_dataset, tmp_path / "out", combos=("p1",))
        eval_interactive(run)
        summary = json.loads((run.out_dir / "summary.json").read_text())
        assert summary["seed"] == 5
        assert "p1" in summary["combos"]
        csv_lines = (run.out_dir / "quality__p1.csv").read_text().splitlines()
        assert csv_lines[0] == "# seed=5"
        plot = (run.out_dir / "plot_quality.csv").read_text().splitlines()
        assert plot[0] == "# seed=5"
        assert plot[1] == "combo,mean_quality,pooled_quality"

    def test_prompt_cache_reused_and_validated(self, small_dataset, tmp_path):
        run = make_run(small_dataset, tmp_path / "out", combos=("p1",))
        eval_interactive(run)
        caches = sorted((run.out_dir / "prompts").glob("*.json"))
        assert caches
        before = [c.read_bytes() for c in caches]
        eval_interactive(run)  # second run loads the same caches
        assert [c.read_bytes() for c in caches] == before

    def test_end_to_end_determinism(self, small_dataset, tmp_path):
        run = make_run(small_dataset, tmp_path / "out", combos=("bbox_p2_n2",))
        eval_interactive(run)
        tracked = ["summary.json", "plot_quality.csv", "quality__bbox_p2_n2.csv"]
        snapshot = {name: (run.out_dir / name).read_bytes() for name in tracked}
        eval_interactive(run)
        for name in tracked:
            assert (run.out_dir / name).read_bytes() == snapshot[name], name

    def test_validation_of_combos(self, small_dataset, tmp_path):
        with pytest.raises(ValidationError):
            make_run(small_dataset, tmp_path / "out", combos=())


class TestEvalAutomatic:
    def test_exact_oracle_both_modes(self, small_dataset, tmp_path):
        for preprocessing in ("resize", "tile"):
            run = make_run(
                small_dataset, tmp_path / preprocessing,
                mode="automatic", preprocessing=preprocessing,
            )
            result = eval_automatic(run)
            assert result.mean_quality == 1.0, preprocessing

    def test_dropout_matches_brute_force_recomputation(self, tmp_path):
        spec = FixtureSpec(
            n_images=1, n_search=0, width=96, height=96,
            rectangles=6, l_shapes=0, ribbons=0, min_size=8, max_size=12,
        )
        manifest = synth_fixtures(31, spec, tmp_path / "data")
        record = load_manifest(manifest)[0]
        gt = load_label_mask(record.mask)
        jitter = 77
        run = make_run(
            manifest, tmp_path / "out", mode="automatic",
            adapter_cmd=ORACLE + f" --dropout 0.5 --jitter-seed {jitter}",
        )
        result = eval_automatic(run)
        # recompute the surviving set with the documented dropout rule
        surviving = [
            obj_id
            for obj_id in gt.instance_ids()
            if derive_seed("dropout", jitter, obj_id) / 2.0**64 >= 0.5
        ]
        expected_labels = np.where(np.isin(gt.labels, surviving), gt.labels, 0)
        expected = quality(LabelMask(expected_labels.astype(np.int32)), gt)
        [report] = result.per_image.values()
        assert report.quality == expected.quality

    def test_automatic_reports(self, small_dataset, tmp_path):
        run = make_run(small_dataset, tmp_path / "out", mode="automatic")
        eval_automatic(run, params={"erosion": 0})
        summary = json.loads((run.out_dir / "summary.json").read_text())
        assert summary["mode"] == "automatic"
        assert summary["params"] == {"erosion": 0}
        assert (run.out_dir / "quality__automatic.csv").exists()


class TestGridSearch:
    def test_single_combination(self, rect_dataset, tmp_path):
        result = grid_search(
            manifest=rect_dataset,
            adapter_cmd=ORACLE,
            grid={"erosion": [1]},
            seed=1,
            out_dir=tmp_path / "gs",
            preprocessing="resize",
            target_size=192,
        )
        assert result.best_params == {"erosion": 1}
        assert len(result.evaluations) == 1

    def test_erosion_grid_best_is_zero(self, rect_dataset, tmp_path):
        result = grid_search(
            manifest=rect_dataset,
            adapter_cmd=ORACLE,
            grid={"erosion": [2, 0, 1]},
            seed=1,
            out_dir=tmp_path / "gs",
            preprocessing="tile",
            window=64,
            step=32,
        )
        assert result.best_params == {"erosion": 0}
        assert result.best_quality == 1.0
        # evaluations run in sorted parameter order, so quality falls as
        # erosion grows
        qualities = [e["mean_quality"] for e in result.evaluations]
        assert qualities == sorted(qualities, reverse=True)
        assert (tmp_path / "gs" / "grid_search.json").exists()

    def test_cartesian_count(self, rect_dataset, tmp_path):
        result = grid_search(
            manifest=rect_dataset,
            adapter_cmd=ORACLE,
            grid={"erosion": [0, 1], "dropout": [0.0, 0.5, 1.0]},
            seed=1,
            out_dir=tmp_path / "gs",
            preprocessing="resize",
            target_size=192,
        )
        assert len(result.evaluations) == 6

    def test_eval_split_never_read(self, rect_dataset, tmp_path, monkeypatch):
        eval_masks = {
            str(r.mask) for r in load_manifest(rect_dataset) if r.split == "eval"
        }
        eval_images = {
            str(r.image) for r in load_manifest(rect_dataset) if r.split == "eval"
        }
        seen: list[str] = []
        real_load_mask = promptseg.mask.load_label_mask
        real_load_image = promptseg.preprocess.load_image

        def spy_mask(path):
            seen.append(str(path))
            return real_load_mask(path)

        def spy_image(path):
            seen.append(str(path))
            return real_load_image(path)

        monkeypatch.setattr(promptseg.mask, "load_label_mask", spy_mask)
        monkeypatch.setattr(promptseg.preprocess, "load_image", spy_image)
        grid_search(
            manifest=rect_dataset,
            adapter_cmd=ORACLE,
            grid={"erosion": [0, 1]},
            seed=1,
            out_dir=tmp_path / "gs",
            preprocessing="resize",
            target_size=192,
        )
        touched = set(seen)
        assert not (touched & eval_masks)
        assert not (touched & eval_images)
        # the adapter subprocess can only learn paths from frames manifests
        for frames_json in (tmp_path / "gs").rglob("frames.json"):
            payload = json.loads(frames_json.read_text())
            for frame in payload["frames"]:
                assert frame["source_mask"] not in eval_masks
                assert frame["source_image"] not in eval_images

    def test_empty_grid_rejected(self, rect_dataset, tmp_path):
        with pytest.raises(ValidationError):
            grid_search(
                manifest=rect_dataset, adapter_cmd=ORACLE, grid={},
                seed=1, out_dir=tmp_path / "gs",
            )


def _eroded_copy(manifest_path: Path, out_dir: Path) -> Path:
    """Second annotation pass: every mask eroded by one pixel."""
    from scipy import ndimage

    records = load_manifest(manifest_path)
    out_dir.mkdir(parents=True)
    new_records = []
    for record in records:
        gt = load_label_mask(record.mask)
        eroded = np.zeros_like(gt.labels)
        for inst in extract_instances(gt):
            shrunk = ndimage.binary_erosion(inst.mask, structure=np.ones((3, 3)))
            eroded[shrunk] = inst.object_id
        path = out_dir / record.mask.name
        save_label_mask(LabelMask(eroded), path)
        new_records.append(DatasetRecord(image=record.image, mask=path, split=record.split))
    manifest = out_dir / "manifest.json"
    save_manifest(new_records, manifest)
    return manifest


class TestAgreement:
    def test_identical_manifests(self, small_dataset, tmp_path):
        report = agreement(small_dataset, small_dataset, tmp_path / "agree")
        assert report.rows
        assert all(r.dsc == 1.0 and r.hd95 == 0.0 for r in report.rows)
        assert report.unmatched_a == () and report.unmatched_b == ()
        assert (tmp_path / "agree" / "agreement.csv").exists()
        assert (tmp_path / "agree" / "agreement.json").exists()

    def test_eroded_second_pass(self, small_dataset, tmp_path):
        other = _eroded_copy(small_dataset, tmp_path / "pass_b")
        report = agreement(small_dataset, other)
        assert report.rows
        assert all(r.dsc < 1.0 for r in report.rows)
        assert report.mean_dsc < 1.0

    def test_disjoint_annotations(self, tmp_path):
        labels_a = np.zeros((32, 32), dtype=np.int32)
        labels_a[2:8, 2:8] = 1
        labels_b = np.zeros((32, 32), dtype=np.int32)
        labels_b[20:26, 20:26] = 1
        for name, labels in (("a", labels_a), ("b", labels_b)):
            d = tmp_path / name
            d.mkdir()
            save_label_mask(LabelMask(labels), d / "img_mask.png")
            (d / "img.png").write_bytes(b"")  # never read
            save_manifest(
                [DatasetRecord(image=d / "img.png", mask=d / "img_mask.png", split="eval")],
                d / "manifest.json",
            )
        report = agreement(tmp_path / "a" / "manifest.json", tmp_path / "b" / "manifest.json")
        assert report.rows == ()
        assert len(report.unmatched_a) == 1
        assert len(report.unmatched_b) == 1

    def test_mismatched_image_sets_rejected(self, small_dataset, rect_dataset):
        with pytest.raises(ValidationError):
            agreement(small_dataset, rect_dataset)
