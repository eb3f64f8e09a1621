import json
import shutil

import numpy as np
import pytest

from salience_align.heatmap import Heatmap, load_grayscale, save_grayscale
from salience_align.pipeline.dataset import load_manifest, write_manifest
from salience_align.pipeline.report import from_json, read_scores, render_text
from salience_align.pipeline.run import (ConfigError, MethodConfig, PipelineError, load_config, resolve_workers,
                                         run_pipeline)


def copy_fixture(src, dst, n_frames=None, **config_overrides):
    shutil.copytree(src, dst)
    if n_frames is not None:
        records = load_manifest(dst / "manifest.csv")[:n_frames]
        write_manifest(records, dst / "manifest.csv")
    cfg = json.loads((dst / "fixture.cfg").read_text())
    cfg.update(config_overrides)
    (dst / "fixture.cfg").write_text(json.dumps(cfg))
    return dst / "fixture.cfg"


NO_FILTER = {"require_nontrivial": False, "require_daytime": False, "require_test": False}


def test_spectral_smoke(small_fixture, tmp_path):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", n_frames=3, filter=NO_FILTER, emergent=None,
                       methods=[{"name": "Spectral Residual", "kind": "spectral"}], emphasis={})
    result = run_pipeline(load_config(cfg))
    assert [r.method for r in result.report.tables["cosine"].rows] == ["Spectral Residual"]
    assert result.report.tables["cosine"].rows[0].n_all == 3
    assert len(read_scores(result.output_dir / "scores.csv")) == 3
    assert result.report.meta["frames scored"] == 3


def test_gaze_against_itself_scores_one(small_fixture, tmp_path):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", filter=NO_FILTER, emergent=None, emphasis={},
                       methods=[{"name": "Gaze", "kind": "external", "path_template": "gaze/{frame_id}.pgm"}])
    result = run_pipeline(load_config(cfg))
    for metric in ("cosine", "spearman"):
        assert result.report.tables[metric].rows[0].all == pytest.approx(1.0, abs=1e-12)


def test_failing_frames_are_skipped_and_counted(small_fixture, tmp_path):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", filter=NO_FILTER, emergent=None, emphasis={},
                       methods=[{"name": "Spectral Residual", "kind": "spectral"},
                                {"name": "Ext", "kind": "external", "path_template": "ext/{frame_id}.pgm"}])
    root = tmp_path / "fx"
    records = load_manifest(root / "manifest.csv")
    (root / "ext").mkdir()
    for i, r in enumerate(records):
        g = load_grayscale(r.gaze_path)
        # frames 0 and 1: an all-zero map, for which cosine is undefined; frame 2: no map at all
        if i < 2:
            g = Heatmap.zeros(g.width, g.height)
        if i != 2:
            save_grayscale(g, root / "ext" / f"{r.frame_id}.pgm")
    result = run_pipeline(load_config(cfg))
    skipped_frames = {s[0] for s in result.skipped}
    assert skipped_frames == {records[i].frame_id for i in range(3)}
    scored_frames = {s.frame_id for s in result.scores}
    assert len(scored_frames) + len(skipped_frames) == len(records)
    assert not scored_frames & skipped_frames
    assert all(sum(s.frame_id == f for s in result.scores) == 2 for f in scored_frames)
    lines = (result.output_dir / "skipped.csv").read_text().splitlines()
    assert lines[0] == "frame_id,method,reason" and len(lines) == 4
    assert "undefined metric" in lines[1]


def test_mostly_failing_method_aborts(small_fixture, tmp_path):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", filter=NO_FILTER, emergent=None, emphasis={},
                       methods=[{"name": "Ext", "kind": "external", "path_template": "nowhere/{frame_id}.pgm"}])
    with pytest.raises(PipelineError, match="Ext"):
        run_pipeline(load_config(cfg))


def test_full_config_outputs(small_fixture, tmp_path):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", filter=NO_FILTER)
    result = run_pipeline(load_config(cfg))
    out = result.output_dir
    for name in ("scores.csv", "skipped.csv", "report.txt", "report.json", "models/lrp_driving.json",
                 "emphasis_lrp_driving__minus__lrp_imagenet.csv", "emphasis_lrp_imagenet__minus__lrp_random.csv"):
        assert (out / name).is_file(), name
    assert len(result.emergent_paths) == 4
    report = from_json((out / "report.json").read_text())
    assert render_text(report) == (out / "report.txt").read_text()
    for table in report.tables.values():
        for row in table.rows:
            if row.ratio is not None:
                assert row.ratio == row.attentive / row.inattentive
    assert report.meta["frame filter"] == "all frames"
    assert "bilinear" in report.meta["resolution policy"]


def test_report_independent_of_worker_count(small_fixture, tmp_path):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", filter=NO_FILTER)
    config = load_config(cfg)
    config.output_dir = tmp_path / "one"
    run_pipeline(config, workers=1)
    config.output_dir = tmp_path / "three"
    run_pipeline(config, workers=3)
    for name in ("report.txt", "report.json", "scores.csv", "skipped.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "three" / name).read_bytes()


def test_missing_split_is_assigned(small_fixture, tmp_path):
    root = tmp_path / "fx"
    cfg = copy_fixture(small_fixture, root, emergent=None, emphasis={},
                       methods=[{"name": "Spectral Residual", "kind": "spectral"}])
    text = (root / "manifest.csv").read_text().replace(",train,", ",,").replace(",test,", ",,")
    (root / "manifest.csv").write_text(text)
    result = run_pipeline(load_config(cfg))
    assert result.n_filtered > 0


def test_gaze_resolution_policy(small_fixture, tmp_path):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", filter=NO_FILTER, emergent=None, emphasis={},
                       methods=[{"name": "Spectral Residual", "kind": "spectral"}],
                       comparison={"resolution": "method", "downsample": 2})
    result = run_pipeline(load_config(cfg))
    assert "gaze resized" in result.report.meta["resolution policy"]
    assert result.report.meta["downsample factor"] == 2


@pytest.mark.parametrize("patch, msg", [
    ({"methods": []}, "no methods"),
    ({"methods": [{"name": "a", "kind": "spectral"}, {"name": "a", "kind": "spectral"}]}, "duplicate"),
    ({"methods": [{"name": "a", "kind": "magic"}]}, "unknown kind"),
    ({"methods": [{"name": "a", "kind": "lrp"}]}, "model path"),
    ({"comparison": {"resolution": "native"}}, "resolution"),
    ({"emphasis": {"pairs": [["LRP Driving", "Nope"]]}}, "unknown method"),
])
def test_config_errors(small_fixture, tmp_path, patch, msg):
    cfg = copy_fixture(small_fixture, tmp_path / "fx", **patch)
    with pytest.raises(ConfigError, match=msg):
        load_config(cfg)


def test_config_missing_key(tmp_path):
    (tmp_path / "c.json").write_text('{"methods": []}')
    with pytest.raises(ConfigError, match="manifest"):
        load_config(tmp_path / "c.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json")


def test_external_needs_template():
    with pytest.raises(ConfigError):
        MethodConfig("x", "external")


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv("SALIENCE_ALIGN_THREADS", raising=False)
    assert resolve_workers(3) == 3
    assert resolve_workers(0) >= 1
    monkeypatch.setenv("SALIENCE_ALIGN_THREADS", "2")
    assert resolve_workers(8) == 2
    assert resolve_workers(1) == 1
    monkeypatch.setenv("SALIENCE_ALIGN_THREADS", "0")
    assert resolve_workers(5) == 5
