import json

import numpy as np
import pytest

from cli import main
from events import read_events, read_voxel, write_events, write_voxel
from models import SweepResult, SweepRow
from tasks import write_sweep_csv
from tests.conftest import REFERENCE_DIR, random_grid, random_stream


def _json_out(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


def test_init_weights_and_inspect(tmp_path, capsys):
    path = tmp_path / "w.mrmw"
    assert main(["init-weights", "--out", str(path), "--channels", "2", "--bins", "4", "--heads", "2"]) == 0
    capsys.readouterr()
    assert main(["inspect", str(path)]) == 0
    info = _json_out(capsys)
    assert info["kind"] == "weights"
    assert info["config"]["C"] == 2 and info["config"]["T"] == 4 and info["config"]["L"] == 2
    assert info["sections"]["mrm.fuse.kernel"] == [1, 1, 8, 16]


def test_inspect_event_file(tmp_path, capsys):
    path = write_events(random_stream(1, n=50), tmp_path / "s.evt")
    assert main(["inspect", str(path)]) == 0
    info = _json_out(capsys)
    assert info["events"] == 50
    assert info["count_pos"] + info["count_neg"] == 50
    assert info["sensor"] == [24, 20]


def test_inspect_reference_table_and_curve(capsys):
    assert main(["inspect", str(REFERENCE_DIR / "ablation_interaction.csv")]) == 0
    info = _json_out(capsys)
    assert info == {"kind": "table", "label": "MSEM / ESEM ablation", "keys": ["msem", "esem"], "rows": 4}
    assert main(["inspect", str(REFERENCE_DIR / "table1_ours.csv")]) == 0
    assert _json_out(capsys)["kind"] == "curve"


def test_thin_voxels(tmp_path, capsys):
    src = write_voxel(random_grid(2), tmp_path / "in.vox")
    out, maps = tmp_path / "out.vox", tmp_path / "map.vox"
    assert main(["thin", "--in", str(src), "--alpha", "0.3", "--seed", "4", "--out", str(out), "--map", str(maps)]) == 0
    assert "empirical_ur=" in capsys.readouterr().out
    before, after = read_voxel(src), read_voxel(out)
    kept = after.data != 0
    np.testing.assert_array_equal(after.data[kept], before.data[kept])
    np.testing.assert_allclose(read_voxel(maps).data, 0.7)


def test_rps_thin_events_alias(tmp_path):
    src = write_events(random_stream(3), tmp_path / "in.evt")
    out = tmp_path / "out.evt"
    assert main(["rps-thin", "--in", str(src), "--alpha", "1.0", "--out", str(out)]) == 0
    assert len(read_events(out)) == 0


def test_metrics_command(tmp_path, capsys):
    from dvs import write_frame

    a = write_frame(np.full((16, 16), 100 / 255), tmp_path / "a.pgm")
    b = write_frame(np.full((16, 16), 116 / 255), tmp_path / "b.pgm")
    assert main(["metrics", "--a", str(a), "--b", str(b)]) == 0
    scores = _json_out(capsys)
    assert scores["psnr"] == pytest.approx(24.0327, abs=1e-4)
    assert scores["exact_match"] is False


def test_compare_reference_with_itself(capsys):
    ref = str(REFERENCE_DIR / "table1_ours.csv")
    assert main(["compare", "--result", ref, "--reference", ref]) == 0
    assert "0.3,+0.0000,+0.0000" in capsys.readouterr().out


def test_compare_exit_code_on_failing_level(tmp_path, capsys):
    rows = [
        SweepRow(level=lv, empirical_ur=ur, nonzero_before=1000, nonzero_after=1000 - int(ur * 1000),
                 events_before=1000, events_after=1000 - int(ur * 1000), psnr=37.0 - lv, ssim=0.98)
        for lv, ur in [(0.0, 0.0), (0.05, 0.05), (0.1, 0.1), (0.15, 0.15), (0.2, 0.2), (0.3, 0.45)]
    ]
    result = SweepResult(mode="under_report", rows=rows, seed=0, config_hash="0" * 16, created_at="")
    path = write_sweep_csv(result, tmp_path / "sweep.csv")
    code = main(["compare", "--result", str(path), "--reference", str(REFERENCE_DIR / "table1_ours.csv")])
    assert code == 2
    out = capsys.readouterr().out
    assert "check level=0.3" in out and "FAIL" in out


def test_compare_grid_mismatch_is_input_error(capsys):
    code = main(
        [
            "compare",
            "--result", str(REFERENCE_DIR / "table1_ours.csv"),
            "--reference", str(REFERENCE_DIR / "ur_curve_ours.csv"),
        ]
    )
    assert code == 1


def test_sweep_command(dataset, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("EVROBUST_SEED", raising=False)
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(f"dataset = {dataset}\noutput = sweep.csv\nlevels = 0, 0.1\n")
    assert main(["sweep", "--config", str(cfg), "--workers", "2", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "level=0.0 empirical_ur=0.000000" in out
    assert (tmp_path / "sweep.csv").is_file()


def test_invalid_config_exits_1(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(f"dataset = {tmp_path}\noutput = s.csv\nlevels = 0.3, 0.1\n")
    assert main(["sweep", "--config", str(cfg)]) == 1


def test_missing_input_exits_1(tmp_path):
    assert main(["inspect", str(tmp_path / "missing.evt")]) == 1
