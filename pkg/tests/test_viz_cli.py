"""Attention visualization output and the command-line surface."""

import numpy as np
import pytest
import torch

from memgrid.cli import main, read_config_file
from memgrid.data import load_index
from memgrid.policy import ModelConfig, ReactivePolicy, SlotMemoryPolicy
from memgrid.training import save_checkpoint
from memgrid.viz import attention_bbox, attention_overlay, save_slot_panels, slot_panel_image


def tiny_cfg():
    return ModelConfig(
        d_enc=16, d_slot=16, num_slots=4, hidden=8, rank=2,
        past=3, future=3, predictor_width=16, num_relations=3,
    )


# ---------------------------------------------------------------------------
# visualization


def test_bbox_covers_cells_reaching_half_peak():
    row = np.zeros(64)
    row[0] = 1.0          # cell (0, 0)
    row[8 * 2 + 5] = 0.5  # cell (2, 5), exactly at threshold
    row[8 * 7 + 7] = 0.49  # below threshold, excluded
    assert attention_bbox(row) == (0, 0, 2, 5)


def test_bbox_single_cell_and_custom_threshold():
    row = np.zeros(64)
    row[8 * 3 + 4] = 0.2
    assert attention_bbox(row) == (3, 4, 3, 4)
    row[0] = 0.05  # included once the threshold drops below 0.25
    assert attention_bbox(row, threshold=0.2) == (0, 0, 3, 4)


def test_bbox_zero_row_is_none():
    assert attention_bbox(np.zeros(64)) is None


def test_overlay_blends_heat_and_draws_box():
    frame = np.zeros((64, 64, 3), dtype=np.float32)
    row = np.zeros(64)
    row[8 * 2 + 3] = 1.0  # cell (2, 3) -> pixels rows 16..23, cols 24..31
    out = attention_overlay(frame, row, alpha=0.5)
    assert out.shape == (64, 64, 3) and out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0
    # box border (red) hugs the active cell
    assert np.allclose(out[16, 24], [1.0, 0.1, 0.1])
    assert np.allclose(out[23, 31], [1.0, 0.1, 0.1])
    # interior pixel is the green heat blend, not the border color
    assert np.allclose(out[18, 26], 0.5 * np.array([0.1, 1.0, 0.2]))
    # far corner untouched
    assert np.allclose(out[60, 4], 0.0)


def test_overlay_zero_attention_leaves_frame():
    frame = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
    out = attention_overlay(frame, np.zeros(64))
    assert np.allclose(out, frame)


def test_panel_tiling_geometry():
    frame = np.zeros((64, 64, 3), dtype=np.float32)
    attn = np.eye(3, 64)
    img = slot_panel_image(frame, attn, pad=2)
    assert img.dtype == np.uint8
    assert img.shape == (64, 64 * 4 + 2 * 3, 3)


def test_png_output_is_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    frame = rng.random((64, 64, 3)).astype(np.float32)
    attn = rng.random((4, 64))
    p1 = save_slot_panels(tmp_path / "a.png", frame, attn)
    p2 = save_slot_panels(tmp_path / "b.png", frame, attn)
    assert p1.read_bytes() == p2.read_bytes()


# ---------------------------------------------------------------------------
# config files


def test_read_config_file_parses_and_normalizes(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nn-train = 3\n\nseed=7  # trailing\n")
    assert read_config_file(cfg) == {"n_train": "3", "seed": "7"}


def test_read_config_file_rejects_bad_line(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("just some words\n")
    with pytest.raises(ValueError):
        read_config_file(cfg)


def test_flag_beats_config_beats_default(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n-train = 2\nn-val = 2\n")
    out = tmp_path / "data"
    rc = main(["gen-data", "--task", "t1", "--out", str(out),
               "--config", str(cfg), "--n-train", "1"])
    assert rc == 0
    idx = load_index(out)
    assert len(idx["train"]) == 1  # flag override
    assert len(idx["val"]) == 2  # config override of the default 20


def test_unknown_config_key_fails_with_code_1(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 1\n")
    rc = main(["gen-data", "--task", "t1", "--out", str(tmp_path / "d"),
               "--config", str(cfg)])
    assert rc == 1
    assert "bogus" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# subcommands


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """A tiny dataset plus checkpoints shared by the subcommand tests."""
    ws = tmp_path_factory.mktemp("cli")
    rc = main(["gen-data", "--task", "t1", "--out", str(ws / "data"),
               "--n-train", "2", "--n-val", "1", "--seed", "0", "--dilation", "1"])
    assert rc == 0
    torch.manual_seed(0)
    save_checkpoint(ws / "slot.pt", SlotMemoryPolicy(tiny_cfg()))
    save_checkpoint(ws / "react.pt", ReactivePolicy(tiny_cfg()))
    return ws


def test_cli_gen_data_reports_count(cli_workspace, capsys):
    idx = load_index(cli_workspace / "data")
    assert len(idx["train"]) == 2 and len(idx["val"]) == 1


def test_cli_eval_writes_report(cli_workspace, tmp_path, capsys):
    report = tmp_path / "eval.txt"
    rc = main(["eval", "--ckpt", str(cli_workspace / "react.pt"), "--task", "t1",
               "--n", "1", "--step-cap", "5", "--out", str(report)])
    assert rc == 0
    lines = report.read_text().splitlines()
    assert lines[1].startswith("task\t") and lines[2].startswith("T1\t")


def test_cli_eval_missing_checkpoint_is_code_1(tmp_path, capsys):
    rc = main(["eval", "--ckpt", str(tmp_path / "nope.pt"), "--task", "t1", "--n", "1"])
    assert rc == 1


def test_cli_report_merges_tables(cli_workspace, tmp_path, capsys):
    a = tmp_path / "a.txt"
    b = tmp_path / "b.txt"
    header = "task\tvariant\tn\tsuccess_rate\tmean_completion\tmean_steps\toverrep_failures\tstep_cap"
    a.write_text(f"# one\n{header}\nT1\tdefault\t1\t0.000\t0.000\t5.0\t0\t5\n")
    b.write_text(f"# two\n{header}\nT2\tdefault\t1\t1.000\t1.000\t9.0\t0\t40\n")
    merged = tmp_path / "m.txt"
    rc = main(["report", str(a), str(b), "--out", str(merged)])
    assert rc == 0
    lines = merged.read_text().splitlines()
    assert lines[0] == "# combined evaluation"
    assert lines[1] == header
    assert lines[2].startswith("T1\t") and lines[3].startswith("T2\t")


def test_cli_report_no_rows_is_code_1(tmp_path, capsys):
    empty = tmp_path / "e.txt"
    empty.write_text("# nothing\n")
    assert main(["report", str(empty)]) == 1


def test_cli_viz_slots_writes_panels(cli_workspace, tmp_path, capsys):
    out = tmp_path / "panels"
    rc = main(["viz-slots", "--ckpt", str(cli_workspace / "slot.pt"), "--task", "t1",
               "--out", str(out), "--seed", "0", "--every", "8"])
    assert rc == 0
    names = (out / "index.txt").read_text().split()
    assert names and all((out / n).exists() for n in names)
    assert names[0].endswith("frame0000.png")


def test_cli_token_report_matches_frozen_rows(capsys):
    assert main(["token-report"]) == 0
    out = capsys.readouterr().out
    assert "model\thorizon\tper_frame\tdecoder_tokens" in out
    for row in ("slot-concat\t1\t16\t16", "slot-concat\t8\t16\t128",
                "dense-concat\t1\t256\t256", "slot-recurrent\t-\t-\t32"):
        assert row in out


def test_cli_audit_aliasing_runs(cli_workspace, tmp_path, capsys):
    report = tmp_path / "audit.txt"
    rc = main(["audit-aliasing", "--data", str(cli_workspace / "data"),
               "--out", str(report), "--eps", "1e-3"])
    assert rc == 0
    text = report.read_text()
    assert "frames\t" in text and "action_violations\t" in text


def test_cli_train_smoke(cli_workspace, tmp_path, capsys):
    ckpt = tmp_path / "cli_trained.pt"
    rc = main(["train", "--data", str(cli_workspace / "data"), "--out", str(ckpt),
               "--kind", "reactive", "--steps", "2", "--batch-size", "1",
               "--chunk-len", "4", "--num-slots", "4", "--d-slot", "16",
               "--d-enc", "16", "--hidden", "16", "--past", "3", "--future", "3",
               "--num-relations", "3", "--log-every", "1"])
    assert rc == 0
    assert ckpt.exists()


def test_cli_usage_error_is_code_2():
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 2