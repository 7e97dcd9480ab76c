"""The command-line layer: thin-wrapper equivalence, config precedence,
artifact outputs, and error conventions."""
import json
import os

import numpy as np
import pytest

from spikesal.cli import main
from spikesal.spikeio import (
    IntensityClip,
    load_dataset,
    read_gray,
    simulate_spikes,
    tfi_reconstruct,
    write_gray,
)
from spikesal.training import TrainConfig, build_model, evaluate, load_checkpoint


def run(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def write_clip_dir(path, frames):
    os.makedirs(path, exist_ok=True)
    for i, frame in enumerate(frames):
        write_gray(os.path.join(path, f"t{i:04d}.pgm"), np.round(frame * 255.0))


def gen_dataset(capsys, tmp_path, count=4, seed=7):
    data_dir = str(tmp_path / f"data{count}_{seed}")
    rc, out, _ = run(capsys, "gen-data", "--count", str(count),
                     "--seed", str(seed), "--out", data_dir)
    assert rc == 0
    assert json.loads(out)["count"] == count
    return data_dir


FAST = ["--time-steps", "1", "--base-channels", "4", "--epochs", "1"]


# -- simulate / reconstruct ------------------------------------------------------------


def test_simulate_then_reconstruct_matches_library(capsys, tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.uniform(0.2, 1.0, size=(12, 8, 8))
    clip_dir = str(tmp_path / "clip")
    write_clip_dir(clip_dir, frames)
    spk = str(tmp_path / "s.spk")

    rc, out, _ = run(capsys, "simulate", "--input", clip_dir,
                     "--theta", "2.0", "--out", spk)
    assert rc == 0
    info = json.loads(out)
    assert info["ticks"] == 12 and info["height"] == 8 and info["width"] == 8
    assert 0.0 < info["spike_rate"] < 1.0

    out_dir = str(tmp_path / "recon")
    rc, out, _ = run(capsys, "reconstruct", "--spk", spk, "--tick", "6",
                     "--out", out_dir)
    assert rc == 0
    path = json.loads(out)["out"]
    got = read_gray(path)

    quantized = np.round(frames * 255.0) / 255.0
    stream = simulate_spikes(IntensityClip(quantized), 2.0)
    want = np.round(tfi_reconstruct(stream, 6)).astype(np.uint8)
    assert np.array_equal(got, want)


def test_reconstruct_rejects_out_of_range_tick(capsys, tmp_path):
    frames = np.full((4, 8, 8), 0.5)
    clip_dir = str(tmp_path / "clip")
    write_clip_dir(clip_dir, frames)
    spk = str(tmp_path / "s.spk")
    assert run(capsys, "simulate", "--input", clip_dir, "--out", spk)[0] == 0
    rc, _, err = run(capsys, "reconstruct", "--spk", spk, "--tick", "99",
                     "--out", str(tmp_path / "r"))
    assert rc == 2
    assert err.startswith("error: bad-flag:")


# -- gen-data ---------------------------------------------------------------------------


def test_gen_data_is_deterministic_and_loadable(capsys, tmp_path):
    d1 = gen_dataset(capsys, tmp_path, count=6, seed=3)
    samples = load_dataset(d1)
    assert len(samples) == 6
    assert all(s.masks is not None for s in samples)

    d2 = str(tmp_path / "again")
    rc, _, _ = run(capsys, "gen-data", "--count", "6", "--seed", "3", "--out", d2)
    assert rc == 0
    rel = os.path.join("sample_000", "frames", "t0000.pgm")
    with open(os.path.join(d1, rel), "rb") as a, open(os.path.join(d2, rel), "rb") as b:
        assert a.read() == b.read()


def test_gen_data_rejects_unknown_scenario(capsys, tmp_path):
    rc, _, err = run(capsys, "gen-data", "--scenarios", "lava-flow",
                     "--out", str(tmp_path / "x"))
    assert rc == 2
    assert err.startswith("error: bad-flag:")


# -- eval / train wrappers ----------------------------------------------------------------


def test_eval_matches_library_call_bit_exactly(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    rc, out, _ = run(capsys, "eval", "--dataset", data_dir, "--seed", "2", *FAST)
    assert rc == 0
    got = json.loads(out)

    cfg = TrainConfig(time_steps=1, base_channels=4, epochs=1, seed=2)
    want = evaluate(build_model(cfg), load_dataset(data_dir), cfg).to_dict()
    assert got == json.loads(json.dumps(want))


def test_train_zero_epochs_writes_init_checkpoint(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    out_dir = str(tmp_path / "run0")
    rc, out, _ = run(capsys, "train", "--dataset", data_dir, "--out", out_dir,
                     "--seed", "4", "--time-steps", "1", "--base-channels", "4",
                     "--epochs", "0")
    assert rc == 0
    ck = json.loads(out)["checkpoint"]

    cfg = TrainConfig(time_steps=1, base_channels=4, epochs=0, seed=4)
    restored = build_model(cfg)
    load_checkpoint(ck, restored)
    fresh = build_model(cfg)
    for (name, p), (_, q) in zip(restored.named_parameters(), fresh.named_parameters()):
        assert np.array_equal(p.data, q.data), name

    echoed = json.load(open(os.path.join(out_dir, "effective_config.json")))
    assert echoed["command"] == "train"
    assert echoed["epochs"] == 0 and echoed["seed"] == 4


def test_config_precedence_flags_over_file_over_defaults(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({
        "alpha": 3.0, "epochs": 0, "time_steps": 1, "base_channels": 4}))
    out_dir = str(tmp_path / "prec")
    rc, _, _ = run(capsys, "train", "--dataset", data_dir, "--out", out_dir,
                   "--config", str(cfg_file), "--alpha", "5.0")
    assert rc == 0
    echoed = json.load(open(os.path.join(out_dir, "effective_config.json")))
    assert echoed["alpha"] == 5.0          # flag beats file
    assert echoed["time_steps"] == 1       # file beats default (5)
    assert echoed["lr"] == 2e-4            # untouched default


def test_unknown_config_key_fails(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    cfg_file = tmp_path / "bad.json"
    cfg_file.write_text(json.dumps({"learning_rate": 1.0}))
    rc, _, err = run(capsys, "train", "--dataset", data_dir,
                     "--out", str(tmp_path / "x"), "--config", str(cfg_file))
    assert rc == 2
    assert err.startswith("error: bad-config:")
    assert "learning_rate" in err


def test_missing_dataset_is_a_clean_error(capsys, tmp_path):
    rc, _, err = run(capsys, "eval", "--dataset", str(tmp_path / "nope"))
    assert rc == 2
    assert err.startswith("error: missing-file:")


def test_deterministic_training_is_bit_reproducible(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    blobs = []
    for tag in ("a", "b"):
        out_dir = str(tmp_path / f"det_{tag}")
        rc, _, _ = run(capsys, "--deterministic", "train", "--dataset", data_dir,
                       "--out", out_dir, "--seed", "1", *FAST)
        assert rc == 0
        with open(os.path.join(out_dir, "checkpoint.tnsr"), "rb") as fh:
            ck = fh.read()
        with open(os.path.join(out_dir, "train_log.jsonl")) as fh:
            blobs.append((ck, fh.read()))
    assert blobs[0] == blobs[1]


# -- ablate -------------------------------------------------------------------------------


def test_ablate_fusion_emits_three_deterministic_rows(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    tables = []
    for tag in ("a", "b"):
        out_dir = str(tmp_path / f"abl_{tag}")
        rc, out, _ = run(capsys, "--deterministic", "ablate",
                         "--dataset", data_dir, "--out", out_dir,
                         "--no-global-debias", *FAST)
        assert rc == 0
        rows = json.load(open(os.path.join(out_dir, "ablation.json")))
        assert [r["variant"] for r in rows] == [
            "fusion=or", "fusion=add", "fusion=learned"]
        for r in rows:
            assert all(np.isfinite(v) for k, v in r.items() if k != "variant")
        tables.append(open(os.path.join(out_dir, "ablation.md")).read())
        assert out.startswith("| variant |")
    assert tables[0] == tables[1]


def test_ablate_rejects_unknown_axis(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    with pytest.raises(SystemExit):
        main(["ablate", "--dataset", data_dir, "--out", str(tmp_path / "x"),
              "--axis", "flavor"])
    capsys.readouterr()


# -- energy / plot ------------------------------------------------------------------------


def test_energy_summary_fields(capsys, tmp_path):
    data_dir = gen_dataset(capsys, tmp_path)
    rc, out, _ = run(capsys, "energy", "--dataset", data_dir, "--limit", "2",
                     "--time-steps", "1", "--base-channels", "4")
    assert rc == 0
    summary = json.loads(out)
    assert summary["samples"] == 2
    assert summary["time_steps"] == 1
    # an untrained model in eval mode may never cross the firing threshold,
    # so only the real-valued (multiply-accumulate) cost is guaranteed here
    assert summary["mean_ac"] >= 0
    assert summary["mean_mac"] > 0
    assert summary["mean_energy_mj"] > 0


def test_plot_writes_curves_and_ratio_chart(capsys, tmp_path):
    log = tmp_path / "train_log.jsonl"
    entries = [
        {"epoch": 0, "total": 1.0, "l_original": 0.7, "l_mse": 0.2, "val_mae": 0.4},
        {"epoch": 1, "total": 0.8, "l_original": 0.6, "l_mse": 0.1, "val_mae": 0.3},
    ]
    log.write_text("".join(json.dumps(e) + "\n" for e in entries))
    metrics = tmp_path / "metrics.json"
    metrics.write_text(json.dumps({"per_class_pixel_ratio": [
        {"class": "constant-light", "pred_ratio": 0.1, "gt_ratio": 0.12},
        {"class": "brightness-ramp", "pred_ratio": 0.2, "gt_ratio": 0.18},
    ]}))
    out_dir = str(tmp_path / "plots")
    rc, out, _ = run(capsys, "plot", "--log", str(log),
                     "--metrics", str(metrics), "--out", out_dir)
    assert rc == 0
    files = json.loads(out)["files"]
    assert len(files) == 2
    assert all(os.path.getsize(f) > 0 for f in files)


def test_plot_with_no_inputs_fails(capsys, tmp_path):
    rc, _, err = run(capsys, "plot", "--out", str(tmp_path / "p"))
    assert rc == 2
    assert err.startswith("error: bad-flag:")
