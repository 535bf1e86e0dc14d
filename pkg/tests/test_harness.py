from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from fedagg.harness import (
    ConfigError,
    compare_runs,
    config_hash,
    load_config,
    metrics_filename,
    parse_config,
    prepare_dataset,
    read_metrics,
    run_experiment,
    summarize_run,
)

TINY_DOC = {
    "seed": 0,
    "epochs": 1,
    "dataset": {"classes": 2, "input_dim": 4, "n": 60, "spread": 1.0, "test_fraction": 0.2},
    "topology": {"tier_counts": [1, 2, 4], "tier_specs": ["cloud", "edge", "device"]},
    "model_specs": {
        "device": [4, 4, 2],
        "edge": [4, 6, 2],
        "cloud": [4, 8, 2],
    },
    "autoencoder": {"embedding_dim": 2, "epochs": 5, "public_n": 40},
}


def tiny_doc(**overrides):
    doc = json.loads(json.dumps(TINY_DOC))
    doc.update(overrides)
    return doc


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


# ------------------------------------------------------------------ parsing


def test_minimal_config_fills_defaults():
    cfg = parse_config({"dataset": {}, "topology": {}})
    assert cfg.method == "fedagg"
    assert cfg.distill.beta == 10.0
    assert cfg.distill.gamma == 1.0
    assert cfg.distill.temperature == 3.0
    assert cfg.distill.lr == 0.001
    assert cfg.distill.batch_size == 8
    assert cfg.baseline.kappa1 == 1 and cfg.baseline.kappa2 == 1
    assert cfg.partition.k == 4  # defaulted to the leaf count


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'betaa'"):
        parse_config({"betaa": 1})


def test_unknown_nested_key_rejected():
    with pytest.raises(ConfigError, match="'betaa' in distill"):
        parse_config({"distill": {"betaa": 5}})


def test_k_mismatch_rejected():
    doc = tiny_doc(partition={"k": 7})
    with pytest.raises(ConfigError, match="partition.k=7 does not match"):
        parse_config(doc)


def test_unknown_spec_name_rejected():
    doc = tiny_doc()
    doc["topology"] = {"tier_counts": [1, 2], "tier_specs": ["cloud", "mystery"]}
    with pytest.raises(ConfigError, match="mystery"):
        parse_config(doc)


def test_spec_shape_must_match_dataset():
    doc = tiny_doc()
    doc["model_specs"]["device"] = [3, 4, 2]
    with pytest.raises(ConfigError, match="device"):
        parse_config(doc)


def test_method_validation():
    with pytest.raises(ConfigError, match="method"):
        parse_config(tiny_doc(method="sgd"))


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"seed": 0,\n  "epochs": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(p)


def test_config_hash_ignores_seed_and_output():
    a = parse_config(tiny_doc(seed=0, output_dir="x"))
    b = parse_config(tiny_doc(seed=99, output_dir="y"))
    assert config_hash(a) == config_hash(b)
    c = parse_config(tiny_doc(distill={"beta": 3}))
    assert config_hash(a) != config_hash(c)


def test_prepare_dataset_counts():
    cfg = parse_config(tiny_doc())
    train, test = prepare_dataset(cfg)
    assert len(train) == 48 and len(test) == 12


# -------------------------------------------------------------- experiments


def test_run_experiment_writes_metrics(tmp_path):
    cfg = parse_config(tiny_doc(epochs=0, output_dir=str(tmp_path)))
    path = run_experiment(cfg)
    assert path.name == metrics_filename(cfg)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 2  # header + the post-init row
    header = lines[0].split(",")
    assert header[:5] == ["schema", "config_hash", "method", "epoch", "cloud_accuracy"]
    assert header[5:] == ["tier1_accuracy", "tier2_accuracy", "tier3_accuracy", "wall_time_ms"]


def test_run_experiment_reproducible_bytes(tmp_path):
    a = run_experiment(parse_config(tiny_doc(epochs=2, output_dir=str(tmp_path / "a"))))
    b = run_experiment(parse_config(tiny_doc(epochs=2, output_dir=str(tmp_path / "b"))))
    assert a.read_bytes() == b.read_bytes()


def test_run_experiment_hierfavg_requires_homogeneous(tmp_path):
    doc = tiny_doc(method="hierfavg", output_dir=str(tmp_path))
    from fedagg.orchestrator import BottleneckError

    with pytest.raises(BottleneckError):
        run_experiment(parse_config(doc))


def test_run_experiment_hierfavg_homogeneous(tmp_path):
    doc = tiny_doc(method="hierfavg", epochs=1, output_dir=str(tmp_path))
    doc["model_specs"] = {"device": [4, 4, 2], "edge": [4, 4, 2], "cloud": [4, 4, 2]}
    path = run_experiment(parse_config(doc))
    method, rows = read_metrics(path)
    assert method == "hierfavg" and len(rows) == 2


def test_run_experiment_wall_time_opt_in(tmp_path):
    doc = tiny_doc(epochs=1, output_dir=str(tmp_path), record_wall_time=True)
    _, rows = read_metrics(run_experiment(parse_config(doc)))
    times = [int(r["wall_time_ms"]) for r in rows]
    assert times[0] == 0  # the post-init row is not timed
    assert all(t >= 0 for t in times) and times[-1] > 0


# -------------------------------------------------------------- comparison


def fake_metrics(tmp_path, name, method, accs):
    lines = [
        "schema,config_hash,method,epoch,cloud_accuracy,tier1_accuracy,wall_time_ms"
    ]
    for e, a in enumerate(accs):
        lines.append(f"fedagg-metrics/1,abc,{method},{e},{a!r},{a!r},0")
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def test_compare_threshold_crossings(tmp_path):
    a = fake_metrics(tmp_path, "a.csv", "fedagg", [0.1, 0.5, 0.65, 0.9])
    b = fake_metrics(tmp_path, "b.csv", "hierfavg", [0.1, 0.2, 0.3, 0.4])
    report = compare_runs([a, b], thresholds=[0.6, 0.8])
    rows = report.splitlines()
    assert "epoch@0.6" in rows[0] and "epoch@0.8" in rows[0]
    fed = next(r for r in rows if r.startswith("fedagg"))
    hier = next(r for r in rows if r.startswith("hierfavg"))
    assert fed.split()[-2:] == ["2", "3"]
    assert hier.split()[-2:] == ["-", "-"]  # never reached


def test_compare_summary_fields(tmp_path):
    a = fake_metrics(tmp_path, "a.csv", "fedagg", [0.2, 0.9, 0.7])
    s = summarize_run(a, [0.5])
    assert s.final_accuracy == 0.7
    assert s.best_accuracy == 0.9
    assert s.first_epoch_reaching[0.5] == 1


def test_compare_identical_files_identical_lines(tmp_path):
    a = fake_metrics(tmp_path, "a.csv", "fedagg", [0.2, 0.8])
    b = fake_metrics(tmp_path, "b.csv", "fedagg", [0.2, 0.8])
    report = compare_runs([a, b], thresholds=[0.5])
    la, lb = report.splitlines()[1:3]
    assert la.split()[2:] == lb.split()[2:]  # identical apart from the file name


def test_compare_needs_two_files(tmp_path):
    a = fake_metrics(tmp_path, "a.csv", "fedagg", [0.2])
    with pytest.raises(ValueError):
        compare_runs([a], thresholds=[0.5])


def test_read_metrics_rejects_wrong_schema(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text(
        "schema,config_hash,method,epoch,cloud_accuracy,wall_time_ms\n"
        "other/9,abc,fedagg,0,0.5,0\n"
    )
    with pytest.raises(ValueError, match="schema"):
        read_metrics(p)


# --------------------------------------------------------------------- CLI


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "fedagg", *args], capture_output=True, text=True
    )


def test_cli_run_and_compare(tmp_path):
    cfg_path = write_config(tmp_path, tiny_doc(epochs=1, output_dir=str(tmp_path / "runs")))
    r0 = run_cli("run", "--config", str(cfg_path))
    assert r0.returncode == 0, r0.stderr
    metrics_a = Path(r0.stdout.strip())
    assert metrics_a.exists()
    r1 = run_cli("run", "--config", str(cfg_path), "--seed", "1")
    metrics_b = Path(r1.stdout.strip())
    r2 = run_cli("compare", str(metrics_a), str(metrics_b), "--thresholds", "0.5,0.9")
    assert r2.returncode == 0, r2.stderr
    assert "epoch@0.5" in r2.stdout


def test_cli_seed_override_changes_file(tmp_path):
    cfg_path = write_config(tmp_path, tiny_doc(epochs=0, output_dir=str(tmp_path / "runs")))
    a = run_cli("run", "--config", str(cfg_path))
    b = run_cli("run", "--config", str(cfg_path), "--seed", "7")
    assert Path(a.stdout.strip()).name != Path(b.stdout.strip()).name


def test_cli_config_error_exit_code(tmp_path):
    cfg_path = write_config(tmp_path, {"betaa": 1})
    r = run_cli("run", "--config", str(cfg_path))
    assert r.returncode == 2
    assert "betaa" in r.stderr


def test_cli_missing_config_is_io_error(tmp_path):
    r = run_cli("run", "--config", str(tmp_path / "nope.json"))
    assert r.returncode == 4


def test_cli_runtime_error_exit_code(tmp_path):
    doc = tiny_doc(method="hierfavg", output_dir=str(tmp_path))
    cfg_path = write_config(tmp_path, doc)
    r = run_cli("run", "--config", str(cfg_path))
    assert r.returncode == 3
    assert "model structure" in r.stderr


def test_cli_gen_data_and_pretrain_ae(tmp_path):
    cfg_path = write_config(tmp_path, tiny_doc())
    r = run_cli("gen-data", "--config", str(cfg_path), "--out", str(tmp_path / "data"))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "data" / "train.txt").exists()
    assert (tmp_path / "data" / "test.txt").exists()
    r2 = run_cli("pretrain-ae", "--config", str(cfg_path), "--out", str(tmp_path / "ae.npz"))
    assert r2.returncode == 0, r2.stderr
    assert (tmp_path / "ae.npz").exists()
