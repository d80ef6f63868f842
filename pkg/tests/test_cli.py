import json
import os

import pytest

from promptlab.cli import main
from promptlab.search import load_result
from promptlab.serialize import file_sha256, load_json
from promptlab.training import load_report_records


def write_config(tmp_path, **overrides):
    out = str(tmp_path / "out")
    payload = {
        "kind": "run_config",
        "format_version": 1,
        "task": {
            "num_classes": 6,
            "samples_per_class": 8,
            "noise_std": 0.1,
            "latent_attributes": [
                ["color", ["color0", "color1", "color2", "color3", "color4", "color5"]],
                ["shape", ["shape0", "shape1"]],
            ],
            "informative_attributes": ["color"],
            "seed": 0,
        },
        "attributes": {"explicit": ["color", "shape"]},
        "search": {"epochs": 1, "batch_size": 16, "theta_lr": 0.05, "alpha_lr": 0.02},
        "train": {"epochs": 2, "batch_size": 16, "lr_init": 0.05},
        "layout": {"depth": 1},
        "out": out,
        "seed": 3,
    }
    payload.update(overrides)
    path = str(tmp_path / "run.json")
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return path, payload["out"]


def test_gen_data_writes_datasets_and_manifest(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["gen-data", "--config", cfg]) == 0
    manifest = load_json(os.path.join(out, "manifest.json"))
    assert manifest["kind"] == "dataset_manifest"
    files = {e["file"]: e for e in manifest["datasets"]}
    assert set(files) == {"base.json", "novel.json"}
    for entry in files.values():
        assert set(entry["splits"]) == {"train", "val", "test"}
        path = os.path.join(out, entry["file"])
        assert file_sha256(path) == entry["sha256"]


def test_gen_data_is_idempotent_byte_for_byte(tmp_path):
    cfg, out = write_config(tmp_path)
    assert main(["gen-data", "--config", cfg]) == 0
    first = {f: file_sha256(os.path.join(out, f)) for f in os.listdir(out)}
    assert main(["gen-data", "--config", cfg]) == 0
    second = {f: file_sha256(os.path.join(out, f)) for f in os.listdir(out)}
    assert first == second


def test_gen_data_requires_an_inline_spec(tmp_path):
    cfg, out = write_config(tmp_path)
    payload = json.load(open(cfg))
    del payload["task"]
    payload["dataset"] = str(tmp_path / "task.json")
    json.dump(payload, open(cfg, "w"))
    assert main(["gen-data", "--config", cfg]) == 1


def test_search_attrs_writes_the_result_file(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["search-attrs", "--config", cfg]) == 0
    result = load_result(os.path.join(out, "search_result.txt"))
    assert result.bases == ("color", "shape")
    assert len(result.candidates) == 3
    assert "selected:" in capsys.readouterr().out


def test_train_uses_searched_attributes_and_writes_reports(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["gen-data", "--config", cfg])
    main(["search-attrs", "--config", cfg])
    assert main(["train", "--config", cfg]) == 0
    records = load_report_records(os.path.join(out, "report_atprompt.json"))
    seeds = [r["seed"] for r in records]
    assert seeds == [3, -1]  # one run plus the aggregate row
    checkpoint = load_json(os.path.join(out, "checkpoint_atprompt_s3.json"))
    selected = load_result(os.path.join(out, "search_result.txt")).selected
    assert tuple(checkpoint["attributes"]) == selected


def test_train_without_attributes_fails_with_guidance(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    main(["gen-data", "--config", cfg])
    rc = main(["train", "--config", cfg])
    err_lines = capsys.readouterr().err.strip().splitlines()
    assert rc == 1
    assert err_lines[-1].startswith("error: ConfigError:")
    assert "search-attrs" in err_lines[-1]


def test_classic_flag_skips_search_and_anchors_nothing(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["gen-data", "--config", cfg])
    assert main(["train", "--config", cfg, "--classic"]) == 0
    checkpoint = load_json(os.path.join(out, "checkpoint_classic_s3.json"))
    assert checkpoint["attributes"] == []
    assert os.path.exists(os.path.join(out, "report_classic.json"))


def test_multi_seed_aggregate_is_the_mean_of_runs(tmp_path):
    cfg, out = write_config(tmp_path, seeds=[1, 2])
    main(["gen-data", "--config", cfg])
    main(["search-attrs", "--config", cfg])
    assert main(["train", "--config", cfg]) == 0
    records = load_report_records(os.path.join(out, "report_atprompt.json"))
    per_seed = [r["report"] for r in records if r["seed"] >= 0]
    agg = next(r["report"] for r in records if r["seed"] == -1)
    assert len(per_seed) == 2
    assert agg.seeds_aggregated == 2
    mean_base = sum(r.base_accuracy for r in per_seed) / 2
    assert agg.base_accuracy == pytest.approx(mean_base, abs=1e-9)


def test_eval_reproduces_the_training_report(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["gen-data", "--config", cfg])
    main(["search-attrs", "--config", cfg])
    main(["train", "--config", cfg])
    assert main(["eval", "--config", cfg]) == 0
    trained = load_report_records(os.path.join(out, "report_atprompt.json"))
    evaled = load_report_records(os.path.join(out, "eval_report_atprompt.json"))
    t = next(r["report"] for r in trained if r["seed"] == 3)
    e = next(r["report"] for r in evaled if r["seed"] == 3)
    assert e.base_accuracy == pytest.approx(t.base_accuracy, abs=1e-9)
    assert e.novel_accuracy == pytest.approx(t.novel_accuracy, abs=1e-9)


def test_eval_without_checkpoint_names_the_missing_file(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    main(["gen-data", "--config", cfg])
    rc = main(["eval", "--config", cfg])
    assert rc == 1
    last = capsys.readouterr().err.strip().splitlines()[-1]
    assert last.startswith("error: CheckpointError:")
    assert "checkpoint_atprompt_s3.json" in last


def test_ablate_unknown_axis_is_a_usage_error(tmp_path):
    cfg, out = write_config(tmp_path)
    with pytest.raises(SystemExit) as err:
        main(["ablate", "--config", cfg, "--axis", "flavor"])
    assert err.value.code == 2  # argparse usage failure


def test_ablate_class_position_has_three_sorted_cells(tmp_path):
    cfg, out = write_config(tmp_path)
    main(["gen-data", "--config", cfg])
    main(["search-attrs", "--config", cfg])
    assert main(["ablate", "--config", cfg, "--axis", "class_position"]) == 0
    sweep = load_json(os.path.join(out, "ablate_class_position.json"))
    assert {r["cell"] for r in sweep["rows"]} == {"front", "middle", "end"}
    hms = [r["hm"] for r in sweep["rows"]]
    assert hms == sorted(hms, reverse=True)


def test_ablate_attr_order_permutes_the_anchored_pair(tmp_path):
    cfg, out = write_config(tmp_path, train={"epochs": 1, "batch_size": 16, "lr_init": 0.05,
                                             "attributes": ["color", "shape"]})
    main(["gen-data", "--config", cfg])
    assert main(["ablate", "--config", cfg, "--axis", "attr_order"]) == 0
    sweep = load_json(os.path.join(out, "ablate_attr_order.json"))
    assert {r["cell"] for r in sweep["rows"]} == {"color, shape", "shape, color"}


def test_report_prints_stored_summaries(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    main(["gen-data", "--config", cfg])
    main(["search-attrs", "--config", cfg])
    main(["train", "--config", cfg])
    main(["train", "--config", cfg, "--classic"])
    capsys.readouterr()
    assert main(["report", "--config", cfg]) == 0
    table = capsys.readouterr().out
    assert "atprompt" in table and "classic" in table


def test_report_with_no_artifacts_fails_cleanly(tmp_path, capsys):
    cfg, out = write_config(tmp_path)
    os.makedirs(out, exist_ok=True)
    rc = main(["report", "--config", cfg])
    assert rc == 1
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error: DataError:")


def test_full_pipeline_is_deterministic_across_output_dirs(tmp_path):
    hashes = []
    for run in ("a", "b"):
        out_dir = str(tmp_path / f"out_{run}")
        cfg, _ = write_config(tmp_path, out=out_dir)
        cfg_path = str(tmp_path / f"run_{run}.json")
        os.replace(cfg, cfg_path)
        for argv in (
            ["gen-data", "--config", cfg_path],
            ["search-attrs", "--config", cfg_path],
            ["train", "--config", cfg_path],
        ):
            assert main(argv) == 0
        hashes.append(
            {
                f: file_sha256(os.path.join(out_dir, f))
                for f in sorted(os.listdir(out_dir))
                if f != "run_config.json"  # embeds the out dir path itself
            }
        )
    assert hashes[0] == hashes[1]
