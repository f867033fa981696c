import csv
import io
import json
import math

import numpy as np
import pytest

from topkgnn.allocator import LayerProfile, greedy_allocate
from topkgnn.cli import (
    BENCH_TIMING_COLUMNS,
    UsageError,
    build_parser,
    cmd_allocate,
    cmd_bench_spmm,
    config_from_args,
    main,
)
from topkgnn.config import TrainConfig
from topkgnn.data_io import TIMING_COLUMNS

SMALL = ["--sbm-nodes", "200", "--hidden", "16", "--epochs", "20"]


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 7, "lr": 0.5, "mode": "rsc"}))
    args = build_parser().parse_args(["train", "--config", str(cfg), "--epochs", "3"])
    c = config_from_args(args)
    assert c.epochs == 3 and c.lr == 0.5 and c.mode == "rsc" and c.hidden == 64


def test_flag_names_and_budget_alias():
    args = build_parser().parse_args(
        ["train", "--budget", "0.3", "--switch-fraction", "1.0", "--no-track-stability"]
    )
    c = config_from_args(args)
    assert c.budget_C == 0.3 and c.switch_fraction == 1.0 and c.track_stability is False
    args = build_parser().parse_args(["train", "--budget-c", "0.2", "--sbm-seed", "4"])
    assert config_from_args(args).budget_C == 0.2
    for name in TrainConfig.field_names():
        flag = "--" + name.replace("_", "-")
        if name == "budget_C":
            flag = "--budget-c"
        assert flag in build_parser()._subparsers._group_actions[0].choices["train"].format_help()


def test_unknown_json_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epoch": 7}))
    assert main(["train", "--config", str(cfg)]) == 2


def test_exit_codes(tmp_path):
    assert main(["train", "--mode", "bogus"]) == 2
    assert main(["train", "--no-such-flag"]) == 2
    assert main(["train", "--edges", str(tmp_path / "nope.txt"), "--features", "f",
                 "--labels", "l", "--masks", "m"]) == 2
    assert main(["train", "--edges", str(tmp_path / "nope.txt")]) == 2
    assert main(["bench-spmm", "--trials", "5"]) == 2
    assert main(["stability", "--mode", "exact"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_failure_exit_code(tmp_path):
    # a huge learning rate drives the loss to inf/nan
    out = tmp_path / "m.csv"
    rc = main(["train", *SMALL, "--lr", "1e300", "--epochs", "30", "--out", str(out)])
    assert rc == 3


def test_train_writes_csv_and_summary(tmp_path, capsys):
    out = tmp_path / "m.csv"
    assert main(["train", *SMALL, "--mode", "rsc", "--budget", "0.1", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 20 and rows[0]["epoch"] == "0"
    summary = capsys.readouterr().out
    assert "test_acc_at_best_val=" in summary and "flop_ratio=" in summary
    approx = [r for r in rows if r["approx_active"] == "1"]
    used = sum(int(r["bwd_spmm_flops"]) for r in approx)
    exact = sum(int(r["bwd_spmm_flops_exact_equiv"]) for r in approx)
    assert used <= 0.1 * exact


def test_train_near_full_budget(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["train", *SMALL, "--out", str(a)]) == 0
    assert main(["train", *SMALL, "--mode", "rsc", "--budget", "0.999999999999",
                 "--out", str(b)]) == 0
    ra, rb = read_csv(a), read_csv(b)
    assert [r["loss"] for r in ra] == [r["loss"] for r in rb]
    total = sum(int(r["bwd_spmm_flops"]) for r in rb)
    assert total == sum(int(r["bwd_spmm_flops_exact_equiv"]) for r in rb)


def test_train_from_files(tmp_path):
    rng = np.random.default_rng(0)
    n = 40
    labels = np.arange(n) % 2
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)
             if labels[i] == labels[j] and rng.random() < 0.2]
    (tmp_path / "e.txt").write_text("".join(f"{i} {j}\n" for i, j in edges))
    x = np.eye(2)[labels] + 0.1 * rng.standard_normal((n, 2))
    np.savetxt(tmp_path / "f.csv", x, delimiter=",")
    (tmp_path / "l.txt").write_text("\n".join(map(str, labels)) + "\n")
    split = ["train", "train", "train", "val", "test"] * (n // 5)
    (tmp_path / "m.txt").write_text("\n".join(split) + "\n")
    out = tmp_path / "out.csv"
    rc = main(["train", "--edges", str(tmp_path / "e.txt"), "--features", str(tmp_path / "f.csv"),
               "--labels", str(tmp_path / "l.txt"), "--masks", str(tmp_path / "m.txt"),
               "--epochs", "5", "--hidden", "4", "--out", str(out)])
    assert rc == 0 and len(read_csv(out)) == 5


def test_train_deterministic_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["train", *SMALL, "--mode", "rsc", "--seed", "3", "--out", str(p)]) == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in rows]
    assert strip(read_csv(a)) == strip(read_csv(b))


def test_bench_examples():
    rows = cmd_bench_spmm(300, 0.02, 8, [0.1, 0.3, 0.6, 1.0], trials=20)
    full = rows[-1]
    assert full[1] == 300 and full[6] == full[5] and full[8] == 0.0
    approx_flops = [r[6] for r in rows]
    assert approx_flops == sorted(approx_flops)
    assert all(r[2] > 0 and r[3] > 0 for r in rows)


def test_bench_cli_csv(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench-spmm", "--n", "200", "--density", "0.05", "--d", "4",
                 "--k-fractions", "0.5,1.0", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r["k"] for r in rows] == ["100", "200"]
    assert set(BENCH_TIMING_COLUMNS) <= set(rows[0])


def test_bench_rejects_bad_fractions():
    with pytest.raises(UsageError):
        cmd_bench_spmm(10, 0.5, 2, [0.0])
    assert main(["bench-spmm", "--k-fractions", "a,b"]) == 2


def test_stability_csv(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["stability", *SMALL, "--epochs", "30", "--mode", "rsc",
                 "--switch-fraction", "1.0", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows and set(rows[0]) == {"step", "ref_step", "layer", "k", "auc", "skipped"}
    for r in rows:
        assert int(r["step"]) - int(r["ref_step"]) == 10
        if r["skipped"] == "0":
            assert 0.0 <= float(r["auc"]) <= 1.0


def test_stability_full_k_rows_skipped(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["stability", *SMALL, "--epochs", "15", "--mode", "rsc",
                 "--budget", "0.999999999999", "--switch-fraction", "1.0", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert rows and all(r["skipped"] == "1" and r["auc"] == "" for r in rows)


def toy_profiles():
    p0 = LayerProfile(0, np.array([9.0, 1.0, 7.0, 0.5, 3.0, 0.2]), np.ones(6, int), 2, 10.0)
    p1 = LayerProfile(1, np.array([4.0, 4.0, 0.1, 6.0, 2.5, 0.3]), np.ones(6, int), 2, 10.0)
    return [p0, p1]


def write_profile(path, profiles, with_den=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "pair_index", "product", "nnz", "d"] + (["frob_denominator"] if with_den else []))
        for p in profiles:
            for i in range(p.n_pairs):
                row = [p.layer_id, i, repr(float(p.products[i])), int(p.nnz_per_col[i]), p.d]
                w.writerow(row + ([p.frob_denominator] if with_den else []))


def test_allocate_matches_library(tmp_path):
    path = tmp_path / "p.csv"
    write_profile(path, toy_profiles())
    rows = cmd_allocate(path, 0.5, 1 / 6)
    lib = greedy_allocate(toy_profiles(), 0.5, 1 / 6, 6)
    assert [r[1] for r in rows] == lib.k_per_layer
    assert sum(r[3] for r in rows) == lib.achieved_flops
    assert math.isclose(rows[0][2], (9 + 7 + 3) / 10)
    assert all(r[4] == "ok" for r in rows)


def test_allocate_full_and_infeasible(tmp_path):
    path = tmp_path / "p.csv"
    write_profile(path, toy_profiles(), with_den=False)
    full = cmd_allocate(path, 0.999999, 1 / 6)
    assert [r[1] for r in full] == [6, 6]
    assert math.isclose(full[0][2], sum([9.0, 1.0, 7.0, 0.5, 3.0, 0.2]))
    out = tmp_path / "o.csv"
    assert main(["allocate", str(path), "--budget", "0.01", "--alpha", str(1 / 6),
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r["status"] for r in rows] == ["infeasible", "infeasible"]
    assert list(rows[0]) == ["layer_id", "k_l", "captured_mass", "flops", "status"]


@pytest.mark.parametrize(
    "text",
    [
        "layer,pair_index,product\n0,0,1\n",
        "layer,pair_index,product,nnz,d\n0,0,x,1,1\n",
        "layer,pair_index,product,nnz,d\n0,1,1,1,1\n",
        "layer,pair_index,product,nnz,d\n0,0,1,1,1\n1,0,1,1,1\n1,1,1,1,1\n",
        "layer,pair_index,product,nnz,d\n",
    ],
)
def test_allocate_malformed(tmp_path, text):
    path = tmp_path / "p.csv"
    path.write_text(text)
    assert main(["allocate", str(path)]) == 2


def test_allocate_missing_file(tmp_path):
    assert main(["allocate", str(tmp_path / "nope.csv")]) == 2
