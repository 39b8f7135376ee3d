import numpy as np
import pytest

from lamil.cli import PRESETS, main, parse_config
from lamil.data import load_bag, load_manifest
from lamil.graph import build_knn
from lamil.model import forward, load_checkpoint
from lamil.attention import attention_scores


def write_config(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small dataset, a config, and a trained checkpoint shared by tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    code = main(
        [
            "synth",
            "--out", str(data),
            "--bags", "8",
            "--tiles", "2:4",
            "--dim", "4",
            "--targets", "2",
            "--effect", "2",
            "--radius", "2",
            "--seed", "6",
        ]
    )
    assert code == 0
    config = root / "run.cfg"
    config.write_text(
        "# tiny run\n"
        "hidden_dim = 4\n"
        "heads = 2\n"
        "k = 2\n"
        "epochs = 1\n"
        "lr = 1e-3\n"
    )
    model = root / "model.lamp"
    code = main(
        [
            "train",
            "--data", str(data / "manifest.txt"),
            "--config", str(config),
            "--out", str(model),
        ]
    )
    assert code == 0
    return root


def test_synth_is_reproducible(tmp_path):
    args = [
        "--bags", "5", "--tiles", "3:6", "--dim", "4", "--targets", "2",
        "--seed", "9",
    ]
    assert main(["synth", "--out", str(tmp_path / "a")] + args) == 0
    assert main(["synth", "--out", str(tmp_path / "b")] + args) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (
            tmp_path / "b" / name
        ).read_bytes()
    assert "manifest.txt" in names


def test_synth_rejects_dim_below_targets(tmp_path, capsys):
    code = main(
        [
            "synth", "--out", str(tmp_path / "x"), "--bags", "2",
            "--tiles", "3", "--dim", "1", "--targets", "2",
        ]
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_config_defaults(tmp_path):
    run = parse_config(write_config(tmp_path / "c.cfg", "# nothing but comments\n"))
    assert run.lr == 2e-5
    assert run.weight_decay == 2e-5
    assert run.epochs == 10
    assert run.k == (16, 64)
    assert run.hidden_dim == 512
    assert run.input_dim == 1024 and not run.input_dim_set
    assert run.seed == 1


def test_config_presets(tmp_path):
    assert PRESETS == {"crc": 2e-5, "stad": 2e-4}
    run = parse_config(write_config(tmp_path / "c.cfg", "preset = crc\n"))
    assert run.lr == 2e-5
    run = parse_config(write_config(tmp_path / "c.cfg", "preset = stad\n"))
    assert run.lr == 2e-4
    # later keys win over the preset
    run = parse_config(
        write_config(tmp_path / "c.cfg", "preset = stad\nlr = 5e-6\n")
    )
    assert run.lr == 5e-6


def test_config_parses_values(tmp_path):
    run = parse_config(
        write_config(
            tmp_path / "c.cfg",
            "k = 4, 8  # two layers\n"
            "mode = global\n"
            "include_self = false\n"
            "weighting = positive\n"
            "input_dim = 64\n"
            "seed = 12\n",
        )
    )
    assert run.k == (4, 8)
    assert run.mode == "global"
    assert run.include_self is False
    assert run.weighting == "positive"
    assert run.input_dim == 64 and run.input_dim_set
    assert run.seed == 12


def test_config_error_line_numbers(tmp_path):
    with pytest.raises(ValueError) as err:
        parse_config(write_config(tmp_path / "c.cfg", "lr = 2e-5\nwat = 1\n"))
    assert ":2:" in str(err.value)

    with pytest.raises(ValueError) as err:
        parse_config(write_config(tmp_path / "c.cfg", "\n\nlr = fast\n"))
    assert ":3:" in str(err.value)

    with pytest.raises(ValueError) as err:
        parse_config(write_config(tmp_path / "c.cfg", "just some words\n"))
    assert ":1:" in str(err.value)

    with pytest.raises(ValueError) as err:
        parse_config(write_config(tmp_path / "c.cfg", "preset = tcga\n"))
    assert ":1:" in str(err.value)

    with pytest.raises(ValueError):
        parse_config(write_config(tmp_path / "c.cfg", "mode = both\n"))


def test_train_writes_loadable_checkpoint(workspace):
    params, config = load_checkpoint(str(workspace / "model.lamp"))
    assert config.input_dim == 4
    assert config.targets == 2
    assert config.hidden_dim == 4
    assert config.k == (2,)
    assert np.isfinite(params.flat).all()


def test_train_notes_inferred_dim(workspace, tmp_path, capsys):
    # the config leaves input_dim at its default, so the data's width wins
    code = main(
        [
            "train",
            "--data", str(workspace / "data" / "manifest.txt"),
            "--config", str(workspace / "run.cfg"),
            "--out", str(tmp_path / "m.lamp"),
        ]
    )
    assert code == 0
    assert "using feature dim 4 from the data" in capsys.readouterr().err


def test_train_rejects_explicit_dim_mismatch(workspace, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("input_dim = 16\nhidden_dim = 4\nheads = 2\nk = 2\nepochs = 1\n")
    code = main(
        [
            "train",
            "--data", str(workspace / "data" / "manifest.txt"),
            "--config", str(cfg),
            "--out", str(tmp_path / "m.lamp"),
        ]
    )
    assert code == 1
    assert "input_dim 16" in capsys.readouterr().err


def test_train_fold_flags_must_pair(workspace, tmp_path, capsys):
    base = [
        "train",
        "--data", str(workspace / "data" / "manifest.txt"),
        "--config", str(workspace / "run.cfg"),
        "--out", str(tmp_path / "m.lamp"),
    ]
    assert main(base + ["--folds", "2"]) == 1
    assert "together" in capsys.readouterr().err
    assert main(base + ["--folds", "2", "--holdout", "5"]) == 1
    assert "holdout" in capsys.readouterr().err
    assert main(base + ["--folds", "2", "--holdout", "1"]) == 0


def test_missing_manifest_fails_cleanly(tmp_path, capsys):
    code = main(
        [
            "train",
            "--data", str(tmp_path / "nope" / "manifest.txt"),
            "--out", str(tmp_path / "m.lamp"),
        ]
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cv_writes_report(workspace, tmp_path, capsys):
    report = tmp_path / "report.csv"
    code = main(
        [
            "cv",
            "--data", str(workspace / "data" / "manifest.txt"),
            "--config", str(workspace / "run.cfg"),
            "--folds", "2",
            "--report", str(report),
        ]
    )
    assert code == 0
    err = capsys.readouterr().err
    assert "t0: mean auroc" in err and "t1: mean auroc" in err
    lines = report.read_text().splitlines()
    assert lines[0] == "fold,target,auroc"
    # 2 folds x 2 targets, then mean+std per target
    assert len(lines) == 1 + 4 + 4
    assert lines[-4].startswith("mean,t0,")
    assert lines[-1].startswith("std,t1,")


def test_cv_rejects_single_fold(workspace, tmp_path, capsys):
    code = main(
        [
            "cv",
            "--data", str(workspace / "data" / "manifest.txt"),
            "--folds", "1",
            "--report", str(tmp_path / "r.csv"),
        ]
    )
    assert code == 1
    assert "folds" in capsys.readouterr().err


def test_cv_seed_flag_changes_the_run(workspace, tmp_path):
    def run(seed, name):
        path = tmp_path / name
        code = main(
            [
                "cv",
                "--data", str(workspace / "data" / "manifest.txt"),
                "--config", str(workspace / "run.cfg"),
                "--folds", "2",
                "--seed", str(seed),
                "--report", str(path),
            ]
        )
        assert code == 0
        return path.read_text()

    assert run(3, "a.csv") == run(3, "b.csv")
    assert run(3, "c.csv") != run(4, "d.csv")


def test_eval_reports_per_target(workspace, tmp_path):
    report = tmp_path / "eval.csv"
    code = main(
        [
            "eval",
            "--data", str(workspace / "data" / "manifest.txt"),
            "--model", str(workspace / "model.lamp"),
            "--report", str(report),
        ]
    )
    assert code == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "target,auroc"
    assert len(lines) == 3
    for line in lines[1:]:
        name, value = line.split(",")
        assert name in ("t0", "t1")
        assert value == "nan" or 0.0 <= float(value) <= 1.0


def test_eval_rejects_dim_mismatch(workspace, tmp_path, capsys):
    other = tmp_path / "wide"
    main(
        [
            "synth", "--out", str(other), "--bags", "3", "--tiles", "3",
            "--dim", "6", "--targets", "2", "--seed", "1",
        ]
    )
    code = main(
        [
            "eval",
            "--data", str(other / "manifest.txt"),
            "--model", str(workspace / "model.lamp"),
            "--report", str(tmp_path / "r.csv"),
        ]
    )
    assert code == 1
    assert "4-dim" in capsys.readouterr().err


def first_bag_path(workspace):
    manifest = workspace / "data" / "manifest.txt"
    rel = manifest.read_text().splitlines()[1]
    return str(workspace / "data" / rel)


def test_attend_scores_match_library(workspace, tmp_path):
    scores_csv = tmp_path / "scores.csv"
    code = main(
        [
            "attend",
            "--model", str(workspace / "model.lamp"),
            "--bag", first_bag_path(workspace),
            "--out", str(scores_csv),
        ]
    )
    assert code == 0
    lines = scores_csv.read_text().splitlines()
    assert lines[0] == "tile_index,x,y,score"

    params, config = load_checkpoint(str(workspace / "model.lamp"))
    bag = load_bag(first_bag_path(workspace))
    graphs = [build_knn(bag.coords, k, config.include_self) for k in config.k]
    out = forward(bag.features, graphs, params, config)
    want = attention_scores(out.caches[-1], graphs[-1])
    assert len(lines) == 1 + bag.n
    for i, line in enumerate(lines[1:]):
        idx, x, y, s = line.split(",")
        assert int(idx) == i
        assert abs(float(x) - bag.coords[i, 0]) < 1e-6
        assert abs(float(y) - bag.coords[i, 1]) < 1e-6
        assert abs(float(s) - want[i]) < 1e-6
        assert 0.0 <= float(s) <= 1.0


def test_attend_layer_flag(workspace, tmp_path, capsys):
    code = main(
        [
            "attend",
            "--model", str(workspace / "model.lamp"),
            "--bag", first_bag_path(workspace),
            "--layer", "0",
            "--out", str(tmp_path / "s.csv"),
        ]
    )
    assert code == 0
    code = main(
        [
            "attend",
            "--model", str(workspace / "model.lamp"),
            "--bag", first_bag_path(workspace),
            "--layer", "5",
            "--out", str(tmp_path / "s.csv"),
        ]
    )
    assert code == 1
    assert "--layer" in capsys.readouterr().err


def test_attend_single_tile_bag(tmp_path, capsys):
    data = tmp_path / "solo"
    main(
        [
            "synth", "--out", str(data), "--bags", "3", "--tiles", "1",
            "--dim", "4", "--targets", "2", "--seed", "2",
        ]
    )
    cfg = tmp_path / "c.cfg"
    cfg.write_text("hidden_dim = 4\nheads = 2\nk = 2\nepochs = 1\nlr = 1e-3\n")
    model = tmp_path / "m.lamp"
    assert (
        main(
            [
                "train", "--data", str(data / "manifest.txt"),
                "--config", str(cfg), "--out", str(model),
            ]
        )
        == 0
    )
    manifest_lines = (data / "manifest.txt").read_text().splitlines()
    bag_path = str(data / manifest_lines[1])
    scores_csv = tmp_path / "s.csv"
    assert (
        main(
            [
                "attend", "--model", str(model), "--bag", bag_path,
                "--out", str(scores_csv),
            ]
        )
        == 0
    )
    line = scores_csv.read_text().splitlines()[1]
    assert line.endswith("0.500000")


def test_attend_svg_output(workspace, tmp_path):
    svg = tmp_path / "heat.svg"
    code = main(
        [
            "attend",
            "--model", str(workspace / "model.lamp"),
            "--bag", first_bag_path(workspace),
            "--out", str(tmp_path / "s.csv"),
            "--svg", str(svg),
        ]
    )
    assert code == 0
    text = svg.read_text()
    bag = load_bag(first_bag_path(workspace))
    assert text.startswith("<svg")
    assert text.count("<rect") == bag.n + 1  # tiles plus the background
    assert 'fill="white"' in text
    assert "rgb(255," in text
