import json
from dataclasses import replace

import numpy as np
import pytest

from fedfusion import cli
from fedfusion.errors import ConfigError
from fedfusion.orchestrator import (
    Report,
    compare,
    compare_reports,
    fairness,
    load_config,
    parse_config,
    run,
    trace_path,
)
from fedfusion.orchestrator.config import reference_markdown

TAB = """
scenario = "toy"
method = "{method}"
seeds = [0]
[dataset]
kind = "synth_tabular"
[dataset.params]
n_clusters = 3
features = 8
samples = 120
test_fraction = 0.25
[partition]
kind = "features"
n_clients = 3
max_features = 6
[method_params]
rounds = 3
epochs_init = 4
epochs_low = 2
encoder_menu = [[6]]
[run]
record_timing = false
"""

DIG = """
scenario = "digits"
method = "{method}"
seeds = [0]
[dataset]
kind = "synth_digits"
[dataset.params]
domains = 3
side = 8
samples = 80
k = 4
[partition]
kind = "domains"
n_clients = 3
statuses = [1.0, 0.5, 0.0]
[method_params]
rounds_step1 = 1
rounds_step2 = 2
batch_size = 16
encoder_layers = [16, 8]
[run]
record_timing = false
"""


def write(tmp_path, text, name="cfg.toml", **fmt):
    p = tmp_path / name
    p.write_text(text.format(**fmt) if fmt else text)
    return p


def parse(text, **fmt):
    import tomli
    return parse_config(tomli.loads(text.format(**fmt)))


def read_trace(path):
    return [json.loads(line) for line in open(path)]


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("edit, key", [
    (lambda t: t.replace('method = "diven"', 'method = "fedprox"'), "method"),
    (lambda t: t.replace("rounds = 3", "rounds = 1"), "method_params"),
    (lambda t: t.replace("rounds = 3", "rounds = 3\nlearning_rate = 0.1"),
     "method_params.learning_rate"),
    (lambda t: t.replace("rounds = 3", 'rounds = "three"'), "method_params.rounds"),
    (lambda t: t.replace("rounds = 3", 'rounds = 3\nvariant = "diven_mix"'),
     "method_params.variant"),
    (lambda t: t.replace("seeds = [0]", "seeds = [0, 0]"), "seeds"),
    (lambda t: t.replace("seeds = [0]", "seeds = []"), "seeds"),
    (lambda t: t.replace("n_clients = 3", "n_clients = 0"), "partition.n_clients"),
    (lambda t: t.replace("samples = 120", "sample_count = 120"), "dataset.params.sample_count"),
    (lambda t: t.replace('kind = "synth_tabular"', 'kind = "parquet"'), "dataset.kind"),
    (lambda t: t.replace("record_timing = false", "record_timing = 0"), "run.record_timing"),
    (lambda t: "extra = 1\n" + t, "extra"),
])
def test_config_errors_name_the_key(edit, key):
    with pytest.raises(ConfigError) as info:
        parse(edit(TAB.format(method="diven")))
    assert str(info.value).startswith(key)


def test_config_method_table_form_and_family():
    text = TAB.format(method="diven").replace('method = "diven"\n', "").replace(
        "[method_params]", '[method]\nname = "fedavg"\n[method.params]')
    cfg = parse(text)
    assert cfg.method == "fedavg" and cfg.family == "diven"
    assert parse(DIG, method="fedavg").family == "fusion"
    with pytest.raises(ConfigError, match="method_params"):
        parse(text + "\n[method_params]\nrounds = 2\n")


def test_config_pairing_rules():
    with pytest.raises(ConfigError, match="^partition.kind"):
        parse(TAB.replace("[method_params]\nrounds = 3\nepochs_init = 4\nepochs_low = 2\n"
                          "encoder_menu = [[6]]", "[method_params]"), method="fedfusion")
    with pytest.raises(ConfigError, match="^partition.kind"):
        parse(DIG.replace("rounds_step1 = 1\nrounds_step2 = 2\nbatch_size = 16\n"
                          "encoder_layers = [16, 8]", ""), method="diven_c")


def test_config_variant_and_pseudo_label_follow_method():
    assert parse(TAB, method="diven_mix").params.variant == "diven_mix"
    assert parse(DIG, method="fedfusion").params.pseudo_label is False
    assert parse(DIG, method="fedfusion_star").params.pseudo_label is True


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(write(tmp_path, "method = \n"))


def test_csv_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "d.csv").write_text("a,b,c,y\n" + "".join(
        f"{i},{i % 3},{i * i % 7},{i % 2}\n" for i in range(40)))
    text = """
method = "single"
[dataset]
kind = "csv"
path = "d.csv"
schema = {target = "y"}
test_fraction = 0.25
[partition]
kind = "rows"
n_clients = 2
[method_params]
rounds = 2
epochs_init = 2
epochs_low = 1
encoder_menu = [[4]]
"""
    cfg = load_config(write(tmp_path, text))
    assert cfg.dataset.path == str(tmp_path / "d.csv")
    report = run(cfg, tmp_path / "out")
    assert len(report.client_metrics) == 2


def test_reference_doc_lists_every_section():
    doc = reference_markdown()
    for section in ("[run]", "[dataset]", "[partition]"):
        assert f"## `{section}`" in doc
    for key in ("max_features", "rounds_step2", "record_timing", "pull_lambda"):
        assert f"| `{key}` |" in doc


# ---------------------------------------------------------------- run


def test_run_writes_trace_and_report(tmp_path):
    cfg = load_config(write(tmp_path, TAB, method="diven"))
    report = run(replace(cfg, seeds=[0, 1], dump_params=True, dump_similarity=True),
                 tmp_path / "out")
    out = tmp_path / "out"
    for seed in (0, 1):
        recs = read_trace(trace_path(out, seed))
        finals = [r for r in recs if r["phase"] == "final"]
        assert [r["test_metric"] for r in finals] == report.per_seed[seed]
        assert all(r["wall_time"] == 0.0 for r in recs)
        assert (out / f"params_seed{seed}.npz").exists()
        assert (out / f"similarity_seed{seed}.jsonl").exists()
    saved = json.loads((out / "report.json").read_text())
    assert "timing" not in saved
    assert saved["mean"] == pytest.approx(np.mean(report.client_metrics))
    loaded = Report.load(out / "report.json")
    assert loaded.per_seed == report.per_seed and loaded.mean == report.mean
    assert loaded.payload() == json.loads(json.dumps(report.payload()))


def test_run_is_deterministic(tmp_path):
    cfg = load_config(write(tmp_path, DIG, method="fedfusion_star"))
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    for name in ("trace_seed0.jsonl", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_records_timing_when_enabled(tmp_path):
    cfg = replace(load_config(write(tmp_path, TAB, method="single")), record_timing=True)
    run(cfg, tmp_path / "o")
    assert "timing" in json.loads((tmp_path / "o" / "report.json").read_text())


@pytest.mark.parametrize("method", ["single", "class_agg", "fedavg", "diven", "diven_mix",
                                    "diven_c"])
def test_every_tabular_method_runs(tmp_path, method):
    text = TAB.replace("max_features = 6", "max_features = 8") if method == "fedavg" else TAB
    report = run(parse(text, method=method), tmp_path)
    assert report.metric == "accuracy" and len(report.per_seed[0]) == 3


def test_regression_reports_mae(tmp_path):
    text = TAB.replace("n_clusters = 3", 'n_clusters = 3\ntask = "regression"')
    report = run(parse(text, method="diven"), tmp_path)
    assert report.metric == "mae"
    assert fairness(report).worst_client == int(np.argmax(report.client_metrics))


# ---------------------------------------------------------------- compare


def test_compare_single_cell(tmp_path):
    table = compare([parse(TAB, method="single")], tmp_path)
    assert table.methods == ["single"] and table.scenarios == ["toy"]
    assert (tmp_path / "toy" / "single" / "report.json").exists()
    assert "single" in table.to_text()


def test_compare_deduplicates_identical_configs(tmp_path):
    a = parse(TAB, method="single")
    table = compare([a, parse(TAB, method="single"), parse(TAB, method="diven")], tmp_path)
    assert len(table.reports) == 3 and table.reports[0] is table.reports[1]
    assert [r["method"] for r in table.records()] == ["single", "diven"]


def test_compare_cell_equals_trace_replay(tmp_path):
    table = compare([parse(TAB, method="diven")], tmp_path)
    finals = [r for r in read_trace(trace_path(tmp_path / "toy" / "diven", 0))
              if r["phase"] == "final"]
    assert table.cells[("diven", "toy")] == pytest.approx(
        np.mean([r["test_metric"] for r in finals]), abs=1e-12)


def test_compare_rejects_mismatched_scenario(tmp_path):
    a = parse(TAB, method="single")
    b = parse(TAB.replace("samples = 120", "samples = 150"), method="diven")
    with pytest.raises(ConfigError, match="scenario 'toy'"):
        compare([a, b], tmp_path)
    with pytest.raises(ConfigError, match="seeds"):
        compare([a, replace(b, seeds=[1], dataset=a.dataset)], tmp_path)


def test_compare_reports_missing_and_conflicting_cells():
    r = lambda m, s, v: Report.from_seeds(m, s, "accuracy", [0], [[v]])  # noqa: E731
    with pytest.raises(ConfigError, match="no result"):
        compare_reports([r("a", "x", 1.0), r("b", "y", 2.0)])
    with pytest.raises(ConfigError, match="conflicting"):
        compare_reports([r("a", "x", 1.0), r("a", "x", 2.0)])
    table = compare_reports([r("a", "x", 1.0), r("a", "x", 1.0)])
    assert table.cells == {("a", "x"): 1.0}


def test_fairness_example():
    f = fairness([60.0, 80.0])
    assert (f.min, f.max, f.mean, f.std, f.worst_client) == (60.0, 80.0, 70.0, 10.0, 0)
    assert fairness([1.0, 3.0], higher_is_better=False).worst_client == 1


def test_report_rejects_ragged_seeds():
    with pytest.raises(ValueError):
        Report.from_seeds("m", "s", "accuracy", [0, 1], [[1.0, 2.0], [1.0]])


# ---------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    good = write(tmp_path, TAB, "good.toml", method="single")
    assert cli.main(["run", str(good), "--out", str(tmp_path / "o"), "--seed", "2"]) == 0
    assert "single [toy]" in capsys.readouterr().out
    assert trace_path(tmp_path / "o", 2).exists()
    assert cli.main(["validate", str(good)]) == 0
    assert cli.main(["cluster", str(good)]) == 0
    assert '"members"' in capsys.readouterr().out
    bad = write(tmp_path, TAB.replace("rounds = 3", "rounds = 0"), "bad.toml", method="single")
    assert cli.main(["run", str(bad)]) == 1
    assert "method_params" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "nope.toml")]) == 1
    dig = write(tmp_path, DIG, "dig.toml", method="fedfusion")
    assert cli.main(["cluster", str(dig)]) == 1


def test_cli_compare(tmp_path, capsys):
    a = write(tmp_path, TAB, "a.toml", method="single")
    b = write(tmp_path, TAB, "b.toml", method="class_agg")
    assert cli.main(["compare", str(a), str(b), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "single" in out and "class_agg" in out


def test_runtime_failure_exit_two_keeps_partial_trace(tmp_path, monkeypatch, capsys):
    import fedfusion.protocols.fusion as fusion

    real = fusion.update_client_step2

    def flaky(client, W, cfg, rng, _calls=[0]):
        _calls[0] += 1
        if _calls[0] > 3:  # fail in the second step-2 round
            raise FloatingPointError("boom")
        return real(client, W, cfg, rng)

    monkeypatch.setattr(fusion, "update_client_step2", flaky)
    cfg = write(tmp_path, DIG, method="fedfusion_star")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "client 0 failed in round 2" in capsys.readouterr().err
    recs = read_trace(trace_path(tmp_path / "o", 0))
    assert [r["phase"] for r in recs] == ["step1"] * 3 + ["step2"] * 3
    assert not (tmp_path / "o" / "report.json").exists()


def test_fairness_matches_recompute_on_ten_client_trace(tmp_path):
    text = TAB.replace("n_clients = 3", "n_clients = 10").replace("samples = 120", "samples = 400")
    report = run(parse(text, method="single"), tmp_path)
    finals = [r["test_metric"] for r in read_trace(trace_path(tmp_path, 0))
              if r["phase"] == "final"]
    assert len(finals) == 10
    mean = sum(finals) / 10
    std = (sum((v - mean) ** 2 for v in finals) / 10) ** 0.5
    f = fairness(report)
    assert f.min == min(finals) and f.max == max(finals)
    assert f.mean == pytest.approx(mean, abs=1e-12)
    assert f.std == pytest.approx(std, abs=1e-12)
    assert f.worst_client == finals.index(min(finals))
    same = fairness([75.0] * 4)
    assert same.std == 0.0 and same.min == same.mean
