import io
import json
from importlib.resources import files

import pytest

from anova_evidence.cli import run

TABLE1 = str(files("anova_evidence").joinpath("data", "stapel1996_table1.json"))
ADAPTED = str(files("anova_evidence").joinpath("data", "stapel1996_adapted.json"))


def call(*argv):
    out = io.StringIO()
    code = run(list(argv), stdout=out)
    return code, out.getvalue()


def call_json(*argv):
    code, text = call(*argv, "--format", "json")
    return code, (json.loads(text) if code == 0 else None)


def write(tmp_path, doc, name="study.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_analyze_table1():
    code, doc = call_json("analyze", TABLE1, "--model", "both", "--sigma2", "1.134",
                          "--prior-odds", "1")
    assert code == 0
    assert doc["schema"] == "anova-evidence-report/1"
    assert doc["sigma2"]["source"] == "flag"
    assert doc["evidence"]["pooled"]["v"] == pytest.approx(56.88, abs=0.2)
    assert doc["evidence"]["per_group"]["v"] == pytest.approx(14.49, abs=0.05)
    assert doc["odds"]["pooled"]["posterior"] == pytest.approx(56.88, abs=0.2)
    assert doc["odds"]["pooled"]["exceeds_one"] is True


def test_analyze_adapted():
    code, doc = call_json("analyze", ADAPTED, "--sigma2", "1.168")
    assert code == 0
    assert doc["evidence"]["pooled"]["v"] == pytest.approx(1.92, abs=0.02)


def test_analyze_text():
    code, text = call("analyze", TABLE1)
    assert code == 0
    assert "V = 56.8765" in text and "study override" in text


def test_sigma_resolution_from_f(tmp_path, table1):
    from anova_evidence.summary import dump_study

    doc = dump_study(table1)
    del doc["sigma2_override"]
    code, rep = call_json("analyze", write(tmp_path, doc), "--model", "pooled")
    assert code == 0
    assert rep["sigma2"]["source"] == "f-statistics"
    assert rep["sigma2"]["value"] == pytest.approx(1.1573, abs=1e-4)


def test_unresolvable_sigma_exit_2(tmp_path, table1):
    from anova_evidence.summary import dump_study

    doc = dump_study(table1)
    del doc["sigma2_override"]
    doc["f_statistics"] = []
    assert call("analyze", write(tmp_path, doc))[0] == 2
    assert call("sigma", write(tmp_path, doc))[0] == 2


def test_validation_error_exit_1(tmp_path, table1):
    from anova_evidence.summary import dump_study

    doc = dump_study(table1)
    doc["groups"][0].pop()
    assert call("analyze", write(tmp_path, doc))[0] == 1
    assert call("analyze", str(tmp_path / "missing.json"))[0] == 1


def test_sigma_command():
    code, doc = call_json("sigma", TABLE1)
    assert code == 0
    recs = {r["label"].split(" F(")[0]: r for r in doc["sigma2"]["records"]}
    assert recs["upper half task x prime"]["sigma2"] == pytest.approx(1.095, abs=1e-3)
    assert recs["lower half prime"]["sigma2"] == pytest.approx(1.223, abs=1e-3)
    assert recs["lower half positive vs negative"]["sigma2"] == pytest.approx(1.217, abs=1e-3)
    assert recs["three-way interaction"]["outlier"]


def test_sigma_lower_half_only(tmp_path, table1):
    from anova_evidence.summary import dump_study

    doc = dump_study(table1)
    doc["f_statistics"] = doc["f_statistics"][2:]
    code, rep = call_json("sigma", write(tmp_path, doc))
    assert code == 0
    assert [r["sigma2"] for r in rep["sigma2"]["records"]] == pytest.approx([1.223, 1.217], abs=1e-3)
    assert rep["sigma2"]["pooled"]["value"] == pytest.approx(1.220, abs=1e-3)


def test_sigma_df_mismatch_listed(tmp_path, table1):
    from anova_evidence.summary import dump_study

    doc = dump_study(table1)
    doc["f_statistics"][1]["df1"] = 3
    code, rep = call_json("sigma", write(tmp_path, doc))
    assert code == 0
    assert rep["sigma2"]["records"][1]["error"]
    assert rep["flags"]["errors"]
    assert rep["sigma2"]["pooled"] is not None


def test_sensitivity_table1():
    code, doc = call_json("sensitivity", TABLE1, "--worst-sigma2", "1.168")
    assert code == 0
    s = doc["sensitivity"]
    worst = {r["id"]: r["worst_case"] for r in s["worst_case_table"]}
    assert worst["imp-mem-neg"] == 3.55 and worst["per-imp-irr"] == 3.05
    assert s["evidence"]["original"]["pooled"]["v"] == pytest.approx(56.88, abs=0.2)
    assert s["evidence"]["worst_case"]["pooled"]["v"] == pytest.approx(1.92, abs=0.02)


def test_sensitivity_exact_means(tmp_path, table1):
    from anova_evidence.summary import dump_study

    doc = dump_study(table1)
    doc["rounding_decimals"] = "exact"
    code, rep = call_json("sensitivity", write(tmp_path, doc))
    assert code == 0
    for row in rep["sensitivity"]["worst_case_table"]:
        assert row["original"] == row["worst_case"]


def test_sensitivity_never_increases_pooled_v(tmp_path):
    import numpy as np

    from test_evidence import make_study
    from anova_evidence.summary import dump_study

    rng = np.random.default_rng(21)
    for k in range(10):
        s = make_study(np.round(rng.normal(3, 0.1, 6), 1), [[0, 1, 2], [3, 4, 5]], N=120)
        doc = dump_study(s)
        doc["rounding_decimals"] = 1
        code, rep = call_json("sensitivity", write(tmp_path, doc, f"s{k}.json"), "--sigma2", "0.5")
        assert code == 0
        ev = rep["sensitivity"]["evidence"]
        v0 = ev["original"]["pooled"]["v"]
        v1 = ev["worst_case"]["pooled"]["v"]
        v0 = float("inf") if v0 == "infinity" else v0
        assert v1 <= v0


def test_combine(tmp_path):
    code, doc = call_json("combine", "56.88", "1.92")
    assert doc["evidence"]["combined"]["v"] == pytest.approx(109.2096, abs=1e-4)
    assert call_json("combine", "1", "4")[1]["evidence"]["combined"]["v"] == 4.0
    code, doc = call_json("combine", "infinity", "3")
    assert doc["evidence"]["combined"]["v"] == "infinity"
    assert call("combine", "0.5", "3")[0] == 1


def test_combine_report_files(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert run(["analyze", TABLE1, "--format", "json", "--output", str(a)]) == 0
    assert run(["analyze", ADAPTED, "--format", "json", "--output", str(b)]) == 0
    code, doc = call_json("combine", str(a), str(b), "--prior-odds", "0.01")
    assert doc["evidence"]["combined"]["v"] == pytest.approx(56.8765 * 1.9228, rel=1e-4)
    assert doc["odds"]["exceeds_one"] is True


def test_simulate_correlation(tmp_path):
    ds = tmp_path / "data.json"
    code, doc = call_json("simulate", "--rho", "0.49", "--I", "2", "--n", "100000",
                          "--dataset", str(ds))
    assert code == 0
    assert doc["summary"]["empirical_error_correlation"] == pytest.approx(0.49, abs=0.01)
    data = json.loads(ds.read_text())
    assert len(data["values"]) == 2 and len(data["values"][0]) == 100000


def test_simulate_bad_rho():
    assert call("simulate", "--rho", "1.2", "--I", "2", "--n", "10")[0] == 1


def test_calibrate():
    code, doc = call_json("calibrate", TABLE1, "--rho", "0", "--reps", "1000", "--seed", "4")
    assert code == 0
    for model in ("pooled", "per_group"):
        assert doc["calibration"][model]["p_v_at_least_1"] == 1.0


def test_deterministic_json_output():
    args = ("calibrate", TABLE1, "--reps", "1000", "--seed", "9", "--format", "json")
    assert call(*args)[1] == call(*args)[1]
    args = ("simulate", "--I", "3", "--n", "50", "--rho", "0.3", "--seed", "2", "--format", "json")
    assert call(*args)[1] == call(*args)[1]
