import json
import os

import numpy as np
import pytest
import yaml

from bbgp.cli import main
from bbgp.io import LoadError, load_csv, save_csv
from bbgp.model import RepeatedCountData

from conftest import FINAL_SPEC

TOY = """unit_id,condition_id,x,n,grp
a,pre,1,4,ctl
a,post,2,2,ctl
b,pre,0,0,trt
b,post,5,9,trt
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestLoadCsv:
    def test_toy_file(self, tmp_path):
        data, cov = load_csv(write(tmp_path, "d.csv", TOY), unit_level=["grp"])
        assert (data.M, data.p) == (2, 2)
        np.testing.assert_array_equal(data.x, [[1, 2], [0, 5]])
        np.testing.assert_array_equal(data.n, [[4, 2], [0, 9]])
        assert data.unit_ids == ("a", "b") and data.condition_ids == ("pre", "post")
        assert list(cov["grp"]) == ["ctl", "ctl", "trt", "trt"]

    def test_rows_in_any_order(self, tmp_path):
        lines = TOY.splitlines()
        shuffled = "\n".join([lines[0], lines[4], lines[1], lines[3], lines[2]]) + "\n"
        data, _ = load_csv(write(tmp_path, "d.csv", shuffled))
        assert data.unit_ids == ("b", "a")
        np.testing.assert_array_equal(data.x, [[5, 0], [2, 1]])

    def test_successes_exceed_trials_names_line(self, tmp_path):
        rows = ["unit_id,condition_id,x,n"] + [f"u{i},c,1,2" for i in range(5)] + ["u9,c,5,3"]
        with pytest.raises(LoadError, match="line 7") as info:
            load_csv(write(tmp_path, "d.csv", "\n".join(rows) + "\n"))
        assert info.value.line == 7

    @pytest.mark.parametrize("text,line,pattern", [
        ("unit_id,x,n\na,1,2\n", 1, "missing required"),
        ("unit_id,condition_id,x,n\na,c,1\n", 2, "expected 4 fields"),
        ("unit_id,condition_id,x,n\na,c,one,2\n", 2, "not an integer"),
        ("unit_id,condition_id,x,n\na,c,-1,2\n", 2, "negative"),
        ("unit_id,condition_id,x,n\na,c,1,2\na,c,1,2\n", 3, "duplicate"),
        ("unit_id,condition_id,x,n\na,c1,1,2\na,c2,1,2\nb,c1,0,1\n", 4, "no record for condition"),
    ])
    def test_malformed(self, tmp_path, text, line, pattern):
        with pytest.raises(LoadError, match=pattern) as info:
            load_csv(write(tmp_path, "d.csv", text))
        assert info.value.line == line

    def test_inconsistent_unit_covariate(self, tmp_path):
        bad = TOY.replace("a,post,2,2,ctl", "a,post,2,2,trt")
        with pytest.raises(LoadError, match="changes within unit 'a'") as info:
            load_csv(write(tmp_path, "d.csv", bad), unit_level=["grp"])
        assert info.value.line == 3
        # without the declaration the column is a per-row covariate
        load_csv(write(tmp_path, "d2.csv", bad))

    def test_empty(self, tmp_path):
        with pytest.raises(LoadError, match="empty"):
            load_csv(write(tmp_path, "d.csv", ""))
        with pytest.raises(LoadError, match="no data rows"):
            load_csv(write(tmp_path, "d.csv", "unit_id,condition_id,x,n\n"))

    def test_round_trip(self, tmp_path, rng):
        n = rng.integers(0, 30, size=(7, 3))
        data = RepeatedCountData(rng.binomial(n, 0.4), n, tuple(f"s{i}" for i in range(7)), ("x", "y", "z"))
        cov = {"site": np.repeat(["north", "south"], [9, 12]).astype(object)}
        path = str(tmp_path / "r.csv")
        save_csv(path, data, cov)
        again, cov2 = load_csv(path)
        np.testing.assert_array_equal(again.x, data.x)
        np.testing.assert_array_equal(again.n, data.n)
        assert again.unit_ids == data.unit_ids and again.condition_ids == data.condition_ids
        assert list(cov2["site"]) == list(cov["site"])
        assert os.listdir(tmp_path) == ["r.csv"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", FINAL_SPEC, "--units", "200", "--seed", "4",
                 "--out", str(d / "data.csv")]) == 0
    assert main(["fit", str(d / "data.csv"), FINAL_SPEC, "--out", str(d / "fit.json")]) == 0
    return d


class TestCommands:
    def test_simulate_is_deterministic(self, workdir, tmp_path):
        out = tmp_path / "again.csv"
        assert main(["simulate", FINAL_SPEC, "--units", "200", "--seed", "4", "--out", str(out)]) == 0
        assert out.read_bytes() == (workdir / "data.csv").read_bytes()

    def test_simulated_file_round_trips(self, workdir, tmp_path):
        data, cov = load_csv(workdir / "data.csv", unit_level=["stage", "hand"])
        save_csv(tmp_path / "copy.csv", data, cov)
        assert (tmp_path / "copy.csv").read_bytes() == (workdir / "data.csv").read_bytes()

    def test_fit_report(self, workdir, final_spec):
        doc = json.loads((workdir / "fit.json").read_text())
        assert doc["converged"] and doc["n_params"] == 17
        rows = [(c["component"], c["name"]) for c in doc["coefficients"]]
        disp = {"lam": "lambda"}
        assert rows == [(disp.get(c, c), n) for c, n in final_spec.parameter_names()]
        assert doc["aic"] == pytest.approx(-2 * doc["loglik"] + 34)
        text = (workdir / "fit.txt").read_text()
        assert "theta[1*N]" in text and "AIC" in text and "iter   1" in text
        assert sorted(os.listdir(workdir)) == ["data.csv", "fit.json", "fit.txt"]

    def test_lrtest_against_itself(self, workdir, capsys):
        assert main(["lrtest", str(workdir / "data.csv"), FINAL_SPEC, FINAL_SPEC]) == 0
        out = capsys.readouterr().out
        assert "LR = 0.0000" in out and "p=1.000" in out

    def test_lrtest_nested(self, workdir, tmp_path, capsys):
        doc = yaml.safe_load(open(FINAL_SPEC))
        doc["formulas"]["lambda"] = ["stage", "session"]
        del doc["coefficients"]
        reduced = tmp_path / "reduced.yaml"
        reduced.write_text(yaml.safe_dump(doc))
        assert main(["lrtest", str(workdir / "data.csv"), FINAL_SPEC, str(reduced),
                     "--out", str(tmp_path / "lr.json")]) == 0
        res = json.loads((tmp_path / "lr.json").read_text())
        assert res["df"] == 1 and res["lr_stat"] > 0
        assert f"p={res['p_value']:.3f}" in capsys.readouterr().out

    def test_predict_default_tables(self, workdir, tmp_path):
        assert main(["predict", str(workdir / "fit.json"), "--out", str(tmp_path / "p.json")]) == 0
        doc = json.loads((tmp_path / "p.json").read_text())
        assert len(doc["rows"]) == 24 and len(doc["covariance"]) == 6
        assert len(doc["covariance"][0]["estimate"]) == 8
        text = (tmp_path / "p.txt").read_text()
        assert "Expected successes and attempts" in text

    def test_predict_contrast_file(self, workdir, tmp_path):
        contrast = tmp_path / "c.yaml"
        contrast.write_text(yaml.safe_dump({
            "rows": [{"stage": "0", "hand": "P", "session": "B", "sequence": "A"}],
            "covariance": [{"stage": "2", "hand": "N"}]}))
        assert main(["predict", str(workdir / "fit.json"), str(contrast),
                     "--out", str(tmp_path / "p.json")]) == 0
        doc = json.loads((tmp_path / "p.json").read_text())
        assert len(doc["rows"]) == 1 and doc["covariance"][0]["group"] == {"stage": "2", "hand": "N"}

    def test_predict_rejects_bad_contrast(self, workdir, tmp_path):
        contrast = tmp_path / "c.yaml"
        contrast.write_text(yaml.safe_dump({"rows": [{"stage": "7"}]}))
        assert main(["predict", str(workdir / "fit.json"), str(contrast)]) == 2

    def test_predict_refuses_unconverged(self, workdir, tmp_path):
        doc = json.loads((workdir / "fit.json").read_text())
        doc["converged"] = False
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        assert main(["predict", str(path)]) == 1

    def test_fit_non_convergence_exit_code(self, workdir, tmp_path):
        assert main(["fit", str(workdir / "data.csv"), FINAL_SPEC, "--max-iter", "1",
                     "--out", str(tmp_path / "f.json")]) == 1
        assert json.loads((tmp_path / "f.json").read_text())["converged"] is False

    def test_input_errors(self, tmp_path, capsys):
        empty = write(tmp_path, "e.csv", "")
        assert main(["fit", empty, FINAL_SPEC]) == 2
        assert "empty" in capsys.readouterr().err
        assert main(["fit", str(tmp_path / "missing.csv"), FINAL_SPEC]) == 2
        toy = write(tmp_path, "t.csv", TOY)
        assert main(["fit", toy, FINAL_SPEC]) == 2
        nocoef = tmp_path / "s.yaml"
        nocoef.write_text("factors: {}\nformulas: {}\n")
        assert main(["simulate", str(nocoef), "--units", "5", "--out", str(tmp_path / "x.csv")]) == 2
