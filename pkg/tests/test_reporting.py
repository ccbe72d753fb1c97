import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wproj import SimReport
from wproj import TestOutcome as Outcome
from wproj.errors import ConfigError
from wproj.reporting import emit_report, parse_sigma, to_json, write_output
from wproj.sim import SimRow, report_as_dict


def test_empty_report():
    assert emit_report({"rows": []}) == b'{"rows":[]}\n'


def test_float_precision_and_nonfinite():
    assert to_json({"a": 0.1, "b": float("nan"), "c": float("inf")}) == '{"a":0.10000000000000001,"b":null,"c":null}'


@settings(max_examples=100)
@given(st.sampled_from(["WP", "EL", "T2"]), st.floats(0, 1e6), st.floats(0, 1e3), st.booleans(),
       st.floats(0.001, 0.5))
def test_outcome_round_trip(test, stat, thr, rej, alpha):
    out = Outcome(test, stat, thr, rej, alpha, {"converged": True, "zeta": np.array([1.5, -2.0])})
    s1 = to_json(out)
    s2 = to_json(json.loads(s1))
    assert s1 == s2
    assert json.loads(s1)["statistic"] == stat


def test_coverage_row_csv():
    rep = SimReport([SimRow(200, "WP", "coverage", 0.9, math.sqrt(0.09 / 100), 100, 0, 1.0)], 0, "coverage")
    text = emit_report(rep, "csv").decode().splitlines()
    assert text[0] == "n,test,metric,value,se,replications,failures,mean_statistic"
    assert text[1] == "200,WP,coverage,0.90000000000000002,0.029999999999999999,100,0,1"
    js = json.loads(emit_report(report_as_dict(rep)))
    assert list(js["rows"][0]) == ["n", "test", "metric", "value", "se", "replications", "failures",
                                   "mean_statistic"]


def test_unknown_format():
    with pytest.raises(ValueError):
        emit_report({"rows": []}, "xml")


def test_unwritable(tmp_path):
    with pytest.raises(OSError):
        write_output(b"x", tmp_path / "missing-dir" / "out.json")


class TestSigma:
    def test_identity(self):
        np.testing.assert_array_equal(parse_sigma("identity", 2), np.eye(2))

    def test_diagonal(self):
        np.testing.assert_array_equal(parse_sigma("[1, 2]", 2), np.diag([1.0, 2.0]))

    def test_matrix_file(self, tmp_path):
        p = tmp_path / "s.txt"
        p.write_text("2 0.5\n0.5 1\n")
        np.testing.assert_array_equal(parse_sigma(str(p), 2), [[2, 0.5], [0.5, 1]])

    def test_not_spd(self):
        with pytest.raises(ConfigError, match=r"eigenvalue -5\.05\d*e-05"):
            parse_sigma("[[1,0.99],[0.99,0.98]]", 2)

    @pytest.mark.parametrize("spec", ["[[1,2],[3,4]]", "[1,2,3]", "nonsense["])
    def test_rejects(self, spec):
        with pytest.raises(ConfigError):
            parse_sigma(spec, 2)
