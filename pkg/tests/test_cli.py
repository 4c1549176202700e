import io
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings

from loopsoup import cli
from loopsoup.energy import Current
from loopsoup.fixtures import FIXTURES

from .conftest import energy_forms

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_shipped_fixture_files_match_constructors(name):
    e, cur = cli.load_graph(FIXTURE_DIR / f"{name}.json")
    ref = FIXTURES[name]()
    assert e.vertices == ref.vertices and cur is None
    np.testing.assert_array_equal(e.operator, ref.operator)
    assert (FIXTURE_DIR / f"{name}.json").read_text() == cli.dump_graph(ref)


class TestParse:
    def test_round_trip_with_currents(self, K3):
        w = Current.from_entries(K3, [("a", "b", 0.5), ("b", "c", -1.0)])
        text = cli.dump_graph(K3, w)
        gf = cli.parse_graph(text)
        e = gf.energy()
        np.testing.assert_array_equal(e.operator, K3.operator)
        np.testing.assert_array_equal(gf.current(e).omega, w.omega)
        assert gf.to_json() == text

    @pytest.mark.parametrize(
        "text, match",
        [
            ('{"vertices": ["a"],\n "edges": [}', "line 2, column"),
            ('[1, 2]', "top level"),
            ('{"vertices": ["a", "b"], "edges": [["a", "z", 1]], "kappa": {}}', r"edges\[0\]\[1\]: unknown vertex 'z'"),
            ('{"vertices": ["a", "b"], "edges": [["a", "b", 1], ["b", "a", 2]]}', r"edges\[1\]: duplicate link"),
            ('{"vertices": ["a", "b"], "edges": [["a", "a", 1]]}', "self-loop"),
            ('{"vertices": ["a", "b"], "edges": [["a", "b", "x"]]}', r"edges\[0\]\[2\]: expected a number"),
            ('{"vertices": ["a", "b"], "edges": [["a", "b"]]}', r"edges\[0\]: expected \[u, v, value\]"),
            ('{"vertices": ["a", "b"], "kappa": {"q": 1}}', "kappa.q: unknown vertex"),
            ('{"vertices": ["a", "a"]}', "duplicate name"),
            ('{"vertices": [], "edges": []}', "nonempty"),
            ('{"vertices": ["a"], "extra": 1}', "extra: unknown field"),
            ('{"vertices": ["a", "Δ"]}', "reserved"),
        ],
    )
    def test_diagnostics(self, text, match):
        with pytest.raises(cli.GraphFileError, match=match):
            cli.parse_graph(text)


@settings(max_examples=30, deadline=None)
@given(energy_forms(max_n=6))
def test_serialization_is_idempotent(e):
    text = cli.dump_graph(e)
    gf = cli.parse_graph(text)
    assert cli.dump_graph(gf.energy()) == text
    np.testing.assert_array_equal(gf.energy().operator, e.operator)


class TestExitCodes:
    def test_verify_exact_only_passes(self, tmp_path):
        code, out, _ = run(["verify", FIXTURE_DIR / "g2.json", "--suite", "exact-only", "--out-dir", tmp_path])
        assert code == 0
        assert (tmp_path / "exact-only-report.json").exists()
        assert (tmp_path / "exact-only-report.csv").exists()
        assert "passed" in out

    def test_missing_file(self, tmp_path):
        code, _, err = run(["exact", tmp_path / "nope.json"])
        assert code == 2 and "cannot read" in err

    def test_malformed_file_names_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "vertices": ["a"],\n  "edges": [\n')
        code, _, err = run(["exact", p])
        assert code == 2 and "line 4" in err and str(p) in err

    def test_singular_form(self, tmp_path):
        p = tmp_path / "free.json"
        p.write_text('{"vertices": ["a", "b"], "edges": [["a", "b", 1.0]], "kappa": {}}')
        code, _, err = run(["exact", p])
        assert code == 2 and "singular" in err

    @pytest.mark.parametrize("cmd", ["soup", "tree", "gff"])
    def test_sampling_needs_seed(self, cmd):
        code, _, err = run([cmd, FIXTURE_DIR / "g2.json"])
        assert code == 2 and "--seed" in err

    def test_verify_sampling_suite_needs_seed(self, tmp_path):
        code, _, err = run(["verify", FIXTURE_DIR / "g2.json", "--suite", "soup", "--out-dir", tmp_path])
        assert code == 2 and "--seed" in err

    @pytest.mark.parametrize("argv", [[], ["bogus"], ["exact", "x.json", "--alpha", "-1"], ["verify", "x.json", "--suite", "nope"]])
    def test_bad_flags(self, argv):
        assert run(argv)[0] == 2

    def test_identity_failure_exits_one(self, tmp_path, monkeypatch):
        from loopsoup import verify as vf

        def broken(ctx):
            ctx.exact("broken", "1 = 2", 1.0, 2.0)

        monkeypatch.setitem(vf._CHECKS, "exact.broken", broken)
        monkeypatch.setitem(vf.SUITES, "exact-only", vf.SUITES["exact-only"] + ["exact.broken"])
        code, out, _ = run(["verify", FIXTURE_DIR / "g2.json", "--out-dir", tmp_path])
        assert code == 1 and "FAIL" in out

    def test_version(self, capsys):
        assert cli.main(["--version"]) == 0


class TestSubcommands:
    def test_exact_prints_green_and_identities(self):
        code, out, _ = run(["exact", FIXTURE_DIR / "g2.json", "--chi", "a=0.7"])
        assert code == 0
        assert "G^{a,a} = 0.6666667" in out
        assert "Z_e = 0.3333333" in out
        assert "= 0.6818182" in out
        assert "Transfer matrix K:" in out and "FAIL" not in out

    @pytest.mark.parametrize("chi", ["q=1", "a", "a=x", "a=-1"])
    def test_exact_bad_chi(self, chi):
        assert run(["exact", FIXTURE_DIR / "g2.json", "--chi", chi])[0] == 2

    def test_soup(self, tmp_path):
        dest = tmp_path / "soup.jsonl"
        code, out, _ = run(["soup", FIXTURE_DIR / "k3.json", "--samples", 500, "--seed", 1, "--out", dest])
        assert code == 0
        summary = json.loads(out)
        assert summary["occupation"]["a"]["exact"] == pytest.approx(0.5)
        lines = dest.read_text().splitlines()
        assert json.loads(lines[0])["n"] == 500
        assert len(lines) >= 501

    def test_tree(self, tmp_path):
        dest = tmp_path / "trees.jsonl"
        code, out, _ = run(["tree", FIXTURE_DIR / "k3.json", "--samples", 300, "--seed", 2, "--out", dest])
        assert code == 0
        assert json.loads(out)["inclusion"]["a-b"]["exact"] == pytest.approx(0.5)
        recs = [json.loads(l) for l in dest.read_text().splitlines()[1:]]
        assert len(recs) == 300 and set(recs[0]["tree"]) == {"a", "b", "c"}

    def test_gff(self, tmp_path):
        dest = tmp_path / "fields.json"
        code, out, _ = run(["gff", FIXTURE_DIR / "g2.json", "--samples", 400, "--seed", 3, "--out", dest])
        assert code == 0
        assert json.loads(out)["covariance"]["a,a"]["exact"] == pytest.approx(4 / 3)
        assert len(json.loads(dest.read_text())["fields"]) == 400

    def test_sampling_is_reproducible(self):
        a = run(["soup", FIXTURE_DIR / "g2.json", "--samples", 200, "--seed", 9])[1]
        b = run(["soup", FIXTURE_DIR / "g2.json", "--samples", 200, "--seed", 9])[1]
        assert a == b

    def test_verify_reports_are_byte_identical(self, tmp_path):
        args = [FIXTURE_DIR / "g2.json", "--suite", "soup", "--samples", 2000, "--seed", 42]
        assert run(["verify", *args, "--out-dir", tmp_path / "one"])[0] == 0
        assert run(["verify", *args, "--out-dir", tmp_path / "two"])[0] == 0
        for ext in ("json", "csv"):
            one = (tmp_path / "one" / f"soup-report.{ext}").read_bytes()
            assert one == (tmp_path / "two" / f"soup-report.{ext}").read_bytes()
