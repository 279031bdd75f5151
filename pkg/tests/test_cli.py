import io
import json
import math

import numpy as np
import pytest

from conftest import FIXTURES
from dpca.cli import main
from dpca.files import read_samples


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def table(text):
    rows = [ln.split(",") for ln in text.splitlines() if ln and not ln.startswith("#")]
    return rows[0], rows[1:]


def test_gen_presets_deterministic(tmp_path):
    for preset in ("two-clique-toy", "random", "anomaly"):
        a, b = tmp_path / f"{preset}-a", tmp_path / f"{preset}-b"
        assert run("gen", "--preset", preset, "--seed", "3", "--out", str(a))[0] == 0
        assert run("gen", "--preset", preset, "--seed", "3", "--out", str(b))[0] == 0
        for name in ("graph.json", "samples.csv", "truth.csv", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
    toy = json.loads((tmp_path / "two-clique-toy-a" / "graph.json").read_text())
    assert toy == {"p": 3, "cliques": [[0, 1], [1, 2]]}


def test_gen_paper_tracking(tmp_path):
    assert run("gen", "--preset", "paper-tracking", "--out", str(tmp_path))[0] == 0
    g = json.loads((tmp_path / "graph.json").read_text())
    assert g["p"] == 305 and len(g["cliques"]) == 3
    assert read_samples(tmp_path / "samples.csv").shape == (5500, 305)


def test_committed_fixtures_reproduce(tmp_path):
    for name, preset, seed in (("two_clique_toy", "two-clique-toy", 7), ("anomaly", "anomaly", 3), ("random", "random", 5)):
        run("gen", "--preset", preset, "--seed", str(seed), "--out", str(tmp_path / name))
        for f in ("graph.json", "samples.csv", "manifest.json"):
            assert (tmp_path / name / f).read_bytes() == (FIXTURES / name / f).read_bytes()


def test_eig_tridiagonal_matrix():
    d = FIXTURES / "tridiagonal"
    code, out, _ = run("eig", "--graph", str(d / "graph.json"), "--matrix", str(d / "K.csv"), "-j", "3", "--oracle")
    assert code == 0
    header, rows = table(out)
    assert header[:5] == ["component", "lambda", "bracket_width", "iterations", "oracle_delta"]
    assert float(rows[0][1]) == pytest.approx(2 - math.sqrt(2), abs=1e-8)
    assert all(float(r[4]) < 1e-8 for r in rows)
    assert "within_bound=true" in out


def test_eig_toy_oracle():
    d = FIXTURES / "two_clique_toy"
    code, out, _ = run("eig", "--graph", str(d / "graph.json"), "--data", str(d / "samples.csv"), "-j", "2", "--oracle", "--tol", "1e-9")
    assert code == 0
    _, rows = table(out)
    assert all(float(r[4]) < 1e-9 for r in rows)
    assert 0.7 < float(rows[0][1]) < 1.3


def test_eig_components_exceed_p():
    d = FIXTURES / "tridiagonal"
    code, _, err = run("eig", "--graph", str(d / "graph.json"), "--matrix", str(d / "K.csv"), "-j", "4")
    assert code == 2 and err.startswith("error: USAGE:") and err.count("\n") == 1


def test_errors_are_single_line(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n1,2,3\n4,x,6\n")
    d = FIXTURES / "two_clique_toy"
    code, _, err = run("eig", "--graph", str(d / "graph.json"), "--data", str(bad))
    assert code == 1 and err.startswith("error: PARSE_ERROR:") and ":3:" in err
    code, _, err = run("eig", "--graph", str(tmp_path / "missing.json"), "--data", str(bad))
    assert code == 1 and err.startswith("error: IO:")
    g = tmp_path / "g.json"
    g.write_text('{"p": 4, "cliques": [[0, 1], [2, 3]]}')
    code, _, err = run("eig", "--graph", str(g), "--data", str(bad))
    assert err.startswith("error: NOT_PERFECT_ORDER:")
    code, _, err = run("frobnicate")
    assert code == 2 and err.count("\n") == 1
    sing = tmp_path / "s.csv"
    sing.write_text("1,2,3\n")
    code, _, err = run("eig", "--graph", str(d / "graph.json"), "--data", str(sing))
    assert code == 1 and err.startswith("error: SINGULAR_LOCAL_COVARIANCE:")


def test_header_autodetect(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("x0,x1\n1.5,2\n3,4e-1\n")
    np.testing.assert_array_equal(read_samples(p), [[1.5, 2], [3, 0.4]])


def test_track_single_window(tmp_path):
    d = FIXTURES / "two_clique_toy"
    code, out, _ = run("track", "--graph", str(d / "graph.json"), "--data", str(d / "samples.csv"), "--window", "200", "--overlap", "0", "--oracle", "--iters")
    assert code == 0
    header, rows = table(out)
    assert header[:6] == ["window_start", "lambda", "bracket_width", "iterations", "messages_bytes", "oracle_error"]
    assert len(rows) == 1 and float(rows[0][5]) <= 1e-3
    assert len(header) == 6 + int(rows[0][3])


def test_track_writes_file(tmp_path):
    d = FIXTURES / "two_clique_toy"
    out = tmp_path / "trace.csv"
    code, _, _ = run("track", "--graph", str(d / "graph.json"), "--data", str(d / "samples.csv"), "--window", "50", "--overlap", "25", "--out", str(out))
    assert code == 0
    assert len(out.read_text().splitlines()) == 1 + 7


def test_detect_fixture(tmp_path):
    d = FIXTURES / "anomaly"
    manifest = json.loads((d / "manifest.json").read_text())
    code, out, _ = run("detect", "--graph", str(d / "graph.json"), "--data", str(d / "samples.csv"), "--out", str(tmp_path / "r.csv"))
    assert code == 0
    flagged = [int(v) for v in out.split("# flagged ")[1].strip().split(",") if v]
    assert len(set(flagged) & set(manifest["injections"])) >= 4
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "index,residual,flagged" and len(lines) == 1001


def test_detect_full_subspace(tmp_path):
    d = FIXTURES / "tridiagonal"
    x = tmp_path / "x.csv"
    x.write_text("\n".join(",".join(map(str, r)) for r in np.random.default_rng(0).standard_normal((40, 3))) + "\n")
    code, out, _ = run("detect", "--graph", str(d / "graph.json"), "--data", str(x), "-j", "3", "--threshold", "1e-6")
    assert code == 0 and "# flagged \n" in out


def test_detect_compare(tmp_path):
    from dpca.graph import load_graph, save_graph
    from dpca.synthetic import shuffled_graph

    d = FIXTURES / "anomaly"
    shuffled = tmp_path / "shuffled.json"
    save_graph(shuffled_graph(load_graph(d / "graph.json"), seed=1), shuffled)
    code, out, _ = run("detect", "--graph", str(d / "graph.json"), "--data", str(d / "samples.csv"), "--compare", str(shuffled))
    assert code == 0
    err = dict(ln.split()[2:4] for ln in out.splitlines() if ln.startswith("# mean_abs_error"))
    assert float(err["graph"]) < float(err["shuffled"])
    header, _ = table(out)
    assert header == ["index", "residual", "flagged", "residual_shuffled", "dense"]
