import csv
import io
import json

import numpy as np
import pytest

from icquant import cli
from icquant.container import load_quantized, load_raw, save_raw


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def raw(tmp_path):
    path = tmp_path / "w.raw"
    assert cli.main(["synth", "--rows", "16", "--cols", "512", "--seed", "3", "--out", str(path)]) == 0
    return path


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for p in (a, b):
        cli.main(["synth", "--kind", "student-t", "--rows", "4", "--cols", "64", "--seed", "1", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_synth_clustered_places_outliers_early(tmp_path):
    p = tmp_path / "c.raw"
    cli.main(["synth", "--kind", "clustered", "--rows", "8", "--cols", "1000", "--gamma", "0.05", "--out", str(p)])
    W = load_raw(p)
    top = np.argsort(-np.abs(W), axis=1, kind="stable")[:, :50]
    assert top.max() < 100


def test_quantize_report_and_auto_width(capsys, tmp_path, raw):
    out = tmp_path / "w.icq"
    code, text, _ = run(capsys, "quantize", "--in", raw, "--out", out, "--bits", "2")
    assert code == 0
    rep = json.loads(text)
    assert rep["gap_width"] == 6 and rep["gap_width_auto"]
    assert rep["index_overhead_measured"] <= rep["index_overhead_lemma2"]
    assert rep["file_bytes"] == out.stat().st_size
    assert load_quantized(out).d_out == 16


def test_quantize_deterministic(capsys, tmp_path, raw):
    a, b = tmp_path / "a.icq", tmp_path / "b.icq"
    run(capsys, "quantize", "--in", raw, "--out", a, "--scheme", "sk", "--block", "128")
    run(capsys, "quantize", "--in", raw, "--out", b, "--scheme", "sk", "--block", "128")
    assert a.read_bytes() == b.read_bytes()


def test_threads_do_not_change_output(capsys, tmp_path, raw, monkeypatch):
    a, b = tmp_path / "a.icq", tmp_path / "b.icq"
    run(capsys, "quantize", "--in", raw, "--out", a)
    monkeypatch.setenv("ICQ_THREADS", "4")
    run(capsys, "quantize", "--in", raw, "--out", b)
    assert a.read_bytes() == b.read_bytes()


def test_weighted_report(capsys, tmp_path, raw):
    w = tmp_path / "h.raw"
    save_raw(np.ones((16, 512), np.float32), w)
    code, text, _ = run(capsys, "quantize", "--in", raw, "--out", tmp_path / "q", "--scheme", "sk", "--weights", w)
    assert code == 0 and "weighted_objective" in json.loads(text)


def test_requantize_is_idempotent(capsys, tmp_path, raw):
    q1, deq, q2 = tmp_path / "1.icq", tmp_path / "d.raw", tmp_path / "2.icq"
    run(capsys, "quantize", "--in", raw, "--out", q1, "--bits", "3")
    assert run(capsys, "dequantize", "--in", q1, "--out", deq)[0] == 0
    run(capsys, "quantize", "--in", deq, "--out", q2, "--bits", "3")
    t1, t2 = load_quantized(q1), load_quantized(q2)
    for a, b in zip(t1.rows, t2.rows):
        assert np.array_equal(a.inlier_codes, b.inlier_codes)
        assert np.array_equal(a.outlier_codes, b.outlier_codes)


def test_matvec_and_bench(capsys, tmp_path, raw):
    q, x, y1, y2 = (tmp_path / n for n in ("q", "x", "y1", "y2"))
    run(capsys, "quantize", "--in", raw, "--out", q)
    save_raw(np.random.default_rng(0).standard_normal((1, 512)).astype(np.float32), x)
    assert run(capsys, "matvec", "--in", q, "--vector", x, "--out", y1)[0] == 0
    assert run(capsys, "matvec", "--in", q, "--vector", x, "--out", y2, "--predecoded")[0] == 0
    assert y1.read_bytes() == y2.read_bytes()
    assert load_raw(y1).shape == (1, 16)
    code, text, _ = run(capsys, "bench", "--in", q, "--repetitions", "1")
    rows = list(csv.DictReader(io.StringIO("".join(l for l in text.splitlines(True) if not l.startswith("#")))))
    assert code == 0 and {r["path"] for r in rows} == {"fused", "predecoded", "dense"}


def test_simulate_csv(capsys):
    code, text, _ = run(capsys, "simulate", "--d-in", "1024", "--trials", "20", "--gapwidth", "4:6")
    lines = text.splitlines()
    assert code == 0 and lines[-1].startswith("# rng=numpy.random.PCG64")
    assert len(lines) == 5
    code2, text2, _ = run(capsys, "simulate", "--d-in", "1024", "--trials", "20", "--gapwidth", "4:6")
    assert text == text2


def test_simulate_auto(capsys):
    _, text, _ = run(capsys, "simulate", "--trials", "5", "--gapwidth", "auto")
    row = next(csv.DictReader(io.StringIO(text)))
    assert int(row["b"]) == 6


def test_chi2_and_analyze(capsys, tmp_path):
    p = tmp_path / "w.raw"
    cli.main(["synth", "--rows", "50", "--cols", "4096", "--out", str(p)])
    code, text, _ = run(capsys, "chi2", "--in", p)
    assert code == 0 and text.splitlines()[-1].startswith("# summary rows=50")
    code, text, _ = run(capsys, "analyze", "--in", p)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert code == 0 and len(rows) == 10
    r5 = float(rows[4]["normalized_inlier_range"])
    assert 0.48 <= r5 <= 0.6


def test_exit_codes(capsys, tmp_path, raw):
    assert run(capsys, "quantize", "--in", tmp_path / "missing", "--out", tmp_path / "o")[0] == 4
    assert run(capsys, "quantize", "--in", raw, "--out", tmp_path / "o", "--gamma", "0.9")[0] == 2
    bad = tmp_path / "bad.icq"
    bad.write_bytes(b"ICQT" + b"\x00" * 40)
    code, _, err = run(capsys, "dequantize", "--in", bad, "--out", tmp_path / "o")
    assert code == 3 and "field=" in err
    with pytest.raises(SystemExit) as exc:
        cli.main(["quantize"])
    assert exc.value.code == 2
