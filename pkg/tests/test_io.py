import json

import numpy as np
import pytest

from timestate import ValidationError
from timestate.io import (OutputBatch, build_config, dataset_tables, fmt, ingest_tsv,
                          read_design)


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def toy(tmp_path):
    design = _write(tmp_path / "design.tsv", [
        "sample\ttime\treplicate\tlabel",
        "a1\t1\t1\tnaive", "a2\t1\t2\tnaive", "b1\t2\t1\td8", "b2\t2\t2\td8"])
    expr = _write(tmp_path / "expr.tsv", [
        "# produced by hand",
        "gene_id\ta1\ta2\tb1\tb2",
        "g1\t1.0\t2.0\t3.0\t4.0",
        "g2\t5.5\t6.5\t7.5\t8.5",
        "g3\t-1\t0\t1\t2"])
    return expr, design


def test_toy_round_trip(toy):
    ds = ingest_tsv(*toy)
    assert ds.gene_ids == ("g1", "g2", "g3")
    assert ds.design.replicates == (2, 2)
    assert ds.design.time_labels == ("naive", "d8")
    assert np.array_equal(ds.values, [[1, 2, 3, 4], [5.5, 6.5, 7.5, 8.5], [-1, 0, 1, 2]])


def test_missing_design_sample_is_named(tmp_path, toy):
    _, design = toy
    expr = _write(tmp_path / "short.tsv", ["gene_id\ta1\ta2\tb1", "g1\t1\t2\t3"])
    with pytest.raises(ValidationError, match="'b2'"):
        ingest_tsv(expr, design)


def test_extra_column_is_named(tmp_path, toy):
    _, design = toy
    expr = _write(tmp_path / "wide.tsv", ["gene_id\ta1\ta2\tb1\tb2\tzz", "g1\t1\t2\t3\t4\t5"])
    with pytest.raises(ValidationError, match="'zz'"):
        ingest_tsv(expr, design)


def test_shuffled_columns_give_same_dataset(tmp_path, toy):
    expr, design = toy
    shuffled = _write(tmp_path / "shuf.tsv", [
        "gene_id\tb2\ta1\tb1\ta2",
        "g1\t4.0\t1.0\t3.0\t2.0",
        "g2\t8.5\t5.5\t7.5\t6.5",
        "g3\t2\t-1\t1\t0"])
    a, b = ingest_tsv(expr, design), ingest_tsv(shuffled, design)
    assert np.array_equal(a.values, b.values) and a.gene_ids == b.gene_ids


def test_error_reports_line_number(tmp_path, toy):
    _, design = toy
    bad = _write(tmp_path / "bad.tsv", ["gene_id\ta1\ta2\tb1\tb2", "g1\t1\t2\t3\t4",
                                        "g2\t1\tx\t3\t4"])
    with pytest.raises(ValidationError, match=r"bad\.tsv:3"):
        ingest_tsv(bad, design)
    ragged = _write(tmp_path / "ragged.tsv", ["gene_id\ta1\ta2\tb1\tb2", "g1\t1\t2\t3"])
    with pytest.raises(ValidationError, match=r"ragged\.tsv:2"):
        ingest_tsv(ragged, design)


@pytest.mark.parametrize("lines, pattern", [
    (["sample\ttime"], "header"),
    (["sample\ttime\treplicate", "a\t1\t1", "a\t2\t1"], "duplicate sample"),
    (["sample\ttime\treplicate", "a\t1\t1", "b\t3\t1"], "without gaps"),
    (["sample\ttime\treplicate", "a\t1\tone"], ":2"),
    (["sample\ttime\treplicate", "a\t1\t1", "b\t1\t1"], "listed twice"),
])
def test_design_errors(tmp_path, lines, pattern):
    with pytest.raises(ValidationError, match=pattern):
        read_design(_write(tmp_path / "d.tsv", lines))


def test_design_orders_by_time_then_replicate(tmp_path):
    d, order = read_design(_write(tmp_path / "d.tsv", [
        "sample\ttime\treplicate", "y\t2\t2", "x\t1\t2", "w\t2\t1", "v\t1\t1"]))
    assert order == ["v", "x", "w", "y"]
    assert d.replicates == (2, 2)


def test_export_ingest_identity(tmp_path, small_sim):
    ds, _ = small_sim
    (eh, er), (dh, dr) = dataset_tables(ds)
    with OutputBatch(tmp_path, {"seed": 1}) as out:
        out.tsv("e.tsv", eh, er)
        out.tsv("d.tsv", dh, dr)
    back = ingest_tsv(tmp_path / "e.tsv", tmp_path / "d.tsv")
    assert back.values.tobytes() == ds.values.tobytes()
    assert back.gene_ids == ds.gene_ids
    assert back.design.replicates == ds.design.replicates


def test_fmt_round_trips_floats(rng):
    for x in rng.normal(scale=1e3, size=200):
        assert float(fmt(x)) == x
    assert fmt(None) == "NA" and fmt(True) == "1" and fmt(np.int64(3)) == "3"


def test_output_batch_is_atomic(tmp_path):
    with pytest.raises(RuntimeError):
        with OutputBatch(tmp_path) as out:
            out.tsv("a.tsv", ["x"], [[1]])
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []


def test_output_batch_meta(tmp_path):
    with OutputBatch(tmp_path, {"version": "v", "command": "c", "seed": 3}) as out:
        out.tsv("a.tsv", ["x"], [[1.5]])
        out.json("b.json", {"k": 1})
    assert (tmp_path / "a.tsv").read_text().splitlines() == [
        "# version=v command=c seed=3", "x", "1.5"]
    doc = json.loads((tmp_path / "b.json").read_text())
    assert doc["_meta"]["seed"] == 3 and doc["k"] == 1


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"order": "zero", "threads": 2, "rel_tol": 1e-4}))
    env = {"TIMESTATE_THREADS": "3", "TIMESTATE_MAX_ITERS": "50"}
    c = build_config(cfg_file, env=env, overrides={"threads": 4, "order": None})
    assert c.order == "zero"           # file
    assert c.rel_tol == 1e-4           # file
    assert c.max_iters == 50           # env
    assert c.threads == 4              # flag beats env and file
    c = build_config(cfg_file, env=env)
    assert c.threads == 3              # env beats file
    assert build_config(env={}).order == "first"


def test_config_env_parsing():
    c = build_config(env={"TIMESTATE_DETERMINISTIC": "no", "TIMESTATE_REPLICATES": "3,3,2",
                          "TIMESTATE_METHODS": "first,pairwise"})
    assert c.deterministic is False
    assert c.replicates == (3, 3, 2)
    assert c.methods == ("first", "pairwise")


def test_config_rejects_unknown_and_invalid(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"ordr": "zero"}))
    with pytest.raises(ValidationError, match="ordr"):
        build_config(bad, env={})
    with pytest.raises(ValidationError):
        build_config(env={}, overrides={"bogus": 1})
    with pytest.raises(ValidationError, match="order"):
        build_config(env={"TIMESTATE_ORDER": "second"})
    with pytest.raises(ValidationError):
        build_config(env={"TIMESTATE_THREADS": "many"})
    with pytest.raises(ValidationError):
        build_config(env={"TIMESTATE_REPLICATES": "1,1"})
