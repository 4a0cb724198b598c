import json

import numpy as np
import pytest

import billiard_lens as bl
from billiard_lens import cli, geometry


@pytest.fixture()
def sphere_json(tmp_path):
    scene = bl.make_scene(3, 10.0, [bl.SphereObstacle([0.0, 0.0, 0.0], 1.0)], "one-sphere")
    path = tmp_path / "sphere.json"
    path.write_text(geometry.scene_to_json(scene) + "\n")
    return str(path)


@pytest.fixture()
def disc_json(tmp_path):
    scene = bl.make_scene(2, 10.0, [bl.SphereObstacle([0.0, 0.0], 1.0)], "one-disc")
    path = tmp_path / "disc.json"
    path.write_text(geometry.scene_to_json(scene) + "\n")
    return str(path)


def test_validate_command(sphere_json, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = cli.main(["validate", "--scene", sphere_json, "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["report"]["obstacle_count"] == 1
    assert doc["header"]["tool"].startswith("billiard-lens")


def test_validate_rejects_bad_scene(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dimension": 2, "ball_radius": 10.0, "obstacles": [], "name": "x", "oops": 1}')
    assert cli.main(["validate", "--scene", str(bad)]) == 2
    missing = tmp_path / "missing.json"
    assert cli.main(["validate", "--scene", str(missing)]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert cli.main(["validate", "--scene", str(broken)]) == 2


def test_trace_command_diametric(sphere_json, tmp_path):
    out = tmp_path / "traj.jsonl"
    svg = tmp_path / "traj.svg"
    code = cli.main([
        "trace", "--scene", sphere_json, "--entry=-10,0,0,1,0,0", "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    header = json.loads(lines[0])
    assert header["status"] == "exited"
    assert header["total_time"] == pytest.approx(18.0)
    assert len(lines) == 1 + header["n_events"]


def test_trace_2d_with_svg(disc_json, tmp_path):
    out = tmp_path / "traj.jsonl"
    svg = tmp_path / "traj.svg"
    code = cli.main([
        "trace", "--scene", disc_json, "--entry=-10,0,1,0",
        "--out", str(out), "--svg", str(svg),
    ])
    assert code == 0
    text = svg.read_text()
    assert "<polyline" in text and "<path" in text and "<circle" in text


def test_lens_and_compare_self(disc_json, tmp_path):
    table = tmp_path / "table.jsonl"
    assert cli.main(["lens", "--scene", disc_json, "--spec", "grid:12x8",
                     "--out", str(table)]) == 0
    report = tmp_path / "cmp.json"
    code = cli.main(["compare", "--scene", str(table), "--scene-b", str(table),
                     "--out", str(report), "--expect-equal"])
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["report"]["verdict"] == "indistinguishable"
    assert doc["report"]["max_dt"] == 0.0


def test_compare_expect_equal_exit_code(disc_json, tmp_path):
    other = tmp_path / "disc2.json"
    scene = bl.make_scene(2, 10.0, [bl.SphereObstacle([0.0, 0.0], 1.02)], "bigger")
    other.write_text(geometry.scene_to_json(scene) + "\n")
    t1, t2 = tmp_path / "t1.jsonl", tmp_path / "t2.jsonl"
    assert cli.main(["lens", "--scene", disc_json, "--spec", "grid:24x24", "--out", str(t1)]) == 0
    assert cli.main(["lens", "--scene", str(other), "--spec", "grid:24x24", "--out", str(t2)]) == 0
    assert cli.main(["compare", "--scene", str(t1), "--scene-b", str(t2)]) == 0
    assert cli.main(["compare", "--scene", str(t1), "--scene-b", str(t2), "--expect-equal"]) == 4


def test_lens_rerun_byte_identical(disc_json, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    args = ["lens", "--scene", disc_json, "--spec", "mc:100", "--seed", "11"]
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes().replace(b"a.jsonl", b"") == b.read_bytes().replace(b"b.jsonl", b"")


def test_lens_csv_output(disc_json, tmp_path):
    out = tmp_path / "table.csv"
    assert cli.main(["lens", "--scene", disc_json, "--spec", "grid:6x4", "--out", str(out)]) == 0
    lines = out.read_text().strip().split("\n")
    assert lines[1].startswith("alpha,beta,status")
    assert len(lines) == 2 + 24


def test_sls_command_backscatter(sphere_json, tmp_path):
    out = tmp_path / "sls.json"
    code = cli.main([
        "sls", "--scene", sphere_json, "--omega", "1,0,0", "--theta=-1,0,0",
        "--spec", "grid:9x9", "--tol", "1e-3", "--out", str(out),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["bins"]) == 1
    assert doc["bins"][0]["sojourn"] == pytest.approx(-2.0, abs=1e-4)


def test_trapped_command(disc_json, tmp_path):
    out = tmp_path / "trapped.json"
    code = cli.main([
        "trapped", "--scene", disc_json, "--spec", "grid:4x4,grid:6x6,grid:8x8",
        "--out", str(out),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["estimate"]["fractions"] == [0.0, 0.0, 0.0]


def test_regularity_and_conjugate_commands(sphere_json, tmp_path):
    qx = float(-np.sqrt(100.0 - 0.2**2 - 0.1**2))
    entry = f"{qx!r},0.2,0.1,1,0,0"
    out = tmp_path / "reg.json"
    code = cli.main([
        "regularity", "--scene", sphere_json, f"--entry={entry}", "--out", str(out),
    ])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["regular"] is True
    out2 = tmp_path / "conj.json"
    code = cli.main([
        "conjugate", "--scene", sphere_json, f"--entry={entry}", "--out", str(out2),
    ])
    assert code == 0
    doc2 = json.loads(out2.read_text())
    assert doc2["status"] == "exited"
    assert doc2["pairs"] == []  # single bounce has no event pairs


def test_livshits_command(tmp_path, capsys):
    prefix = tmp_path / "liv"
    code = cli.main(["livshits", "--out", str(prefix)])
    assert code == 0
    base = geometry.scene_from_json((tmp_path / "liv.base.json").read_text())
    deformed = geometry.scene_from_json((tmp_path / "liv.deformed.json").read_text())
    assert base.dimension == 2 and deformed.dimension == 2
    meta = json.loads((tmp_path / "liv.meta.json").read_text())
    c = float(np.sqrt(4.2**2 - 2.7**2))
    assert meta["foci"][1][0] == pytest.approx(c, rel=1e-12)
    printed = capsys.readouterr().out
    assert "foci" in printed


def test_trace_empty_scene_diametric(tmp_path):
    scene = bl.make_scene(3, 10.0, [], "empty")
    path = tmp_path / "empty.json"
    path.write_text(geometry.scene_to_json(scene) + "\n")
    out = tmp_path / "t.jsonl"
    assert cli.main(["trace", "--scene", str(path), "--entry=-10,0,0,1,0,0",
                     "--out", str(out)]) == 0
    header = json.loads(out.read_text().split("\n")[0])
    assert header["total_time"] == pytest.approx(20.0, abs=1e-12)
    assert header["n_events"] == 0


def test_livshits_lens_compare_pipeline(tmp_path):
    # Figure-level demonstration end to end through the CLI: the deformed
    # pocket is invisible, so the lens tables compare equal at default tolerance
    prefix = tmp_path / "liv"
    assert cli.main(["livshits", "--out", str(prefix)]) == 0
    tk, tl = tmp_path / "k.jsonl", tmp_path / "l.jsonl"
    args = ["--spec", "grid:16x12", "--nmax", "300"]
    assert cli.main(["lens", "--scene", str(prefix) + ".base.json", "--out", str(tk)] + args) == 0
    assert cli.main(["lens", "--scene", str(prefix) + ".deformed.json", "--out", str(tl)] + args) == 0
    report = tmp_path / "cmp.json"
    code = cli.main(["compare", "--scene", str(tk), "--scene-b", str(tl),
                     "--out", str(report), "--expect-equal"])
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["report"]["verdict"] == "indistinguishable"


def test_render_command(disc_json, tmp_path):
    out = tmp_path / "scene.svg"
    assert cli.main(["render", "--scene", disc_json, "--svg", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("<!--")  # header comment with version/hash/seed
    assert "<svg" in text


def test_svg_one_polyline_per_segment(disc_json, tmp_path):
    out = tmp_path / "t.jsonl"
    svg = tmp_path / "t.svg"
    qx = float(-np.sqrt(100.0 - 0.2**2))
    assert cli.main(["trace", "--scene", disc_json, f"--entry={qx!r},0.2,1,0",
                     "--out", str(out), "--svg", str(svg)]) == 0
    header = json.loads(out.read_text().split("\n")[0])
    n_segments = header["n_events"] + 1  # exited orbit
    assert svg.read_text().count("<polyline") == n_segments


def test_entry_parsing_errors(disc_json):
    assert cli.main(["trace", "--scene", disc_json, "--entry", "1,2,3"]) == 2
    assert cli.main(["trace", "--scene", disc_json, "--entry=-5,0,1,0"]) == 2  # off sphere
    assert cli.main(["trace", "--scene", disc_json]) == 2  # entry required


def test_intrinsic_entry(disc_json, tmp_path):
    out = tmp_path / "t.jsonl"
    # alpha = pi, beta = 0: diametric entry
    code = cli.main(["trace", "--scene", disc_json,
                     "--entry", f"{np.pi},0", "--out", str(out)])
    assert code == 0
    header = json.loads(out.read_text().split("\n")[0])
    assert header["total_time"] == pytest.approx(18.0, abs=1e-6)
