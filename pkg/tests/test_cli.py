import csv
import hashlib
import json
import subprocess
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from groundmap.cli import main, run
from groundmap.fixtures import expected_values
from groundmap.ks_inverse import forward_density
from groundmap.discretization import build_grid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def _digests(files):
    return {f.name: hashlib.sha256(f.read_bytes()).hexdigest() for f in files}


def test_spectrum_box_matches_stored_value(tmp_path):
    status, files = run("spectrum", CONFIGS / "spectrum.ini", tmp_path)
    assert status == 0
    csv_file = next(f for f in files if f.suffix == ".csv")
    rows = list(csv.DictReader(csv_file.open()))
    assert float(rows[0]["energy"]) == pytest.approx(expected_values()["box"]["E0"], rel=1e-10)
    assert all(f.name.startswith("spectrum-") for f in files)


def test_malformed_config_writes_nothing(tmp_path):
    cfg = _write(tmp_path, "[system\nfixture = box\n")
    out = tmp_path / "out"
    assert main(["spectrum", "--config", str(cfg), "--out", str(out)]) == 1
    assert not out.exists()


@pytest.mark.parametrize("text", [
    "[system]\nfixture = nowhere\n",
    "[system]\nlength = 1\n",
    "[system]\nn_sites = 10\n[potential]\nkind = morse\n",
    "[system]\nfixture = box\n[spectrum]\nk_levels = many\n",
])
def test_usage_errors_exit_one(tmp_path, text):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    status, files = run("spectrum", cfg, out)
    assert status == 1 and files == [] and not out.exists()


def test_unknown_verb_and_missing_file(tmp_path):
    assert run("plot", CONFIGS / "spectrum.ini", tmp_path)[0] == 1
    assert run("spectrum", tmp_path / "missing.ini", tmp_path)[0] == 1
    assert main(["spectrum"]) == 1


def test_rerun_is_byte_identical(tmp_path):
    a = run("dini", CONFIGS / "dini.ini", tmp_path / "a", seed=5)[1]
    b = run("dini", CONFIGS / "dini.ini", tmp_path / "b", seed=5)[1]
    assert _digests(a) == _digests(b)
    c = run("dini", CONFIGS / "dini.ini", tmp_path / "c", seed=6)[1]
    assert {f.name for f in c}.isdisjoint({f.name for f in a})


def test_dini_outputs(tmp_path):
    status, files = run("dini", CONFIGS / "dini.ini", tmp_path, seed=0)
    assert status == 0
    manifest = json.loads(next(f for f in files if f.suffix == ".json").read_text())
    assert manifest["cluster"] == [2, 3] and manifest["any_broken"]
    rows = list(csv.DictReader(next(f for f in files if f.suffix == ".csv").open()))
    assert len(rows) == 10
    for r in rows:
        assert float(r["right"]) == pytest.approx(float(r["closed_right"]), abs=1e-9)


def test_maps_outputs(tmp_path):
    status, files = run("maps", CONFIGS / "maps.ini", tmp_path)
    assert status == 0
    bundle = json.loads(next(f for f in files if f.suffix == ".json").read_text())
    assert bundle["particle_number"] == pytest.approx(2, abs=1e-10)
    assert bundle["hf_relative_error"] < 1e-6


def test_degenerate_maps_level_is_flagged(tmp_path):
    cfg = _write(tmp_path, "[system]\nfixture = crossing\n[maps]\nlevel = 2\nk_levels = 6\n"
                           "[direction]\nkind = sine\nmode = 2\n")
    status, files = run("maps", cfg, tmp_path / "out")
    assert status == 0
    bundle = json.loads(next(f for f in files if f.suffix == ".json").read_text())
    assert bundle["degenerate"] and "hf_slope" not in bundle


def test_path_losing_binding_exits_two(tmp_path):
    cfg = _write(tmp_path, """\
        [system]
        n_sites = 16
        n_particles = 2
        [interaction]
        kind = soft_coulomb
        [path]
        steps_per_stage = 4
        """)
    status, files = run("path", cfg, tmp_path / "out")
    assert status == 2
    report = json.loads(files[0].read_text())
    assert report["error"] == "PathFailure" and report["step"] == 0


def test_small_path_run(tmp_path):
    cfg = _write(tmp_path, """\
        [system]
        n_sites = 24
        n_particles = 2
        [potential]
        kind = well
        depth = 400
        [interaction]
        kind = soft_coulomb
        [path]
        steps_per_stage = 5
        density_trace = yes
        """)
    status, files = run("path", cfg, tmp_path / "out")
    assert status == 0
    manifest = json.loads(next(f for f in files if f.suffix == ".json").read_text())
    assert manifest["min_margin"] > 0 and "density_max_jump" in manifest


def test_invert_from_target_csv(tmp_path):
    g = build_grid(30, 1.0)
    x = g.nodes
    v = 10 * (np.cos(2 * np.pi * x) - np.cos(4 * np.pi * x))
    rho = forward_density(g, v, 2)
    with open(tmp_path / "target.csv", "w") as fh:
        fh.write("x,rho\n" + "".join(f"{a:.17g},{b:.17g}\n" for a, b in zip(x, rho)))
    cfg = _write(tmp_path, "[system]\nn_sites = 30\nn_particles = 2\n[invert]\ntarget = target.csv\n")
    status, files = run("invert", cfg, tmp_path / "out")
    assert status == 0
    manifest = json.loads(next(f for f in files if f.suffix == ".json").read_text())
    assert manifest["converged"] and manifest["representable_at_tolerance"]
    v_ks = np.array(manifest["v_ks"])
    assert np.max(np.abs(v_ks - (v - v.mean()))) < 1e-3 * np.max(np.abs(v))
    names = sorted(f.name.split(".", 1)[1] for f in files)
    assert names == ["csv", "json", "potential.csv"]


def test_invert_bad_target_is_usage_error(tmp_path):
    (tmp_path / "target.csv").write_text("x,rho\n0.5,1\n")
    cfg = _write(tmp_path, "[system]\nn_sites = 30\nn_particles = 2\n[invert]\ntarget = target.csv\n")
    assert run("invert", cfg, tmp_path / "out")[0] == 1


def test_diagnose_small(tmp_path):
    cfg = _write(tmp_path, """\
        [system]
        n_sites = 20
        n_particles = 2
        [potential]
        kind = double_well
        depth = 200
        ratio = 0.8
        [interaction]
        kind = soft_coulomb
        [diagnose]
        sizes = 16 32
        m_list = 1 2 4
        noise = 1e-3
        lambdas = 1e-2 1e-6
        """)
    status, files = run("diagnose", cfg, tmp_path / "out", seed=3)
    assert status == 0
    suffixes = sorted(f.name.split(".", 1)[1] for f in files)
    assert suffixes == ["conditioning.csv", "json", "noise.csv", "svd.csv", "weak_strong.csv"]
    manifest = json.loads(next(f for f in files if f.suffix == ".json").read_text())
    conds = manifest["condition_numbers"]
    assert conds["16"] < conds["32"]


def test_thread_override(tmp_path, monkeypatch):
    monkeypatch.setenv("GROUNDMAP_THREADS", "1")
    assert run("spectrum", CONFIGS / "spectrum.ini", tmp_path)[0] == 0
    monkeypatch.setenv("GROUNDMAP_THREADS", "lots")
    assert run("spectrum", CONFIGS / "spectrum.ini", tmp_path / "x")[0] == 1


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "groundmap.cli", "spectrum", "--config",
                           str(CONFIGS / "spectrum.ini"), "--out", str(tmp_path), "--seed", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith(".json")
