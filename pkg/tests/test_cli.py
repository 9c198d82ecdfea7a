import json
import subprocess
import sys

import numpy as np
import pytest

from vosub.cli import DEFAULT_CONFIG, SCHEMA, build_experiment, load_config, main, merge
from vosub.errors import ConfigError
from vosub.geometry import build_disk_mesh, write_mesh

BASE = {
    "schema": SCHEMA,
    "domain": {"type": "disk", "level": 2},
    "tags": {"radii": [], "sectors": 2, "offset": 0.0},
    "order": {"type": "partition", "values": {"0": 0.45, "1": 0.7}},
    "p_grid": {"lo": 1e-6, "hi": 1e-2, "n": 6},
}
PAIR = {"alpha1": {"type": "partition", "values": {"0": 0.5, "1": 0.72}},
        "alpha2": {"type": "partition", "values": {"0": 0.45, "1": 0.7}}}


def write(tmp_path, cfg, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_defaults_validate():
    ex = build_experiment(merge(DEFAULT_CONFIG, {"domain": {"level": 1}}))
    assert ex.cfg.alpha.alpha_min == 0.5
    assert np.allclose(ex.mesh.vertices[ex.x0], [1, 0])


def test_order_bound_violation_is_named(tmp_path, capsys):
    cfg = merge(BASE, {"order": {"values": {"0": 0.4, "1": 0.9}}})
    assert main(["forward", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "order-bound assumption" in err and "max=0.9" in err


def test_field_level_errors(tmp_path):
    cfg = merge(BASE, {"coefficients": {"sigma": -1, "q": {"type": "radial", "coeffs": []}},
                       "excitation": [{"k": 1, "phi": 1.0}], "p_grid": [1.0, 0.5],
                       "observation": {"x0": [1]}})
    with pytest.raises(ConfigError) as e:
        load_config(write(tmp_path, cfg))
    fields = [m.split(":")[0] for m in e.value.errors]
    assert fields == ["coefficients.sigma.value", "coefficients.q.coeffs", "excitation[0].k",
                      "observation.x0", "p_grid"]


@pytest.mark.parametrize("bad, msg", [
    ({"schema": "other/1"}, "schema"),
    ({"domain": {"type": "hexagon"}}, "domain.type"),
    ({"tags": {"sectors": 3}}, "missing tags"),
    ({"order": {"type": "figure1", "index": 7}}, "order.index"),
])
def test_rejects(tmp_path, bad, msg):
    with pytest.raises(ConfigError, match=msg):
        load_config(write(tmp_path, merge(BASE, bad)))


def test_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(p))


def test_coefficient_tables_and_mesh_file(tmp_path):
    write_mesh(build_disk_mesh(1), tmp_path / "m")
    cfg = merge(BASE, {"domain": {"type": "file", "path": "m"},
                       "coefficients": {"sigma": {"type": "tags", "values": {"0": 1.0, "1": 3.0}},
                                        "rho": {"type": "radial", "coeffs": [1.0, 0.5]}},
                       "excitation": [{"k": 2, "phi": {"type": "fourier", "a0": 1.0, "cos": [0.2]}}]})
    ex = load_config(write(tmp_path, cfg))
    assert ex.cfg.sigma.values.min() == pytest.approx(1.0) and ex.cfg.sigma.values.max() == pytest.approx(3.0)
    r = np.hypot(*ex.mesh.vertices.T)
    assert np.allclose(ex.cfg.rho.values, 1 + 0.5 * r)


def test_forward_is_deterministic(tmp_path):
    c = write(tmp_path, BASE)
    for d in ("a", "b"):
        assert main(["forward", "--config", c, "--out", str(tmp_path / d), "--threads", "2"]) == 0
    for f in ("flux_curve.csv", "weighted_data.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.mark.parametrize("command, files", [
    ("asympt", ["cascade_flux.csv", "remainder.csv", "remainder_one_N2.csv"]),
    ("invert-exponents", ["exponents.csv", "exponents_flux_curve.csv"]),
    ("invert-linearized", ["recovery.csv"]),
    ("stability", ["stability.csv"]),
    ("figure1", ["figure1_distances.csv", "figure1_flux_a4.csv"]),
    ("crosscheck", ["flux_series.csv"]),
])
def test_commands_write_csv(tmp_path, command, files):
    cfg = merge(BASE, {"invert_linearized": PAIR, "stability": dict(PAIR, n_random=2),
                       "crosscheck": {"tau": 0.05, "T": 10}})
    assert main([command, "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    for f in files:
        assert (tmp_path / f).stat().st_size > 0


def test_linearized_command_recovers_shift(tmp_path):
    cfg = merge(BASE, {"invert_linearized": PAIR})
    main(["invert-linearized", "--config", write(tmp_path, cfg), "--out", str(tmp_path)])
    rows = (tmp_path / "recovery.csv").read_text().splitlines()
    got = {int(r.split(",")[0]): float(r.split(",")[1]) for r in rows[1:]}
    assert got[0] == pytest.approx(0.05, rel=1e-6) and got[1] == pytest.approx(0.02, rel=1e-6)


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    import vosub.cli as cli
    from vosub.errors import SolverError

    def boom(*a, **k):
        raise SolverError("no convergence")
    monkeypatch.setattr(cli, "flux_curve", boom)
    assert main(["forward", "--config", write(tmp_path, BASE), "--out", str(tmp_path)]) == 2


def test_verify_subset(tmp_path, capsys):
    assert main(["verify", "--criteria", "2,9", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS]  2" in out and "[PASS]  9" in out
    assert main(["verify", "--criteria", "13"]) == 1


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "vosub.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "verify" in r.stdout
