import io
import json
import subprocess
import sys

import pytest

from lmpseq import ConfigError
from lmpseq.cli import run
from lmpseq.config import parse_config

BERN = """\
family:
  kind: BernoulliMean
  theta0: 0.5
design:
  b: 0.2
  c: 0.05
simulate:
  n_rep: 2000
  seed: 7
  theta_list: [0.45, 0.5, 0.55]
dp:
  N: 3
verify:
  shifts: [0.5, 2.0]
  fixed_n: [2]
sweep:
  b: [-0.5, 0, 0.5]
  c: [0.02, 0.05]
"""


def _run(tmp_path, text, *argv):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(text)
    out, err = io.StringIO(), io.StringIO()
    code = run([argv[0], "--config", str(cfg), *argv[1:]], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def _records(text):
    return [json.loads(line) for line in text.splitlines()]


def test_design_command(tmp_path):
    code, out, _ = _run(tmp_path, BERN, "design")
    assert code == 0
    recs = _records(out)
    assert recs[0]["record"] == "stanza" and recs[0]["seed"] == 7
    assert len(recs) == 2 and recs[1]["record"] == "design"
    assert recs[1]["B_c"] == pytest.approx(19.0, abs=1e-8)


def test_design_emits_grid(tmp_path):
    grid = tmp_path / "grid.csv"
    code, _, _ = _run(tmp_path, BERN, "design", "--emit-grid", str(grid))
    assert code == 0
    assert grid.read_text().splitlines()[0] == "z,rho,g_minus_rho"


def test_negative_cost_exits_2(tmp_path):
    code, out, err = _run(tmp_path, BERN.replace("c: 0.05", "c: -1"), "design")
    assert code == 2
    assert "design.c" in err and ":6:" in err


def test_unknown_key_exits_2(tmp_path):
    code, _, err = _run(tmp_path, BERN + "extra: 1\n", "design")
    assert code == 2 and "extra" in err


def test_grid_too_narrow_exits_3(tmp_path):
    text = BERN.replace("c: 0.05", "c: 0.01")
    with pytest.warns(UserWarning):
        code, _, err = _run(tmp_path, text, "design")
    assert code == 3 and "grid" in err


def test_capacity_exits_4(tmp_path):
    code, _, _ = _run(tmp_path, BERN.replace("N: 3", "N: 6"), "bruteforce")
    assert code == 4


def test_dp_equals_bruteforce(tmp_path):
    _, dp_out, _ = _run(tmp_path, BERN, "dp")
    _, bf_out, _ = _run(tmp_path, BERN, "bruteforce")
    assert abs(_records(dp_out)[1]["value"] - _records(bf_out)[1]["value"]) <= 1e-12


def test_simulate_is_deterministic(tmp_path):
    _, a, _ = _run(tmp_path, BERN, "simulate")
    _, b, _ = _run(tmp_path, BERN, "simulate", "--threads", "3")
    assert a == b
    recs = _records(a)
    assert [r["record"] for r in recs] == ["stanza", "simulation", "power", "power", "power"]


def test_seed_override_changes_stanza(tmp_path):
    _, a, _ = _run(tmp_path, BERN, "simulate")
    _, b, _ = _run(tmp_path, BERN, "simulate", "--seed", "8")
    ra, rb = _records(a), _records(b)
    assert rb[0]["seed"] == 8 and ra[0]["config_sha256"] != rb[0]["config_sha256"]
    assert ra[1] != rb[1]


def test_sweep_widths_monotone(tmp_path):
    _, out, _ = _run(tmp_path, BERN, "sweep")
    recs = [r for r in _records(out) if r["record"] == "sweep"]
    assert len(recs) == 6
    for b in (-0.5, 0.0, 0.5):
        w = [r["width"] for r in recs if r["b"] == b]
        assert w[0] >= w[1]


def test_verify_csv(tmp_path):
    code, out, _ = _run(tmp_path, BERN, "verify", "--format", "csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# ")
    assert lines[1] == "design_id,asn,alpha,beta_dot,L,se_L,verdict"
    assert "optimal" in out


def test_fixed_design_infinite_bounds_are_json_safe(tmp_path):
    code, out, _ = _run(tmp_path, BERN, "verify")
    assert code == 0
    for line in out.splitlines():
        json.loads(line)  # no bare Infinity


def test_output_path(tmp_path):
    target = tmp_path / "out.jsonl"
    code, out, _ = _run(tmp_path, BERN, "design", "--output", str(target))
    assert code == 0 and out == ""
    assert _records(target.read_text())[0]["record"] == "stanza"


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(BERN)
    proc = subprocess.run([sys.executable, "-m", "lmpseq", "dp", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert _records(proc.stdout)[1]["value"] == pytest.approx(-1.275, abs=1e-12)


@pytest.mark.parametrize("text,needle", [
    ("family: {kind: BernoulliMean, theta0: 1.5}\ndesign: {b: 0, c: 1}\n", "theta0"),
    ("family: {kind: BernoulliMean, theta0: 0.5}\ndesign: {b: 0}\n", "design.c"),
    ("family: {kind: NormalMean}\ndesign: {b: 0, c: 1}\nsimulate: {n_rep: 10}\n", "n_rep"),
    ("family: {kind: NormalMean}\ndesign: {b: x, c: 1}\n", "design.b"),
    ("family: {kind: NormalMean}\ndesign: {b: 0, c: 1}\noutput: {format: xml}\n", "format"),
    ("family: {kind: BernoulliMean, theta0: 0.5}\ndesign: {b: 0, c: 1}\n"
     "simulate: {theta_list: [0.5, 1.5]}\n", "theta_list"),
    ("family: [1, 2]\ndesign: {b: 0, c: 1}\n", "family"),
    ("family: {kind: CustomDiscrete, atoms: [[0, 1]]}\ndesign: {b: 0, c: 1}\n", "atoms"),
    ("design: {b: 0, c: 1}\n", "family"),
    (": :\n", "malformed"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text, "t.yaml")


def test_config_accepts_json_and_exponents():
    cfg = parse_config('{"family": {"kind": "NormalMean"}, "design": {"b": 0, "c": 5e-2, '
                       '"tol": 1e-8}}')
    assert cfg.c == 0.05 and cfg.design.tol == 1e-8
    cfg = parse_config("family: {kind: NormalMean}\ndesign: {b: 0, c: 5e-2}\n")
    assert cfg.c == 0.05


def test_custom_family_from_config():
    cfg = parse_config("family:\n  kind: CustomDiscrete\n  atoms: [[-1, 0.5, -1], [1, 0.5, 1]]\n"
                       "design: {b: 0, c: 0.1}\n")
    assert cfg.model.score(1.0) == 1.0


def test_digest_ignores_threads():
    cfg = parse_config(BERN)
    assert cfg.digest() == cfg.with_overrides(threads=4).digest()
    assert cfg.digest() != cfg.with_overrides(seed=1).digest()
