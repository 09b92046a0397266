import json

import pytest
import yaml

from noma_osd.cli import main

BASE = {
    "code": "ebch_32_16_8",
    "order": 1,
    "channel": {"h": [1.225, 0.707], "snr_db": 10.0},
    "decoder": {"t_max": 3},
    "simulate": {"snr_db": [6.0, 8.0], "n_blocks": 6},
    "de": {"backend": "uncoded"},
    "converge": {"backend": "uncoded", "n_users": [2], "snr_db": [8.0]},
    "validate": {"n_blocks": 40, "t_max": 2, "threshold": 0.3},
}


def write_cfg(tmp_path, **over):
    cfg = json.loads(json.dumps(BASE))
    for k, v in over.items():
        if isinstance(v, dict):
            cfg.setdefault(k, {}).update(v)
        else:
            cfg[k] = v
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def test_simulate_writes_curves_and_manifest(tmp_path):
    out = tmp_path / "sim"
    rc = main(["simulate", "--config", write_cfg(tmp_path), "--out", str(out), "--seed", "3"])
    assert rc == 0
    rows = (out / "ber.csv").read_text().splitlines()
    assert rows[0].startswith("snr_db,user,t,ber")
    assert len(rows) == 1 + 2 * 2 * 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 3 and man["command"] == "simulate"
    assert all((out / f).exists() for f in man["outputs"])


def test_empty_snr_list_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", write_cfg(tmp_path, simulate={"snr_db": []}), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["simulate", "--snr", "--out", str(tmp_path / "o")])


def test_dry_run_prints_resolved_config(tmp_path, capsys):
    rc = main(["simulate", "--config", write_cfg(tmp_path), "--dry-run", "--grid=-64:64:1025"])
    assert rc == 0
    printed = yaml.safe_load(capsys.readouterr().out)
    assert printed["code"] == "ebch_32_16_8" and printed["grid"] == "-64:64:1025"
    assert not (tmp_path / "out").exists()


def test_de_zero_iterations_is_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["de", "--config", write_cfg(tmp_path, decoder={"t_max": 0}), "--out", str(tmp_path / "o")])
    assert exc.value.code == 2


def test_de_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, decoder={"t_max": 3, "t_off": 1})
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["de", "--config", cfg, "--out", str(out), "--grid=-64:64:2049"]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_converge_single_user_is_error(tmp_path):
    cfg = write_cfg(tmp_path, converge={"n_users": [1]})
    assert main(["converge", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_converge_writes_table(tmp_path):
    out = tmp_path / "conv"
    assert main(["converge", "--config", write_cfg(tmp_path), "--out", str(out)]) == 0
    rows = (out / "xi_star.csv").read_text().splitlines()
    assert rows[0].startswith("n_users,snr_db,xi_star_1") and len(rows) == 2
    assert (out / "curves_nu2_snr8.csv").exists()


def test_validate_mismatched_codes(tmp_path):
    cfg = write_cfg(tmp_path, simulate={"code": "ebch_32_16_8"}, de={"code": "ebch_64_30_14"})
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_validate_threshold_override(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "a"), "--threshold", "1.0"]) == 0
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "b"), "--threshold", "0.0"]) == 1
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["status"] == "failed"
