"""Command-line front end.

Each subcommand reads a YAML config, writes ``manifest.json`` into the output
directory before any computation, then writes CSV/JSON results next to it.
Flags given on the command line override the config file.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import Channel
from .convergence import (
    NoFixedPointError,
    equal_power_fixed_point,
    tabulate_gd,
    two_user_fixed_point,
    write_curves,
)
from .de import EmpiricalBackend, ErrorFreeBackend, IdentityBackend, SemiAnalyticBackend, de_run, save_states
from .density import LLR_GRID, GridSpec
from .gf2codes import load_code
from .jointdec import JdConfig
from .simharness import ExperimentSpec, compare_de, run_experiment


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULTS = {
    "code": "ebch_64_30_14",
    "order": 3,
    "channel": {"h": [1.225, 0.707], "snr_db": 8.0},
    "decoder": {"t_off": None, "t_max": 6, "beta": 1.0, "gamma": 1.0, "early_stop": True},
    "simulate": {"snr_db": None, "n_blocks": 1000, "all_zero": False, "collect": ["ber", "bler"]},
    "de": {"backend": "empirical", "n_samples": 10000},
    "converge": {"mode": "equal_power", "n_users": [2], "snr_db": [8.0], "backend": "empirical", "n_samples": 10000},
    "validate": {"n_blocks": 2000, "t_max": 3, "threshold": 0.05, "width": 0.5},
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    cfg = DEFAULTS
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = _merge(DEFAULTS, data)
    return json.loads(json.dumps(cfg))


def _channel(cfg: dict) -> Channel:
    c = cfg["channel"]
    if "sigma2" in c:
        return Channel(tuple(c["h"]), c["sigma2"])
    if "n_users" in c and "h" not in c:
        return Channel.equal_power(int(c["n_users"]), float(c["snr_db"]))
    return Channel.from_snr_db(c["h"], float(c["snr_db"]))


def _jd_config(cfg: dict, t_max: int | None = None) -> JdConfig:
    d = cfg["decoder"]
    try:
        return JdConfig(
            code=load_code(cfg["code"]),
            ch=_channel(cfg),
            m=int(cfg["order"]),
            t_off=d["t_off"],
            t_max=int(t_max if t_max is not None else d["t_max"]),
            beta=float(d["beta"]),
            gamma=float(d["gamma"]),
            early_stop=bool(d["early_stop"]),
        )
    except (ValueError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from exc


def _backend(section: dict, seed: int):
    name = section.get("backend", "empirical")
    n = int(section.get("n_samples", 10000))
    if name == "empirical":
        return EmpiricalBackend(n_samples=n, seed=seed)
    if name == "semianalytic":
        return SemiAnalyticBackend(n_calib=n, seed=seed)
    if name == "uncoded":
        return IdentityBackend()
    if name == "error-free":
        return ErrorFreeBackend()
    raise ConfigError(f"unknown backend {name!r}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    def __init__(self, out: Path, command: str, config_path, params: dict, seed: int):
        self.path = out / "manifest.json"
        self.data = {
            "command": command,
            "config": str(config_path) if config_path else None,
            "parameters": params,
            "seed": seed,
            "version": __version__,
            "outputs": [],
            "started": _now(),
            "finished": None,
            "status": "running",
        }
        out.mkdir(parents=True, exist_ok=True)
        self.write()

    def add(self, *paths) -> None:
        self.data["outputs"].extend(str(Path(p).name) for p in paths)

    def finish(self, status: str) -> None:
        self.data["finished"] = _now()
        self.data["status"] = status
        self.write()

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2) + "\n")


def cmd_simulate(cfg: dict, args, out: Path, man: Manifest) -> bool:
    sim = cfg["simulate"]
    snrs = sim["snr_db"] if sim["snr_db"] is not None else [cfg["channel"]["snr_db"]]
    snrs = list(np.atleast_1d(snrs))
    if not snrs:
        raise ConfigError("simulate.snr_db is empty")
    spec = ExperimentSpec(
        cfg=_jd_config(cfg),
        snr_points=tuple(float(s) for s in snrs),
        n_blocks=int(sim["n_blocks"]),
        seed=args.seed,
        collect=frozenset(sim["collect"]),
        all_zero=bool(sim["all_zero"]),
        grid=args.grid_spec,
        threads=args.threads,
    )
    res = run_experiment(spec)
    res.to_csv(out / "ber.csv")
    res.to_json(out / "result.json")
    man.add(out / "ber.csv", out / "result.json")
    for (snr, u, t, kind), d in sorted(res.densities.items()):
        p = out / f"sim_{kind}_snr{snr:g}_t{t}_u{u}.csv"
        d.to_csv(p)
        man.add(p)
    return not res.interrupted


def cmd_de(cfg: dict, args, out: Path, man: Manifest) -> bool:
    jd = _jd_config(cfg)
    states = de_run(jd.ch, jd.code, jd.m, jd.t_off, jd.t_max, _backend(cfg["de"], args.seed), grid=args.grid_spec)
    manifest = save_states(states, out / "densities")
    summary = out / "de_summary.csv"
    with open(summary, "w") as fh:
        fh.write("t,user,ber,extrinsic_mean\n")
        for st in states:
            for u in range(jd.ch.n_users):
                fh.write(f"{st.t},{u + 1},{st.ber(u)!r},{st.extrinsic_mean(u)!r}\n")
    man.add(manifest.parent, summary)
    return True


def cmd_converge(cfg: dict, args, out: Path, man: Manifest) -> bool:
    conv = cfg["converge"]
    code = load_code(cfg["code"])
    m = int(cfg["order"])
    table = tabulate_gd(code, m, _backend(conv, args.seed), grid=args.grid_spec)
    table.to_csv(out / "gd_table.csv")
    man.add(out / "gd_table.csv")
    rows = []
    if conv["mode"] == "equal_power":
        for n_u in np.atleast_1d(conv["n_users"]):
            n_u = int(n_u)
            if n_u < 2:
                raise ConfigError("equal-power convergence needs n_users >= 2")
            for snr_db in np.atleast_1d(conv["snr_db"]):
                snr = 10 ** (float(snr_db) / 10)
                try:
                    p = equal_power_fixed_point(n_u, snr, code, m, None, table=table)
                    rows.append((n_u, float(snr_db), p.xi_star[0], "", p.multiplicity))
                except NoFixedPointError:
                    rows.append((n_u, float(snr_db), float("nan"), "", 0))
                curve = out / f"curves_nu{n_u}_snr{float(snr_db):g}.csv"
                write_curves(table, curve, n_u, snr)
                man.add(curve)
    elif conv["mode"] == "two_user":
        ch = _channel(cfg)
        if ch.n_users != 2:
            raise ConfigError("two_user mode needs a two-user channel")
        p = two_user_fixed_point(ch, code, m, None, table=table)
        rows.append((2, ch.snr_db, p.xi_star[0], p.xi_star[1], p.multiplicity))
        curve = out / "curves_two_user.csv"
        write_curves(table, curve)
        man.add(curve)
    else:
        raise ConfigError(f"unknown converge mode {conv['mode']!r}")
    path = out / "xi_star.csv"
    with open(path, "w") as fh:
        fh.write("n_users,snr_db,xi_star_1,xi_star_2,n_roots\n")
        for r in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in r) + "\n")
    man.add(path)
    return all(np.isfinite(r[2]) for r in rows)


def cmd_validate(cfg: dict, args, out: Path, man: Manifest) -> bool:
    val = cfg["validate"]
    sim_code = cfg.get("simulate", {}).get("code")
    de_code = cfg.get("de", {}).get("code")
    if sim_code and de_code and sim_code != de_code:
        raise ConfigError("simulation and DE use different codes")
    threshold = args.threshold if args.threshold is not None else float(val["threshold"])
    jd = _jd_config(cfg, t_max=int(val["t_max"]))
    jd = JdConfig(jd.code, jd.ch, jd.m, jd.t_off, jd.t_max, jd.beta, jd.gamma, early_stop=False)
    states = de_run(jd.ch, jd.code, jd.m, jd.t_off, jd.t_max, _backend(cfg["de"], args.seed), grid=args.grid_spec)
    spec = ExperimentSpec(
        cfg=jd,
        snr_points=(jd.ch.snr_db,),
        n_blocks=int(val["n_blocks"]),
        seed=args.seed,
        collect=frozenset({"ber", "densities"}),
        all_zero=False,
        grid=args.grid_spec,
        threads=args.threads,
    )
    tv = compare_de(spec, states, width=float(val["width"]))
    path = out / "tv.csv"
    ok = True
    with open(path, "w") as fh:
        fh.write("user,t,tv,threshold,pass\n")
        for (u, t), v in sorted(tv.items()):
            passed = v <= threshold
            ok &= passed
            fh.write(f"{u},{t},{v!r},{threshold!r},{int(passed)}\n")
    man.add(path)
    print(f"validate: {'PASS' if ok else 'FAIL'} (max TV {max(tv.values(), default=float('nan')):.4f}, threshold {threshold})")
    return ok


COMMANDS = {"simulate": cmd_simulate, "de": cmd_de, "converge": cmd_converge, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noma-osd", description="Joint NOMA decoding experiments and density evolution.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--grid", help="LLR grid as LO:HI:NBINS")
    common.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "validate":
            sp.add_argument("--threshold", type=float, help="TV pass threshold")
        if name == "simulate":
            sp.add_argument("--snr", type=float, nargs="*", help="SNR points in dB")
            sp.add_argument("--blocks", type=int, help="blocks per SNR point")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.threshold = getattr(args, "threshold", None)
    try:
        cfg = load_config(args.config)
        if getattr(args, "snr", None) is not None:
            if not args.snr:
                raise ConfigError("empty SNR list")
            cfg["simulate"]["snr_db"] = args.snr
        if getattr(args, "blocks", None) is not None:
            cfg["simulate"]["n_blocks"] = args.blocks
        if cfg["simulate"]["snr_db"] == []:
            raise ConfigError("simulate.snr_db is empty")
        args.grid_spec = GridSpec.parse(args.grid) if args.grid else LLR_GRID
        if int(cfg["decoder"]["t_max"]) < 1:
            raise ConfigError("decoder.t_max must be at least 1")
        _jd_config(cfg)
    except (ConfigError, ValueError, OSError, yaml.YAMLError) as exc:
        parser.exit(2, f"noma-osd: error: {exc}\n")
    params = dict(cfg, grid=str(args.grid_spec), threads=args.threads)
    if args.dry_run:
        print(yaml.safe_dump(params, sort_keys=True), end="")
        return 0
    out = Path(args.out)
    man = Manifest(out, args.command, args.config, params, args.seed)
    try:
        ok = COMMANDS[args.command](cfg, args, out, man)
    except (ConfigError, NoFixedPointError) as exc:
        man.finish("error")
        print(f"noma-osd: error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        man.finish("error")
        raise
    man.finish("ok" if ok else "failed")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
