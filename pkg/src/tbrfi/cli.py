"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 zero key (``keyrate`` only).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from tbrfi import keyrate, montecarlo, pipeline, tags
from tbrfi.config import PRESETS, ConfigError, RunConfig, dump_config, load_config
from tbrfi.tagfile import TagFormatError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ZERO_KEY = 0, 2, 3, 4

log = logging.getLogger("tbrfi")


def _config(args) -> RunConfig:
    return load_config(args.config, args.preset)


def parse_rate_grid(text: str) -> list[float]:
    """'a:b:step' (inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            n = int(math.floor((b - a) / step + 1e-9)) + 1
            return [round(a + k * step, 12) for k in range(n)]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--rate-grid: cannot parse {text!r}: {exc}") from exc


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output_dir)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None:
        raise ConfigError("simulate needs a seed (--seed or 'seed:' in the config)")
    duration = args.duration if args.duration is not None else cfg.duration
    cfg = replace(cfg, seed=seed, duration=duration)
    out = _out_dir(args, cfg)
    manifest = pipeline.simulate_to_files(cfg, out, seed, duration)
    (out / "config.yaml").write_text(dump_config(cfg))
    f = manifest["files"]
    print(f"wrote {out}/alice.tags ({f['alice']['records']} tags), "
          f"{out}/bob.tags ({f['bob']['records']} tags), manifest.json")
    return EXIT_OK


def _tag_paths(args) -> tuple[Path, Path]:
    if args.alice and args.bob:
        return Path(args.alice), Path(args.bob)
    base = Path(args.data or args.out or ".")
    return base / "alice.tags", base / "bob.tags"


def _duration_from_headers(headers: dict) -> float | None:
    meta = headers["alice"].get("meta") or {}
    return meta.get("duration_s")


def cmd_analyze(args) -> int:
    cfg = _config(args)
    a_path, b_path = _tag_paths(args)
    alice, bob, headers = pipeline.load_pair(a_path, b_path)
    duration = args.duration if args.duration is not None else _duration_from_headers(headers)
    res = pipeline.analyse(alice, bob, cfg, duration)
    out = _out_dir(args, cfg)
    pipeline.write_analysis(res, cfg, out)
    ok = [e for e in res.estimates if e.ok]
    print(f"{len(res.estimates)} blocks ({len(ok)} valid), {res.n_classified} classified coincidences, "
          f"d0 = {res.base_delay_ps:.1f} ps")
    if res.whole is not None:
        w = res.whole
        print(f"whole run: qber_z = {w.qber_z:.4f}, c64 = {w.c64:.4f}, qber_x = {w.qber_x:.4f}")
    print(f"finite key: fraction {res.key.rate:.6f}, {res.key.secret_bits} secret bits")
    print(f"outputs in {out}/ (blocks.csv, counts.csv, key_report.txt, summary.json)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    sw = cfg.sweep
    rates = parse_rate_grid(args.rate_grid) if args.rate_grid else list(sw.rate_grid)
    if not rates:
        raise ConfigError("empty rate grid")
    seed = args.seed if args.seed is not None else (cfg.seed or 0)
    template = montecarlo.DriftScenario(
        n_signals=sw.n_signals, block_time=sw.block_time, trials=args.trials or sw.trials,
        initial_phase=sw.initial_phase, seed=seed,
        visibility_z=cfg.source.visibility_z, visibility_xy=cfg.source.visibility_xy)
    rows = montecarlo.sweep_drift_rates(rates, template)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "drift_sweep.csv"
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=montecarlo.SWEEP_FIELDS)
        w.writeheader()
        w.writerows(montecarlo.sweep_rows_as_dicts(rows))
    os.replace(tmp, path)
    lines = [f"wrote {path} ({len(rows)} rows)"]
    base = next((r for r in rows if r.rate == 0.0), None)
    if base is not None:
        one = min(rows, key=lambda r: abs(r.rate - 1.0))
        if one.rate != 0.0:
            drop = 1.0 - one.result.mean_c / base.result.mean_c
            lines.append(f"C drop at {one.rate:g} rad/s: {100 * drop:.2f}%")
        thr = montecarlo.threshold_rate(rows, sw.reduction)
        lines.append(f"{100 * sw.reduction:g}% key-rate reduction at {thr:.3f} rad/s")
    print("\n".join(lines))
    return EXIT_OK


_ESTIMATE_FIELDS = ("q_z", "c64", "n_total")


def _estimate_from_args(args) -> keyrate.ChannelEstimate:
    data: dict = {}
    if args.estimate:
        text = Path(args.estimate).read_text()
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.estimate}: {exc}") from exc
        if "whole_run" in loaded:  # summary.json from analyze
            w = loaded["whole_run"] or {}
            loaded = {"q_z": w.get("qber_z"), "c64": w.get("c64"), "n_total": w.get("n_total"),
                      "n_keymap": w.get("n_keymap"), "m_xx": w.get("m_xx"), "m_yx": w.get("m_yx")}
        data.update({k: v for k, v in loaded.items() if v is not None})
    for k in ("q_z", "c64", "n_total", "n_keymap", "m_xx", "m_yx"):
        v = getattr(args, k, None)
        if v is not None:
            data[k] = v
    missing = [k for k in _ESTIMATE_FIELDS if k not in data]
    if missing:
        raise ConfigError(f"incomplete estimate: missing {', '.join(missing)}")
    try:
        return keyrate.ChannelEstimate(
            q_z=float(data["q_z"]), c64=float(data["c64"]), n_total=int(float(data["n_total"])),
            n_keymap=data.get("n_keymap"), m_xx=data.get("m_xx"), m_yx=data.get("m_yx"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid estimate: {exc}") from exc


def cmd_keyrate(args) -> int:
    cfg = _config(args)
    sp = cfg.security
    if args.f is not None:
        sp = replace(sp, f=args.f)
    est = _estimate_from_args(args)
    res = keyrate.finite_key(est, sp)
    print(keyrate.format_report(res, sp, reference={
        "reported numerical rate": "0.063 bits/coincidence",
        "rate ceiling": f"{keyrate.SIFT:.4f} bits/coincidence"}))
    if args.calibration:
        print("\nall readings of the key-length bracket:")
        for row in keyrate.calibration_table(est, sp):
            print(f"  {row['deviation']:>14} {row['nq_reading']:>11} {row['normalization']:>10}: "
                  f"r_N = {row['rate']:.6f} (unclipped {row['rate_unclipped']:.4g})")
    return EXIT_ZERO_KEY if res.zero_key else EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    a_path, b_path = _tag_paths(args)
    alice, bob, _ = pipeline.load_pair(a_path, b_path)
    cal, (centres, counts) = tags.calibrate(alice, bob, bin_width_ps=args.bin_width)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "delay_histogram.csv", "w") as fh:
        fh.write("bin_center_ps,count\n")
        for c, n in zip(centres, counts):
            fh.write(f"{c:g},{int(n)}\n")
    expected = cfg.channel.bin_separation_ps
    fit = {"base_delay_ps": cal.base_delay_ps, "slot_centers_ps": list(cal.centers_ps),
           "spacing_ps": cal.spacing_ps, "expected_spacing_ps": expected,
           "spacing_ok": abs(cal.spacing_ps - expected) <= args.spacing_tolerance,
           "widths_ps": list(cal.widths_ps), "areas": list(cal.areas)}
    (out / "calibration.json").write_text(json.dumps(fit, indent=2, default=float))
    print(f"d0 = {cal.base_delay_ps:.1f} ps, spacing = {cal.spacing_ps:.1f} ps "
          f"(expected {expected}), widths = {cal.widths_ps[1]:.1f} ps")
    if not fit["spacing_ok"]:
        print("warning: fitted spacing differs from the configured time-bin separation",
              file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario preset")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--duration", type=float, help="run duration in seconds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tbrfi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write simulated tag files")
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("analyze", cmd_analyze, "tags -> per-block CSV + key report"),
                                 ("calibrate", cmd_calibrate, "delay histogram + slot fit")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--data", help="directory holding alice.tags and bob.tags")
        s.add_argument("--alice")
        s.add_argument("--bob")
        if name == "calibrate":
            s.add_argument("--bin-width", type=int, default=50)
            s.add_argument("--spacing-tolerance", type=float, default=50.0)
        s.set_defaults(func=func)

    s = sub.add_parser("sweep", parents=[common], help="Monte Carlo drift sweep (C vs rate)")
    s.add_argument("--rate-grid", help="'start:stop:step' or comma list, rad/s")
    s.add_argument("--trials", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("keyrate", parents=[common], help="finite-size key report")
    s.add_argument("--estimate", help="YAML/JSON file with q_z, c64, n_total (or an analyze summary.json)")
    s.add_argument("--q", dest="q_z", type=float)
    s.add_argument("--c64", type=float)
    s.add_argument("--n-total", type=float)
    s.add_argument("--n-keymap", type=float)
    s.add_argument("--m-xx", type=float)
    s.add_argument("--m-yx", type=float)
    s.add_argument("--f", type=float, help="error-correction inefficiency override")
    s.add_argument("--calibration", action="store_true", help="also list every bracket reading")
    s.set_defaults(func=cmd_keyrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TagFormatError, tags.UnsortedStreamError, tags.NoPeaksError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
