"""End-to-end glue shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

from tbrfi import keyrate, photonics, stats, tags
from tbrfi.config import RunConfig
from tbrfi.photonics import TagStream
from tbrfi.tagfile import TagFileWriter, TagFormatError, read_tags

log = logging.getLogger(__name__)


def coincidence_config(cfg: RunConfig, base_delay_ps: int) -> tags.CoincidenceConfig:
    return tags.CoincidenceConfig(
        base_delay_ps=int(round(base_delay_ps)),
        slot_halfwidth_ps=cfg.coincidence.slot_halfwidth_ps,
        window_halfwidth_ps=cfg.coincidence.window_halfwidth_ps,
        time_bin_separation_ps=cfg.channel.bin_separation_ps,
        layout=cfg.layout,
    )


def simulate(cfg: RunConfig, seed: int | None = None, duration: float | None = None):
    seed = cfg.seed if seed is None else seed
    if seed is None:
        raise ValueError("a seed is required for simulation")
    duration = cfg.duration if duration is None else duration
    return photonics.simulate_tagstream(duration, cfg.source, cfg.channel, cfg.layout, seed)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def simulate_to_files(cfg: RunConfig, out_dir, seed: int | None = None,
                      duration: float | None = None) -> dict:
    """Stream shards straight to ``alice.tags`` / ``bob.tags`` plus a manifest."""
    seed = cfg.seed if seed is None else seed
    if seed is None:
        raise ValueError("a seed is required for simulation")
    duration = cfg.duration if duration is None else duration
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"duration_s": duration, "seed": seed, "config_sha256": cfg.digest()}
    paths = {"alice": out / "alice.tags", "bob": out / "bob.tags"}
    with TagFileWriter(paths["alice"], "alice", cfg.layout, meta) as wa, \
            TagFileWriter(paths["bob"], "bob", cfg.layout, meta) as wb:
        for a, b in photonics.iter_tagstream(duration, cfg.source, cfg.channel, cfg.layout, seed):
            wa.write(a)
            wb.write(b)
    manifest = {
        "scenario": cfg.scenario,
        "seed": seed,
        "duration_s": duration,
        "config_sha256": cfg.digest(),
        "config": json.loads(json.dumps(cfg.to_dict(), default=list)),
        "files": {side: {"path": p.name, "records": rec, "sha256": _sha256(p)}
                  for (side, p), rec in zip(paths.items(), (wa.records, wb.records))},
        "expected_coincidence_rate": photonics.expected_coincidence_rate(cfg.source, cfg.channel),
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class AnalysisResult:
    counts: list
    estimates: list
    rates: list
    whole: stats.BlockEstimate | None
    key: keyrate.KeyResult
    calibration: tags.Calibration | None
    base_delay_ps: float
    n_coincidences: int
    n_classified: int


def whole_run_estimate(blocks) -> keyrate.ChannelEstimate | None:
    if not blocks:
        return None
    merged = stats.merge_blocks(blocks)
    try:
        est = stats.block_estimate(merged)
    except stats.EmptyBlockError:
        return None
    return keyrate.ChannelEstimate(
        q_z=min(est.qber_z, 0.5), c64=est.c64, n_total=merged.total(),
        n_keymap=est.n_keymap, m_xx=est.m_xx, m_yx=est.m_yx)


def analyse(alice: TagStream, bob: TagStream, cfg: RunConfig, duration: float | None = None) -> AnalysisResult:
    """tags -> stats -> keyrate for one run."""
    cal = None
    d0 = cfg.coincidence.base_delay_ps
    if d0 is None:
        d0 = cfg.layout.base_delay_ps
        if len(alice) and len(bob):
            try:
                cal, _ = tags.calibrate(alice, bob)
                d0 = cal.base_delay_ps
            except tags.NoPeaksError as exc:
                log.warning("delay calibration failed (%s); using nominal %d ps", exc, d0)
    cc = coincidence_config(cfg, d0)
    if duration is None:
        duration = (max(int(alice.t[-1]) if len(alice) else 0, int(bob.t[-1]) if len(bob) else 0)
                    / photonics.PS_PER_S)
    blocks, coinc = tags.analyse_streams(alice, bob, cc, cfg.block_duration, duration)
    estimates = stats.time_series(blocks)
    rates = keyrate.rate_series(estimates) if estimates else []
    est = whole_run_estimate(blocks)
    if est is None:
        key = keyrate.KeyResult(0.0, 0, 0, 0.0, {"reason": "no coincidences"})
        whole = None
    else:
        key = keyrate.finite_key(est, cfg.security)
        whole = stats.block_estimate(stats.merge_blocks(blocks))
    return AnalysisResult(blocks, estimates, rates, whole, key, cal, d0, len(coinc),
                          int(coinc.classified.sum()) if len(coinc) else 0)


def load_pair(alice_path, bob_path) -> tuple[TagStream, TagStream, dict]:
    a, ha = read_tags(alice_path)
    b, hb = read_tags(bob_path)
    la, lb = ha.get("layout"), hb.get("layout")
    if la is not None and lb is not None and la.to_dict() != lb.to_dict():
        raise TagFormatError("alice and bob files declare different detector layouts")
    return a, b, {"alice": ha, "bob": hb}


def write_analysis(res: AnalysisResult, cfg: RunConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"asymptotic_rate": [r for r, _ in res.rates], "asymptotic_rate_err": [e for _, e in res.rates]}
    tmp = out / "blocks.csv.part"
    stats.write_estimates_csv(tmp, res.estimates, extra)
    os.replace(tmp, out / "blocks.csv")
    _write_counts_csv(out / "counts.csv", res.counts)
    report = keyrate.format_report(res.key, cfg.security, reference={
        "reported numerical rate": "0.063 bits/coincidence (numerical framework, not reproduced)",
    })
    _atomic_write(out / "key_report.txt", report + "\n")
    summary = {
        "n_blocks": len(res.estimates),
        "n_coincidences": res.n_coincidences,
        "n_classified": res.n_classified,
        "base_delay_ps": res.base_delay_ps,
        "calibration": asdict(res.calibration) if res.calibration else None,
        "whole_run": {k: getattr(res.whole, k) for k in stats.CSV_FIELDS} if res.whole else None,
        "key": {"rate": res.key.rate, "secret_bits": res.key.secret_bits,
                "asymptotic_rate": res.key.asymptotic_rate,
                "diagnostics": res.key.diagnostics},
    }
    _atomic_write(out / "summary.json", json.dumps(summary, indent=2, default=_jsonable))
    return summary


def _jsonable(x):
    if hasattr(x, "item"):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return str(x)


def _write_counts_csv(path: Path, blocks) -> None:
    from tbrfi.qstate import BASIS_PAIRS

    cols = ["block_start", "block_duration", "unclassified"] + [
        f"{p.label}_{o}" for p in BASIS_PAIRS for o in ("pp", "pm", "mp", "mm")]
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for b in blocks:
            row = [f"{b.block_start:g}", f"{b.block_duration:g}", str(b.unclassified)]
            row += [str(int(x)) for x in b.table().ravel()]
            fh.write(",".join(row) + "\n")
    os.replace(tmp, path)
