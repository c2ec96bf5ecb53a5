"""Command-line entry point: ``tinytwin <subcommand>``.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .chan_model import DEFAULT_CARRIER, DEFAULT_SAMPLE_RATE, DelayGrid, load_trace, sidecar_path, write_trace
from .errors import TinyTwinError, TraceFormatError, ValidationError
from .fronthaul.gnb import GnbServer
from .fronthaul.runner import UeSpec, run_session
from .fronthaul.ue import UeClient
from .scenario import TraceSpec, load_scenario, parse_duration, parse_snr_range
from .telemetry.link import LinkMonitor
from .telemetry.metrics import MetricsRegistry, parse_addr, serve_metrics
from .trace_gen import import_external_cir

log = logging.getLogger("tinytwin")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _duration(text: str) -> float:
    try:
        return parse_duration(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _hostport(text: str) -> tuple[str, int]:
    try:
        return parse_addr(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}") from None


def _percentiles(records) -> dict:
    if not records:
        return {}
    return {k: bench_mod.percentile(records, q) for k, q in (("p50", .5), ("p90", .9), ("p99", .99), ("max", 1.0))}


def _link_dict(state) -> dict:
    return {"snr_db": state.snr_db, "mcs": state.mcs, "bits_delivered": state.bits_delivered,
            "drops": state.drops, "buffer_bits": state.buffer_bits, "bits_lost": state.bits_lost}


def _start_metrics(args, registry):
    if not args.metrics_addr:
        return None
    server = serve_metrics(registry, args.metrics_addr)
    log.warning("metrics at %s", server.url)
    return server


# -- gen-trace / inspect -----------------------------------------------------

def cmd_gen_trace(args) -> int:
    # everything is validated and built in memory before the file is touched
    if args.import_file:
        grid = DelayGrid(args.bins, args.sample_rate) if args.bins else None
        trace = import_external_cir(args.import_file, args.import_format, grid=grid,
                                    carrier_freq=args.carrier, label=args.label)
        meta = {"generator": f"import:{args.import_format}", "source": str(args.import_file)}
        fd = None
    else:
        if not args.profile:
            raise ValidationError("either --profile or --import is required")
        snr = parse_snr_range(args.snr) if args.snr else (20.0, 0.0)
        spec = TraceSpec(profile=args.profile, speed_kmh=args.speed_kmh, doppler_hz=args.doppler_hz,
                         duration=args.duration, seed=args.seed, carrier_freq=args.carrier,
                         sample_rate=args.sample_rate, num_bins=args.bins, period=args.period,
                         snr_high_db=snr[0], snr_low_db=snr[1], label=args.label)
        spec.validate()
        trace = spec.build()
        meta = spec.meta()
        fd = spec.resolved_doppler
    write_trace(trace, args.out, sidecar=not args.no_sidecar, extra_meta=meta)
    power = trace.step_power()
    print(f"wrote {args.out}: T={trace.num_steps} L={trace.num_bins} "
          f"mean power {10 * np.log10(max(power.mean(), 1e-300)):.2f} dB"
          + (f" f_d={fd:.1f} Hz" if fd is not None else "") + f" label={trace.label!r}")
    return EXIT_OK


def inspect_summary(trace, meta: dict | None = None) -> dict:
    power = np.asarray(trace.step_power(), dtype=np.float64)
    taps = np.asarray(trace.taps)
    per_bin = np.mean(np.abs(taps.astype(np.complex128)) ** 2, axis=0)
    active = per_bin > 1e-12 * max(per_bin.sum(), 1e-300)
    with np.errstate(divide="ignore"):
        per_bin_db = 10 * np.log10(per_bin)
    out = {
        "num_steps": trace.num_steps, "num_bins": trace.num_bins,
        "bin_spacing_ns": trace.grid.bin_spacing_ns, "sample_rate": trace.grid.sample_rate,
        "time_step_s": trace.time_step, "carrier_freq_hz": trace.carrier_freq, "label": trace.label,
        "mean_power_db": float(10 * np.log10(max(power.mean(), 1e-300))),
        "active_bins": int(active.sum()),
        "per_bin_power_db": [float(x) for x in per_bin_db],
    }
    if meta and "doppler_hz" in meta:
        out["doppler_hz"] = meta["doppler_hz"]
    return out


def cmd_inspect(args) -> int:
    trace = load_trace(args.trace)
    meta = None
    side = sidecar_path(args.trace)
    if side.is_file():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except ValueError:
            log.warning("ignoring unreadable sidecar %s", side)
    info = inspect_summary(trace, meta)
    if args.json:
        print(json.dumps(info, indent=2))
    else:
        print(f"trace      {args.trace}")
        print(f"label      {info['label']}")
        print(f"steps      {info['num_steps']} x {info['time_step_s'] * 1e3:g} ms")
        print(f"bins       {info['num_bins']} x {info['bin_spacing_ns']:.3f} ns ({info['sample_rate']:g} S/s)")
        print(f"carrier    {info['carrier_freq_hz'] / 1e9:g} GHz")
        if "doppler_hz" in info:
            print(f"doppler    {info['doppler_hz']:.1f} Hz")
        print(f"mean power {info['mean_power_db']:.2f} dB")
        print(f"active     {info['active_bins']} bins")
        print("bin  mean power (dB)")
        for i, p in enumerate(info["per_bin_power_db"]):
            print(f"{i:3d}  {p:8.2f}")
    if args.power_csv:
        power = trace.step_power()
        with np.errstate(divide="ignore"):
            db = 10 * np.log10(power)
        with open(args.power_csv, "w", encoding="utf-8") as fh:
            fh.write("step,time_s,power_linear,power_db\n")
            for s in range(trace.num_steps):
                fh.write(f"{s},{s * trace.time_step:.6f},{power[s]:.9g},{db[s]:.6f}\n")
    return EXIT_OK


# -- endpoints ---------------------------------------------------------------

def cmd_gnb(args) -> int:
    scen = load_scenario(args.config)
    if args.mode:
        scen.mode = args.mode
    duration = args.duration or scen.duration
    traces = {u.ue_id: u.load(scen.sample_rate) for u in scen.ues} if scen.mode == "vanilla" else {}
    cfg = scen.session_config(traces)
    host, port = args.listen or (scen.gnb_host, scen.gnb_port)
    registry = MetricsRegistry()
    server = _start_metrics(args, registry)
    gnb = GnbServer(cfg, host, port, registry=registry)
    try:
        print(f"listening on {gnb.address[0]}:{gnb.address[1]}", flush=True)
        gnb.wait_for_ues(args.ues or len(scen.ues), timeout=args.wait)
        records = gnb.run(max(1, int(round(duration / cfg.slot_duration))))
    finally:
        gnb.close()
        if server:
            server.close()
    summary = {"mode": cfg.mode, "slots": len(records), "ue_timeouts": len(gnb.ue_timeouts),
               "overrun_fraction": sum(r.overrun for r in records) / len(records), **_percentiles(records)}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_ue(args) -> int:
    if args.trace:
        trace = load_trace(args.trace)
    else:
        trace = None
    registry = MetricsRegistry()
    server = _start_metrics(args, registry)
    host, port = args.connect
    try:
        client = UeClient(host, port, args.id, trace, cores=args.cores)
        if client.ack.noise_power > 0:
            client.link_monitor = LinkMonitor(args.id, client.ack.noise_power,
                                              offered_bits_per_slot=args.offered_bits,
                                              seed=client.ack.noise_seed, registry=registry)
        print(f"UE {args.id} connected to {host}:{port}", flush=True)
        client.run()
    finally:
        if server:
            server.close()
    summary = {"ue_id": args.id, "slots": client.slots_processed}
    if client.link_monitor is not None:
        summary["link"] = _link_dict(client.link_monitor.state)
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    if client.error is not None and not isinstance(client.error, ConnectionError):
        raise client.error
    return EXIT_OK


# -- scenario runs -----------------------------------------------------------

def _run_in_process(scen, traces, registry, num_slots):
    cfg = scen.session_config(traces if scen.mode == "vanilla" else {})
    ues = [UeSpec(u.ue_id, traces[u.ue_id], cores=u.pinning) for u in scen.ues]
    res = run_session(cfg, ues, num_slots, registry=registry,
                      offered_bits_per_slot=scen.offered_bits_per_slot, link_seed=scen.noise_seed,
                      host=scen.gnb_host, port=scen.gnb_port)
    links = {str(u): _link_dict(s) for u, s in sorted(res.link_states.items())}
    return res.records, res.ue_timeouts, links


def _run_processes(scen, traces, registry, num_slots):
    """gNB in this process, one OS process per UE; any UE failing to connect aborts the run."""
    cfg = scen.session_config(traces if scen.mode == "vanilla" else {})
    procs = []
    with tempfile.TemporaryDirectory(prefix="tinytwin-") as tmp:
        gnb = GnbServer(cfg, scen.gnb_host, scen.gnb_port, registry=registry)
        try:
            host, port = gnb.address
            for u in scen.ues:
                tpath = Path(tmp) / f"ue{u.ue_id}.cirt"
                write_trace(traces[u.ue_id], tpath)
                cmd = [sys.executable, "-m", "tinytwin.cli", "ue", "--id", str(u.ue_id), "--trace", str(tpath),
                       "--connect", f"{host}:{port}", "--offered-bits", str(scen.offered_bits_per_slot),
                       "--summary", str(Path(tmp) / f"ue{u.ue_id}.json")]
                if u.pinning:
                    cmd += ["--cores", ",".join(map(str, u.pinning))]
                procs.append(subprocess.Popen(cmd, stdout=subprocess.DEVNULL))
            deadline = time.monotonic() + 60
            while len(gnb.ue_ids) < len(scen.ues):
                dead = [p for p in procs if p.poll() is not None]
                if dead:
                    raise TinyTwinError(f"{len(dead)} UE process(es) exited before joining the session")
                if time.monotonic() > deadline:
                    raise TinyTwinError("UE processes did not all connect within 60 s")
                time.sleep(0.05)
            records = gnb.run(num_slots)
        finally:
            gnb.close()
            for p in procs:
                try:
                    p.wait(timeout=10)
                except subprocess.TimeoutExpired:
                    p.kill()
        links = {}
        for u in scen.ues:
            f = Path(tmp) / f"ue{u.ue_id}.json"
            if f.is_file():
                doc = json.loads(f.read_text())
                if "link" in doc:
                    links[str(u.ue_id)] = doc["link"]
        return records, gnb.ue_timeouts, links


def cmd_run(args) -> int:
    scen = load_scenario(args.scenario)
    if args.duration:
        scen.duration = args.duration
    if args.mode:
        scen.mode = args.mode
    # every trace is loaded or generated before anything is launched
    traces = {u.ue_id: u.load(scen.sample_rate) for u in scen.ues}
    scen.session_config(traces)
    registry = MetricsRegistry()
    server = _start_metrics(args, registry) if args.metrics_addr else None
    if server is None and scen.metrics_addr:
        server = serve_metrics(registry, scen.metrics_addr)
        log.warning("metrics at %s", server.url)
    t0 = time.perf_counter()
    try:
        runner = _run_processes if args.separate_processes else _run_in_process
        records, timeouts, links = runner(scen, traces, registry, scen.num_slots)
    finally:
        if server:
            server.close()
    summary = {
        "scenario": str(args.scenario), "mode": scen.mode, "num_ues": len(scen.ues),
        "slots": len(records), "slot_duration_s": scen.slot_duration,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "overrun_fraction": sum(r.overrun for r in records) / max(len(records), 1),
        "ue_timeouts": len(timeouts), "compute_seconds": _percentiles(records), "ues": links,
        "separate_processes": bool(args.separate_processes),
    }
    out = args.summary or scen.summary
    if out:
        Path(out).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# -- bench -------------------------------------------------------------------

def cmd_bench(args) -> int:
    matrix = bench_mod.BenchMatrix(modes=tuple(args.modes.split(",")), ues=tuple(args.ues), taps=tuple(args.taps),
                                   sparse_n=args.sparse_n, duration=args.duration, pinning=args.pinning,
                                   samples_per_slot=args.samples_per_slot, seed=args.seed,
                                   echo_probes=args.echo_probes)
    fmt = args.format
    if args.out and fmt is None:
        fmt = {".csv": "csv", ".md": "markdown"}.get(Path(args.out).suffix.lower(), "json")
    fmt = fmt or "markdown"
    bench_mod.render_report([], fmt)  # rejects unknown formats before the sweep starts

    def progress(r):
        log.info("%s ues=%d taps=%d p90=%.3f ms", r.mode, r.num_ues, r.num_taps, r.p90 * 1e3)

    reports = bench_mod.run_bench(matrix, progress)
    if args.out:
        bench_mod.emit_report(reports, args.out, fmt)
        print(f"wrote {len(reports)} report rows to {args.out}")
    else:
        sys.stdout.write(bench_mod.render_report(reports, fmt))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinytwin", description="CPU-native digital-twin RF plane")
    p.add_argument("--log-level", default=None,
                   help="logging level (default from TINYTWIN_LOG, else WARNING)")
    p.add_argument("--metrics-addr", default=None, metavar="HOST:PORT",
                   help="serve metrics at http://HOST:PORT/metrics")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gnb", help="run the gNB server from a scenario")
    g.add_argument("--config", required=True, help="scenario file (TOML or JSON)")
    g.add_argument("--mode", choices=("vanilla", "optimized"))
    g.add_argument("--listen", type=_hostport, help="override the scenario's gNB endpoint")
    g.add_argument("--duration", type=_duration)
    g.add_argument("--ues", type=int, help="number of UEs to wait for (default: scenario UE count)")
    g.add_argument("--wait", type=_duration, default=60.0, help="how long to wait for UEs")
    g.set_defaults(func=cmd_gnb)

    u = sub.add_parser("ue", help="run one UE client")
    u.add_argument("--id", type=int, required=True)
    u.add_argument("--trace", help="CIRT trace (default: identity channel)")
    u.add_argument("--connect", type=_hostport, required=True, metavar="HOST:PORT")
    u.add_argument("--cores", type=_int_list, help="pin this UE to the given core ids")
    u.add_argument("--offered-bits", type=int, default=10_000, help="offered load per slot")
    u.add_argument("--summary", help="write a JSON summary here on exit")
    u.set_defaults(func=cmd_ue)

    r = sub.add_parser("run", help="run a whole scenario")
    r.add_argument("scenario")
    r.add_argument("--duration", type=_duration, help="override the scenario duration")
    r.add_argument("--mode", choices=("vanilla", "optimized"))
    r.add_argument("--separate-processes", action="store_true", help="one OS process per UE")
    r.add_argument("--summary", help="write the run summary JSON here")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("gen-trace", help="generate or import a CIRT trace")
    t.add_argument("--profile", help="uma, umi, rma, a profile JSON path, synthetic-periodic or identity")
    speed = t.add_mutually_exclusive_group()
    speed.add_argument("--speed-kmh", type=float)
    speed.add_argument("--doppler-hz", type=float)
    t.add_argument("--duration", type=_duration, default=10.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--carrier", type=float, default=DEFAULT_CARRIER, help="carrier frequency in Hz")
    t.add_argument("--sample-rate", type=float, default=DEFAULT_SAMPLE_RATE)
    t.add_argument("--bins", type=int, help="delay bins (default: smallest grid covering the profile)")
    t.add_argument("--period", type=_duration, default=10.0, help="synthetic-periodic sweep period")
    t.add_argument("--snr", help="synthetic-periodic range HIGH:LOW in dB, e.g. 20:0")
    t.add_argument("--label")
    t.add_argument("--import", dest="import_file", help="import an external CIR instead of generating")
    t.add_argument("--import-format", default="csv-paths", choices=("csv-paths", "cirt"))
    t.add_argument("--no-sidecar", action="store_true", help="skip the .meta.json sidecar")
    t.add_argument("--out", "-o", required=True)
    t.set_defaults(func=cmd_gen_trace)

    i = sub.add_parser("inspect", help="summarize a CIRT trace")
    i.add_argument("trace")
    i.add_argument("--power-csv", help="write per-step total power to this CSV")
    i.add_argument("--json", action="store_true", help="print the summary as JSON")
    i.set_defaults(func=cmd_inspect)

    b = sub.add_parser("bench", help="slot-timing benchmark sweep")
    b.add_argument("--ues", type=_int_list, default=[1])
    b.add_argument("--taps", type=_int_list, default=[1, 10, 20])
    b.add_argument("--modes", default="vanilla,optimized")
    b.add_argument("--duration", type=_duration, default=10.0, help="per matrix cell")
    b.add_argument("--sparse-n", type=int, default=0)
    b.add_argument("--pinning", action="store_true", help="pin the gNB and two cores per UE")
    b.add_argument("--samples-per-slot", type=int, default=1920)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--echo-probes", type=int, default=100)
    b.add_argument("--out", help="report file (.json, .csv or .md)")
    b.add_argument("--format", choices=("json", "csv", "markdown"))
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    level = (args.log_level or os.environ.get("TINYTWIN_LOG") or "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, TraceFormatError) as exc:
        print(f"tinytwin: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        print("tinytwin: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except (TinyTwinError, OSError) as exc:
        print(f"tinytwin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
