"""Command-line interface: ``krflow <subcommand>``.

Exit status: 0 on success, 1 on configuration or numerical errors, 2 when
a monitor or certificate fails.  The worker-pool size of the Monte-Carlo
checks is read from the WORKERS environment variable.
"""

import argparse
import os
import sys

import numpy as np

from . import analysis
from . import io as kio
from .constants import (
    C_N_DEFAULT,
    StabilityBudget,
    admissibility_certificate,
    beta_invariant_estimate,
    budget_table,
    energy_relative_to_fs,
)
from .errors import KRFlowError, StiffnessError
from .flow import (
    MONITOR_COLUMNS,
    SERIES_COLUMNS,
    FlowConfig,
    FlowState,
    continuation_driver,
    convergence_detector,
    doubling_time_monitor,
    pinching_window_check,
    profile_row,
    run_flow,
)
from .geometry import ChartProfile, momentum_data, riem_sup_norm

EXIT_OK, EXIT_ERROR, EXIT_MONITOR = 0, 1, 2
LAMBDA_MARGIN = 1.1


class MonitorFailure(Exception):
    pass


def _out_dir(args, default):
    d = args.out or default
    os.makedirs(d, exist_ok=True)
    return d


def _load_config(args):
    cfg = kio.RunConfig.load(args.config) if args.config else kio.RunConfig.from_dict({"format_version": kio.FORMAT_VERSION, "manifold": {"n": args.n}})
    return cfg.override(seed=args.seed, nodes=args.grid_nodes, t_end=args.t_end, directory=args.out)


def _input_profile(args):
    """Profile from a snapshot path, else the initial profile of the config."""
    if getattr(args, "snapshot", None):
        P, doc = kio.read_snapshot(args.snapshot)
        return P, doc.get("t")
    cfg = _load_config(args)
    return cfg.flow_config().initial_profile(), 0.0


def _budget(P, delta, Lambda, c_n):
    if Lambda is None:
        Lambda = LAMBDA_MARGIN * riem_sup_norm(P)
    return StabilityBudget(P.n, delta, Lambda, c_n)


# --------------------------------------------------------------------------
# flow


def _monitor_verdicts(cfg, fc, P0, budget, series, monitors):
    names = cfg.monitors
    out = {}
    t = np.array([r["t"] for r in series])
    if "doubling_time" in names:
        riem = np.array([r["riem_sup"] for r in series])
        out["doubling_time"] = doubling_time_monitor(t, riem, budget.Lambda)
    if "convergence" in names:
        r0 = np.array([m["ric0_max"] for m in monitors])
        v = convergence_detector(t, r0, floor=fc.convergence_floor)
        v["ok"] = True
        v["beta"] = beta_invariant_estimate(r0)
        out["convergence"] = v
    if "pinching_window" in names:
        six_T = 6 * budget.T
        fine = FlowConfig(**{**fc.__dict__, "t_end": six_T, "cadence": six_T / 60, "record_analysis": False, "stop_on_convergence": False})
        res = run_flow(fine, psi_ref=P0.psi)
        col = res.column
        out["pinching_window"] = pinching_window_check(
            col("t"), col("l2_ric0"), col("ric0_max"), col("Q0_max"), col("E1"), budget, eps_n=fc.eps_n
        )
    if "continuation" in names:
        v = continuation_driver(fc, budget)
        v.pop("series", None)
        v.pop("monitors", None)
        out["continuation"] = v
    return out


def _failure_names(verdicts):
    bad = []
    for name, v in verdicts.items():
        if v.get("ok", True):
            continue
        detail = v.get("failed") or [k for k, ok in v.get("checks", {}).items() if not ok] or v.get("reason") or v.get("failure")
        bad.append(f"{name} ({detail})" if detail else name)
    return bad


def cmd_flow(args):
    cfg = _load_config(args)
    fc = cfg.flow_config()
    run_dir = _out_dir(args, cfg.data["output"]["directory"])
    kio.write_json(os.path.join(run_dir, "config.json"), cfg.data)
    P0 = fc.initial_profile()
    kio.write_snapshot(os.path.join(run_dir, "snapshot_initial.json"), P0, t=0.0)
    bud = cfg.data["budget"]
    budget = _budget(P0, bud["delta"], bud["Lambda"], bud["c_n"])
    verdicts = {}
    if "certificate" in cfg.monitors:
        verdicts["certificate"] = admissibility_certificate(P0, budget, E1_ref=0.0)

    series_path = os.path.join(run_dir, "series.csv")
    mon_path = os.path.join(run_dir, "monitors.csv")
    ckpt_path = os.path.join(run_dir, "checkpoint.json")
    state, mode = None, "w"
    if args.resume:
        state, _ = kio.read_checkpoint(ckpt_path, cfg.hash)
        kio.truncate_series(series_path, SERIES_COLUMNS, state.t)
        kio.truncate_series(mon_path, MONITOR_COLUMNS, state.t, kind="monitors")
        mode = "a"
    every = cfg.data["flow"]["checkpoint_every"]
    ws = kio.SeriesWriter(series_path, SERIES_COLUMNS, "series", mode)
    wm = kio.SeriesWriter(mon_path, MONITOR_COLUMNS, "monitors", mode)

    def callback(st, row, mon):
        ws.write(row)
        wm.write(mon)
        tick = int(round(st.t / fc.cadence))
        if every and tick % every == 0:
            kio.write_checkpoint(ckpt_path, st, fc.n, cfg.hash, tick)

    try:
        result = run_flow(fc, state=state, psi_ref=P0.psi, callback=callback)
    except StiffnessError as exc:
        kio.write_json(os.path.join(run_dir, "stiffness_dump.json"), {"format_version": kio.FORMAT_VERSION, "error": str(exc), "state": exc.state})
        raise
    finally:
        ws.close()
        wm.close()
    final = result.state
    kio.write_snapshot(os.path.join(run_dir, "snapshot_final.json"), final.profile(fc.n), t=final.t)
    _, series = kio.read_series_csv(series_path)
    _, monitors = kio.read_series_csv(mon_path)
    verdicts.update(_monitor_verdicts(cfg, fc, P0, budget, series, monitors))
    failed = _failure_names(verdicts)
    doc = {
        "format_version": kio.FORMAT_VERSION,
        "kind": "verdicts",
        "stopped": result.stopped,
        "budget": budget.as_dict(),
        "max_phi": max(m["phi_max"] for m in monitors),
        "monitors": verdicts,
        "failed": failed,
    }
    kio.write_json(os.path.join(run_dir, "verdicts.json"), doc)
    kio.write_manifest(run_dir, "flow", cfg.hash)
    print(f"flow: t = {final.t:.6g}, {len(series)} records, stopped at {result.stopped}; output in {run_dir}")
    if failed:
        raise MonitorFailure("monitor failure: " + "; ".join(map(str, failed)))
    return EXIT_OK


# --------------------------------------------------------------------------
# one-shot diagnostics


def cmd_analyze(args):
    P, doc = kio.read_snapshot(args.snapshot)
    t = doc.get("t") or 0.0
    run_dir = _out_dir(args, "analysis")
    dig = analysis.digest(P).as_dict()
    energies = {f"E{k}": energy_relative_to_fs(P, k) for k in range(P.n + 1)}
    if isinstance(P, ChartProfile):
        row = profile_row(P, t)
    else:
        from .functionals import l2_pinching
        from .geometry import ricci_lower_bound

        row = {"t": t, "E0": energies["E0"], "E1": energies["E1"], **l2_pinching(P.geometry), "ric_min": ricci_lower_bound(P), "riem_sup": riem_sup_norm(P), "diameter": dig["diameter"], "lambda1": dig["lambda1"]}
    row.pop("dE1_formula", None)
    kio.write_json(os.path.join(run_dir, "digest.json"), {"format_version": kio.FORMAT_VERSION, "kind": "geometry_digest", "t": t, **dig})
    kio.write_json(os.path.join(run_dir, "energy.json"), {"format_version": kio.FORMAT_VERSION, "kind": "energy_report", "t": t, "row": row, "Ek": energies})
    kio.write_manifest(run_dir, "analyze")
    print(kio.dumps({"digest": dig, "row": row}), end="")
    return EXIT_OK


def cmd_constants(args):
    rows = budget_table(args.n, args.delta, args.Lambda, args.c_n)
    if args.format == "json":
        doc = {"format_version": kio.FORMAT_VERSION, "kind": "budget_table", "c_n_note": "c(n) is an unspecified universal constant; value is a configuration default", "rows": dict(rows)}
        text = kio.dumps(doc)
    else:
        width = max(len(r[0]) for r in rows)
        text = "".join(f"{k:<{width}}  {v if isinstance(v, str) else kio.format_float(v) if isinstance(v, float) else v}\n" for k, v in rows)
    sys.stdout.write(text)
    if args.out:
        d = _out_dir(args, args.out)
        with open(os.path.join(d, f"constants.{'json' if args.format == 'json' else 'txt'}"), "w", encoding="utf-8") as fh:
            fh.write(text)
        kio.write_manifest(d, "constants")
    return EXIT_OK


def cmd_certify(args):
    P, t = _input_profile(args)
    budget = _budget(P, args.delta, args.Lambda, args.c_n)
    cert = admissibility_certificate(P, budget, E1_ref=0.0)
    d = _out_dir(args, "certify")
    kio.write_json(os.path.join(d, "certificate.json"), {"format_version": kio.FORMAT_VERSION, "kind": "certificate", "t": t, **cert})
    kio.write_manifest(d, "certify")
    print(kio.dumps({"ok": cert["ok"], "checks": cert["checks"], "margins": cert["margins"]}), end="")
    if not cert["ok"]:
        failed = [k for k, ok in cert["checks"].items() if not ok]
        raise MonitorFailure("certificate failed: " + ", ".join(failed))
    return EXIT_OK


def cmd_spectrum(args):
    P, t = _input_profile(args)
    tau, phi, dphi, _ = momentum_data(P)
    lam = analysis.lambda1_from_momentum(P.n, tau, phi, dphi)
    D = analysis.diameter_from_momentum(P.n, tau, phi, dphi)["diameter"]
    doc = {
        "format_version": kio.FORMAT_VERSION,
        "kind": "spectrum",
        "t": t,
        **lam,
        "oracle": analysis.lambda1_oracle(P.n, tau, phi, dphi),
        "diameter": D,
        "liyau_bound": analysis.liyau_bound(D),
        "poincare_proxy": 1.0 / lam["lambda1"],
    }
    d = _out_dir(args, "spectrum")
    kio.write_json(os.path.join(d, "spectrum.json"), doc)
    kio.write_manifest(d, "spectrum")
    print(kio.dumps(doc), end="")
    return EXIT_OK


def cmd_segment_check(args):
    P, t = _input_profile(args)
    rep = analysis.segment_inequality_check(P, r=args.r, samples=args.samples, seed=args.seed or 0)
    d = _out_dir(args, "segment")
    kio.write_json(os.path.join(d, "segment_report.json"), {"format_version": kio.FORMAT_VERSION, "kind": "segment_report", "t": t, **rep})
    kio.write_manifest(d, "segment-check")
    print(kio.dumps(rep), end="")
    if not rep["holds"] or rep["flagged"]:
        raise MonitorFailure("segment inequality " + ("violated" if not rep["holds"] else "flagged: more than 5% of pairs skipped"))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the perturbation / sampling seed")
    common.add_argument("--grid-nodes", type=int, help="override grid.nodes")
    common.add_argument("--t-end", type=float, help="override flow.t_end")
    common.add_argument("--n", type=int, default=1, help="dimension when no config is given")

    p = argparse.ArgumentParser(prog="krflow", description="Kähler-Ricci flow of U(n)-invariant metrics on CP^n.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("flow", parents=[common], help="integrate the flow and run monitors")
    f.add_argument("--resume", action="store_true", help="continue from checkpoint.json in the output directory")
    f.set_defaults(func=cmd_flow)

    a = sub.add_parser("analyze", parents=[common], help="diagnostics of a profile snapshot")
    a.add_argument("snapshot")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("constants", parents=[common], help="print the stability budget table")
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--Lambda", type=float, required=True)
    c.add_argument("--c-n", type=float, default=C_N_DEFAULT)
    c.add_argument("--format", choices=("text", "json"), default="text")
    c.set_defaults(func=cmd_constants)

    for name, func, helptext in (
        ("certify", cmd_certify, "admissibility certificate of a profile"),
        ("spectrum", cmd_spectrum, "first eigenvalue and Li-Yau bound"),
        ("segment-check", cmd_segment_check, "Monte-Carlo segment inequality (n = 1)"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("snapshot", nargs="?", help="profile snapshot; defaults to the config's initial profile")
        if name == "certify":
            s.add_argument("--delta", type=float, default=0.5)
            s.add_argument("--Lambda", type=float, default=None)
            s.add_argument("--c-n", type=float, default=C_N_DEFAULT)
        if name == "segment-check":
            s.add_argument("--r", type=float, default=0.2)
            s.add_argument("--samples", type=int, default=500)
        s.set_defaults(func=func)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MonitorFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MONITOR
    except (KRFlowError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
