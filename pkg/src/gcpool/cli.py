"""Command-line front end: ``gcpool {train,probe,gradcheck,schedule,robustness,compare}``.

Exit codes: 0 success, 1 invalid configuration, 2 numerical check failed, 3 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import gradcheck as gc
from .data import FormatError
from .net import NetworkError, load_checkpoint, save_checkpoint
from .optim import PRESETS, emit_schedule, schedule_from_name
from .probes import StepGrid, landscape_samples, quadratic_suffix
from .svg import chart_from_csv, line_chart, read_csv_columns

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class NumericalCheckFailed(RuntimeError):
    pass


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def write_manifest(out: Path, cfg: ex.RunConfig | None = None) -> None:
    """Record SHA-256 hashes of every output file next to the config and seed."""
    files = {}
    for p in sorted(out.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = {"files": files}
    if cfg is not None:
        manifest["seed"] = cfg.seed
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_config(args) -> ex.RunConfig:
    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {f.name: getattr(args, f.name, None) for f in fields(ex.RunConfig)}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ex.ConfigError([f"--set {item!r}: expected key=value"])
        overrides[key.strip().replace("-", "_")] = value.strip()
    return ex.RunConfig.from_ini(text, **overrides)


def _out_dir(args) -> Path:
    out = Path(args.out or "runs/latest")
    out.mkdir(parents=True, exist_ok=True)
    return out


def render_run_dir(out: Path, head: str = "") -> list[Path]:
    """Redraw every chart of a run directory from its persisted CSVs."""
    drawn = []
    conv = out / "convergence.csv"
    if conv.is_file():
        cols = read_csv_columns(conv.read_text())
        svg = line_chart({"train_loss": (cols.get("step", []), cols.get("train_loss", []))},
                         title=f"{head} training".strip(), xlabel="step", ylabel="train loss")
        drawn.append(_write(out, "convergence.svg", svg))
    probes = out / "probes.csv"
    if probes.is_file():
        text = probes.read_text()
        drawn.append(_write(out, "probes_loss.svg", chart_from_csv(
            text, "step", ["loss", "dl_min", "dl_max"], title=f"loss landscape {head}".strip(),
            ylabel="loss")))
        drawn.append(_write(out, "probes_grad.svg", chart_from_csv(
            text, "step", ["dg_min", "dg_max"], title=f"gradient predictiveness {head}".strip(),
            ylabel="gradient distance")))
    return drawn


def _save_run(out: Path, cfg: ex.RunConfig, result: ex.RunResult, probes: bool = False) -> None:
    _write(out, "config.ini", cfg.to_ini())
    _write(out, "convergence.csv", result.convergence_csv())
    if probes:
        _write(out, "probes.csv", result.probes.to_csv())
    save_checkpoint(result.net, out / "checkpoint.npz")
    render_run_dir(out, cfg.head)
    write_manifest(out, cfg)


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    result = ex.train(cfg, on_step=_progress(args))
    _save_run(out, cfg, result)
    if result.epoch_acc:
        print(f"final eval accuracy {result.epoch_acc[-1]:.4f} after {len(result.epoch_acc)} epochs")
    return EXIT_OK


def _progress(args):
    if not getattr(args, "verbose", False):
        return None

    def report(step, loss, acc):
        if acc is not None:
            print(f"step {step}: loss {loss:.4f} eval acc {acc:.4f}", file=sys.stderr)
    return report


def _quadratic_oracle(out: Path, grid: StepGrid, x: np.ndarray) -> int:
    etas = grid.etas()
    dl, dg = landscape_samples(quadratic_suffix, x, x.copy(), etas)
    nx2 = float(x @ x)
    dl_ref = 0.5 * (1 + etas) ** 2 * nx2
    dg_ref = etas * np.sqrt(nx2)
    lines = ["eta,dl,dl_closed,dg,dg_closed"]
    for row in zip(etas, dl, dl_ref, dg, dg_ref):
        lines.append(",".join(repr(float(v)) for v in row))
    _write(out, "oracle.csv", "\n".join(lines) + "\n")
    err = max(np.abs(dl - dl_ref).max(), np.abs(dg - dg_ref).max())
    print(f"quadratic oracle max abs error {err:.3e}")
    if err > 1e-12:
        raise NumericalCheckFailed(f"quadratic oracle mismatch {err:.3e}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    if args.oracle == "quadratic":
        _write(out, "config.ini", cfg.to_ini())
        code = _quadratic_oracle(out, cfg.grid(), np.array(args.x, dtype=np.float64))
        write_manifest(out, cfg)
        return code
    if not cfg.probe_every:
        cfg = ex.replace(cfg, probe_every=20)
    result = ex.run_probed_training(cfg, on_step=_progress(args))
    _save_run(out, cfg, result, probes=True)
    recs = result.probes.records
    print(f"{len(recs)} probe records; median loss range "
          f"{np.median([r.dl_range for r in recs]):.4e}, median gradient range "
          f"{np.median([r.dg_range for r in recs]):.4e}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    backward = gc.flipped_k_backward if args.mutate_k else gc.gcp_backward
    seed = 0 if args.seed is None else int(args.seed)
    results = gc.run_gradcheck(seed=seed, cases=args.cases, backward=backward)
    report = gc.format_report(results)
    print(report, end="")
    if args.out:
        out = _out_dir(args)
        _write(out, "gradcheck.csv", report)
        write_manifest(out)
    failed = [r for r in results if not r.passed]
    if failed:
        raise NumericalCheckFailed(f"{len(failed)} of {len(results)} cases exceed {gc.TOLERANCE}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    out = _out_dir(args)
    names = args.name or ["resnet-adju"]
    specs = {}
    for name in names:
        if name.startswith("poly:"):
            # poly:RHO-EF, the polynomial curves varied in the convergence study
            rho, _, ef = name[5:].partition("-")
            specs[name] = schedule_from_name("polynomial", l0=0.1, e_start=1,
                                             e_final=int(ef), power=float(rho))
        elif name in PRESETS:
            specs[name] = PRESETS[name]
        else:
            raise ex.ConfigError([f"schedule: unknown name {name!r}; "
                                  f"presets: {', '.join(PRESETS)} or poly:RHO-EF"])
    series = {}
    for name, spec in specs.items():
        text = emit_schedule(spec, args.horizon)
        fname = "schedule.csv" if len(specs) == 1 else f"schedule_{name.replace(':', '_')}.csv"
        _write(out, fname, text)
        cols = read_csv_columns(text)
        series[name] = (cols["epoch"], cols["lr"])
    _write(out, "schedule.svg", line_chart(series, title="learning-rate schedules",
                                           xlabel="epoch", ylabel="lr"))
    write_manifest(out)
    return EXIT_OK


def _json_safe(obj):
    # NaN marks an undefined ratio; strict JSON has no NaN, so emit null
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and obj != obj:
        return None
    return obj


def cmd_robustness(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args)
    for p in (args.model, args.baseline):
        if not Path(p).is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
    model = load_checkpoint(args.model)
    baseline = load_checkpoint(args.baseline)
    _, test = ex.load_data(cfg)
    report = ex.evaluate_robustness(model, baseline, test, seed=cfg.seed,
                                    perturb_length=cfg.perturb_length,
                                    n_sequences=cfg.robust_images)
    report["model"] = str(args.model)
    report["baseline"] = str(args.baseline)
    _write(out, "config.ini", cfg.to_ini())
    _write(out, "robustness.json", json.dumps(_json_safe(report), indent=2, sort_keys=True,
                                                  allow_nan=False) + "\n")
    _write(out, "robustness.csv", ex.robustness_csv(report))
    write_manifest(out, cfg)
    print(f"mCE {report['mce']:.1f}  relative mCE {report.get('relative_mce', float('nan')):.1f}"
          f"  mFR {report['mfr']:.1f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    out = _out_dir(args)
    runs = {}
    for label, d in (("A", args.run_a), ("B", args.run_b)):
        path = Path(d) / "convergence.csv"
        if not path.is_file():
            raise FileNotFoundError(f"run {label}: {path} not found")
        runs[label] = ex.read_epoch_accuracy(path.read_text())
    acc_a, acc_b = runs["A"], runs["B"]
    match = ex.matching_epoch(acc_a, acc_b)
    report = {"run_a": str(args.run_a), "run_b": str(args.run_b),
              "final_acc_a": acc_a[-1] if acc_a else None, "final_acc_b": acc_b[-1],
              "final_epoch_a": len(acc_a), "final_epoch_b": len(acc_b),
              "matching_epoch": match if match is not None else "none"}
    _write(out, "compare.json", json.dumps(report, indent=2) + "\n")
    series = {f"A: {args.run_a}": (list(range(1, len(acc_a) + 1)), acc_a),
              f"B: {args.run_b}": (list(range(1, len(acc_b) + 1)), acc_b)}
    _write(out, "compare.svg", line_chart(series, title="eval accuracy", xlabel="epoch",
                                          ylabel="accuracy"))
    write_manifest(out)
    print(f"matching epoch: {report['matching_epoch']} (B final epoch {len(acc_b)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key/value run configuration file ([run] section)")
    common.add_argument("--out", default=None, help="output directory (default runs/latest)")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    common.add_argument("--deterministic", action="store_true",
                        help="force single-threaded BLAS for reproducible output")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any configuration key")
    common.add_argument("-v", "--verbose", action="store_true")
    for f in fields(ex.RunConfig):
        common.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                            help=argparse.SUPPRESS if f.name != "seed" else "random seed")

    parser = argparse.ArgumentParser(prog="gcpool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a network")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", parents=[common], help="train while probing the landscape")
    p.add_argument("--oracle", choices=["quadratic"], help="probe a closed-form loss instead")
    p.add_argument("--x", type=float, nargs="+", default=[1.0, 0.0],
                   help="point for the quadratic oracle")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of GCP backward")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--mutate-k", action="store_true",
                   help="negate K to confirm the check detects a wrong gradient")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("schedule", parents=[common], help="dump learning-rate schedules")
    p.add_argument("--name", action="append",
                   help=f"preset ({', '.join(PRESETS)}) or poly:RHO-EF; repeatable")
    p.add_argument("--horizon", type=int, default=100)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("robustness", parents=[common], help="corruption and flip-rate report")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--baseline", required=True, help="baseline checkpoint")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("compare", parents=[common], help="matching-epoch comparison of two runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.set_defaults(func=cmd_compare)
    return parser


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(args):
            return args.func(args)
    except ex.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalCheckFailed as exc:
        print(f"numerical check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError, NetworkError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
