"""Command-line entry point: train, compare, calibrate, gradcheck, serve, defaults.

Exit codes: 0 success, 1 check failed, 2 usage or bad config, 3 missing
artifact, 4 I/O error, 5 address already in use.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import nn
from .calibration import calibrate_usage_model, load_targets
from .config import ConfigError, dump_config, load_config
from .extender import ExtenderService, listen_address, make_server
from .harness import ALL_POLICIES, compare_all
from .report import ReportIOError, emit_report
from .schedulers import PolicyKind, SchedulerPolicy, make_policy, train_policy

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_IO, EXIT_BIND = 0, 1, 2, 3, 4, 5
GRADCHECK_TOL = 1e-4
MIN_TARGETS = 3

log = logging.getLogger("kubesdqn")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _scenario(path: Optional[str]):
    try:
        return load_config(path)
    except ConfigError as e:
        raise CliError(str(e), EXIT_USAGE) from None
    except OSError as e:
        raise CliError(f"cannot read config {path}: {e.strerror}", EXIT_MISSING) from None


def _policy_kind(name: str) -> PolicyKind:
    try:
        return PolicyKind(name)
    except ValueError:
        choices = ", ".join(k.value for k in PolicyKind)
        raise CliError(f"unknown policy {name!r} (choose from {choices})", EXIT_USAGE) from None


def weights_file(directory: str | Path, kind: PolicyKind) -> Path:
    return Path(directory) / f"{kind.value}.weights"


def cmd_train(args) -> int:
    scenario = _scenario(args.config)
    kind = _policy_kind(args.policy)
    if not kind.learned:
        raise CliError(f"{kind.value}: policy is not trainable", EXIT_USAGE)
    out = Path(args.out_weights)
    curve_path = Path(args.curve) if args.curve else out.with_name(out.name + ".curve.csv")
    for path in (out, curve_path):
        if not path.absolute().parent.is_dir():
            raise CliError(f"cannot write {path}: directory does not exist", EXIT_IO)
    training = scenario.training
    policy = make_policy(kind, seed=training.seed, reward_cfg=scenario.reward, training=training)
    policy, curve = train_policy(policy, scenario, training)
    try:
        version = nn.save_weights(policy.params, out)
        with curve_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "epsilon", "mean_reward", "mean_loss"])
            for i, (eps, rew, loss) in enumerate(zip(curve.epsilon, curve.mean_reward, curve.mean_loss)):
                w.writerow([i, f"{eps:.6f}", f"{rew:.6f}", f"{loss:.6f}"])
    except OSError as e:
        raise CliError(f"cannot write {e.filename or out}: {e.strerror}", EXIT_IO) from None
    print(f"trained {kind.value} for {training.episodes} episodes; weights {out} (version {version}); curve {curve_path}")
    return EXIT_OK


def _load_policies(directory: str, scenario) -> dict[str, SchedulerPolicy]:
    policies = {}
    for kind in ALL_POLICIES:
        if not kind.learned:
            continue
        path = weights_file(directory, kind)
        if not path.exists():
            raise CliError(f"missing weights for policy {kind.value}: {path}", EXIT_MISSING)
        try:
            store = nn.load_weights(path)
            policies[kind.value] = SchedulerPolicy(kind, store, scenario.reward, scenario.training)
        except ValueError as e:
            raise CliError(f"invalid weights for policy {kind.value}: {e}", EXIT_MISSING) from None
    return policies


def cmd_compare(args) -> int:
    scenario = _scenario(args.config)
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise CliError(f"output path is not a directory: {out}", EXIT_IO)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create {out}: {e.strerror}", EXIT_IO) from None
    policies = _load_policies(args.weights_dir, scenario) if args.weights_dir else None
    comparison = compare_all(scenario, policies, workers=args.workers)
    try:
        emit_report(comparison.reports, "csv", out / "report.csv")
        emit_report(comparison.reports, "json", out / "report.json")
    except ReportIOError as e:
        raise CliError(str(e), EXIT_IO) from None
    print(f"{'rank':<5}{'scheduler':<13}{'mean_cpu':>9}{'cv_pct':>8}  distribution(trial 1)")
    for rank, (name, mean) in enumerate(comparison.ranking, 1):
        r = comparison.report(name)
        print(f"{rank:<5}{name:<13}{mean:>9.2f}{r.cv_pct:>8.2f}  {r.trials[0].pod_counts}")
    print(f"reports written to {out}/report.csv and {out}/report.json")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    scenario = _scenario(args.config)
    try:
        targets = load_targets(args.targets, include_suspect=args.include_suspect)
    except OSError as e:
        raise CliError(f"cannot read targets {args.targets}: {e.strerror}", EXIT_MISSING) from None
    except (ValueError, KeyError, TypeError) as e:
        raise CliError(f"malformed targets file {args.targets}: {e}", EXIT_USAGE) from None
    if len(targets) < MIN_TARGETS:
        raise CliError(f"need at least {MIN_TARGETS} calibration targets, got {len(targets)}", EXIT_USAGE)
    capacities = [n.cpu_capacity for n in scenario.nodes]
    try:
        result = calibrate_usage_model(targets, capacities, base=scenario.usage_model)
    except ValueError as e:
        raise CliError(str(e), EXIT_USAGE) from None
    p = result.params
    print(f"idle_pct={p.idle_pct} activation_pct={p.activation_pct} colocation_discount={p.colocation_discount} "
          f"cpu_demand={result.cpu_demand}")
    print(f"rmse={result.rmse:.4f} over {len(targets)} targets")
    for t, pred in zip(targets, result.predictions):
        print(f"  {t.source or list(t.distribution)}: target {t.avg_cpu:.2f} model {pred:.2f}")
    if args.out:
        doc = {
            "usage_model": {
                "idle_pct": p.idle_pct,
                "activation_pct": p.activation_pct,
                "colocation_discount": p.colocation_discount,
                "discount_cap": p.discount_cap,
                "contention_threshold": p.contention_threshold,
                "contention_gain": p.contention_gain,
                "noise_sigma": p.noise_sigma,
            },
            "batch": {"cpu_demand": result.cpu_demand},
        }
        try:
            Path(args.out).write_text(f"# calibration rmse {result.rmse:.4f}\n" + yaml.safe_dump(doc, sort_keys=False))
        except OSError as e:
            raise CliError(f"cannot write {args.out}: {e.strerror}", EXIT_IO) from None
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        kind = nn.ScorerKind(args.kind)
    except ValueError:
        raise CliError(f"unknown kind {args.kind!r} (choose from mlp, lstm, transformer)", EXIT_USAGE) from None
    err = nn.check_gradients(kind, args.seed)
    ok = err < GRADCHECK_TOL
    print(f"{kind.value} seed {args.seed}: max relative error {err:.3e} ({'ok' if ok else 'FAILED'})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_serve(args) -> int:
    scenario = _scenario(args.config)
    kind = _policy_kind(args.policy)
    weights = args.weights or _env_weights()
    service = ExtenderService(kind.value, weights, scenario.usage_model, scenario.reward, scenario.training)
    try:
        service.load()
    except FileNotFoundError as e:
        raise CliError(f"missing weights: {e.filename or e}", EXIT_MISSING) from None
    except (OSError, ValueError) as e:
        raise CliError(f"cannot load weights {weights}: {e}", EXIT_MISSING) from None
    listen = listen_address(args.listen)
    try:
        server = make_server(service, listen)
    except ValueError as e:
        raise CliError(str(e), EXIT_USAGE) from None
    except OSError as e:
        raise CliError(f"cannot bind {listen}: {e.strerror}", EXIT_BIND) from None

    def stop(signum, frame):
        log.info("signal %d: shutting down", signum)
        threading.Thread(target=server.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    service.watch(args.reload_interval)
    host, port = server.server_address[:2]
    log.info("serving %s (weights %s) on %s:%d", kind.value, service.snapshot.version, host, port)
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    finally:
        service.stop()
        server.server_close()
    return EXIT_OK


def _env_weights() -> Optional[str]:
    return os.environ.get("SDQN_WEIGHTS")


def cmd_defaults(args) -> int:
    sys.stdout.write(dump_config(load_config(None)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kubesdqn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    policies = [k.value for k in PolicyKind]

    p = sub.add_parser("train", help="train a learned policy and save its weights")
    p.add_argument("--config", help="YAML scenario file (defaults apply when omitted)")
    p.add_argument("--policy", required=True, help=f"one of {', '.join(k.value for k in PolicyKind if k.learned)}")
    p.add_argument("--out-weights", required=True, help="weights file to write")
    p.add_argument("--curve", help="learning-curve CSV (default: <out-weights>.curve.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="run every policy on the scenario and rank them")
    p.add_argument("--config", help="YAML scenario file")
    p.add_argument("--weights-dir", help="directory with <policy>.weights files; learned policies are trained in-process when omitted")
    p.add_argument("--out", default="reports", help="output directory for report.csv and report.json (default: reports)")
    p.add_argument("--workers", type=int, default=1, help="parallel trials per policy (default: 1)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="fit the usage model to measured averages")
    p.add_argument("--targets", help="targets JSON file (default: bundled measurements)")
    p.add_argument("--out", help="write a usage_model/batch section mergeable into a config file")
    p.add_argument("--config", help="YAML scenario file supplying the node roster")
    p.add_argument("--include-suspect", action="store_true", help="keep targets flagged as suspect")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("gradcheck", help="finite-difference check of a scorer's backward pass")
    p.add_argument("--kind", default="mlp", help="mlp, lstm or transformer (default: mlp)")
    p.add_argument("--seed", type=int, default=0, help="parameter/input seed (default: 0)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the scheduler-extender HTTP service")
    p.add_argument("--policy", required=True, help=f"one of {', '.join(policies)}")
    p.add_argument("--weights", help="weights file (or SDQN_WEIGHTS); required for learned policies")
    p.add_argument("--listen", help="host:port (or SDQN_LISTEN; default 127.0.0.1:8878)")
    p.add_argument("--config", help="YAML scenario file supplying usage model and reward settings")
    p.add_argument("--reload-interval", type=float, default=1.0, help="seconds between weight-file checks (default: 1)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("defaults", help="print the default configuration as YAML")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as e:
        print(f"kubesdqn {args.command}: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
