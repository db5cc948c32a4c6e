"""Command line front end: solve, simulate, sweep, calibrate."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, simworld

_COMMON = dict(
    config=("--config", dict(metavar="PATH", help="YAML scenario config")),
    seed=("--seed", dict(type=int, metavar="U64", help="base seed override")),
    runs=("--runs", dict(type=int, metavar="N", help="Monte Carlo runs override")),
    out=("--out", dict(metavar="DIR", default="out", help="output directory")),
    policy=("--policy", dict(choices=harness.POLICIES, help="relay selection policy")),
    workers=("--workers", dict(type=int, default=1, metavar="N", help="parallel episode workers")),
)


def _add(parser: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        flag, kwargs = _COMMON[name]
        parser.add_argument(flag, **kwargs)


def _config_from_args(args) -> harness.ScenarioConfig:
    overrides = {
        "base_seed": getattr(args, "seed", None),
        "runs": getattr(args, "runs", None),
        "policy": getattr(args, "policy", None),
    }
    return harness.load_config(getattr(args, "config", None), overrides)


def _cmd_solve(args) -> int:
    config = _config_from_args(args)
    doc = harness.policy_document(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "policy.yaml"
    harness.write_policy_document(path, doc)
    st = doc["stationary"]
    print(f"indifference point: {doc['indifference']:.6f}")
    print(
        "stationary thresholds: reject below "
        f"{st['reject_below']:.6f}, accept above {st['accept_above']:.6f} "
        f"({'converged' if st['converged'] else 'NOT converged'} "
        f"after {st['iterations']} backups)"
    )
    print(
        f"run counts from prior {st['prior']}: "
        f"reject after {st['reject_run']} failures, "
        f"accept after {st['accept_run']} successes (cap {st['cap']})"
    )
    print(f"wrote {path}")
    return 0


def _cmd_simulate(args) -> int:
    config = _config_from_args(args)
    stats = harness.monte_carlo(config, workers=args.workers)
    paths = harness.emit_outputs(stats, args.out, config=config)
    print(
        f"{config.policy} x {config.runs} runs: "
        f"e2e {stats.mean('e2e_delay'):.3f} s, "
        f"exploration {stats.mean('exploration_time_total') * 1e3:.2f} ms, "
        f"switches {stats.mean('relay_switches'):.2f}, "
        f"no-decision {stats.no_decision_pct:.2f} %"
    )
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    config = _config_from_args(args)
    values = [int(v) for v in args.values.split(",") if v.strip() != ""]
    if not values:
        raise ValueError("--values must list at least one integer")
    policies = [args.policy] if args.policy else list(harness.POLICIES)
    result = harness.sweep(config, args.axis, values, policies=policies, workers=args.workers)
    paths = harness.emit_outputs(result, args.out)
    for value in result.values:
        for pol in result.policies:
            st = result.stats[(value, pol)]
            print(
                f"{args.axis}={value} {pol}: e2e {st.mean('e2e_delay'):.3f} s, "
                f"exploration {st.mean('exploration_time_total') * 1e3:.2f} ms, "
                f"switches {st.mean('relay_switches'):.2f}, "
                f"no-decision {st.no_decision_pct:.2f} %"
            )
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_calibrate(args) -> int:
    records = simworld.read_trace(args.traces)
    state_pairs, obs_pairs = simworld.trace_pairs(records)
    model = simworld.calibrate(state_pairs, obs_pairs)
    print(
        f"fitted channel: stay_good={model.stay_good:.4f} "
        f"turn_good={model.turn_good:.4f} ack_good={model.ack_good:.4f} "
        f"ack_bad={model.ack_bad:.4f}"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "channel.yaml"
        import yaml

        with open(path, "w") as fh:
            yaml.safe_dump(
                {
                    "channel": {
                        "stay_good": model.stay_good,
                        "turn_good": model.turn_good,
                        "ack_good": model.ack_good,
                        "ack_bad": model.ack_bad,
                    }
                },
                fh,
                sort_keys=True,
            )
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmrelay",
        description="Relay exploration policies and blockage simulation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="thresholds, run counts and policy document")
    _add(p, "config", "out")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo metrics for one scenario")
    _add(p, "config", "seed", "runs", "policy", "out", "workers")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="metric tables over M or D")
    p.add_argument("--axis", required=True, choices=("M", "D"))
    p.add_argument("--values", required=True, metavar="V1,V2,...")
    _add(p, "config", "seed", "runs", "policy", "out", "workers")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("calibrate", help="fit channel probabilities from a trace file")
    p.add_argument("--traces", required=True, metavar="CSV")
    p.add_argument("--out", metavar="DIR", default=None)
    p.set_defaults(func=_cmd_calibrate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
