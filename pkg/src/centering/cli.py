"""Command-line interface: ``centering <subcommand> ...``.

Subcommands: gen-data, train, eval, ais-eval, sweep. Any flag can also come
from a JSON file given with ``--config``; flags on the command line win.
The number of parallel trial workers is read from ``CENTERING_WORKERS``.

Exit codes: 0 success, 1 I/O or runtime error, 2 usage error, 3 model too
large for exact evaluation.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from pathlib import Path

from centering.ais import AisConfig, estimate_log_partition
from centering.datasets import (
    Dataset,
    flip_dataset,
    generate_bars_stripes,
    generate_shifting_bar,
    ll_upper_bound,
    read_csv,
    write_csv,
)
from centering.exact import CapacityError, log_likelihood_exact, log_partition, log_prob_x
from centering.io import load_model, save_model, write_metrics
from centering.policy import PolicyParseError, format_policy, parse_policy
from centering.rbm import logit
from centering.trainer import METRIC_COLUMNS, TrainConfig, run_experiment

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CAPACITY = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_ERROR):
        super().__init__(msg)
        self.code = code


def load_dataset(source: str, ll_convention: str | None = None) -> Dataset:
    """A CSV path or a built-in set: ``bars-stripes:D``, ``shifting-bar:N:B``,
    optionally prefixed by ``flipped-``."""
    path = Path(source)
    if path.exists():
        return read_csv(path, ll_convention=ll_convention or "mean")
    flipped = source.startswith("flipped-")
    name, *args = (source[len("flipped-"):] if flipped else source).split(":")
    try:
        nums = [int(a) for a in args]
        if name == "bars-stripes" and len(nums) == 1:
            d = generate_bars_stripes(nums[0])
        elif name == "shifting-bar" and len(nums) == 2:
            d = generate_shifting_bar(*nums)
        else:
            raise CliError(f"unknown dataset {source!r}; use a CSV path, bars-stripes:D "
                           "or shifting-bar:N:B", EXIT_USAGE)
    except ValueError as exc:
        raise CliError(f"bad dataset {source!r}: {exc}", EXIT_USAGE) from exc
    d = flip_dataset(d) if flipped else d
    if ll_convention:
        d.ll_convention = ll_convention
    return d


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="CSV path or built-in dataset name")
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--policy", default="dd_s^l")
    p.add_argument("--sampler", default="pt-10")
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--nu", type=float, default=0.01, help="sliding factor used by _s policies")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--updates", type=int, default=50_000)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias-init", choices=("inverse_sigmoid", "zero"), default="inverse_sigmoid")
    p.add_argument("--update-rule", choices=("centered", "centered_gradient", "natural"),
                   default="centered")
    p.add_argument("--track-angles", action="store_true")
    p.add_argument("--ll-convention", choices=("sum", "mean"), default=None)
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="centering", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--config")
    g.add_argument("--dataset", required=False, help="bars-stripes:D or shifting-bar:N:B")
    g.add_argument("--out", required=False)
    g.add_argument("--no-header", action="store_true")

    t = sub.add_parser("train", help="train RBMs and write metrics, summary and model")
    t.add_argument("--config")
    _add_train_flags(t)
    t.add_argument("--out-dir", default="run")

    e = sub.add_parser("eval", help="exact log-likelihood of a model on a dataset")
    e.add_argument("--config")
    e.add_argument("--model")
    e.add_argument("--data")
    e.add_argument("--ll-convention", choices=("sum", "mean"), default=None)
    e.add_argument("--ais", action="store_true", help="use AIS for ln Z")
    e.add_argument("--intermediate", type=int, default=1000)
    e.add_argument("--runs", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("ais-eval", help="AIS estimate of ln Z for a model")
    a.add_argument("--config")
    a.add_argument("--model")
    a.add_argument("--data", help="dataset whose mean sets the base-rate biases")
    a.add_argument("--intermediate", type=int, default=1000)
    a.add_argument("--runs", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sweep", help="run a grid of policies x samplers x learning rates")
    s.add_argument("--config")
    _add_train_flags(s)
    s.add_argument("--policies", nargs="+")
    s.add_argument("--samplers", nargs="+")
    s.add_argument("--etas", nargs="+", type=float)
    s.add_argument("--out-dir", default="sweep")
    return ap


def parse_args(argv) -> argparse.Namespace:
    """Parse twice: once to find ``--config``, then with its values as defaults."""
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_USAGE) from exc
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - known
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}", EXIT_USAGE)
        sub.set_defaults(**cfg)
        args = ap.parse_args(argv)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise CliError("missing required option(s): " + ", ".join("--" + m.replace("_", "-")
                                                                  for m in missing), EXIT_USAGE)


def cmd_gen_data(args) -> int:
    _require(args, "dataset", "out")
    d = load_dataset(args.dataset)
    write_csv(d, args.out, header=not args.no_header)
    print(f"wrote {d.total_weight} samples ({d.patterns.shape[0]} distinct) to {args.out}")
    return EXIT_OK


def _config_from(args, eta=None, sampler=None) -> TrainConfig:
    return TrainConfig(n_hidden=args.hidden, eta=args.eta if eta is None else eta,
                       sampler=args.sampler if sampler is None else sampler,
                       batch_size=args.batch_size, n_updates=args.updates,
                       eval_every=args.eval_every, seed=args.seed, bias_init=args.bias_init,
                       update_rule=args.update_rule, track_angles=args.track_angles)


def run_cell(d: Dataset, args, policy_name: str, sampler: str, eta: float, out_dir: Path) -> dict:
    """One training run: metrics.csv, summary.json and model.json in ``out_dir``."""
    if args.trials < 1:
        raise CliError("trials must be >= 1", EXIT_USAGE)
    try:
        policy = parse_policy(policy_name, sliding=args.nu)
        config = _config_from(args, eta, sampler)
    except (PolicyParseError, ValueError) as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    res = run_experiment(d, config, policy, args.trials, workers=args.workers,
                         name=f"{policy_name} {sampler} {eta}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(out_dir / "metrics.csv", res.rows, METRIC_COLUMNS)
    summ = res.summary()
    info = {"dataset": d.name, "policy": format_policy(policy), "sampler": sampler, "eta": eta,
            "trials": args.trials, "updates": args.updates, "seed": args.seed,
            "summary": summ.format(), "max_mean_ll": summ.max_mean, "std_at_max": summ.std_at_max,
            "final_mean_ll": summ.final_mean, "update_at_max": summ.update_at_max,
            "per_trial_max": res.per_trial_max().tolist(),
            "ll_upper_bound": ll_upper_bound(d)}
    save_model(out_dir / "model.json", res.final_params[0], rng_seed=args.seed,
               provenance={k: info[k] for k in ("dataset", "policy", "sampler", "eta",
                                                "updates", "seed")} | {"trial": 0})
    # written last: its presence marks the cell as complete
    (out_dir / "summary.json").write_text(json.dumps(info, indent=1) + "\n")
    return info


def cmd_train(args) -> int:
    _require(args, "data")
    d = load_dataset(args.data, args.ll_convention)
    info = run_cell(d, args, args.policy, args.sampler, args.eta, Path(args.out_dir))
    print(f"{info['policy']} {info['sampler']} eta={info['eta']}: {info['summary']}")
    return EXIT_OK


def _sweep_cells(args):
    return list(itertools.product(args.policies or [args.policy], args.samplers or [args.sampler],
                                  args.etas or [args.eta]))


def _cell_dir(root: Path, policy: str, sampler: str, eta: float) -> Path:
    safe = policy.replace("^", "").replace("_", "")
    return root / f"{safe}__{sampler}__eta{eta:g}"


def cmd_sweep(args) -> int:
    _require(args, "data")
    d = load_dataset(args.data, args.ll_convention)
    root = Path(args.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    table, failed = [], 0
    for policy, sampler, eta in _sweep_cells(args):
        cell = _cell_dir(root, policy, sampler, eta)
        done = cell / "summary.json"
        try:
            if done.exists():
                info = json.loads(done.read_text())
            else:
                info = run_cell(d, args, policy, sampler, eta, cell)
            table.append({"policy": policy, "sampler": sampler, "eta": eta,
                          "summary": info["summary"], "max_mean_ll": info["max_mean_ll"],
                          "final_mean_ll": info["final_mean_ll"], "status": "ok"})
        except Exception as exc:  # isolate failures per cell
            failed += 1
            table.append({"policy": policy, "sampler": sampler, "eta": eta, "summary": "",
                          "max_mean_ll": float("nan"), "final_mean_ll": float("nan"),
                          "status": f"error: {exc}"})
        print(f"{policy:>8} {sampler:>6} {eta:<6g} {table[-1]['summary'] or table[-1]['status']}")
    cols = ["policy", "sampler", "eta", "summary", "max_mean_ll", "final_mean_ll", "status"]
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(table)
    return EXIT_ERROR if failed else EXIT_OK


def _load_rbm(path):
    try:
        p, _, _ = load_model(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read model {path}: {exc}") from exc
    return p


def cmd_eval(args) -> int:
    _require(args, "model", "data")
    p = _load_rbm(args.model)
    d = load_dataset(args.data, args.ll_convention)
    if args.ais:
        res = estimate_log_partition(p, AisConfig(args.intermediate, args.runs,
                                                  logit(d.mean())), args.seed)
        lp = log_prob_x(p, d.patterns, res.log_z)
        ll = float(d.weights @ lp)
        ll = ll / d.total_weight if d.ll_convention == "mean" else ll
        print(f"log_likelihood_ais {ll:.6f}")
        print(f"log_partition_ais {res.log_z:.6f} +- {res.stderr:.6f}")
        return EXIT_OK
    try:
        log_z = log_partition(p)
    except CapacityError as exc:
        raise CliError(f"{exc}; rerun with --ais", EXIT_CAPACITY) from exc
    print(f"log_likelihood {log_likelihood_exact(p, d, log_z):.6f}")
    print(f"log_partition {log_z:.6f}")
    print(f"upper_bound {ll_upper_bound(d):.6f}")
    return EXIT_OK


def cmd_ais_eval(args) -> int:
    _require(args, "model")
    p = _load_rbm(args.model)
    base = logit(load_dataset(args.data).mean()) if args.data else None
    res = estimate_log_partition(p, AisConfig(args.intermediate, args.runs, base), args.seed)
    print(f"log_partition_ais {res.log_z:.6f} +- {res.stderr:.6f}"
          + (" (degenerate weights)" if res.degenerate else ""))
    try:
        print(f"log_partition_exact {log_partition(p):.6f}")
    except CapacityError:
        pass
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "ais-eval": cmd_ais_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
