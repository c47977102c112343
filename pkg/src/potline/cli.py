"""CLI interface for potline."""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    common_structures,
    extract_structure,
    frequency_table,
    matrix_op_count,
    region_bounds,
    structure_signature,
    to_dot,
)
from .config import ExperimentConfig, config_hash, load_config
from .errors import ConfigError, PotlineError, exit_code_for
from .eventlog import RunEvent, log_path, read_events, write_event
from .evaluate import SimulatorOracle, evaluate_population, forecast_bands
from .excitation import build_dataset, simulate_many
from .models import OUTPUT_NAMES, provenance
from .nn import TrainedModel, sparsity_report
from . import plots
from .storage import (
    Layout,
    load_dataset,
    load_models,
    load_split,
    remove_stale,
    save_dataset,
    save_model,
    save_series,
    write_json,
    write_table,
)


def _run_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="Experiment TOML file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="Base seed (overrides the config)")
    common.add_argument("--out", help="Output directory (overrides the config)")
    common.add_argument("-j", "--jobs", type=int, default=1, help="Worker processes (default: 1)")
    common.add_argument("-q", "--quiet", action="store_true", help="No progress lines on stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="potline",
        description=(
            "Sparse neural-network identification of an aluminium electrolysis cell: "
            "simulate excitation data, train dense and l1-sparse networks, analyze the "
            "learned structures and score rolling forecasts."
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Examples:\n"
            "  potline run -c configs/minimal.toml --out /tmp/pl     Whole pipeline, tiny scale\n"
            "  potline simulate -c configs/desk.toml                 Trajectories + datasets\n"
            "  potline train -c configs/desk.toml -j 4               Train replicates in parallel\n"
            "  potline analyze -c configs/desk.toml                  Sparsity, features, structures\n"
            "  potline evaluate -c configs/desk.toml --oracle        AN-RFMSE report\n"
            "  potline regions --shape 13-6-6-6-8                    Op count + region bounds\n"
            "  potline history --since 7                             Summarize the run log\n"
        ),
    )
    parser.add_argument("--version", action="version", version=f"potline {__version__}")
    sub = parser.add_subparsers(dest="command")
    common = _run_options()

    sub.add_parser(
        "simulate",
        parents=[common],
        help="Simulate training and test trajectories and build one dataset per training group.",
    )
    sub.add_parser(
        "train",
        parents=[common],
        help="Train and prune every model replicate for every training group.",
    )
    p_an = sub.add_parser(
        "analyze",
        parents=[common],
        help="Sparsity reports, feature frequency tables, common structures and DOT graphs.",
    )
    p_an.add_argument("--group", help="Only this model group (e.g. sparse-n10)")
    p_ev = sub.add_parser(
        "evaluate",
        parents=[common],
        help="Rolling forecasts on the test set scored with AN-RFMSE, plus plot data.",
    )
    p_ev.add_argument(
        "--oracle", action="store_true", help="Also score the simulator's own derivative"
    )
    sub.add_parser("run", parents=[common], help="simulate, train, analyze and evaluate in order.")

    p_reg = sub.add_parser(
        "regions",
        help="Matrix-operation count and linear-region bounds for a shape or for d, n, L.",
    )
    p_reg.add_argument("--shape", help="Layer widths, e.g. 13-15-14-12-8")
    p_reg.add_argument("-d", type=int, help="Input dimension")
    p_reg.add_argument("-n", type=int, help="Neurons per hidden layer")
    p_reg.add_argument("-L", type=int, help="Hidden layers")
    p_reg.add_argument("--json", action="store_true", dest="as_json", help="Emit JSON")

    p_hist = sub.add_parser(
        "history",
        help="Summarize the local run log ($XDG_STATE_HOME/potline/events.jsonl).",
    )
    p_hist.add_argument("--since", type=int, default=None, help="Only events from the last N days")
    p_hist.add_argument("--json", action="store_true", dest="as_json", help="Emit JSON summary")
    return parser


def main(argv: Optional[list[str]] = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)

    sys.stdout.reconfigure(encoding="utf-8")
    sys.stderr.reconfigure(encoding="utf-8")

    if not args.command:
        parser.print_help()
        return

    commands = {
        "simulate": cmd_simulate,
        "train": cmd_train,
        "analyze": cmd_analyze,
        "evaluate": cmd_evaluate,
        "run": cmd_run,
        "regions": cmd_regions,
        "history": cmd_history,
    }
    fn = commands[args.command]

    exit_code = 0
    argv = [parser.prog] + list(argv if argv is not None else sys.argv[1:])
    event = RunEvent.start(args.command, argv)
    try:
        fn(args, event)
    except (PotlineError, OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        exit_code = exit_code_for(e)
    finally:
        write_event(event.finish(exit_code))
    if exit_code:
        sys.exit(exit_code)


# ---------- Helpers ----------


def _progress(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message, file=sys.stderr)


def _context(args, event: RunEvent) -> tuple[ExperimentConfig, Layout, dict]:
    config = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    chash = config_hash(config)
    event.config_hash, event.seed, event.out = chash, config.seed, str(config.out)
    return config, Layout(Path(config.out)), provenance(chash, config.seed)


def _fit_job(job: tuple) -> TrainedModel:
    dataset, shape, train_config, name = job
    return TrainedModel.fit(dataset, shape, train_config, name=name)


def _split_info(steps: int, series: list) -> dict:
    return {
        "steps": steps,
        "seeds": [ts.seed for ts in series],
        "attempts": [ts.attempt for ts in series],
    }


def _map(fn, work: list, jobs: int) -> list:
    """Results in work order for any number of workers."""
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, work))
    return [fn(w) for w in work]


# ---------- Commands ----------


def cmd_simulate(args, event: RunEvent):
    config, layout, prov = _context(args, event)
    data = config.data
    _progress(args, f"simulating {data.n_train} training + {data.test_series} test series")
    train = simulate_many(
        data.n_train, data.train_steps, config.train_sampler(), config.policy, config.consts,
        jobs=args.jobs, max_attempts=data.max_attempts,
    )
    test = simulate_many(
        data.test_series, data.test_steps, config.test_sampler(), config.policy, config.consts,
        jobs=args.jobs, max_attempts=data.max_attempts,
    )

    for split, series in (("train", train), ("test", test)):
        for i, ts in enumerate(series):
            save_series(layout.series(split, i), ts, prov)
        remove_stale(
            layout.data / split, "series_*.csv", {layout.series(split, i).name for i in range(len(series))}
        )
    write_json(
        layout.metadata,
        {
            "dt": config.consts.dt,
            "constants": config.consts.to_dict(),
            "init": config.sampler.to_dict(),
            "policy": config.policy.to_dict(),
            "train": _split_info(data.train_steps, train),
            "test": _split_info(data.test_steps, test),
        },
        prov,
    )
    for size in sorted(set(data.train_series)):
        subset = train[:size]
        dataset = build_dataset(
            subset,
            metadata={
                "series": size,
                "seeds": [ts.seed for ts in subset],
                "attempts": [ts.attempt for ts in subset],
            },
        )
        save_dataset(layout, size, dataset, prov)

    redrawn = sum(ts.attempt > 0 for ts in train + test)
    event.series_written = len(train) + len(test)
    event.series_redrawn = redrawn
    print(f"Wrote {len(train)} training and {len(test)} test series to {layout.data}")
    if redrawn:
        print(f"Redrawn after divergence: {redrawn} series (see data/metadata.json attempts)")
    print(f"Datasets: {', '.join(f'n{s}' for s in sorted(set(data.train_series)))}")


def cmd_train(args, event: RunEvent):
    config, layout, prov = _context(args, event)
    sizes = sorted(set(config.data.train_series))
    datasets = {size: load_dataset(layout, size) for size in sizes}

    work, slots = [], []
    for spec in config.models:
        for size in sizes:
            group = spec.group(size)
            for r in range(spec.replicates):
                work.append((datasets[size], spec.shape, config.train_config(spec, r, size), group))
                slots.append((group, r))
    _progress(args, f"training {len(work)} models on {args.jobs} worker(s)")
    trained = _map(_fit_job, work, args.jobs)

    by_group: dict[str, list[float]] = {}
    for (group, r), model in zip(slots, trained):
        save_model(layout, group, r, model, prov)
        by_group.setdefault(group, []).append(sparsity_report(model.network).pruned_fraction)
    for spec in config.models:
        for size in sizes:
            group = spec.group(size)
            keep = {layout.model(group, r).name for r in range(spec.replicates)}
            keep |= {layout.loss(group, r).name for r in range(spec.replicates)}
            remove_stale(layout.models / group, "*_*.*", keep)

    fractions = [f for fs in by_group.values() for f in fs]
    event.models_trained = len(trained)
    event.pruned_fraction_mean = float(np.mean(fractions))
    print(f"{'GROUP':<16} {'MODELS':>6} {'PRUNED':>8}")
    for group, fs in by_group.items():
        print(f"{group:<16} {len(fs):>6} {100 * np.mean(fs):>7.1f}%")


def cmd_analyze(args, event: RunEvent):
    config, layout, prov = _context(args, event)
    groups = [args.group] if getattr(args, "group", None) else layout.groups()
    if not groups:
        raise FileNotFoundError(f"no trained models under {layout.models}")

    print(f"{'GROUP':<16} {'MODELS':>6} {'WEIGHTS':>8} {'NEURONS':>8} {'OPS':>6}")
    for group in groups:
        models = load_models(layout, group)
        nets = [m.network for m in models]
        reports = [sparsity_report(n) for n in nets]
        out = layout.analysis(group)

        write_json(
            out / "sparsity.json",
            {
                "models": [
                    {"seed": m.seed, **r.to_dict()} for m, r in zip(models, reports)
                ],
                "pruned_fraction_mean": float(np.mean([r.pruned_fraction for r in reports])),
            },
            prov,
        )

        table = frequency_table(nets)
        write_table(
            out / "features.csv",
            ("feature",) + table.column_names,
            [(name,) + tuple(float(v) for v in table.percent[j]) for j, name in enumerate(table.row_names)],
            prov,
        )

        structures = {}
        for i, output in enumerate(OUTPUT_NAMES[: nets[0].shape[-1]]):
            shares = common_structures(nets, i, top=5)
            structures[output] = [s.to_dict() for s in shares]
            # DOT of the most common structure, drawn from its first model
            first = next(n for n in nets if structure_signature(n, i) == shares[0].signature)
            (out / f"{output}.dot").write_text(
                to_dot(extract_structure(first), output=i, title=f"{group} {output}", provenance=prov),
                encoding="utf-8",
            )
        write_json(out / "structures.json", {"outputs": structures}, prov)

        for r, net in enumerate(nets):
            (out / f"model_{r:03d}.dot").write_text(
                to_dot(extract_structure(net), title=f"{group} model {r}", provenance=prov),
                encoding="utf-8",
            )

        weights = 100 * np.mean([r.pruned_fraction for r in reports])
        neurons = 100 * np.mean(
            [sum(r.pruned_neurons) / max(sum(r.hidden_neurons), 1) for r in reports]
        )
        ops = np.mean([r.effective_matrix_ops for r in reports])
        print(f"{group:<16} {len(models):>6} {weights:>7.1f}% {neurons:>7.1f}% {ops:>6.0f}")
    event.groups_analyzed = len(groups)


def cmd_evaluate(args, event: RunEvent):
    config, layout, prov = _context(args, event)
    test = load_split(layout, "test")
    groups = layout.groups()
    if not groups:
        raise FileNotFoundError(f"no trained models under {layout.models}")
    models = [m for g in groups for m in load_models(layout, g)]
    if args.oracle:
        largest = max(config.data.train_series)
        std = load_dataset(layout, largest).stats.state_std
        models.append(SimulatorOracle(consts=config.consts, state_std=std))

    horizons = sorted(set(config.evaluation.horizons))
    _progress(args, f"evaluating {len(models)} models on {len(test)} test series")
    report = evaluate_population(models, test, horizons, jobs=args.jobs)

    out = layout.evaluation
    header = ("model", "seed") + tuple(f"series_{s:03d}" for s in range(len(test))) + ("mean", "diverged")
    for n, rep in report.horizons.items():
        rows = []
        for k, name in enumerate(report.model_names):
            seed = report.seeds[k] if report.seeds[k] is not None else ""
            rows.append(
                (name, seed)
                + tuple(float(v) for v in rep.matrix[k])
                + (float(rep.vector[k]), int(rep.diverged[k].sum()))
            )
        write_table(out / f"anrfmse_h{n}.csv", header, rows, prov)
        (out / f"bars_h{n}.dat").write_text(plots.bar_dat(report, n, prov), encoding="utf-8")
        positive = all(s["min"] > 0 for s in report.group_summary(n).values())
        (out / f"bars_h{n}.gp").write_text(
            plots.bar_gp(f"bars_h{n}.dat", n, prov, logscale=positive), encoding="utf-8"
        )
    write_json(out / "summary.json", report.to_dict(), prov)

    band_series = test[config.evaluation.band_series]
    for group in report.groups():
        members = [m for m in models if m.name == group]
        bands = forecast_bands(members, band_series, horizons[-1])
        (out / f"bands_{group}.dat").write_text(plots.band_dat(bands, prov), encoding="utf-8")
        (out / f"bands_{group}.gp").write_text(
            plots.band_gp(f"bands_{group}.dat", group, prov), encoding="utf-8"
        )

    diverged = int(sum(rep.diverged.sum() for rep in report.horizons.values()))
    event.models_evaluated = len(models)
    event.diverged = diverged
    for n in horizons:
        print(f"horizon {n}")
        print(f"  {'GROUP':<16} {'MEDIAN':>12} {'MIN':>12} {'MAX':>12} {'DIVERGED':>8}")
        for group, s in report.group_summary(n).items():
            print(
                f"  {group:<16} {s['median']:>12.4g} {s['min']:>12.4g} {s['max']:>12.4g} {s['diverged']:>8}"
            )


def cmd_run(args, event: RunEvent):
    for step in (cmd_simulate, cmd_train, cmd_analyze):
        step(_with(args, group=None, oracle=False), event)
    cmd_evaluate(_with(args, oracle=getattr(args, "oracle", False)), event)


def _with(args, **extra) -> argparse.Namespace:
    ns = argparse.Namespace(**vars(args))
    for k, v in extra.items():
        setattr(ns, k, v)
    return ns


def _parse_shape(text: str) -> list[int]:
    try:
        shape = [int(p) for p in text.replace(",", "-").split("-") if p]
    except ValueError as e:
        raise ConfigError(f"invalid shape {text!r}; expected widths like 13-6-6-6-8") from e
    if len(shape) < 3 or any(w < 1 for w in shape):
        raise ConfigError(f"shape needs an input, at least one hidden and an output layer: {text!r}")
    return shape


def cmd_regions(args, event: RunEvent):
    result: dict = {}
    if args.shape:
        shape = _parse_shape(args.shape)
        hidden = shape[1:-1]
        bounds = region_bounds(shape[0], max(hidden), len(hidden))
        result["shape"] = shape
        result["matrix_ops"] = matrix_op_count(shape)
        result["equal_widths"] = len(set(hidden)) == 1
    elif None not in (args.d, args.n, args.L):
        try:
            bounds = region_bounds(args.d, args.n, args.L)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    else:
        raise ConfigError("regions needs --shape or all of -d, -n and -L")
    result["bounds"] = bounds.to_dict()

    if args.as_json:
        print(json.dumps(result, indent=2, sort_keys=True))
        return
    if "shape" in result:
        print(f"shape:       {'-'.join(map(str, result['shape']))}")
        print(f"matrix ops:  {result['matrix_ops']}")
        if not result["equal_widths"]:
            print("note:        hidden widths differ; n is the widest hidden layer")
    print(f"d, n, L:     {bounds.d}, {bounds.n}, {bounds.L}")
    if bounds.fits():
        print(f"upper:       {bounds.upper:.6g}")
        print(f"lower:       {bounds.lower:.6g}")
    else:
        print(f"log10 upper: {bounds.log10_upper:.6g}")
        print(f"log10 lower: {bounds.log10_lower:.6g}")


def cmd_history(args, event: RunEvent):
    """Summarize the local run log."""
    events = read_events(since_days=args.since)
    by_cmd: dict[str, int] = {}
    by_exit: dict[str, int] = {}
    hashes: list[str] = []
    for e in events:
        by_cmd[e.cmd] = by_cmd.get(e.cmd, 0) + 1
        by_exit[str(e.exit)] = by_exit.get(str(e.exit), 0) + 1
        if e.config_hash and e.config_hash not in hashes:
            hashes.append(e.config_hash)
    recent = hashes[-5:]
    totals = {
        key: sum(getattr(e, key) or 0 for e in events)
        for key in ("series_written", "series_redrawn", "models_trained", "models_evaluated", "diverged")
    }

    if args.as_json:
        out = {
            "total_events": len(events),
            "since_days": args.since,
            "by_cmd": by_cmd,
            "by_exit": by_exit,
            "recent_config_hashes": recent,
            "totals": totals,
            "log_path": str(log_path()),
        }
        print(json.dumps(out, indent=2))
        return

    scope = f" (last {args.since}d)" if args.since else ""
    print(f"potline history{scope}: {len(events)} event(s)")
    print(f"Log: {log_path()}\n")
    print("By subcommand:")
    for cmd, n in sorted(by_cmd.items(), key=lambda kv: -kv[1]):
        print(f"  {cmd:<10} {n:>5}")
    print("\nBy exit code:")
    for code, n in sorted(by_exit.items()):
        print(f"  {code:<10} {n:>5}")
    if any(totals.values()):
        print("\nTotals:")
        for key, n in totals.items():
            print(f"  {key:<17} {n:>7}")
    if recent:
        print("\nRecent configs: " + ", ".join(recent))


if __name__ == "__main__":
    main()
