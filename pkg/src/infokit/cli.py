"""Command-line surface: score, select, simulate, split, eval, stats, gen-fixture, convert.

Every command resolves its parameters from flags > config file > defaults,
embeds the resolved config verbatim into each output file, and writes
outputs atomically. Re-running a command from an output's embedded config
reproduces that output byte-exactly. Exit codes: 0 success, 2 validation,
3 I/O, 4 runtime; failures emit one machine-readable JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DivergenceDetected, ToolkitError, error_code
from .fixtures import MixtureSpec, make_fixture
from .iei import (
    Indicator,
    class_prototypes,
    l2_normalized,
    score_table_from_csv,
    score_table_to_csv,
    score_with_indicator,
)
from .ood import migration_distances, migration_split, test_domain_prototypes
from .probe import ProbeConfig, evaluate, fit_probe
from .selection import (
    BudgetScheme,
    aci,
    addition_loop,
    class_distribution_stats,
    make_scorer,
    reduction_loop,
    select,
)
from .store import (
    class_counts,
    load_table,
    make_table,
    save_table,
    subset,
    table_from_csv,
    table_to_csv,
    write_bytes_atomic,
)

INDICATOR_FLAGS = {
    "distance-entropy": Indicator.DISTANCE_ENTROPY.value,
    "entropy": Indicator.PROBABILITY_ENTROPY.value,
    "metric": Indicator.METRIC.value,
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _write_json(path: str | Path, obj: dict) -> None:
    write_bytes_atomic(path, (canonical_json(obj) + "\n").encode("utf-8"))


def _embedded_config(command: str, params: dict) -> dict:
    return {"command": command, "version": __version__, "params": params}


def _resolve(schema: dict, args: argparse.Namespace) -> dict:
    """flags > config file > defaults; None after resolution means required-and-missing."""
    cfg: dict = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text())
        cfg = raw.get("params", raw)
        if "command" in raw and raw["command"] != args.command:
            raise ValueError(f"config file is for command {raw['command']!r}, not {args.command!r}")
    params = {}
    for key, default in schema.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            params[key] = flag_val
        elif key in cfg and cfg[key] is not None:
            params[key] = cfg[key]
        else:
            params[key] = default
    missing = [k for k, v in params.items() if v is None and schema[k] is None and k in _REQUIRED[args.command]]
    if missing:
        raise ValueError(f"missing required parameters: {missing}")
    return params


def _parse_float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _probe_config(params: dict) -> ProbeConfig:
    return ProbeConfig(
        kind=params["probe"],
        step_size=float(params["step_size"]),
        epochs=int(params["epochs"]),
        l2=float(params["l2"]),
        seed=int(params["seed"]),
    )


# -- command handlers ---------------------------------------------------------


def cmd_score(params: dict) -> dict:
    if params["indicator"] not in INDICATOR_FLAGS:
        raise ValueError(f"indicator must be one of {sorted(INDICATOR_FLAGS)}")
    indicator = INDICATOR_FLAGS[params["indicator"]]
    table = load_table(params["in"])
    if params["l2_normalize"]:
        table = l2_normalized(table)
    ref = table
    if params["ref"]:
        ref = load_table(params["ref"])
        if params["l2_normalize"]:
            ref = l2_normalized(ref)
    prototypes = None
    if indicator != Indicator.PROBABILITY_ENTROPY.value:
        prototypes = class_prototypes(ref)
    scores = score_with_indicator(indicator, table, prototypes)
    stats = aci(class_distribution_stats(scores))
    config = _embedded_config("score", params)
    line = canonical_json(config)
    score_table_to_csv(scores, params["out"], config_line=line)
    stats_out = params["stats_out"] or params["out"] + ".stats.json"
    _write_json(stats_out, {"config": config, "stats": stats.to_json_dict()})
    return {
        "out": params["out"],
        "stats_out": stats_out,
        "indicator": indicator,
        "n_samples": len(scores),
        "score_mean": float(np.mean(scores.scores)) if len(scores) else None,
    }


def cmd_select(params: dict) -> dict:
    scores = score_table_from_csv(params["scores"], n_classes=params["n_classes"])
    scheme = BudgetScheme(kind=params["scheme"], total_budget=int(params["budget"]))
    stats = aci(class_distribution_stats(scores))
    plan = select(scores, scheme, params["direction"], stats=stats)
    config = _embedded_config("select", params)
    _write_json(params["out"], {"config": config, "plan": plan.to_json_dict()})
    return {
        "out": params["out"],
        "selected": len(plan.selected_ids),
        "direction": plan.direction,
        "scheme": scheme.kind,
    }


def _simulate_arms(mode: str, indicator: str) -> list[tuple[str, str, str]]:
    # (arm name, indicator, direction); in reduction the direction names the removed set
    if mode == "add":
        return [("hid", indicator, "goodset"), ("lid", indicator, "badset"), ("random", "random", "goodset")]
    return [("hid", indicator, "badset"), ("lid", indicator, "goodset"), ("random", "random", "goodset")]


def cmd_simulate(params: dict) -> dict:
    mode = params["mode"]
    if mode not in ("add", "reduce"):
        raise ValueError("simulate mode must be add or reduce")
    if params["indicator"] not in INDICATOR_FLAGS:
        raise ValueError(f"indicator must be one of {sorted(INDICATOR_FLAGS)}")
    if mode == "add" and (not params["base"] or not params["pool"]):
        raise ValueError("simulate add needs --base and --pool")
    if mode == "reduce" and not params["train"]:
        raise ValueError("simulate reduce needs --train")
    indicator = INDICATOR_FLAGS[params["indicator"]]
    eval_table = load_table(params["eval"])
    probe_config = _probe_config(params)
    seed = int(params["seed"])
    rounds = int(params["rounds"])
    out_dir = Path(params["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _embedded_config("simulate", params)
    line = canonical_json(config)

    if mode == "add":
        base = load_table(params["base"])
        pool = load_table(params["pool"])
        universe = base.n_samples + pool.n_samples
    else:
        train = load_table(params["train"])
        universe = train.n_samples
    budget = float(params["budget"])
    round_budget = max(1, int(round(budget * universe))) if budget < 1.0 else int(budget)

    summary: dict = {"out_dir": str(out_dir), "mode": mode, "round_budget": round_budget, "arms": {}}
    for arm, arm_indicator, direction in _simulate_arms(mode, indicator):
        scorer = make_scorer(arm_indicator, probe_config, seed=seed)
        if mode == "add":
            curve = addition_loop(
                base, pool, eval_table, scorer, arm_indicator, params["scheme"],
                direction, round_budget, rounds, probe_config,
            )
        else:
            curve = reduction_loop(
                train, eval_table, scorer, arm_indicator, params["scheme"],
                direction, round_budget, rounds, probe_config,
            )
        write_bytes_atomic(out_dir / f"{arm}.csv", curve.to_csv_text(config_line=line).encode("utf-8"))
        _write_json(out_dir / f"{arm}.json", {"config": config, "curve": curve.to_json_dict()})
        summary["arms"][arm] = {
            "final_size": curve.rounds[-1].train_size,
            "final_accuracy": curve.rounds[-1].accuracy,
            "points": len(curve.rounds),
        }
    return summary


def cmd_split(params: dict) -> dict:
    fraction = float(params["fraction"])
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    train = load_table(params["train"])
    test = load_table(params["test"])
    prototypes = test_domain_prototypes(test)
    distances = migration_distances(train, prototypes)
    split = migration_split(distances, positive_fraction=fraction, per_class=bool(params["per_class"]))
    config = _embedded_config("split", params)
    line = canonical_json(config)
    out_dir = Path(params["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, ids in (("positive", split.positive_ids), ("negative", split.negative_ids)):
        part = subset(train, ids)
        part = make_table(
            part.sample_ids, part.labels, part.features, part.n_classes,
            logits=part.logits, domain_tag=part.domain_tag,
            class_names=part.manifest.class_names, provenance=line,
        )
        path = out_dir / f"{name}.emb1"
        save_table(part, path)
        files[name] = str(path)
    manifest_path = out_dir / "split.json"
    _write_json(manifest_path, {"config": config, "split": split.to_json_dict(), "files": files})
    return {
        "out_dir": str(out_dir),
        "manifest": str(manifest_path),
        "positive": len(split.positive_ids),
        "negative": len(split.negative_ids),
    }


def cmd_eval(params: dict) -> dict:
    train = load_table(params["train"])
    test = load_table(params["test"])
    repeats = int(params["repeats"])
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base_cfg = _probe_config(params)
    accuracies = []
    for i in range(repeats):
        cfg = ProbeConfig(
            kind=base_cfg.kind, step_size=base_cfg.step_size, epochs=base_cfg.epochs,
            l2=base_cfg.l2, seed=base_cfg.seed + i,
        )
        accuracies.append(evaluate(fit_probe(train, cfg), test))
    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies))
    config = _embedded_config("eval", params)
    report = {
        "config": config,
        "train_size": train.n_samples,
        "test_size": test.n_samples,
        "test_accuracy": mean,
        "accuracies": accuracies,
        "mean": mean,
        "std": std,
        "probe": base_cfg.to_json_dict(),
    }
    _write_json(params["out"], report)
    return {"out": params["out"], "test_accuracy": mean, "std": std, "repeats": repeats}


def cmd_stats(params: dict) -> dict:
    if bool(params["in"]) == bool(params["scores"]):
        raise ValueError("provide exactly one of --in (EMB1 table) or --scores (score CSV)")
    config = _embedded_config("stats", params)
    if params["scores"]:
        scores = score_table_from_csv(params["scores"], n_classes=params["n_classes"])
        stats = aci(class_distribution_stats(scores))
        body = {"config": config, "stats": stats.to_json_dict()}
    else:
        table = load_table(params["in"])
        body = {
            "config": config,
            "table": {
                "n_samples": table.n_samples,
                "dim": table.dim,
                "n_classes": table.n_classes,
                "domain_tag": table.domain_tag,
                "has_logits": table.logits is not None,
                "checksum": table.manifest.checksum,
                "class_names": list(table.manifest.class_names),
                "class_counts": [int(v) for v in class_counts(table)],
                "provenance": table.manifest.provenance,
            },
        }
    if params["out"]:
        _write_json(params["out"], body)
        return {"out": params["out"]}
    print(canonical_json(body))
    return {}


def cmd_gen_fixture(params: dict) -> dict:
    spec = MixtureSpec(
        n_classes=int(params["classes"]),
        dim=int(params["dim"]),
        per_class=int(params["per_class"]),
        separation=tuple(_parse_float_list(params["separation"])),
        sigma=tuple(_parse_float_list(params["sigma"])),
        shift=float(params["shift"]),
        base_fraction=float(params["base_fraction"]),
        eval_per_class=int(params["eval_per_class"]),
        test_per_class=int(params["test_per_class"]),
        with_logits=bool(params["with_logits"]),
        frontier_fraction=float(params["frontier_fraction"]),
        frontier_pull=float(params["frontier_pull"]),
        frontier_sigma=float(params["frontier_sigma"]),
        seed=int(params["seed"]),
    )
    config = _embedded_config("gen-fixture", params)
    line = canonical_json(config)
    bundle = make_fixture(spec, provenance=line)
    out_dir = Path(params["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for role, table in bundle.items():
        path = out_dir / f"{role}.emb1"
        save_table(table, path)
        files[role] = str(path)
    _write_json(out_dir / "fixture.json", {"config": config, "files": files})
    return {"out_dir": str(out_dir), "files": files}


def cmd_convert(params: dict) -> dict:
    src, dst = Path(params["in"]), Path(params["out"])
    config = _embedded_config("convert", params)
    line = canonical_json(config)
    if src.suffix == ".csv" and dst.suffix == ".emb1":
        table = table_from_csv(
            src,
            n_classes=params["n_classes"],
            domain_tag=params["domain_tag"],
            provenance=line,
        )
        save_table(table, dst)
    elif src.suffix == ".emb1" and dst.suffix == ".csv":
        table_to_csv(load_table(src), dst, config_line=line)
    else:
        raise ValueError("convert needs .csv->.emb1 or .emb1->.csv")
    return {"in": str(src), "out": str(dst)}


_HANDLERS = {
    "score": cmd_score,
    "select": cmd_select,
    "simulate": cmd_simulate,
    "split": cmd_split,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "gen-fixture": cmd_gen_fixture,
    "convert": cmd_convert,
}

_SCHEMAS: dict[str, dict] = {
    "score": {
        "in": None, "out": None, "indicator": None, "stats_out": "",
        "ref": "", "l2_normalize": False, "seed": 42,
    },
    "select": {
        "scores": None, "out": None, "budget": None, "scheme": "balanced",
        "direction": "goodset", "n_classes": None, "seed": 42,
    },
    "simulate": {
        "mode": None, "base": "", "pool": "", "train": "", "eval": None,
        "indicator": None, "scheme": "balanced", "budget": 0.1, "rounds": 9,
        "probe": "linear", "step_size": 0.1, "epochs": 200, "l2": 1e-4,
        "seed": 42, "out_dir": None,
    },
    "split": {
        "train": None, "test": None, "fraction": 0.4, "per_class": True,
        "out_dir": None, "seed": 42,
    },
    "eval": {
        "train": None, "test": None, "probe": "linear", "step_size": 0.1,
        "epochs": 200, "l2": 1e-4, "repeats": 1, "seed": 42, "out": None,
    },
    "stats": {"in": "", "scores": "", "n_classes": None, "out": "", "seed": 42},
    "gen-fixture": {
        "classes": 10, "dim": 16, "per_class": 500, "separation": "3.0",
        "sigma": "1.0", "shift": 0.0, "base_fraction": 0.1,
        "eval_per_class": 200, "test_per_class": 200, "with_logits": False,
        "frontier_fraction": 0.0, "frontier_pull": 0.55, "frontier_sigma": 0.4,
        "seed": 42, "out_dir": None,
    },
    "convert": {"in": None, "out": None, "n_classes": None, "domain_tag": "train", "seed": 42},
}

# parameters that must be non-None after resolution (n_classes may stay None)
_REQUIRED = {
    "score": {"in", "out", "indicator"},
    "select": {"scores", "out", "budget"},
    "simulate": {"mode", "eval", "indicator", "out_dir"},
    "split": {"train", "test", "out_dir"},
    "eval": {"train", "test", "out"},
    "stats": set(),
    "gen-fixture": {"out_dir"},
    "convert": {"in", "out"},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infokit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"infokit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file with parameters (flags take precedence)")
        p.add_argument("--json", action="store_true", help="print a machine-readable summary")
        p.add_argument("--seed", type=int, help="master seed, recorded in every output (default 42)")

    p = sub.add_parser("score", help="score a table with one indicator")
    common(p)
    p.add_argument("--in", dest="in", help="input EMB1 table")
    p.add_argument("--out", help="output score CSV")
    p.add_argument("--indicator", choices=sorted(INDICATOR_FLAGS))
    p.add_argument("--stats-out", dest="stats_out", help="class statistics JSON (default <out>.stats.json)")
    p.add_argument("--ref", help="EMB1 table prototypes are fitted on (default: the input table)")
    p.add_argument("--l2-normalize", dest="l2_normalize", action=argparse.BooleanOptionalAction)

    p = sub.add_parser("select", help="budgeted goodset/badset selection from a score CSV")
    common(p)
    p.add_argument("--scores", help="score CSV from the score command")
    p.add_argument("--out", help="output plan JSON")
    p.add_argument("--budget", type=int)
    p.add_argument("--scheme", choices=["balanced", "unbalanced"])
    p.add_argument("--direction", choices=["goodset", "badset"])
    p.add_argument("--n-classes", dest="n_classes", type=int)

    p = sub.add_parser("simulate", help="run HID/LID/random addition or reduction arms")
    common(p)
    p.add_argument("mode", nargs="?", choices=["add", "reduce"])
    p.add_argument("--base", help="base EMB1 (add mode)")
    p.add_argument("--pool", help="pool EMB1 (add mode)")
    p.add_argument("--train", help="train EMB1 (reduce mode)")
    p.add_argument("--eval", dest="eval", help="held-out EMB1 used for accuracy")
    p.add_argument("--indicator", choices=sorted(INDICATOR_FLAGS))
    p.add_argument("--scheme", choices=["balanced", "unbalanced"])
    p.add_argument("--budget", type=float, help="per-round budget; <1 means fraction of the universe")
    p.add_argument("--rounds", type=int)
    p.add_argument("--probe", choices=["linear", "nearest_prototype"])
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("split", help="positive/negative migration split via test prototypes")
    common(p)
    p.add_argument("--train", help="train-domain EMB1")
    p.add_argument("--test", help="test-domain EMB1")
    p.add_argument("--fraction", type=float, help="positive fraction (default 0.4)")
    p.add_argument("--per-class", dest="per_class", action=argparse.BooleanOptionalAction,
                   help="split within each class (default) or globally")
    p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("eval", help="fit a probe on train and report test accuracy")
    common(p)
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--probe", choices=["linear", "nearest_prototype"])
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--repeats", type=int, help="fit/eval repetitions with consecutive seeds")
    p.add_argument("--out", help="output report JSON")

    p = sub.add_parser("stats", help="summarize an EMB1 table or per-class score statistics")
    common(p)
    p.add_argument("--in", dest="in", help="EMB1 table to summarize")
    p.add_argument("--scores", help="score CSV to aggregate per class")
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("gen-fixture", help="synthesize Gaussian-mixture EMB1 fixtures")
    common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--separation", help="scalar or comma list, one value per class")
    p.add_argument("--sigma", help="scalar or comma list, one value per class")
    p.add_argument("--shift", type=float, help="test-domain mean displacement (0 disables)")
    p.add_argument("--base-fraction", dest="base_fraction", type=float)
    p.add_argument("--eval-per-class", dest="eval_per_class", type=int)
    p.add_argument("--test-per-class", dest="test_per_class", type=int)
    p.add_argument("--with-logits", dest="with_logits", action=argparse.BooleanOptionalAction)
    p.add_argument("--frontier-fraction", dest="frontier_fraction", type=float,
                   help="share of each class drawn from a displaced sub-cluster (default 0)")
    p.add_argument("--frontier-pull", dest="frontier_pull", type=float,
                   help="sub-cluster position along the vector to the next class mean")
    p.add_argument("--frontier-sigma", dest="frontier_sigma", type=float)
    p.add_argument("--out-dir", dest="out_dir")

    p = sub.add_parser("convert", help="convert between CSV and EMB1")
    common(p)
    p.add_argument("--in", dest="in")
    p.add_argument("--out")
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--domain-tag", dest="domain_tag", choices=["train", "validation", "test", "pool", "base"])

    return parser


def _print_error(exc: BaseException, code: str | None = None) -> None:
    payload = {"error": {"code": code or error_code(exc), "message": str(exc)}}
    print(canonical_json(payload), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        params = _resolve(_SCHEMAS[args.command], args)
        summary = _HANDLERS[args.command](params)
    except DivergenceDetected as exc:
        _print_error(exc)
        return 4
    except ToolkitError as exc:
        _print_error(exc)
        return 2
    except ValueError as exc:
        _print_error(exc, code="INVALID_ARGUMENT")
        return 2
    except OSError as exc:
        _print_error(exc, code="IO_ERROR")
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        _print_error(exc, code="RUNTIME_ERROR")
        return 4
    if getattr(args, "json", False):
        print(canonical_json({"command": args.command, "ok": True, "summary": summary}))
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")
    return 0


def main_entry() -> None:
    raise SystemExit(main())
