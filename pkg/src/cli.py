import argparse
import glob
import json
import os
import sys

from config.paths_config import *
from src.custom_exception import CustomException, DataIOError
from src.data_ingestion import DataIngestion, load_csv, load_schema, save_schema, write_csv
from src.logger import get_logger
from src.mock_data import mock_dataset, voter_schema
from src.model_evaluation import ModelEvaluation
from src.run_config import RunConfig, parse_epsilon, parse_epsilons, resolve_threads
from src.sanitization_plan import SanitizationPlan
from src.steps_tree import ELECTION_WARNING, build_tree, pad_phantoms, random_partition_tree, tree_audit
from src.sweep import run_sweep, save_sweep_report
from src.synthesizer import Synthesizer

logger = get_logger(__name__)


def _csv_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _float_list(text):
    return [float(x) for x in _csv_list(text)]


def _allocation(text):
    return text if "," not in text else _float_list(text)


def _add_run_flags(parser):
    parser.add_argument("--config", dest="config", help="JSON config file; flags override it")
    parser.add_argument("--input", dest="input", help="input CSV of categorical records")
    parser.add_argument("--schema", dest="schema", help="schema JSON (levels are inferred when omitted)")
    parser.add_argument("--L", dest="L", type=int, help="number of partition layers")
    parser.add_argument("--allocation", dest="allocation", type=_allocation,
                        help="equal, half-split or a comma-separated vector of layer shares")
    parser.add_argument("--m", dest="m", type=int, help="number of synthetic replicates")
    parser.add_argument("--seed", dest="seed", type=int, help="seed for every random draw")
    parser.add_argument("--output-dir", dest="output_dir", help="directory for the run's files")
    parser.add_argument("--threads", dest="threads", type=int,
                        help="worker threads (default: $STEPS_DP_THREADS, then all cores)")
    parser.add_argument("--dense-threshold", dest="dense_threshold", type=int,
                        help="largest full table, in cells, the engine will materialize")
    parser.add_argument("--unsafe-no-noise", dest="unsafe_no_noise", action="store_true", default=None,
                        help="allow epsilon=inf, which releases the data unchanged")
    parser.add_argument("--track", dest="track", action="store_true", default=None,
                        help="log parameters and metrics to mlflow")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="steps-dp",
        description="Differentially private synthesis of categorical data with STEPS",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synthesize", help="release m synthetic replicates")
    _add_run_flags(synth)
    synth.add_argument("--method", dest="method", choices=["steps", "random-partition", "laplace-full"])
    synth.add_argument("--epsilon", dest="epsilon", type=parse_epsilon, help="total privacy budget")
    synth.add_argument("--budget-limit", dest="budget_limit", type=parse_epsilon,
                       help="ledger cap (defaults to epsilon); a plan above it aborts")
    synth.add_argument("--debug", dest="debug", action="store_true", default=None,
                       help="include true counts in the tree audit")

    evaluate = commands.add_parser("evaluate", help="utility of replicates against the original")
    evaluate.add_argument("what", nargs="?", default="all", choices=["all", "specks", "feasibility"])
    evaluate.add_argument("--config", dest="config")
    evaluate.add_argument("--original", dest="input", required=True, help="original CSV")
    evaluate.add_argument("--schema", dest="schema")
    evaluate.add_argument("--replicates", dest="replicates", nargs="*", help="replicate CSV files")
    evaluate.add_argument("--synthetic-dir", dest="synthetic_dir", help="directory written by synthesize")
    evaluate.add_argument("--alphas", dest="alphas", type=_float_list)
    evaluate.add_argument("--combination-rule", dest="combination_rule")
    evaluate.add_argument("--interactions", dest="interactions", action="store_true", default=None)
    evaluate.add_argument("--output-dir", dest="output_dir")
    evaluate.add_argument("--threads", dest="threads", type=int)
    evaluate.add_argument("--track", dest="track", action="store_true", default=None)

    sweep = commands.add_parser("sweep", help="repeat synthesis over a grid of epsilons")
    _add_run_flags(sweep)
    sweep.add_argument("--epsilons", dest="epsilons", type=parse_epsilons, help="e.g. e-2,e-1,1,e,e2")
    sweep.add_argument("--repetitions", dest="repetitions", type=int)
    sweep.add_argument("--methods", dest="methods", type=_csv_list)

    inspect = commands.add_parser("inspect-tree", help="build the partition tree and export its audit")
    inspect.add_argument("--config", dest="config")
    inspect.add_argument("--input", dest="input")
    inspect.add_argument("--schema", dest="schema")
    inspect.add_argument("--method", dest="method", choices=["steps", "random-partition"])
    inspect.add_argument("--L", dest="L", type=int)
    inspect.add_argument("--seed", dest="seed", type=int)
    inspect.add_argument("--debug", dest="debug", action="store_true", default=None)
    inspect.add_argument("--output", dest="output", help="audit JSON path (stdout summary only when omitted)")

    mock = commands.add_parser("mock-data", help="write seeded mock data over the voter schema")
    mock.add_argument("--output", dest="output", default=MOCK_DATA_PATH)
    mock.add_argument("--n", dest="n", type=int)
    mock.add_argument("--seed", dest="seed", type=int)
    mock.add_argument("--uniform", dest="uniform", action="store_true")
    mock.add_argument("--schema", dest="schema", help="schema JSON (bundled voter schema by default)")
    return parser


def _config(args, *names) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in names}
    return RunConfig.load(args.config, **overrides).validate()


def _warn_election(methods) -> None:
    if "steps" in methods:
        print(f"warning: {ELECTION_WARNING}", file=sys.stderr)


def _ingest(config: RunConfig, output_dir: str):
    if not config.input:
        raise DataIOError("no input file given (use --input or the config file)")
    return DataIngestion(config.input, config.schema, output_dir).run()


def cmd_synthesize(args) -> int:
    config = _config(args, "input", "schema", "method", "L", "allocation", "epsilon", "m", "seed",
                     "output_dir", "threads", "dense_threshold", "unsafe_no_noise", "track",
                     "budget_limit", "debug")
    data = _ingest(config, config.output_dir)
    plan = SanitizationPlan.build(config.L, config.allocation, config.m, config.epsilon, data.schema.p, config.seed)
    synthesizer = Synthesizer(
        data, plan, config.method, config.output_dir, resolve_threads(config.threads), config.dense_threshold,
        config.budget_limit, config=config.to_dict(), debug=config.debug,
    )
    manifest = synthesizer.run()
    _warn_election([config.method])
    print(f"privacy spent {manifest['ledger_total']} of epsilon {manifest['epsilon']}")
    print(f"wrote {len(manifest['replicates'])} replicates and {MANIFEST_FILE} to {config.output_dir}")
    return 0


def _replicate_paths(args):
    if args.replicates:
        return list(args.replicates)
    if args.synthetic_dir:
        paths = sorted(glob.glob(os.path.join(args.synthetic_dir, "synthetic_*.csv")))
        if paths:
            return paths
        raise DataIOError(f"no replicate files in {args.synthetic_dir}")
    raise DataIOError("no replicates given (use --replicates or --synthetic-dir)")


def cmd_evaluate(args) -> int:
    config = _config(args, "input", "schema", "alphas", "combination_rule", "interactions", "threads", "track")
    original = load_csv(config.input, load_schema(config.schema) if config.schema else "infer")
    replicates = [load_csv(path, original.schema) for path in _replicate_paths(args)]
    metrics = {"all": config.metrics, "specks": ["specks"], "feasibility": ["l1", "chisq"]}[args.what]
    output_dir = args.output_dir or REPORTS_DIR
    evaluation = ModelEvaluation(
        original, replicates, metrics, config.alphas, config.combination_rule, output_dir,
        resolve_threads(config.threads), config.interactions, config.track,
    )
    report = evaluation.run()
    print(report.format_table())
    return 0


def cmd_sweep(args) -> int:
    config = _config(args, "input", "schema", "L", "allocation", "m", "seed", "output_dir", "threads",
                     "dense_threshold", "unsafe_no_noise", "track", "epsilons", "repetitions", "methods")
    output_dir = args.output_dir or REPORTS_DIR
    data = _ingest(config, output_dir)
    report = run_sweep(
        data, config.methods, config.epsilons, config.repetitions, config.L, config.allocation, config.m,
        config.seed, config.dense_threshold, resolve_threads(config.threads), config.track,
    )
    save_sweep_report(report, output_dir)
    _warn_election(config.methods)
    print(report.format_table())
    print(json.dumps(report.trends(), indent=2, sort_keys=True))
    return 0


def cmd_inspect_tree(args) -> int:
    config = _config(args, "input", "schema", "method", "L", "seed", "debug")
    if not config.input:
        raise DataIOError("no input file given (use --input or the config file)")
    data = load_csv(config.input, load_schema(config.schema) if config.schema else "infer")
    # the tree does not depend on epsilon, so any valid budget builds it
    plan = SanitizationPlan.build(config.L, config.allocation, 1, 1.0, data.schema.p, config.seed)
    if config.method == "random-partition":
        tree = random_partition_tree(data, plan, dense_threshold=config.dense_threshold)
    else:
        tree = build_tree(data, plan, dense_threshold=config.dense_threshold)
    audit = tree_audit(pad_phantoms(tree), debug=config.debug)

    if args.output:
        os.makedirs(os.path.dirname(args.output) or ".", exist_ok=True)
        with open(args.output, "w", encoding="utf-8") as f:
            json.dump(audit, f, indent=2, sort_keys=True)
        print(f"tree audit written to {args.output}")
    if audit["election_warning"]:
        print(f"warning: {audit['election_warning']}", file=sys.stderr)
    for node in audit["nodes"]:
        if "split_attribute" in node and not node["phantom"]:
            where = " & ".join(f"{a}={lvl}" for a, lvl in node["path"]) or "root"
            score = f" (delta AIC {node['delta_aic']})" if "delta_aic" in node else ""
            print(f"layer {node['layer']}: {where} -> {node['split_attribute']}{score}")
    return 0


def cmd_mock_data(args) -> int:
    schema = load_schema(args.schema) if args.schema else voter_schema()
    overrides = {k: v for k, v in {"n": args.n, "seed": args.seed}.items() if v is not None}
    data = mock_dataset(schema, skewed=not args.uniform, **overrides)
    write_csv(data, args.output)
    schema_path = os.path.join(os.path.dirname(args.output) or ".", "schema.json")
    save_schema(schema, schema_path)
    print(f"wrote {data.n} mock records to {args.output} and the schema to {schema_path}")
    return 0


COMMANDS = {
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "inspect-tree": cmd_inspect_tree,
    "mock-data": cmd_mock_data,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CustomException as e:
        logger.error(f"{args.command} failed: {e.error_message}")
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
