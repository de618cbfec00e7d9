"""Command-line entry point.

Every subcommand is a thin wrapper over one service endpoint; by
default the service runs in-process, and --server redirects the same
calls to a running instance. Results go to stdout, diagnostics to
stderr. Exit codes: 0 success, 1 usage error, 2 data error, 3 bridge
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .client import ServiceClient, ServiceFailure


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _resolve_prompt(value: str) -> str:
    if os.path.isfile(value):
        with open(value, encoding="utf-8") as fh:
            return fh.read().strip()
    return value


def _cmd_preprocess(client: ServiceClient, args) -> int:
    result = client.call(
        "/preprocess",
        {
            "input_path": args.input,
            "format": args.format,
            "length_class": args.length_class,
            "tokenizer": args.tokenizer,
            "bridge_address": args.bridge,
            "out_path": args.out,
            "with_stats": args.stats,
            "wp_only": not args.keep_all_tags,
        },
    )
    _emit(result)
    return 0


def _cmd_train(client: ServiceClient, args) -> int:
    result = client.call(
        "/train",
        {
            "input_path": args.input,
            "order": args.order,
            "alpha": args.alpha,
            "out_path": args.out,
        },
    )
    _emit(result)
    return 0


_GENERATE_DEFAULTS = {
    "strategy": "nucleus",
    "p": 0.7,
    "k": 40,
    "temperature": 1.0,
    "lambda": 0.0,
    "mmi_window": 20,
    "mmi_after_filter": False,
    "length_class": "medium",
    "max_tokens": None,
    "seed": 42,
}

_CONFIG_FILE_KEYS = frozenset(_GENERATE_DEFAULTS) | {
    "schema_version",
    "prompts",
    "p_grid",
    "lambda_grid",
    "lambda_base_p",
    "stories_per_cell",
    "base_seed",
}


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        values = json.load(fh)
    unknown = sorted(set(values) - _CONFIG_FILE_KEYS)
    if unknown:
        raise ServiceFailure("usage", f"config file has unknown keys: {unknown}")
    return values


def _cmd_generate(client: ServiceClient, args) -> int:
    file_values = _load_config_file(args.config)

    def pick(key: str):
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            return flag
        if key in file_values:
            return file_values[key]
        if key == "seed" and "base_seed" in file_values:
            return file_values["base_seed"]
        return _GENERATE_DEFAULTS[key]

    count = args.count
    if count is None:
        count = file_values.get("stories_per_cell", 1)
    result = client.call(
        "/generate",
        {
            "model_spec": args.model,
            "uncond_model_spec": args.uncond,
            "prompt": _resolve_prompt(args.prompt),
            "count": count,
            "trace_path": args.trace,
            "config": {key: pick(key) for key in _GENERATE_DEFAULTS},
        },
    )
    if args.json:
        for record in result["records"]:
            print(json.dumps(record, sort_keys=True, separators=(",", ":")))
    else:
        for record in result["records"]:
            print(record["response"])
    if args.trace:
        print(f"wrote {len(result['records'])} records to {args.trace}", file=sys.stderr)
    return 0


def _cmd_metrics(client: ServiceClient, args) -> int:
    try:
        ns = [int(part) for part in args.dist.split(",") if part.strip()]
    except ValueError:
        raise ServiceFailure("usage", f"--dist wants comma-separated integers, got {args.dist!r}")
    result = client.call(
        "/metrics",
        {
            "records_path": args.records,
            "ns": ns,
            "pooled": args.pooled,
            "sent_div": args.sent_div,
            "embedder": args.embedder,
            "bridge_address": args.bridge,
            "report_path": args.report,
        },
    )
    _emit(result["report"])
    return 0


def _cmd_agreement(client: ServiceClient, args) -> int:
    result = client.call(
        "/agreement", {"ratings_path": args.ratings, "report_path": args.report}
    )
    _emit(result["metrics"])
    return 0


def _cmd_correlate(client: ServiceClient, args) -> int:
    result = client.call(
        "/correlate", {"input_path": args.input, "x": args.x, "y": args.y}
    )
    _emit(result)
    return 0


def _cmd_sweep(client: ServiceClient, args, param: str) -> int:
    result = client.call(
        f"/sweep/{param}",
        {
            "spec_path": args.spec,
            "model_spec": args.model,
            "uncond_model_spec": getattr(args, "uncond", None),
            "out_dir": args.out,
            "jobs": args.jobs,
        },
    )
    _emit({"param": result["param"], "reports": result["reports"]})
    if result["failures"]:
        print(f"{len(result['failures'])} generations failed", file=sys.stderr)
        for failure in result["failures"]:
            print(f"  {failure}", file=sys.stderr)
        return 2
    return 0


def _cmd_cdf(client: ServiceClient, args) -> int:
    result = client.call(
        "/cdf",
        {
            "records_path": args.records,
            "exclude_values": args.exclude,
            "out_path": args.out,
        },
    )
    _emit(result)
    return 0


def _cmd_bridge_check(client: ServiceClient, args) -> int:
    result = client.call("/bridge/check", {"address": args.address})
    for check in result["checks"]:
        status = "PASS" if check["ok"] else "FAIL"
        print(f"{status} {check['name']}: {check['detail']}")
    return 0 if result["ok"] else 3


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="storydecode", description=__doc__)
    parser.add_argument(
        "--server",
        default=None,
        metavar="URL",
        help="base URL of a running service (default: run in-process)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter, truncate, and combine raw pairs")
    p.add_argument("--input", required=True, help="raw pairs (JSONL file or paired-file stem)")
    p.add_argument("--format", choices=("jsonl", "paired"), default="jsonl")
    p.add_argument(
        "--class",
        dest="length_class",
        choices=("small", "medium", "large"),
        default="medium",
    )
    p.add_argument("--tokenizer", choices=("whitespace", "bridge"), default="whitespace")
    p.add_argument("--bridge", default=None, help="server address for --tokenizer bridge")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", action="store_true", help="include corpus statistics")
    p.add_argument("--keep-all-tags", action="store_true", help="skip the tag filter")
    p.set_defaults(handler=_cmd_preprocess)

    p = sub.add_parser("train", help="fit an n-gram model on processed examples")
    p.add_argument("--input", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--alpha", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("generate", help="decode responses for one prompt")
    p.add_argument("--model", required=True, help="model file, or stdio:/tcp: server address")
    p.add_argument("--uncond", default=None, help="separate anti-model (default: the model itself)")
    p.add_argument("--prompt", required=True, help="prompt text, or a file containing it")
    p.add_argument("--config", default=None, help="JSON defaults; explicit flags win")
    p.add_argument("--strategy", choices=("greedy", "top_k", "nucleus", "random"), default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--lambda", type=float, default=None)
    p.add_argument("--mmi-window", type=int, default=None)
    p.add_argument("--mmi-after-filter", action="store_true", default=None)
    p.add_argument(
        "--class",
        dest="length_class",
        choices=("small", "medium", "large"),
        default=None,
    )
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--trace", default=None, help="write full records to this JSONL file")
    p.add_argument("--json", action="store_true", help="print full records, not just text")
    p.set_defaults(handler=_cmd_generate)

    p = sub.add_parser("metrics", help="score generated records")
    p.add_argument("--records", required=True)
    p.add_argument("--dist", default="1,2", help="comma-separated n-gram orders")
    p.add_argument("--pooled", action="store_true", help="also pool n-grams across records")
    p.add_argument("--sent-div", action="store_true")
    p.add_argument("--embedder", choices=("builtin", "bridge"), default="builtin")
    p.add_argument("--bridge", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(handler=_cmd_metrics)

    p = sub.add_parser("agreement", help="annotator agreement from a ratings table")
    p.add_argument("--ratings", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(handler=_cmd_agreement)

    p = sub.add_parser("correlate", help="rank correlation between two CSV columns")
    p.add_argument("--input", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.set_defaults(handler=_cmd_correlate)

    p = sub.add_parser("sweep-p", help="generate across the truncation-threshold grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker bound (default: logical cores)")
    p.set_defaults(handler=lambda client, args: _cmd_sweep(client, args, "p"))

    p = sub.add_parser("sweep-lambda", help="generate across the anti-model weight grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--uncond", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker bound (default: logical cores)")
    p.set_defaults(handler=lambda client, args: _cmd_sweep(client, args, "lambda"))

    p = sub.add_parser("cdf", help="candidate-set size distribution from records")
    p.add_argument("--records", required=True, help="a records file or a sweep shard directory")
    p.add_argument("--exclude", type=float, action="append", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_cdf)

    p = sub.add_parser("bridge-check", help="probe a model server for protocol conformance")
    p.add_argument("--address", required=True)
    p.set_defaults(handler=_cmd_bridge_check)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return _cmd_serve(args)
    client = ServiceClient.remote(args.server) if args.server else ServiceClient.local()
    try:
        with client:
            return args.handler(client, args)
    except ServiceFailure as exc:
        print(f"error ({exc.code}): {exc.message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
