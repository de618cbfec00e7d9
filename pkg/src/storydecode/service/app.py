"""HTTP service wrapping the library.

Errors travel as {"detail": {"code": <family>, "message": ...}} with
usage problems as 400, data problems as 422, and bridge problems as
502; clients map those codes straight onto process exit codes.
"""

from __future__ import annotations

import csv
import json
import os
from contextlib import ExitStack

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..bridge_client import BridgeEmbedder, BridgeModel, BridgeTokenizer, connect, run_conformance
from ..corpus import (
    LengthClass,
    corpus_stats,
    paired_input_paths,
    process_corpus,
    read_examples_jsonl,
    read_pairs_jsonl,
    read_pairs_paired,
    write_examples_jsonl,
)
from ..decode import DecoderConfig, generate, read_records_jsonl, write_records_jsonl
from ..errors import EmptyInput, StoryDecodeError, UsageError, family_of
from ..lm import NGramLM, train_ngram
from ..manifest import RunManifest, manifest_path_for
from ..metrics import (
    BuiltinEmbedder,
    fleiss_kappa,
    likert_mean,
    report_for_records,
    spearman,
)
from ..sweep import SweepSpec, run_lambda_sweep, run_p_sweep, token_space_cdf, write_cdf_csv
from ..tokenize import get_tokenizer
from . import schemas

_STATUS_BY_FAMILY = {"usage": 400, "data": 422, "bridge": 502}


def create_app() -> FastAPI:
    app = FastAPI(title="storydecode", version=__version__)
    model_cache: dict[tuple[str, float], NGramLM] = {}

    @app.exception_handler(StoryDecodeError)
    async def _story_error(_request: Request, exc: StoryDecodeError) -> JSONResponse:
        family = family_of(exc)
        return JSONResponse(
            status_code=_STATUS_BY_FAMILY[family],
            content={"detail": {"code": family, "message": str(exc)}},
        )

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(_request: Request, exc: FileNotFoundError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"detail": {"code": "data", "message": str(exc)}},
        )

    def load_ngram(path: str) -> NGramLM:
        key = (os.path.abspath(path), os.path.getmtime(path))
        model = model_cache.get(key)
        if model is None:
            model = NGramLM.load(path)
            model_cache.clear()
            model_cache[key] = model
        return model

    def resolve_model(spec: str, stack: ExitStack):
        if spec == "bridge" or spec.startswith(("bridge:", "stdio:", "tcp:")):
            conn = stack.enter_context(connect(spec))
            return BridgeModel(conn)
        return load_ngram(spec)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/preprocess", response_model=schemas.PreprocessResponse)
    def preprocess(req: schemas.PreprocessRequest) -> schemas.PreprocessResponse:
        if req.format == "jsonl":
            pairs = read_pairs_jsonl(req.input_path)
        elif req.format == "paired":
            source, target = paired_input_paths(req.input_path)
            pairs = read_pairs_paired(source, target)
        else:
            raise UsageError(f"unknown input format: {req.format!r}")
        with ExitStack() as stack:
            if req.tokenizer == "bridge":
                address = req.bridge_address or "bridge"
                tokenizer = BridgeTokenizer(stack.enter_context(connect(address)))
            elif req.tokenizer == "whitespace":
                tokenizer = get_tokenizer(req.tokenizer)
            else:
                raise UsageError(f"unknown tokenizer: {req.tokenizer!r}")
            examples = list(
                process_corpus(
                    pairs,
                    LengthClass.from_name(req.length_class),
                    tokenizer,
                    wp_only=req.wp_only,
                )
            )
        if not examples:
            raise EmptyInput("no usable pairs after filtering")
        write_examples_jsonl(examples, req.out_path)
        RunManifest(
            command="preprocess",
            args=req.model_dump(),
            outputs=(req.out_path,),
            record_count=len(examples),
        ).write(manifest_path_for(req.out_path))
        stats = None
        if req.with_stats:
            stats = schemas.CorpusStatsBody(**corpus_stats(examples).to_json())
        return schemas.PreprocessResponse(
            example_count=len(examples), out_path=req.out_path, stats=stats
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
        examples = read_examples_jsonl(req.input_path)
        model = train_ngram(
            [ex.text for ex in examples], order=req.order, alpha=req.alpha
        )
        model.save(req.out_path)
        RunManifest(
            command="train",
            args=req.model_dump(),
            outputs=(req.out_path,),
            record_count=len(examples),
        ).write(manifest_path_for(req.out_path))
        return schemas.TrainResponse(
            vocab_size=model.vocab_size,
            example_count=len(examples),
            out_path=req.out_path,
        )

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate_endpoint(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
        if req.count < 1:
            raise UsageError("count must be positive")
        body = req.config.model_dump(by_alias=True)
        records = []
        with ExitStack() as stack:
            model = resolve_model(req.model_spec, stack)
            uncond = (
                resolve_model(req.uncond_model_spec, stack)
                if req.uncond_model_spec
                else None
            )
            for i in range(req.count):
                config = DecoderConfig.from_json({**body, "seed": body["seed"] + i})
                if isinstance(model, BridgeModel):
                    model.configure_for(config)
                records.append(
                    generate(model, req.prompt, config, uncond_model=uncond)
                )
        if req.trace_path:
            write_records_jsonl(records, req.trace_path)
            RunManifest(
                command="generate",
                args=req.model_dump(),
                outputs=(req.trace_path,),
                record_count=len(records),
                seed=body["seed"],
            ).write(manifest_path_for(req.trace_path))
        return schemas.GenerateResponse(
            records=[r.to_json() for r in records], trace_path=req.trace_path
        )

    @app.post("/metrics", response_model=schemas.MetricsResponse)
    def metrics_endpoint(req: schemas.MetricsRequest) -> schemas.MetricsResponse:
        records = read_records_jsonl(req.records_path)
        if not records:
            raise EmptyInput(f"no records in {req.records_path}")
        with ExitStack() as stack:
            if req.embedder == "bridge":
                address = req.bridge_address or "bridge"
                embedder = BridgeEmbedder(stack.enter_context(connect(address)))
            elif req.embedder == "builtin":
                embedder = BuiltinEmbedder()
            else:
                raise UsageError(f"unknown embedder: {req.embedder!r}")
            report = report_for_records(
                records,
                ns=req.ns,
                pooled=req.pooled,
                diversity=req.sent_div,
                embedder=embedder,
            ).to_json()
        if req.report_path:
            with open(req.report_path, "w", encoding="utf-8") as fh:
                json.dump(report, fh, sort_keys=True, indent=2)
                fh.write("\n")
            RunManifest(
                command="metrics",
                args=req.model_dump(),
                outputs=(req.report_path,),
                record_count=len(records),
            ).write(manifest_path_for(req.report_path))
        return schemas.MetricsResponse(report=report, report_path=req.report_path)

    @app.post("/agreement", response_model=schemas.AgreementResponse)
    def agreement(req: schemas.AgreementRequest) -> schemas.AgreementResponse:
        from ..metrics import read_ratings_csv

        matrices = read_ratings_csv(req.ratings_path)
        out = {}
        for name in sorted(matrices):
            matrix = matrices[name]
            out[name] = schemas.AgreementMetricBody(
                fleiss_kappa=fleiss_kappa(matrix),
                likert_mean=likert_mean(matrix),
                items=len(matrix.item_ids),
                raters=matrix.raters_per_item,
            )
        if req.report_path:
            with open(req.report_path, "w", encoding="utf-8") as fh:
                json.dump(
                    {k: v.model_dump() for k, v in out.items()},
                    fh,
                    sort_keys=True,
                    indent=2,
                )
                fh.write("\n")
        return schemas.AgreementResponse(metrics=out, report_path=req.report_path)

    @app.post("/correlate", response_model=schemas.CorrelateResponse)
    def correlate(req: schemas.CorrelateRequest) -> schemas.CorrelateResponse:
        xs: list[float] = []
        ys: list[float] = []
        with open(req.input_path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            for col in (req.x, req.y):
                if col not in fields:
                    raise UsageError(f"no column {col!r}; file has {fields}")
            for row in reader:
                xs.append(float(row[req.x]))
                ys.append(float(row[req.y]))
        result = spearman(xs, ys)
        return schemas.CorrelateResponse(**result.to_json())

    def _sweep_common(req: schemas.SweepRequest, param: str) -> schemas.SweepResponse:
        spec = SweepSpec.load(req.spec_path)
        with ExitStack() as stack:
            model = resolve_model(req.model_spec, stack)
            if param == "p":
                result = run_p_sweep(model, spec, out_dir=req.out_dir, jobs=req.jobs)
            else:
                uncond = (
                    resolve_model(req.uncond_model_spec, stack)
                    if req.uncond_model_spec
                    else model
                )
                result = run_lambda_sweep(
                    model, spec, uncond_model=uncond, out_dir=req.out_dir, jobs=req.jobs
                )
        RunManifest(
            command=f"sweep-{param}",
            args=req.model_dump(),
            outputs=(req.out_dir,),
            record_count=sum(c.report.record_count for c in result.cells),
            seed=spec.base_seed,
        ).write(os.path.join(req.out_dir, "manifest.json"))
        return schemas.SweepResponse(
            param=result.param,
            reports=[r.to_json() for r in result.reports],
            failures=[f.to_json() for f in result.failures],
            out_dir=req.out_dir,
        )

    @app.post("/sweep/p", response_model=schemas.SweepResponse)
    def sweep_p(req: schemas.SweepRequest) -> schemas.SweepResponse:
        return _sweep_common(req, "p")

    @app.post("/sweep/lambda", response_model=schemas.SweepResponse)
    def sweep_lambda(req: schemas.SweepRequest) -> schemas.SweepResponse:
        return _sweep_common(req, "lambda")

    @app.post("/cdf", response_model=schemas.CdfResponse)
    def cdf(req: schemas.CdfRequest) -> schemas.CdfResponse:
        def shard_value(filename: str) -> float | None:
            parts = os.path.splitext(filename)[0].split("_")
            if len(parts) == 3:
                try:
                    return float(parts[2])
                except ValueError:
                    return None
            return None

        groups: dict[float | None, list] = {}
        if os.path.isdir(req.records_path):
            shards = sorted(
                f for f in os.listdir(req.records_path) if f.endswith(".jsonl")
            )
            if not shards:
                raise EmptyInput(f"no .jsonl shards in {req.records_path}")
            for filename in shards:
                value = shard_value(filename)
                if value is None:
                    raise UsageError(
                        f"cannot read a grid value from shard name {filename!r}"
                    )
                if any(value == ex for ex in req.exclude_values):
                    continue
                records = read_records_jsonl(os.path.join(req.records_path, filename))
                if records:
                    groups.setdefault(value, []).extend(records)
        else:
            records = read_records_jsonl(req.records_path)
            value = shard_value(os.path.basename(req.records_path))
            if value is not None and any(value == ex for ex in req.exclude_values):
                records = []
            if records:
                groups[value] = records
        if not groups:
            raise EmptyInput("no decoding steps left after exclusions")
        series = token_space_cdf(groups)
        write_cdf_csv(series, req.out_path)
        RunManifest(
            command="cdf",
            args=req.model_dump(),
            outputs=(req.out_path,),
        ).write(manifest_path_for(req.out_path))
        return schemas.CdfResponse(
            p_values=[s.p for s in series],
            total_steps=sum(s.total_steps for s in series),
            out_path=req.out_path,
        )

    @app.post("/bridge/check", response_model=schemas.BridgeCheckResponse)
    def bridge_check(req: schemas.BridgeCheckRequest) -> schemas.BridgeCheckResponse:
        with connect(req.address) as conn:
            checks = run_conformance(conn)
        return schemas.BridgeCheckResponse(
            ok=all(c.ok for c in checks),
            checks=[
                schemas.BridgeCheckBody(name=c.name, ok=c.ok, detail=c.detail)
                for c in checks
            ],
        )

    return app
