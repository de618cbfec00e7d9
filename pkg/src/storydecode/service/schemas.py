"""Request and response bodies for the HTTP service.

Every command-line subcommand maps onto exactly one endpoint, so the
CLI stays a thin client. Paths are interpreted on the service host.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorDetail(BaseModel):
    code: str
    message: str


class CorpusStatsBody(BaseModel):
    example_count: int
    mean_tokens_per_example: float
    std_tokens_per_example: float
    total_tokens: int


class PreprocessRequest(BaseModel):
    input_path: str
    format: str = "jsonl"
    length_class: str = "medium"
    tokenizer: str = "whitespace"
    bridge_address: str | None = None
    out_path: str
    with_stats: bool = False
    wp_only: bool = True


class PreprocessResponse(BaseModel):
    example_count: int
    out_path: str
    stats: CorpusStatsBody | None = None


class TrainRequest(BaseModel):
    input_path: str
    order: int = 3
    alpha: float = 1e-6
    out_path: str


class TrainResponse(BaseModel):
    vocab_size: int
    example_count: int
    out_path: str


class DecoderConfigBody(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    strategy: str = "nucleus"
    p: float = 0.7
    k: int = 40
    temperature: float = 1.0
    mmi_lambda: float = Field(0.0, alias="lambda")
    mmi_window: int = 20
    length_class: str = "medium"
    max_tokens: int | None = None
    seed: int = 42
    mmi_after_filter: bool = False


class GenerateRequest(BaseModel):
    model_spec: str
    prompt: str
    config: DecoderConfigBody = DecoderConfigBody()
    uncond_model_spec: str | None = None
    trace_path: str | None = None
    count: int = 1


class GenerateResponse(BaseModel):
    records: list[dict]
    trace_path: str | None = None


class MetricsRequest(BaseModel):
    records_path: str
    ns: list[int] = [1, 2]
    pooled: bool = False
    sent_div: bool = False
    embedder: str = "builtin"
    bridge_address: str | None = None
    report_path: str | None = None


class MetricsResponse(BaseModel):
    report: dict
    report_path: str | None = None


class AgreementRequest(BaseModel):
    ratings_path: str
    report_path: str | None = None


class AgreementMetricBody(BaseModel):
    fleiss_kappa: float
    likert_mean: float
    items: int
    raters: int


class AgreementResponse(BaseModel):
    metrics: dict[str, AgreementMetricBody]
    report_path: str | None = None


class CorrelateRequest(BaseModel):
    input_path: str
    x: str
    y: str


class CorrelateResponse(BaseModel):
    rho: float
    p_value: float
    n: int
    exact: bool


class SweepRequest(BaseModel):
    spec_path: str
    model_spec: str
    uncond_model_spec: str | None = None
    out_dir: str
    jobs: int | None = None


class SweepResponse(BaseModel):
    param: str
    reports: list[dict]
    failures: list[dict]
    out_dir: str


class CdfRequest(BaseModel):
    records_path: str
    exclude_values: list[float] = []
    out_path: str


class CdfResponse(BaseModel):
    p_values: list[float | None]
    total_steps: int
    out_path: str


class BridgeCheckRequest(BaseModel):
    address: str


class BridgeCheckBody(BaseModel):
    name: str
    ok: bool
    detail: str


class BridgeCheckResponse(BaseModel):
    ok: bool
    checks: list[BridgeCheckBody]
