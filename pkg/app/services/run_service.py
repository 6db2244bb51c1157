"""
Run configuration and the subcommand runner shared by the CLI and the HTTP
routes. A run configuration comes from a JSON file, with command-line flags
taking precedence over file values.
"""
import logging
import os
import sys
import time
from pathlib import Path
from typing import Literal

import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config import Config
from ..utils.errors import ConfigError, EstimationError
from .dataset_service import Dataset, TrimmingSet, dataset_from_columns, ingest_csv, write_csv
from .monte_carlo_service import McCell, rate_check, run_monte_carlo
from .pipeline_service import ESTIMATORS, PipelineSettings, diagnose, run_estimator
from .report_service import build_report, now, write_report, write_table
from .simulation_service import DgpSpec, generate, true_asf

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ESTIMATION, EXIT_CONFIG = 0, 1, 2


def _check_estimator(value: str) -> str:
    if value not in ESTIMATORS:
        raise ValueError(f"unknown estimator {value!r}; choose one of {', '.join(ESTIMATORS)}")
    return value


class TrimSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    quantiles: tuple[float, float] | None = tuple(Config.TRIM_QUANTILES)
    box: dict[str, tuple[float, float]] | None = None

    def build(self) -> TrimmingSet:
        return TrimmingSet(quantiles=self.quantiles, box=self.box)


class FirstStageSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    location_terms: list[str] | None = None
    scale_terms: list[str] = ["1"]
    proxy: str | None = None
    fixed_scale: float | None = Field(None, gt=0)
    information: Literal["opg", "hessian"] = "opg"
    fixed_beta: list[float] | None = None


class BasisSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p1: list[str] | None = None
    p2: list[str] | None = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: Literal["estimate", "simulate", "mc", "diagnose"] = "estimate"
    data: str | None = None
    columns: dict[str, list] | None = None
    dgp: DgpSpec | None = None
    estimator: str = "semiparametric"
    estimators: list[str] | None = None
    x0: list[float] = []
    x_discrete: bool | None = None
    trim: TrimSpec = TrimSpec()
    bandwidth: float | None = Field(None, gt=0)
    bandwidth_fs: float | None = Field(None, gt=0)
    degree: int | None = Field(None, ge=0)
    kernel: Literal["triweight", "biweight", "epanechnikov"] = "triweight"
    grid_size: int = Field(101, ge=2)
    radii: list[float] | None = None
    first_stage: FirstStageSpec = FirstStageSpec()
    basis: BasisSpec = BasisSpec()
    seed: int = Field(0, ge=0, lt=2 ** 64)
    reps: int = Field(2, ge=2)
    sizes: list[int] | None = None
    out: str | None = None
    threads: int | None = Field(None, ge=0)

    @field_validator("estimator")
    @classmethod
    def _known_estimator(cls, value):
        return _check_estimator(value)

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, values):
        return None if values is None else [_check_estimator(v) for v in values]

    @model_validator(mode="after")
    def _one_source(self):
        sources = sum(x is not None for x in (self.data, self.columns, self.dgp))
        if self.subcommand in ("simulate", "mc"):
            if self.dgp is None:
                raise ValueError(f"'{self.subcommand}' needs a dgp specification")
            if sources != 1:
                raise ValueError(f"'{self.subcommand}' draws from the dgp; drop the data and columns entries")
        elif sources != 1:
            raise ValueError("exactly one of data, columns or dgp must be given")
        if self.subcommand == "estimate" and not self.x0:
            raise ValueError("estimate needs a non-empty x0 list")
        return self

    def settings(self, estimator: str | None = None) -> PipelineSettings:
        fs = self.first_stage
        return PipelineSettings(
            estimator=estimator or self.estimator,
            degree=self.degree,
            bandwidth=self.bandwidth,
            kernel=self.kernel,
            trim=self.trim.build(),
            location_terms=tuple(fs.location_terms) if fs.location_terms else None,
            scale_terms=tuple(fs.scale_terms),
            proxy=fs.proxy,
            fixed_scale=fs.fixed_scale,
            information=fs.information,
            fixed_beta=tuple(fs.fixed_beta) if fs.fixed_beta else None,
            p1_terms=tuple(self.basis.p1) if self.basis.p1 else None,
            p2_terms=tuple(self.basis.p2) if self.basis.p2 else None,
            bandwidth_fs=self.bandwidth_fs,
            grid_size=self.grid_size,
            n_jobs=self.n_jobs,
        )

    @property
    def n_jobs(self) -> int:
        threads = Config.THREADS if self.threads is None else self.threads
        return threads or (os.cpu_count() or 1)

    def echo(self) -> dict:
        """Configuration as written into the report; thread count and paths are excluded."""
        return self.model_dump(mode="json", exclude={"threads", "out", "columns"}, exclude_none=True)


def _deep_merge(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Validate a JSON file merged with flag overrides (flags win)."""
    base = {}
    if path is not None:
        try:
            base = orjson.loads(Path(path).read_bytes())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except orjson.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    return parse_config(_deep_merge(base, overrides or {}))


def parse_config(values: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _dataset(config: RunConfig) -> tuple[Dataset, DgpSpec | None]:
    if config.data is not None:
        return ingest_csv(config.data, config.x_discrete), None
    if config.columns is not None:
        return dataset_from_columns(config.columns, config.x_discrete), None
    dgp = config.dgp.model_copy(update={"seed": config.seed})
    data, _ = generate(dgp)
    return data, dgp


def _estimate(config: RunConfig):
    data, dgp = _dataset(config)
    result = run_estimator(data, config.settings(), config.x0)
    results = {**result.to_dict(), "n": data.n, "dropped_rows": data.dropped_rows}
    if dgp is not None:
        quantiles = config.trim.quantiles if config.settings().uses_trim else None
        results["truth"] = {f"{x:g}": true_asf(dgp, x, quantiles) for x in config.x0}
    return results, None


def _simulate(config: RunConfig):
    dgp = config.dgp.model_copy(update={"seed": config.seed})
    data, oracle = generate(dgp)
    x0 = config.x0 or ([0.0, 1.0] if dgp.discrete else [0.0])
    results = {
        "n": data.n,
        "beta": oracle.beta.tolist(),
        "truth": {f"{x:g}": true_asf(dgp, x, config.trim.quantiles) for x in x0},
        "columns": data.to_frame().to_dict(orient="list"),
    }
    return results, data


def _resized(dgp: DgpSpec, n: int) -> DgpSpec:
    try:
        return DgpSpec.model_validate({**dgp.model_dump(), "n": n})
    except ValidationError as exc:
        raise ConfigError(f"invalid Monte Carlo sample size {n}: {exc}") from exc


def _mc(config: RunConfig):
    sizes = config.sizes or [config.dgp.n]
    estimators = tuple(config.estimators or [config.estimator])
    x0 = tuple(config.x0 or [1.0])
    cells = [
        McCell(dgp=_resized(config.dgp, n), estimators=estimators, x0=x0, replications=config.reps)
        for n in sizes
    ]
    report = run_monte_carlo(cells, config.settings(), master_seed=config.seed, n_jobs=config.n_jobs)
    results = report.to_dict()
    if len(set(sizes)) >= 3:
        results["rate_check"] = rate_check(report)
    return results, report


def _diagnose(config: RunConfig):
    data, _ = _dataset(config)
    return diagnose(data, config.settings(), config.x0, config.radii), None


_RUNNERS = {"estimate": _estimate, "simulate": _simulate, "mc": _mc, "diagnose": _diagnose}


def perform(config: RunConfig) -> tuple[dict, object]:
    """Run one subcommand; returns the report document and the raw artefact (dataset or McReport)."""
    started_at = now()
    started = time.perf_counter()
    results, artefact = _RUNNERS[config.subcommand](config)
    metadata = {
        "started_at": started_at,
        "finished_at": now(),
        "wall_seconds": time.perf_counter() - started,
        "threads": config.n_jobs,
    }
    if config.subcommand == "mc":
        metadata["cell_wall_seconds"] = artefact.wall_times
    return build_report(config.subcommand, config.echo(), results, metadata), artefact


def run(config: RunConfig) -> int:
    """Execute a run and write its outputs; returns the process exit status."""
    try:
        document, artefact = perform(config)
        if config.subcommand == "simulate":
            if config.out is None:
                artefact.to_frame().to_csv(sys.stdout, index=False, float_format="%.17g")
            else:
                write_csv(artefact, config.out)
            return EXIT_OK
        write_report(document, config.out)
        if config.subcommand == "mc":
            write_table(artefact.to_frame(), config.out)
        return EXIT_OK
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except EstimationError as exc:
        logger.error("estimation error: %s", exc)
        return EXIT_ESTIMATION
