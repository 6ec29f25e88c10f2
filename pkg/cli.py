"""Command-line entry point: seminorm, decompose, whitney, apply, weaktype, verify, trace, range."""

import argparse
import json
import logging
import math
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
import yaml
from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from assets.kernel_library import ASSET_DIR, kernel_description, kernel_oracle, load_kernel, seminorm_oracle_key
from core import __version__
from core.decomposition import (
    cz_decompose,
    decomposition_report,
    extend_to_root,
    ntv_decompose,
    whitney_structure,
)
from core.errors import ConfigError, CzkitError
from core.grid import read_grid_function_csv, write_grid_function_csv
from core.kernels import SeminormParams, hormander_seminorm, hr_seminorm, watson_seminorm
from core.operator import (
    OperatorSpec,
    apply_operator,
    interpolation_range,
    log_alpha_grid,
    weak_type_quasi_norm,
)
from core.verify import trace_proof, verify_lp_range, verify_theorem1
from tasks.testset import TESTSETS, ProbeFunction

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_INCONCLUSIVE = 3
INCONCLUSIVE_TRUNCATION = 0.1
WHITNEY_BRACKET = (2.0, 6.0)
COMMANDS = ("seminorm", "decompose", "whitney", "apply", "weaktype", "verify", "trace", "range")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    command: Literal["seminorm", "decompose", "whitney", "apply", "weaktype", "verify", "trace", "range"]
    kernel: str = "hilbert"
    n: int | None = None
    size_constant: float | None = None
    q: float = 1.0
    s: float = 2.0
    bound: float | None = Field(default=None, alias="B")
    r: float = math.inf
    family: Literal["hr", "watson", "hormander"] = "hr"
    method: Literal["cz", "ntv"] = "cz"
    height: float | None = None
    alpha: float = 1.0
    input: Path | None = None
    omega: Path | None = None
    testset: str | list[Path] = "shipped"
    testset_size: int = 20
    alpha_range: tuple[float, float] = (1e-3, 1e2)
    alphas_per_decade: int = 50
    p_samples: list[float] = []
    seminorm: float | None = None
    seminorm_params: SeminormParams = SeminormParams()
    output: Path = Path("results")
    seed: int = 0
    workers: int | None = None
    verbose: bool = False

    @field_validator("q", "s", "r", mode="before")
    @classmethod
    def _exponent(cls, value: Any) -> float:
        # "inf" is accepted wherever an exponent is
        return float(value) if isinstance(value, str) else value

    @field_validator("input", "omega")
    @classmethod
    def _exists(cls, value: Path | None) -> Path | None:
        if value is not None and not value.exists():
            raise ValueError(f"file {value} does not exist")
        return value

    @field_validator("testset")
    @classmethod
    def _known_testset(cls, value: str | list[Path]) -> str | list[Path]:
        if isinstance(value, str):
            if value not in TESTSETS:
                raise ValueError(f"unknown testset {value!r}; expected one of {sorted(TESTSETS)} or a list of CSV paths")
            return value
        for path in value:
            if not path.exists():
                raise ValueError(f"testset file {path} does not exist")
        return value

    @model_validator(mode="after")
    def _command_requirements(self) -> "RunConfig":
        if not self.q >= 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if not self.s >= 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.command in ("verify", "trace", "range") and not self.s > self.q:
            raise ValueError(f"{self.command} needs s > q, got s={self.s}, q={self.q}")
        if self.command in ("verify", "trace") and self.bound is None:
            raise ValueError(f"{self.command} needs the L^s operator bound B (--B or 'B:' in the config)")
        if self.command in ("decompose", "apply", "weaktype") and self.input is None:
            raise ValueError(f"{self.command} needs --input")
        if self.command == "decompose" and self.height is None:
            raise ValueError("decompose needs --height")
        if self.command == "whitney" and self.omega is None:
            raise ValueError("whitney needs --omega")
        return self

    def echo(self) -> dict:
        return _jsonable(self.model_dump(by_alias=True))


def _jsonable(value: Any) -> Any:
    """Plain JSON types, with infinities written as "inf"."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, BaseModel):
        return _jsonable(value.model_dump())
    return value


def _json_print(payload: dict):
    print(json.dumps(payload, indent=2, sort_keys=True))


def _write_json(payload: dict, path: Path):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def render_summary(report: dict, path: Path):
    env = Environment(loader=FileSystemLoader(ASSET_DIR / "templates"), keep_trailing_newline=True)
    path.write_text(env.get_template("summary.md.j2").render(report=report))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _kernel(config: RunConfig):
    return load_kernel(config.kernel, config.n, config.size_constant)


def _spec(config: RunConfig) -> OperatorSpec:
    # apply and range never read B
    bound = 1.0 if config.bound is None else config.bound
    return OperatorSpec(_kernel(config), config.s, bound)


def _testset(config: RunConfig, n: int) -> list[ProbeFunction]:
    if isinstance(config.testset, str):
        return TESTSETS[config.testset](n, config.seed, config.testset_size)
    return [ProbeFunction(path.stem, read_grid_function_csv(path)) for path in config.testset]


def run_seminorm(config: RunConfig) -> tuple[dict, int]:
    kernel = _kernel(config)
    params = config.seminorm_params
    match config.family:
        case "hr":
            estimate = hr_seminorm(kernel, config.r, params, config.workers, progress=True)
        case "watson":
            estimate = watson_seminorm(kernel, config.r, params, config.workers, progress=True)
        case "hormander":
            estimate = hormander_seminorm(kernel, params, config.workers, progress=True)
    pd.DataFrame(estimate.slices, columns=["R", "value"]).to_csv(
        config.output / "seminorm_slices.csv", index=False, float_format="%.17g"
    )
    report = estimate.to_dict()
    report["kernel"] = kernel.label
    report["description"] = kernel_description(kernel.label)
    oracle = kernel_oracle(kernel.label.partition(":")[0], seminorm_oracle_key(config.family, config.r))
    if oracle is not None:
        report["oracle"] = oracle
        report["oracle_rel_error"] = abs(estimate.value - oracle) / oracle if oracle else abs(estimate.value)
    if estimate.relative_truncation > INCONCLUSIVE_TRUNCATION:
        logger.warning("truncation error %.3g exceeds 10%% of the value", estimate.truncation_error)
        return report, EXIT_INCONCLUSIVE
    return report, EXIT_OK


def run_decompose(config: RunConfig) -> tuple[dict, int]:
    f = read_grid_function_csv(config.input)
    match config.method:
        case "cz":
            dec = cz_decompose(extend_to_root(f, config.q, config.height), config.q, config.height)
        case "ntv":
            dec = ntv_decompose(f, config.q, config.height)
    write_grid_function_csv(dec.g, config.output / "good.csv")
    write_grid_function_csv(dec.b, config.output / "bad.csv")
    report = decomposition_report(dec)
    report["method"] = config.method
    passed = all(check["pass"] for check in report["properties"].values())
    return report, EXIT_OK if passed else EXIT_FAILED


def run_whitney(config: RunConfig) -> tuple[dict, int]:
    omega = read_grid_function_csv(config.omega)
    result = whitney_structure(omega)
    ratios = result.ratios()
    lo, hi = WHITNEY_BRACKET
    cell = omega.grid.cell_volume
    report = {
        "cubes": [
            {"center": [float(c) for c in cube.center], "side": cube.side, "distance": result.distance(i), "ratio": ratio}
            for i, (cube, ratio) in enumerate(zip(result.cubes, ratios))
        ],
        "residue_measure": float(result.residue.sum()) * cell,
        "residue_bound": result.boundary_cells * cell,
        "bracket": {"lower": lo, "upper": hi, "pass": all(lo <= r <= hi for r in ratios)},
    }
    return report, EXIT_OK if report["bracket"]["pass"] else EXIT_FAILED


def run_apply(config: RunConfig) -> tuple[dict, int]:
    f = read_grid_function_csv(config.input)
    tf = apply_operator(_spec(config), f, workers=config.workers, progress=True)
    write_grid_function_csv(tf, config.output / "apply.csv")
    report = {"kernel": config.kernel, "max_abs": tf.max_abs(), "excluded_targets": int(tf.flags.sum())}
    return report, EXIT_OK


def run_weaktype(config: RunConfig) -> tuple[dict, int]:
    u = read_grid_function_csv(config.input)
    alphas = log_alpha_grid(*config.alpha_range, config.alphas_per_decade)
    result = weak_type_quasi_norm(u, config.q, alphas)
    pd.DataFrame({"alpha": result.alphas, "distribution": result.distribution, "curve": result.curve()}).to_csv(
        config.output / "weaktype.csv", index=False, float_format="%.17g"
    )
    return result.to_dict(), EXIT_OK


def run_verify(config: RunConfig) -> tuple[dict, int]:
    spec = _spec(config)
    probes = _testset(config, spec.kernel.dimension)
    report = verify_theorem1(
        spec,
        config.q,
        [p.function for p in probes],
        log_alpha_grid(*config.alpha_range, config.alphas_per_decade),
        config.method,
        labels=[p.label for p in probes],
        seminorm=config.seminorm,
        params=config.seminorm_params,
        workers=config.workers,
        progress=True,
    )
    pd.DataFrame(
        {"label": report.labels, "max_ratio": [max(row, default=0.0) for row in report.ratios]}
    ).to_csv(config.output / "verify.csv", index=False, float_format="%.17g")
    out = report.to_dict()
    match report.verdict:
        case "pass":
            return out, EXIT_OK
        case "fail":
            return out, EXIT_FAILED
        case _:
            return out, EXIT_INCONCLUSIVE


def run_trace(config: RunConfig) -> tuple[dict, int]:
    spec = _spec(config)
    if config.input is not None:
        f = read_grid_function_csv(config.input)
    else:
        f = TESTSETS["shipped"](spec.kernel.dimension, config.seed, 1)[0].function
    trace = trace_proof(
        config.method,
        spec,
        f,
        config.alpha,
        config.q,
        seminorm=config.seminorm,
        params=config.seminorm_params,
        workers=config.workers,
    )
    out = trace.to_dict()
    pd.DataFrame(out["steps"]).to_csv(config.output / "trace.csv", index=False, float_format="%.17g")
    return out, EXIT_OK if trace.overall else EXIT_FAILED


def run_range(config: RunConfig) -> tuple[dict, int]:
    interval = interpolation_range(config.q, config.s)
    out = interval.to_dict()
    out["is_limited"] = interval.is_limited
    if not config.p_samples:
        return out, EXIT_OK
    spec = _spec(config)
    probes = _testset(config, spec.kernel.dimension)
    report = verify_lp_range(spec, config.q, [p.function for p in probes], config.p_samples, config.workers, progress=True)
    out.update(report.to_dict())
    return out, EXIT_OK if report.stable else EXIT_FAILED


RUNNERS = {
    "seminorm": run_seminorm,
    "decompose": run_decompose,
    "whitney": run_whitney,
    "apply": run_apply,
    "weaktype": run_weaktype,
    "verify": run_verify,
    "trace": run_trace,
    "range": run_range,
}


def run(config: RunConfig) -> int:
    """Run one command, write its artifacts to config.output and print the JSON report."""
    config.output.mkdir(parents=True, exist_ok=True)
    report, status = RUNNERS[config.command](config)
    report = _jsonable(report)
    report["version"] = __version__
    report["config"] = config.echo()
    _write_json(report, config.output / f"{config.command}.json")
    if config.command in ("verify", "trace"):
        render_summary({"command": config.command, **report}, config.output / "summary.md")
    _json_print(report)
    return status


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def register_commands(sub: argparse._SubParsersAction):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML file of run settings; flags override it.")
    common.add_argument("--output", type=Path, default=None, help="Directory for JSON/CSV artifacts.")
    common.add_argument("--workers", type=int, default=None, help="Worker processes (default: $CZKIT_WORKERS or all cores).")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--verbose", action="store_true", default=None)

    kernel = argparse.ArgumentParser(add_help=False)
    kernel.add_argument("--kernel", type=str, default=None, help="zero, hilbert, bump, riesz:i or custom:<path>.")
    kernel.add_argument("--n", type=int, default=None, help="Dimension for kernels defined in several.")
    kernel.add_argument("--size-constant", dest="size_constant", type=float, default=None)

    strong = argparse.ArgumentParser(add_help=False)
    strong.add_argument("--method", choices=["cz", "ntv"], default=None)
    strong.add_argument("--q", type=float, default=None)
    strong.add_argument("--s", type=float, default=None, help="Strong-type exponent; 'inf' accepted.")
    strong.add_argument("--B", dest="B", type=float, default=None, help="L^s operator bound.")
    strong.add_argument("--seminorm", type=float, default=None, help="Use this [K] instead of computing it.")

    seminorm = sub.add_parser("seminorm", parents=[common, kernel], help="Estimate a kernel seminorm")
    seminorm.add_argument("--r", type=float, default=None)
    family = seminorm.add_mutually_exclusive_group()
    family.add_argument("--watson", dest="family", action="store_const", const="watson", default=None)
    family.add_argument("--hormander", dest="family", action="store_const", const="hormander", default=None)

    decompose = sub.add_parser("decompose", parents=[common], help="CZ or NTV decomposition of a CSV function")
    decompose.add_argument("--method", choices=["cz", "ntv"], default=None)
    decompose.add_argument("--q", type=float, default=None)
    decompose.add_argument("--height", type=float, default=None)
    decompose.add_argument("--input", type=Path, default=None)

    whitney = sub.add_parser("whitney", parents=[common], help="Whitney cubes of a 0/1 CSV set")
    whitney.add_argument("--omega", type=Path, default=None)

    apply = sub.add_parser("apply", parents=[common, kernel], help="Apply T to a CSV function")
    apply.add_argument("--input", type=Path, default=None)

    weaktype = sub.add_parser("weaktype", parents=[common], help="Weak L^q quasi-norm of a CSV function")
    weaktype.add_argument("--q", type=float, default=None)
    weaktype.add_argument("--input", type=Path, default=None)

    verify = sub.add_parser("verify", parents=[common, kernel, strong], help="Check the weak-type bound over a testset")
    verify.add_argument("--testset", nargs="+", default=None, help="A built-in testset name or CSV paths.")
    verify.add_argument("--testset-size", dest="testset_size", type=int, default=None)

    trace = sub.add_parser("trace", parents=[common, kernel, strong], help="Trace one proof on a concrete input")
    trace.add_argument("--alpha", type=float, default=None)
    trace.add_argument("--input", type=Path, default=None)

    range_ = sub.add_parser("range", parents=[common, kernel], help="L^p range from weak (q, q) and strong (s, s)")
    range_.add_argument("--q", type=float, default=None)
    range_.add_argument("--s", type=float, default=None)
    range_.add_argument("--B", dest="B", type=float, default=None)
    range_.add_argument("--p", dest="p_samples", type=float, nargs="+", default=None)
    range_.add_argument("--testset", nargs="+", default=None)
    range_.add_argument("--testset-size", dest="testset_size", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Calderon-Zygmund toolkit: seminorms, decompositions and weak-type checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    register_commands(sub)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file {args.config} does not exist")
        try:
            with open(args.config, "r") as f:
                values = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{args.config}: malformed YAML: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"{args.config}: expected a mapping of settings")
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command")}
    if "testset" in flags:
        names = flags["testset"]
        flags["testset"] = names[0] if len(names) == 1 and names[0] in TESTSETS else [Path(p) for p in names]
    values.update(flags)
    values["command"] = args.command
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(str(e))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(load_config(args))
    except CzkitError as e:
        _json_print({"error": str(e), "type": type(e).__name__})
        return EXIT_INPUT


if __name__ == "__main__":
    import multiprocessing as mp

    try:
        mp.set_start_method("spawn")
    except RuntimeError:
        pass
    raise SystemExit(main())
