"""Command-line entry point wiring configs, backends, and pipelines.

Subcommands:

    gen    entities.jsonl -> triples.jsonl + provenance report
    eval   responses.jsonl -> report.txt + records.jsonl
    score  responses.jsonl at one level -> per-response factuality
    curve  records.jsonl -> curve.csv + curve.svg
    sim    closed loop: world -> gen -> eval -> curve, no network

Exit codes: 0 success, 1 usage/config error, 2 completed but produced an
empty result. Flags override the config file, which overrides defaults; the
API key travels only in an environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import filtering, metrics, simworld
from .backend import Backend, CachedBackend, GenerationParams, HTTPBackend
from .core import (
    DEFAULT_LEVELS,
    FactualityLevel,
    ResponseInput,
    parse_records,
    read_evaluation_records,
    write_records,
)
from .errors import ConfigError, FactctlError, RecordParseError, ValidationError
from .verify import ExactMatchVerifier, JudgeVerifier, OracleVerifier, ReferenceCorpus

logger = logging.getLogger(__name__)

API_KEY_ENV = "FACTCTL_API_KEY"


@dataclass
class PipelineConfig:
    backend: str = "sim"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = API_KEY_ENV
    verifier: str = "exact"
    labels: str = ""
    corpus: str = ""
    world: str = ""
    mode: str = "rule"
    levels: tuple = DEFAULT_LEVELS
    concurrency: int = 1
    cache_dir: str = ""
    seed: int = 0
    out: str = "out"
    prompts_dir: str = ""
    revalidate: bool = False
    levels_explicit: bool = False
    max_tokens: int = 512
    temperature: float = 0.0
    sim_entities: int = 50
    sim_facts_per_entity: int = 8
    sim_false_fraction: float = 0.25
    sim_beta: float = 100.0

    def validate(self) -> None:
        if self.backend not in ("sim", "http"):
            raise ConfigError(f"backend: unknown value {self.backend!r}")
        if self.verifier not in ("oracle", "judge", "exact"):
            raise ConfigError(f"verifier: unknown value {self.verifier!r}")
        if self.mode not in ("llm", "rule"):
            raise ConfigError(f"mode: unknown value {self.mode!r}")
        if not self.levels:
            raise ConfigError("levels: must name at least one level")
        if self.concurrency < 1:
            raise ConfigError("concurrency: must be >= 1")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens: must be >= 1")
        if self.sim_entities < 1:
            raise ConfigError("sim_entities: must be >= 1")
        if self.sim_facts_per_entity < 1:
            raise ConfigError("sim_facts_per_entity: must be >= 1")
        if not 0.0 <= self.sim_false_fraction <= 1.0:
            raise ConfigError("sim_false_fraction: must lie in [0, 1]")
        if self.sim_beta < 0:
            raise ConfigError("sim_beta: must be >= 0")

    @property
    def params(self) -> GenerationParams:
        return GenerationParams(
            max_tokens=self.max_tokens, temperature=self.temperature, seed=self.seed
        )


def parse_levels(raw: str) -> tuple:
    levels = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            levels.append(FactualityLevel(float(part)))
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"levels: {exc}") from exc
    if not levels:
        raise ConfigError("levels: must name at least one level")
    return tuple(sorted(set(levels), key=lambda level: level.value))


# config-file schema: every field except the derived levels_explicit marker
_FIELD_TYPES = {
    field.name: field.type
    for field in dataclasses.fields(PipelineConfig)
    if field.name != "levels_explicit"
}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if name == "levels":
            return parse_levels(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"expected true/false, got {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. The schema is the
    set of PipelineConfig field names (documented in the README)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    values = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config: {path}:{line_no}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"config: {path}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig()
    if getattr(args, "config", None):
        for key, value in load_config_file(args.config).items():
            setattr(config, key, value)
            if key == "levels":
                config.levels_explicit = True
    overrides = {
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "mode": getattr(args, "mode", None),
        "concurrency": getattr(args, "concurrency", None),
        "cache_dir": getattr(args, "cache_dir", None),
        "backend": getattr(args, "backend", None),
        "endpoint": getattr(args, "endpoint", None),
        "model": getattr(args, "model", None),
        "verifier": getattr(args, "verifier", None),
        "labels": getattr(args, "labels", None),
        "corpus": getattr(args, "corpus", None),
        "world": getattr(args, "world", None),
        "prompts_dir": getattr(args, "prompts_dir", None),
        "sim_entities": getattr(args, "entities_count", None),
        "sim_facts_per_entity": getattr(args, "facts_per_entity", None),
        "sim_false_fraction": getattr(args, "false_fraction", None),
        "sim_beta": getattr(args, "beta", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if getattr(args, "levels", None):
        config.levels = parse_levels(args.levels)
        config.levels_explicit = True
    if getattr(args, "revalidate", False):
        config.revalidate = True
    config.validate()
    return config


# ---------------------------------------------------------------------------
# Wiring helpers
# ---------------------------------------------------------------------------

def build_backend(config: PipelineConfig) -> Backend:
    if config.backend == "sim":
        if not config.world:
            raise ConfigError("world: the sim backend needs a world.json path")
        world = simworld.load_world(config.world)
        backend: Backend = simworld.SimBackend(world)
    else:
        if not config.endpoint:
            raise ConfigError("endpoint: the http backend needs an endpoint URL")
        if not config.model:
            raise ConfigError("model: the http backend needs a model name")
        backend = HTTPBackend(
            endpoint=config.endpoint,
            model=config.model,
            api_key=os.environ.get(config.api_key_env),
        )
    if config.cache_dir:
        backend = CachedBackend(backend, config.cache_dir)
    return backend


def build_verifier(config: PipelineConfig, backend: Optional[Backend] = None):
    if config.verifier == "oracle":
        if not config.labels:
            raise ConfigError("labels: the oracle verifier needs a labels.jsonl path")
        return OracleVerifier.from_file(config.labels)
    if not config.corpus:
        raise ConfigError(f"corpus: the {config.verifier} verifier needs a corpus path")
    corpus = ReferenceCorpus.load(config.corpus)
    if config.verifier == "exact":
        return ExactMatchVerifier(corpus)
    if backend is None:
        backend = build_backend(config)
    return JudgeVerifier(corpus, backend, prompts_dir=config.prompts_dir or None)


def _print_gen_report(report: filtering.BuildReport) -> None:
    print(f"{'level':<8}{'direct':>8}{'filtered':>10}{'skipped':>9}")
    for level_key, counts in report.per_level.items():
        print(
            f"{level_key:<8}{counts['direct']:>8}{counts['filtered']:>10}"
            f"{counts['skipped']:>9}"
        )


def _evaluate_many(
    responses: Sequence[ResponseInput],
    verifier,
    config: PipelineConfig,
    backend: Optional[Backend],
    entity_names: Optional[dict] = None,
) -> tuple:
    """Evaluate a batch; per-response failures are logged, marked failed, and
    the run continues."""
    records, failed = [], []
    for response in responses:
        try:
            records.append(
                metrics.evaluate_response(
                    response,
                    verifier,
                    mode=config.mode,
                    backend=backend,
                    entity_name=(entity_names or {}).get(response.question_id),
                    params=config.params,
                    prompts_dir=config.prompts_dir or None,
                )
            )
        except FactctlError as exc:
            logger.error("response for %s failed: %s", response.question_id, exc)
            failed.append(response.question_id)
    return records, failed


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(config: PipelineConfig, args: argparse.Namespace) -> int:
    questions = parse_records(args.entities_file, "entities")
    backend = build_backend(config)
    verifier = build_verifier(config, backend)
    result = filtering.build_dataset(
        questions,
        config.levels,
        backend,
        verifier,
        mode=config.mode,
        out_dir=config.out,
        concurrency=config.concurrency,
        revalidate=config.revalidate,
        params=config.params,
        prompts_dir=config.prompts_dir or None,
    )
    _print_gen_report(result.report)
    print(f"wrote {len(result.triples)} triple(s) to {result.triples_path}")
    return 0 if result.triples else 2


def cmd_eval(config: PipelineConfig, args: argparse.Namespace) -> int:
    responses = parse_records(args.responses_file, "responses")
    if not responses:
        raise ConfigError(f"responses: {args.responses_file} contains no records")
    backend = build_backend(config) if (config.mode == "llm" or config.verifier == "judge") else None
    verifier = build_verifier(config, backend)
    entity_names = None
    if getattr(args, "entities_file", None):
        entity_names = {
            question.id: question.entity_name
            for question in parse_records(args.entities_file, "entities")
        }
    records, failed = _evaluate_many(responses, verifier, config, backend, entity_names)
    if failed:
        print(f"{len(failed)} response(s) failed verification: {', '.join(failed)}")
    if not records:
        return 2
    out_dir = Path(config.out)
    write_records(out_dir / "records.jsonl", records)
    grid = metrics.format_adherence_grid({args.name: records}, config.levels)
    metrics.write_report(out_dir / "report.txt", grid)
    print(grid, end="")
    return 0


def cmd_score(config: PipelineConfig, args: argparse.Namespace) -> int:
    level = FactualityLevel(args.level)
    responses = parse_records(args.responses_file, "responses")
    if not responses:
        raise ConfigError(f"responses: {args.responses_file} contains no records")
    backend = build_backend(config) if (config.mode == "llm" or config.verifier == "judge") else None
    verifier = build_verifier(config, backend)
    records, failed = _evaluate_many(responses, verifier, config, backend)
    for record in records:
        shown = "undefined" if record.factuality is None else f"{record.factuality:.3f}"
        flag = "yes" if metrics.record_adherence(record, level) else "no"
        count, per_100 = metrics.informativeness(record)
        print(
            f"{record.question_id}: factuality={shown} facts={count} "
            f"facts_per_100_words={per_100:.1f} meets c={level.key()}: {flag}"
        )
    if failed:
        print(f"{len(failed)} response(s) failed verification")
    if not records:
        return 2
    rate = metrics.adherence_rate(records, level)
    print(f"adherence at c={level.key()}: {metrics.format_percent(rate)}% of {len(records)}")
    return 0


def cmd_curve(config: PipelineConfig, args: argparse.Namespace) -> int:
    records = read_evaluation_records(args.records_file)
    out_dir = Path(config.out)
    points = metrics.tradeoff_curve(
        records,
        # without an explicit grid, plot every level found in the records
        levels=config.levels if config.levels_explicit else None,
        csv_path=out_dir / "curve.csv",
        svg_path=out_dir / "curve.svg",
    )
    for point in points:
        print(
            f"c={point.level.key()}: factuality={point.mean_factuality:.3f} "
            f"facts={point.mean_informativeness:.2f} "
            f"adherence={metrics.format_percent(point.adherence_rate)}% n={point.n}"
        )
    return 0 if points else 2


def cmd_sim(config: PipelineConfig, args: argparse.Namespace) -> int:
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = simworld.generate_world(
        seed=config.seed,
        n_entities=config.sim_entities,
        facts_per_entity=config.sim_facts_per_entity,
        false_fraction=config.sim_false_fraction,
        beta=config.sim_beta,
    )
    simworld.save_world(world, out_dir / "world.json")
    questions = simworld.world_questions(world)
    backend: Backend = simworld.SimBackend(world)
    if config.cache_dir:
        backend = CachedBackend(backend, config.cache_dir)
    oracle = OracleVerifier(simworld.world_oracle_labels(world))
    result = filtering.build_dataset(
        questions,
        config.levels,
        backend,
        oracle,
        mode="rule",
        out_dir=out_dir,
        concurrency=config.concurrency,
        params=config.params,
    )
    _print_gen_report(result.report)

    # Evaluate the emitted completions against the world's reference corpus.
    examiner = ExactMatchVerifier(simworld.world_corpus(world))
    responses = [
        ResponseInput(
            question_id=triple.question.id,
            text=triple.response.text,
            level=triple.level,
        )
        for triple in result.triples
    ]
    records, failed = _evaluate_many(responses, examiner, config, backend=None)
    if failed:
        print(f"{len(failed)} completion(s) failed verification")
    if records:
        write_records(out_dir / "records.jsonl", records)
        grid = metrics.format_adherence_grid({"sim": records}, config.levels)
        metrics.write_report(out_dir / "report.txt", grid)
        print(grid, end="")
        metrics.tradeoff_curve(
            records,
            levels=config.levels,
            csv_path=out_dir / "curve.csv",
            svg_path=out_dir / "curve.svg",
        )
    return 0 if result.triples else 2


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key = value config file")
    shared.add_argument("--seed", type=int, help="seed for all randomness")
    shared.add_argument("--out", help="output directory (default: out)")
    shared.add_argument("--mode", choices=("llm", "rule"), help="segment/merge mode")
    shared.add_argument("--levels", help="comma-separated levels, e.g. 0.8,0.9,1.0")
    shared.add_argument("--concurrency", type=int, help="max in-flight requests")
    shared.add_argument("--cache-dir", dest="cache_dir", help="backend response cache directory")
    shared.add_argument(
        "--revalidate",
        action="store_true",
        default=False,
        help="re-segment and re-verify merged responses, demoting shortfalls",
    )
    shared.add_argument("--prompts-dir", dest="prompts_dir", help="prompt template override directory")
    shared.add_argument("--verbose", action="store_true", help="verbose logging")

    backend_flags = argparse.ArgumentParser(add_help=False)
    backend_flags.add_argument("--backend", choices=("sim", "http"), help="model backend kind")
    backend_flags.add_argument("--world", help="world.json for the sim backend")
    backend_flags.add_argument("--endpoint", help="chat-completion endpoint URL")
    backend_flags.add_argument("--model", help="model name for the http backend")

    verifier_flags = argparse.ArgumentParser(add_help=False)
    verifier_flags.add_argument(
        "--verifier", choices=("oracle", "judge", "exact"), help="fact verifier kind"
    )
    verifier_flags.add_argument("--labels", help="labels.jsonl for the oracle verifier")
    verifier_flags.add_argument("--corpus", help="reference corpus (directory or JSONL)")

    parser = argparse.ArgumentParser(
        prog="factctl",
        description="Build factuality-controlled training data and evaluate "
        "responses on factuality adherence and informativeness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser(
        "gen",
        parents=[shared, backend_flags, verifier_flags],
        help="build training triples across the level grid",
    )
    gen.add_argument("entities_file", help="entities.jsonl")
    gen.set_defaults(func=cmd_gen)

    eval_cmd = sub.add_parser(
        "eval",
        parents=[shared, backend_flags, verifier_flags],
        help="evaluate a response set: adherence table + records",
    )
    eval_cmd.add_argument("responses_file", help="responses.jsonl")
    eval_cmd.add_argument("--entities", dest="entities_file", help="entities.jsonl for entity names")
    eval_cmd.add_argument("--name", default="responses", help="row label in the report grid")
    eval_cmd.set_defaults(func=cmd_eval)

    score = sub.add_parser(
        "score",
        parents=[shared, backend_flags, verifier_flags],
        help="score one response file at one level",
    )
    score.add_argument("responses_file", help="responses.jsonl")
    score.add_argument("--level", type=float, required=True, help="factuality level in [0, 1]")
    score.set_defaults(func=cmd_score)

    curve = sub.add_parser(
        "curve",
        parents=[shared],
        help="emit the factuality/informativeness trade-off curve",
    )
    curve.add_argument("records_file", help="records.jsonl from eval")
    curve.set_defaults(func=cmd_curve)

    sim = sub.add_parser(
        "sim",
        parents=[shared],
        help="closed-loop run in a synthetic world (no network)",
    )
    sim.add_argument("--entities", dest="entities_count", type=int, help="number of entities")
    sim.add_argument(
        "--facts-per-entity", dest="facts_per_entity", type=int, help="facts per entity"
    )
    sim.add_argument(
        "--false-fraction",
        dest="false_fraction",
        type=float,
        help="per-fact probability of a fabricated fact",
    )
    sim.add_argument("--beta", type=float, help="confidence calibration sharpness")
    sim.set_defaults(func=cmd_sim)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        return args.func(config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RecordParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FactctlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
