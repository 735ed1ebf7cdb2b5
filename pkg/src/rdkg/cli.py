"""Command-line pipeline: ingest -> bootstrap -> align -> refine -> report.

Stages communicate through files (lecture-space artifact, KG JSON,
trace JSONL) so experiments can swap graphs or embeddings without
re-parsing. Exit codes are stable: 0 success, 1 usage error, 2 input
validation error, 3 numerical failure.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import MISSING, fields
from pathlib import Path

import click

from . import analysis, kg as kgmod, lecture as lecmod
from .config import RunConfig, load_run_config
from .embeddings import feature_cost, provider_from_config
from .errors import InputError, NumericalError, ProviderError
from .kg import ALLOWED_RELATIONS
from .llm import LlmClient, LlmClientConfig, bootstrap_kg
from .ot import coupling_dump, fgw
from .refine import refine

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _field_flag_type(field) -> object | None:
    default = field.default if field.default is not MISSING else None
    if isinstance(default, bool):
        return click.BOOL
    if isinstance(default, int):
        return click.INT
    if isinstance(default, float):
        return click.FLOAT
    if isinstance(default, str) or default is None:
        return click.STRING
    return None  # compound fields stay reachable via --set / config file


def _config_options(fn):
    decorators = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="Flat JSON config file."),
        click.option("--out", "out_dir", type=click.Path(), default=None,
                     help="Output directory (default: alongside inputs)."),
        click.option("--debug", is_flag=True, default=False,
                     help="Verbose logging plus debug dumps."),
        click.option("--set", "set_values", multiple=True, metavar="KEY=VALUE",
                     help="Override any config key (repeatable)."),
    ]
    # one flag per RunConfig field, e.g. --beta, --lambda-feat, --embed-provider
    for field in fields(RunConfig):
        if field.name == "debug":
            continue
        flag_type = _field_flag_type(field)
        if flag_type is None:
            continue
        decorators.append(
            click.option(
                "--" + field.name.replace("_", "-"), field.name,
                type=flag_type, default=None,
                help=f"Override config key {field.name}.",
            )
        )
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def _numeric_overrides(set_values: tuple[str, ...]) -> dict:
    overrides: dict = {}
    for item in set_values:
        if "=" not in item:
            raise click.UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = json.loads(raw) if _is_json(raw) else raw
    return overrides


def _is_json(raw: str) -> bool:
    try:
        json.loads(raw)
        return True
    except json.JSONDecodeError:
        return False


def _setup(config_path, set_values, debug, **direct) -> RunConfig:
    overrides = _numeric_overrides(set_values)
    overrides.update({k: v for k, v in direct.items() if v is not None})
    if debug:
        overrides["debug"] = True
    cfg = load_run_config(config_path, overrides)
    logging.basicConfig(
        level=logging.DEBUG if cfg.debug else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return cfg


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {path}")
    return p


def _llm_client(cfg: RunConfig) -> LlmClient | None:
    if not cfg.llm_url:
        return None
    return LlmClient(
        LlmClientConfig(
            base_url=cfg.llm_url,
            model=cfg.llm_model,
            timeout=cfg.llm_timeout,
            retries=cfg.llm_retries,
            temperature=cfg.llm_temperature,
        )
    )


def _allowed_relations(cfg: RunConfig) -> frozenset[str]:
    if cfg.extra_relations:
        return ALLOWED_RELATIONS | frozenset(cfg.extra_relations)
    return ALLOWED_RELATIONS


@click.group()
def cli() -> None:
    """Rate-distortion guided knowledge-graph refinement."""


@cli.command()
@click.argument("markdown_path", type=click.Path())
@_config_options
def ingest(markdown_path, config_path, out_dir, debug, set_values, **overrides) -> None:
    """Parse lecture Markdown into a lecture-space artifact."""
    cfg = _setup(config_path, set_values, debug, **overrides)
    src = _require_file(markdown_path)
    provider = provider_from_config(cfg)
    try:
        space = lecmod.build_lecture_space(
            src.read_text(encoding="utf-8"), embed=provider.embed, alpha=cfg.alpha
        )
    except InputError as exc:
        raise InputError(f"{src}: {exc}") from exc
    out = Path(out_dir) if out_dir else src.parent
    out.mkdir(parents=True, exist_ok=True)
    target = out / (src.stem + ".space.json")
    lecmod.save_lecture_space(space, target)
    d = space.distance
    click.echo(
        f"ingested {src.name}: N={len(space)} units, "
        f"d mean={d.mean():.4f} max={d.max():.4f} -> {target}"
    )


@cli.command()
@click.argument("markdown_path", type=click.Path())
@_config_options
def bootstrap(markdown_path, config_path, out_dir, debug, set_values, **overrides) -> None:
    """Extract an initial knowledge graph from lecture Markdown."""
    cfg = _setup(config_path, set_values, debug, **overrides)
    src = _require_file(markdown_path)
    graph = bootstrap_kg(
        src.read_text(encoding="utf-8"), _llm_client(cfg), _allowed_relations(cfg)
    )
    out = Path(out_dir) if out_dir else src.parent
    out.mkdir(parents=True, exist_ok=True)
    target = out / (src.stem + ".kg.json")
    kgmod.save_kg(graph, target)
    click.echo(
        f"bootstrapped {src.name}: |V|={len(graph.nodes)} |E|={len(graph.edges)} "
        f"rate={kgmod.rate(graph):g} -> {target}"
    )


@cli.command()
@click.argument("space_path", type=click.Path())
@click.argument("kg_path", type=click.Path())
@_config_options
def align(space_path, kg_path, config_path, out_dir, debug, set_values, **overrides) -> None:
    """Align a lecture space to a knowledge graph and report distortion."""
    cfg = _setup(config_path, set_values, debug, **overrides)
    space = lecmod.load_lecture_space(_require_file(space_path))
    graph = kgmod.load_kg(_require_file(kg_path))
    violations = kgmod.validate_graph(graph, _allowed_relations(cfg))
    if violations:
        raise InputError("invalid KG: " + "; ".join(violations))
    provider = provider_from_config(cfg)
    kg_space = kgmod.build_kg_space(graph, provider.embed, cfg.gamma,
                                    cfg.degree_weighted_measure)
    feats = feature_cost(provider.embed(space.contents()), kg_space.node_embeddings)
    result = fgw(space.distance, kg_space.distance, feats,
                 space.measure, kg_space.measure, cfg.solver_config())
    cov = analysis.coverage(feats, result.coupling,
                            cfg.coverage_percentile, cfg.coverage_row_min)
    r = kgmod.rate(graph)
    click.echo(
        f"D={result.distortion:.6f} (structure={result.structure_term:.6f}, "
        f"feature={result.feature_term:.6f}) rate={r:g} "
        f"L={r + cfg.beta * result.distortion:.6f} coverage={cov:.4f}"
    )
    if cfg.debug:
        out = Path(out_dir) if out_dir else Path(".")
        out.mkdir(parents=True, exist_ok=True)
        dump = out / "coupling.json"
        dump.write_text(json.dumps(coupling_dump(result.coupling)), encoding="utf-8")
        click.echo(f"coupling dump -> {dump}")


@cli.command(name="refine")
@click.argument("space_path", type=click.Path())
@click.argument("kg_path", type=click.Path())
@_config_options
def refine_cmd(space_path, kg_path, config_path, out_dir, debug, set_values, **overrides) -> None:
    """Refine a knowledge graph against a lecture space; write all artifacts."""
    cfg = _setup(config_path, set_values, debug, **overrides)
    space = lecmod.load_lecture_space(_require_file(space_path))
    graph = kgmod.load_kg(_require_file(kg_path))
    violations = kgmod.validate_graph(graph, _allowed_relations(cfg))
    if violations:
        raise InputError("invalid KG: " + "; ".join(violations))
    provider = provider_from_config(cfg)
    outcome = refine(
        space, graph, provider,
        solver_config=cfg.solver_config(),
        refine_config=cfg.refinement_config(),
        gamma=cfg.gamma,
        llm_client=_llm_client(cfg),
        degree_weighted_measure=cfg.degree_weighted_measure,
        allowed_relations=_allowed_relations(cfg),
    )

    out = Path(out_dir) if out_dir else Path(kg_path).parent
    out.mkdir(parents=True, exist_ok=True)
    kgmod.save_kg(outcome.graph, out / "refined.kg.json")
    analysis.save_trace(outcome.trace, out / "trace.jsonl")

    element_embeddings = provider.embed(space.contents())
    cov_before = _coverage_of(space, graph, provider, element_embeddings, cfg)
    cov_after = _coverage_of(space, outcome.graph, provider, element_embeddings, cfg)
    knee = (
        analysis.knee_point(outcome.trace.points)
        if len(outcome.trace.points) >= 2
        else None
    )
    analysis.emit_report(outcome.trace, cov_before, cov_after, knee, out, cfg.echo())
    click.echo(
        f"refined: |V|={len(outcome.graph.nodes)} |E|={len(outcome.graph.edges)} "
        f"incumbent t={outcome.incumbent_index} knee={knee} "
        f"coverage {cov_before:.4f} -> {cov_after:.4f} ({out})"
    )
    if outcome.trace.incomplete:
        raise NumericalError("refinement aborted early; partial trace written")


@cli.command()
@click.argument("trace_path", type=click.Path())
@_config_options
def report(trace_path, config_path, out_dir, debug, set_values, **overrides) -> None:
    """Regenerate report files from an existing trace."""
    cfg = _setup(config_path, set_values, debug, **overrides)
    trace = analysis.load_trace(_require_file(trace_path), beta=None)
    knee = analysis.knee_point(trace.points) if len(trace.points) >= 2 else None
    out = Path(out_dir) if out_dir else Path(trace_path).parent
    paths = analysis.emit_report(trace, None, None, knee, out, cfg.echo())
    click.echo(f"report -> {paths['report']}")


def _coverage_of(space, graph, provider, element_embeddings, cfg: RunConfig) -> float:
    kg_space = kgmod.build_kg_space(graph, provider.embed, cfg.gamma,
                                    cfg.degree_weighted_measure)
    feats = feature_cost(element_embeddings, kg_space.node_embeddings)
    result = fgw(space.distance, kg_space.distance, feats,
                 space.measure, kg_space.measure, cfg.solver_config())
    return analysis.coverage(feats, result.coupling,
                             cfg.coverage_percentile, cfg.coverage_row_min)


def main(argv: list[str] | None = None) -> int:
    """Entry point with the stable exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_INPUT
    except click.exceptions.Abort:
        return EXIT_USAGE
    except (InputError, ProviderError, OSError) as exc:
        click.echo(f"input error: {exc}", err=True)
        return EXIT_INPUT
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL


def entry() -> None:
    sys.exit(main())
