"""Command-line surface: build, index, validate, ask, answer-batch, eval, sweep.

Exit codes are a stable CI contract: 0 success, 1 backend failure, 2
input/validation failure, 3 configuration or index mismatch. Under stub
backends and a fixed config every subcommand is deterministic: repeated runs
produce byte-identical outputs.
"""

from __future__ import annotations

import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

from . import generation, grasp as grasp_mod, index as index_mod
from .agents import BuildConfig, build_graph
from .backends import BackendSet
from .config import (
    CONFIG_ENV_VAR,
    EngineConfig,
    PROFILES,
    load_config,
    resolve_backends,
)
from .corpus import Query, load_manifest, load_queryset
from .errors import (
    BackendProtocolError,
    BackendUnavailableError,
    ConfigError,
    DimensionMismatchError,
    EmptyResponseError,
    GraphBuildError,
    GraphIntegrityError,
    IndexMissingError,
    M3kgError,
    ManifestError,
    SchemaVersionError,
    StaleIndexCacheError,
)
from .evalharness import (
    JudgeParseError,
    aggregate_judge,
    aggregate_winrate,
    format_judge_table,
    format_winrate_table,
    judge as judge_op,
    winrate as winrate_op,
)
from .graph import Modality, load as load_graph, save as save_graph, validate as validate_graph
from .grasp import GroundingQuery
from .index import (
    IndexModality,
    ModalityIndex,
    RetrievalQuery,
    build_index,
    load_index_cache,
    retrieve,
    write_index_cache,
)

EXIT_OK = 0
EXIT_BACKEND = 1
EXIT_INPUT = 2
EXIT_CONFIG = 3

_ERROR_EXIT_CODES: list[tuple[type, int]] = [
    (BackendUnavailableError, EXIT_BACKEND),
    (BackendProtocolError, EXIT_BACKEND),
    (EmptyResponseError, EXIT_BACKEND),
    (JudgeParseError, EXIT_BACKEND),
    (ManifestError, EXIT_INPUT),
    (GraphIntegrityError, EXIT_INPUT),
    (SchemaVersionError, EXIT_INPUT),
    (IndexMissingError, EXIT_CONFIG),
    (StaleIndexCacheError, EXIT_CONFIG),
    (DimensionMismatchError, EXIT_CONFIG),
    (ConfigError, EXIT_CONFIG),
    (GraphBuildError, EXIT_INPUT),
]


def _exit_for(exc: M3kgError) -> int:
    for klass, code in _ERROR_EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return EXIT_INPUT


def _die(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    code = _exit_for(exc) if isinstance(exc, M3kgError) else EXIT_INPUT
    sys.exit(code)


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(),
    default=None,
    envvar=CONFIG_ENV_VAR,
    help="Engine config file (JSON); defaults from $M3KG_CONFIG.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Multi-hop multimodal knowledge-graph engine."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = load_config(config_path)
    except ConfigError as exc:
        _die(exc)


def _apply_overrides(
    cfg: EngineConfig,
    profile: str | None = None,
    k: int | None = None,
    tau: float | None = None,
    hops: int | None = None,
    eta_v: float | None = None,
    eta_a: float | None = None,
    eta_av: float | None = None,
    eta: float | None = None,
    frame_count: int | None = None,
    no_grasp: bool = False,
    no_grounding: bool = False,
    no_filter: bool = False,
    char_budget: int | None = None,
    audio_dim: int | None = None,
    visual_dim: int | None = None,
    seed: int | None = None,
    jobs: int | None = None,
) -> EngineConfig:
    if profile:
        cfg = cfg.with_profile(profile)
    retrieval = cfg.retrieval
    if k is not None or tau is not None or hops is not None:
        retrieval = replace(
            retrieval,
            k=k if k is not None else retrieval.k,
            tau=tau if tau is not None else retrieval.tau,
            hops=hops if hops is not None else retrieval.hops,
        )
    gr = cfg.grasp
    if eta is not None:
        gr = replace(gr, eta_v=eta, eta_a=eta, eta_av=eta)
    if any(v is not None for v in (eta_v, eta_a, eta_av, frame_count)):
        gr = replace(
            gr,
            eta_v=eta_v if eta_v is not None else gr.eta_v,
            eta_a=eta_a if eta_a is not None else gr.eta_a,
            eta_av=eta_av if eta_av is not None else gr.eta_av,
            frame_count=frame_count if frame_count is not None else gr.frame_count,
        )
    if no_grasp:
        gr = replace(gr, grounding_enabled=False, filter_enabled=False)
    if no_grounding:
        gr = replace(gr, grounding_enabled=False)
    if no_filter:
        gr = replace(gr, filter_enabled=False)
    dims = dict(cfg.dims)
    if audio_dim is not None:
        dims[Modality.AUDIO] = audio_dim
    if visual_dim is not None:
        dims[Modality.VISUAL] = visual_dim
    return replace(
        cfg,
        retrieval=retrieval,
        grasp=gr,
        dims=dims,
        char_budget=char_budget if char_budget is not None else cfg.char_budget,
        seed=seed if seed is not None else cfg.seed,
        jobs=jobs if jobs is not None else cfg.jobs,
    )


_tau_option = click.option("--tau", type=float, default=None, help="Retrieval distance threshold (inf disables).")
_profile_option = click.option("--profile", type=click.Choice(sorted(PROFILES)), default=None)


@main.command()
@click.option("--manifest", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--audit", "audit_path", type=click.Path(), default=None,
              help="Audit log path (default: <out>.audit.jsonl).")
@click.option("--audio-dim", type=int, default=None)
@click.option("--visual-dim", type=int, default=None)
@click.option("--seed", type=int, default=None, help="Stub backend seed.")
@click.option("--stub-agents", is_flag=True, help="Force the stub agent backend.")
@click.option("--stub-embedder", is_flag=True, help="Force the stub embedder.")
@click.pass_context
def build(ctx, manifest, out_path, audit_path, audio_dim, visual_dim, seed,
          stub_agents, stub_embedder):
    """Construct a graph from a corpus manifest and write it with its audit log."""
    cfg: EngineConfig = _apply_overrides(
        ctx.obj["config"], audio_dim=audio_dim, visual_dim=visual_dim, seed=seed
    )
    if stub_agents:
        cfg.backends.agent = "stub"
    if stub_embedder:
        cfg.backends.embedder = "stub"
    try:
        samples = load_manifest(manifest)
        backends = resolve_backends(cfg)
        graph, report = build_graph(samples, backends, BuildConfig(dims=cfg.dims))
        save_graph(graph, out_path)
        audit = Path(audit_path) if audit_path else Path(str(out_path) + ".audit.jsonl")
        records = report.to_records()
        audit.write_text(
            "".join(_dump(r) + "\n" for r in records), encoding="utf-8"
        )
    except (M3kgError, OSError) as exc:
        _die(exc)
    check = validate_graph(graph)
    click.echo(
        f"built graph: {len(graph.entities)} entities, {len(graph.triplets)} triplets, "
        f"{len(graph.media)} media, {len(graph.links)} links; "
        f"{'VALID' if check.valid else 'INVALID'}"
    )
    sys.exit(EXIT_OK if check.valid else EXIT_INPUT)


@main.command("index")
@click.option("--graph", "graph_path", type=click.Path(), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--modalities", default="audio,visual,audiovisual",
              help="Comma-separated subset of audio,visual,audiovisual.")
@click.pass_context
def index_cmd(ctx, graph_path, out_dir, modalities):
    """Build modality indices and write their binary sidecar caches."""
    try:
        graph = load_graph(graph_path)
        graph_hash = graph.content_hash()
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in [m.strip() for m in modalities.split(",") if m.strip()]:
            modality = IndexModality(name)
            idx = build_index(graph, modality)
            write_index_cache(idx, out / f"{modality.value}.idx", graph_hash)
            note = f"{modality.value}: {len(idx.entries)} entries"
            if idx.exclusions:
                note += f" ({len(idx.exclusions)} sample(s) excluded)"
            click.echo(note)
    except ValueError as exc:
        _die(ConfigError(str(exc)))
    except (M3kgError, OSError) as exc:
        _die(exc)
    sys.exit(EXIT_OK)


@main.command()
@click.option("--graph", "graph_path", type=click.Path(), required=True)
@click.pass_context
def validate(ctx, graph_path):
    """Structurally validate a graph file and report violations."""
    try:
        graph = load_graph(graph_path, check=False)
    except (M3kgError, OSError) as exc:
        _die(exc)
    report = validate_graph(graph)
    for tid in report.coverage_violations:
        click.echo(f"coverage violation: triplet {tid} has no media link")
    for message in report.dangling_refs:
        click.echo(f"dangling reference: {message}")
    for tid in report.self_loops:
        click.echo(f"self-loop: triplet {tid}")
    click.echo("VALID" if report.valid else "INVALID")
    sys.exit(EXIT_OK if report.valid else EXIT_INPUT)


def _needed_modality(audio_ref: str | None, visual_ref: str | None) -> IndexModality:
    if audio_ref and visual_ref:
        return IndexModality.AUDIOVISUAL
    if visual_ref:
        return IndexModality.VISUAL
    if audio_ref:
        return IndexModality.AUDIO
    raise ManifestError("query needs at least one of --audio-ref/--visual-ref")


def _indices_for(
    graph, needed: set[IndexModality], index_dir: str | None
) -> dict[IndexModality, ModalityIndex]:
    indices: dict[IndexModality, ModalityIndex] = {}
    for modality in needed:
        if index_dir is None:
            indices[modality] = build_index(graph, modality)
        else:
            path = Path(index_dir) / f"{modality.value}.idx"
            if not path.exists():
                raise IndexMissingError(f"no index sidecar for {modality.value} in {index_dir}")
            indices[modality] = load_index_cache(path, graph)
    return indices


def _run_query(graph, indices, backends: BackendSet, cfg: EngineConfig, query: Query):
    """retrieve -> grounded prune -> filter -> assemble -> answer."""
    visual_vec = (
        backends.embedder.embed(Modality.VISUAL.value, query.visual_ref)
        if query.visual_ref
        else None
    )
    audio_vec = (
        backends.embedder.embed(Modality.AUDIO.value, query.audio_ref)
        if query.audio_ref
        else None
    )
    g_init = retrieve(
        graph,
        indices,
        RetrievalQuery(visual_vec=visual_vec, audio_vec=audio_vec),
        cfg.retrieval,
    )
    kept, trace = grasp_mod.grasp(
        query.question,
        g_init,
        GroundingQuery(audio_ref=query.audio_ref, visual_ref=query.visual_ref),
        cfg.grasp,
        backends.visual_grounder,
        backends.audio_grounder,
        backends.agent,
        graph,
    )
    answer_text = generation.answer(
        query.question,
        kept,
        graph,
        backends.answerer,
        audio_ref=query.audio_ref,
        visual_ref=query.visual_ref,
        char_budget=cfg.char_budget,
    )
    return answer_text, g_init, kept, trace


@main.command()
@click.option("--graph", "graph_path", type=click.Path(), required=True)
@click.option("--question", required=True)
@click.option("--audio-ref", default=None)
@click.option("--visual-ref", default=None)
@click.option("--index-dir", type=click.Path(), default=None,
              help="Load index sidecars instead of rebuilding in memory.")
@click.option("--k", type=int, default=None)
@_tau_option
@click.option("--hops", type=int, default=None)
@click.option("--eta", type=float, default=None, help="Set all grounding thresholds at once.")
@click.option("--eta-v", type=float, default=None)
@click.option("--eta-a", type=float, default=None)
@click.option("--eta-av", type=float, default=None)
@click.option("--frame-count", type=int, default=None)
@click.option("--no-grasp", is_flag=True, help="Disable both pruning stages.")
@click.option("--no-grounding", is_flag=True)
@click.option("--no-filter", is_flag=True)
@click.option("--char-budget", type=int, default=None)
@click.option("--explain", is_flag=True, help="Also print kept triplets and the prune trace.")
@_profile_option
@click.pass_context
def ask(ctx, graph_path, question, audio_ref, visual_ref, index_dir, k, tau, hops,
        eta, eta_v, eta_a, eta_av, frame_count, no_grasp, no_grounding, no_filter,
        char_budget, explain, profile):
    """Answer one question against a graph."""
    cfg = _apply_overrides(
        ctx.obj["config"], profile=profile, k=k, tau=tau, hops=hops, eta=eta,
        eta_v=eta_v, eta_a=eta_a, eta_av=eta_av, frame_count=frame_count,
        no_grasp=no_grasp, no_grounding=no_grounding, no_filter=no_filter,
        char_budget=char_budget,
    )
    try:
        graph = load_graph(graph_path)
        cfg = replace(cfg, dims=dict(graph.dims))  # stub embedder must match the graph
        query = Query(id=0, question=question, audio_ref=audio_ref, visual_ref=visual_ref)
        modality = _needed_modality(audio_ref, visual_ref)
        indices = _indices_for(graph, {modality}, index_dir)
        backends = resolve_backends(cfg)
        answer_text, g_init, kept, trace = _run_query(graph, indices, backends, cfg, query)
    except (M3kgError, OSError) as exc:
        _die(exc)
    click.echo(answer_text)
    if explain:
        click.echo(f"--- retrieved {len(g_init)} triplet(s), kept {len(kept)}")
        for tid in kept:
            click.echo(f"kept {tid}: {grasp_mod.serialize_triplet(tid, graph)}")
        for record in trace.to_records(query.id, cfg.grasp):
            click.echo(_dump(record))
    sys.exit(EXIT_OK)


@main.command("answer-batch")
@click.option("--graph", "graph_path", type=click.Path(), required=True)
@click.option("--queryset", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--trace-out", type=click.Path(), default=None,
              help="Also write per-triplet prune-trace records (JSON-lines).")
@click.option("--jobs", type=int, default=None)
@click.option("--k", type=int, default=None)
@_tau_option
@click.option("--hops", type=int, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--no-grasp", is_flag=True)
@_profile_option
@click.pass_context
def answer_batch(ctx, graph_path, queryset, out_path, trace_out, jobs, k, tau, hops,
                 eta, no_grasp, profile):
    """Answer a queryset; output lines stay in input order regardless of --jobs."""
    cfg = _apply_overrides(
        ctx.obj["config"], profile=profile, k=k, tau=tau, hops=hops, eta=eta,
        no_grasp=no_grasp, jobs=jobs,
    )
    try:
        graph = load_graph(graph_path)
        cfg = replace(cfg, dims=dict(graph.dims))
        queries = load_queryset(queryset)
        needed = {_needed_modality(q.audio_ref, q.visual_ref) for q in queries}
        indices = _indices_for(graph, needed, None)
        backends = resolve_backends(cfg)

        def run(query: Query):
            return _run_query(graph, indices, backends, cfg, query)

        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(run, queries))
        else:
            results = [run(q) for q in queries]
        with open(out_path, "w", encoding="utf-8") as fh:
            for query, (answer_text, _, _, _) in zip(queries, results):
                fh.write(
                    _dump(
                        {
                            "id": query.id,
                            "question": query.question,
                            "reference": query.reference,
                            "answer": answer_text,
                        }
                    )
                    + "\n"
                )
        if trace_out:
            with open(trace_out, "w", encoding="utf-8") as fh:
                for query, (_, _, _, trace) in zip(queries, results):
                    for record in trace.to_records(query.id, cfg.grasp):
                        fh.write(_dump(record) + "\n")
    except (M3kgError, OSError) as exc:
        _die(exc)
    click.echo(f"answered {len(queries)} queries -> {out_path}")
    sys.exit(EXIT_OK)


@main.command()
@click.option("--answers", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice(["judge", "winrate"]), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Report JSON path.")
@click.option("--swap-pairing/--no-swap-pairing", default=True,
              help="Evaluate both answer orders to counter position bias.")
@click.pass_context
def eval(ctx, answers, mode, out_path, swap_pairing):
    """Score an answers file with the judge backend."""
    cfg: EngineConfig = ctx.obj["config"]
    try:
        backends = resolve_backends(cfg)
        items = _load_answer_lines(answers, mode)
        if mode == "judge":
            scores, excluded = [], 0
            for item in items:
                try:
                    scores.append(
                        judge_op(item["question"], item["reference"], item["answer"],
                                 backends.judge)
                    )
                except JudgeParseError:
                    excluded += 1
            report = aggregate_judge(scores, excluded=excluded)
            table = format_judge_table(report)
        else:
            records, excluded = [], 0
            for item in items:
                orders = (False, True) if swap_pairing else (False,)
                for swap in orders:
                    try:
                        records.append(
                            winrate_op(
                                item["question"], item["reference"],
                                item["answer_a"], item["answer_b"],
                                backends.judge, swap=swap,
                            )
                        )
                    except JudgeParseError:
                        excluded += 1
            report = aggregate_winrate(records, excluded=excluded)
            table = format_winrate_table(report, side_a="answer_a", side_b="answer_b")
        if out_path:
            Path(out_path).write_text(
                json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
            )
    except (M3kgError, OSError) as exc:
        _die(exc)
    click.echo(table)
    sys.exit(EXIT_OK)


def _load_answer_lines(path: str, mode: str) -> list[dict]:
    required = {"judge": ("question", "reference", "answer"),
                "winrate": ("question", "reference", "answer_a", "answer_b")}[mode]
    items = []
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON ({exc.msg})", line_no) from None
        for key in required:
            if not isinstance(obj.get(key), str) or not obj[key]:
                raise ManifestError(f"missing or empty field {key!r}", line_no)
        items.append(obj)
    return items


@main.command()
@click.option("--graph", "graph_path", type=click.Path(), required=True)
@click.option("--queryset", type=click.Path(), required=True)
@click.option("--axis", type=click.Choice(["tau", "eta"]), required=True)
@click.option("--values", required=True, help="Comma-separated values (inf allowed).")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Aligned table file; JSON lands next to it.")
@click.option("--with-judge", is_flag=True,
              help="Also answer and judge each query (needs references).")
@click.option("--k", type=int, default=None)
@_tau_option
@click.option("--hops", type=int, default=None)
@_profile_option
@click.pass_context
def sweep(ctx, graph_path, queryset, axis, values, out_path, with_judge, k, tau,
          hops, profile):
    """Sensitivity sweep over tau or eta; one row per value."""
    base_cfg = _apply_overrides(ctx.obj["config"], profile=profile, k=k, tau=tau, hops=hops)
    try:
        grid = [_parse_value(v) for v in values.split(",") if v.strip()]
        graph = load_graph(graph_path)
        base_cfg = replace(base_cfg, dims=dict(graph.dims))
        queries = load_queryset(queryset)
        needed = {_needed_modality(q.audio_ref, q.visual_ref) for q in queries}
        indices = _indices_for(graph, needed, None)
        backends = resolve_backends(base_cfg)
        rows = []
        for value in grid:
            if axis == "tau":
                cfg = _apply_overrides(base_cfg, tau=value)
            else:
                cfg = _apply_overrides(base_cfg, eta=value)
            kept_counts, scores = [], []
            for query in queries:
                answer_text, _, kept, _ = _run_query(graph, indices, backends, cfg, query)
                kept_counts.append(len(kept))
                if with_judge and query.reference:
                    try:
                        scores.append(
                            judge_op(query.question, query.reference, answer_text,
                                     backends.judge).scaled
                        )
                    except JudgeParseError:
                        pass
            mean_kept = sum(kept_counts) / len(kept_counts) if kept_counts else 0.0
            mean_score = sum(scores) / len(scores) if scores else None
            rows.append({"value": value, "mean_kept": mean_kept, "mean_score": mean_score})
        table = _format_sweep_table(axis, rows)
        Path(out_path).write_text(table + "\n", encoding="utf-8")
        json_rows = [
            {**row, "value": "inf" if math.isinf(row["value"]) else row["value"]}
            for row in rows
        ]
        json_path = Path(out_path).with_suffix(".json")
        json_path.write_text(
            json.dumps({"axis": axis, "rows": json_rows}, indent=2, allow_nan=False) + "\n",
            encoding="utf-8",
        )
    except ValueError as exc:
        _die(ManifestError(str(exc)))
    except (M3kgError, OSError) as exc:
        _die(exc)
    click.echo(table)
    sys.exit(EXIT_OK)


def _parse_value(text: str) -> float:
    text = text.strip()
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _format_sweep_table(axis: str, rows: list[dict]) -> str:
    header = f"{axis:>10}  {'mean_kept':>10}  {'mean_score':>10}"
    lines = [header, "-" * len(header)]
    for row in rows:
        score = "-" if row["mean_score"] is None else f"{row['mean_score']:.2f}"
        lines.append(f"{row['value']:>10.4g}  {row['mean_kept']:>10.3f}  {score:>10}")
    return "\n".join(lines)


if __name__ == "__main__":
    main()
