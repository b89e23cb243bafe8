"""Command-line entry point wiring the pipeline stages.

Subcommands::

    build               flowchart IR document -> model JSON-LD + diagnostics
    extract-discussion  line-level text IR -> paragraph store
    diff                two model files -> change report (JSON + table)
    index               model or paragraph store -> persisted retrieval indices
    ask                 one question -> answers with evidence
    eval                QA dataset -> token-F1 evaluation report
    gen-qa              paragraph store -> synthetic QA dataset

Exit codes: 0 success, 1 validation or usage error, 2 provider/transport
error. Only ``index``, ``ask``, ``eval``, and ``gen-qa`` ever construct a
provider client; with ``--stub-providers`` (or no provider configured)
they run fully offline on deterministic stubs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import discussion, geometry_ir, graph_builder, knowledge_model, model_diff, qa, retrieval
from .config import Config, load_config, load_override_list
from .errors import CpgkitError, ParseError, ProviderError, TransportError, ValidationError
from .knowledge_model import TreatmentRuleSet
from .providers import (
    ExtractiveStubGenerator,
    HttpEmbeddingProvider,
    HttpGenerationClient,
    StubEmbeddingProvider,
    TemplateQuestionStubGenerator,
)
from .retrieval import FusionParams


class _Parser(argparse.ArgumentParser):
    # unknown flags and subcommands are validation errors: exit 1, not 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _fusion_params(config: Config, top: int | None) -> FusionParams:
    return FusionParams(
        rrf_k=config.retrieval.rrf_k,
        top_m_per_retriever=config.retrieval.top_m_per_retriever,
        final_top=top if top is not None else config.retrieval.final_top,
    )


def _embedder(config: Config, stub: bool):
    if stub or not config.embedding.configured:
        return StubEmbeddingProvider(max_tokens=config.embedding.max_tokens)
    return HttpEmbeddingProvider(
        endpoint=config.embedding.endpoint,
        model=config.embedding.model,
        dimension=config.embedding.dimension,
        max_tokens=config.embedding.max_tokens,
    )


def _generator(config: Config, stub: bool, per_para: int | None = None):
    if stub or not config.generation.configured:
        if per_para is not None:
            return TemplateQuestionStubGenerator(questions_per_call=per_para)
        return ExtractiveStubGenerator()
    return HttpGenerationClient(endpoint=config.generation.endpoint, model=config.generation.model)


def _treatment_rules(config: Config) -> TreatmentRuleSet:
    return TreatmentRuleSet(
        keywords=config.treatment.keywords,
        allowlist=load_override_list(config.treatment.allowlist_file),
        blocklist=load_override_list(config.treatment.blocklist_file),
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, data: bytes) -> None:
    path.write_bytes(data)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_build(args, config: Config) -> int:
    pages = geometry_ir.load_pages(Path(args.ir_file).read_bytes())
    if not pages:
        raise ValidationError("IR document contains no pages")
    params = graph_builder.BuilderParams(
        gap_y=config.builder.gap_y,
        gap_x=config.builder.gap_x,
        join_tol=config.builder.join_tol,
        attach_tol=config.builder.attach_tol,
        angle_tol=config.builder.angle_tol,
    )
    page_graphs = [graph_builder.build_page_graph(page, params) for page in pages]
    guideline_id = args.guideline_id or pages[0].page_key.rsplit("-", 1)[0]
    model, link_warnings = knowledge_model.assemble_model(
        [(pg.nodes, pg.connections) for pg in page_graphs],
        guideline_id=guideline_id,
        version=args.guideline_version,
    )
    out = _out_dir(args)
    _write(out / "model.jsonld", knowledge_model.to_jsonld(model))
    warnings = [w for pg in page_graphs for w in pg.warnings] + link_warnings
    lines = "".join(json.dumps(w.to_obj(), sort_keys=True) + "\n" for w in warnings)
    _write(out / "diagnostics.jsonl", lines.encode("utf-8"))
    print(f"model: {len(model.nodes)} nodes, {len(model.edges)} edges, {len(warnings)} warnings")
    return 0


def cmd_extract_discussion(args, config: Config) -> int:
    doc = discussion.load_doc_text(Path(args.text_ir_file).read_bytes())
    paragraphs = discussion.extract_paragraphs(doc)
    out = _out_dir(args)
    _write(out / "paragraphs.json", discussion.save_paragraphs(paragraphs))
    print(f"extracted {len(paragraphs)} paragraphs")
    return 0


def cmd_diff(args, config: Config) -> int:
    old = knowledge_model.from_jsonld(Path(args.old_model).read_bytes())
    new = knowledge_model.from_jsonld(Path(args.new_model).read_bytes())
    report = model_diff.diff_models(old, new)
    out = _out_dir(args)
    _write(out / "diff_report.json", report.to_json())
    rendered = model_diff.render_report(report)
    _write(out / "diff_report.txt", rendered.encode("utf-8"))
    print(rendered, end="")
    return 0


def cmd_index(args, config: Config) -> int:
    out = _out_dir(args)
    embedder = _embedder(config, args.stub_providers)
    if args.target == "algorithm":
        model = knowledge_model.from_jsonld(Path(args.source).read_bytes())
        treatment_ids = knowledge_model.detect_treatment_nodes(model, _treatment_rules(config))
        docs, warnings = qa.build_path_documents(model, treatment_ids, config.path_cap)
        for warning in warnings:
            print(f"warning: {warning}", file=sys.stderr)
        texts = {d.doc_id: d.text for d in docs}
        _write(out / "path_documents.json", qa.path_documents_to_json(docs))
        prefix = "algorithm"
    else:
        paragraphs = discussion.load_paragraphs(Path(args.source).read_bytes())
        texts = {str(p.para_id): p.text for p in paragraphs}
        _write(
            out / "discussion_paragraphs.json",
            (json.dumps(texts, indent=2, sort_keys=True) + "\n").encode("utf-8"),
        )
        prefix = "discussion"
    sparse = retrieval.build_sparse_index(texts, k1=config.retrieval.k1, b=config.retrieval.b)
    dense = retrieval.build_dense_index(texts, embedder)
    _write(out / f"{prefix}_sparse.json", retrieval.save_sparse_index(sparse))
    _write(out / f"{prefix}_dense.json", retrieval.save_dense_index(dense))
    print(f"indexed {len(texts)} documents for the {args.target} pipeline")
    return 0


def _load_indices(index_dir: Path, prefix: str, embedder) -> tuple:
    sparse = retrieval.load_sparse_index((index_dir / f"{prefix}_sparse.json").read_bytes())
    dense = retrieval.load_dense_index((index_dir / f"{prefix}_dense.json").read_bytes())
    if dense.provider_id != embedder.provider_id:
        raise ValidationError(
            f"dense index was built with provider {dense.provider_id!r}, "
            f"current provider is {embedder.provider_id!r}"
        )
    return sparse, dense


def _algorithm_answerer(args, config: Config):
    index_dir = Path(args.index_dir)
    embedder = _embedder(config, args.stub_providers)
    sparse, dense = _load_indices(index_dir, "algorithm", embedder)
    docs = qa.path_documents_from_json((index_dir / "path_documents.json").read_bytes())
    documents = {d.doc_id: d for d in docs}
    params = _fusion_params(config, getattr(args, "top", None))

    def answer(question: str) -> list[qa.AlgorithmAnswer]:
        return qa.answer_from_algorithm(question, documents, sparse, dense, embedder, params)

    return answer


def _discussion_answerer(args, config: Config):
    index_dir = Path(args.index_dir)
    embedder = _embedder(config, args.stub_providers)
    sparse, dense = _load_indices(index_dir, "discussion", embedder)
    paragraphs = json.loads((index_dir / "discussion_paragraphs.json").read_text("utf-8"))
    generator = _generator(config, args.stub_providers)
    params = _fusion_params(config, getattr(args, "top", None))
    template = config.discussion_template()

    def answer(question: str) -> qa.DiscussionAnswer:
        return qa.answer_from_discussion(
            question,
            paragraphs,
            sparse,
            dense,
            embedder,
            generator,
            params,
            template,
            config.answer_max_tokens,
            config.answer_temperature,
        )

    return answer


def cmd_ask(args, config: Config) -> int:
    if args.pipeline == "algorithm":
        answers = _algorithm_answerer(args, config)(args.question)
        if not answers:
            print("no answers (empty index)")
            return 0
        for rank, ans in enumerate(answers, start=1):
            print(f"{rank}. {ans.answer_text}")
            print(f"   treatment node: {ans.treatment_node}")
            print(f"   path: {' -> '.join(ans.evidence_path)}")
    else:
        result = _discussion_answerer(args, config)(args.question)
        print(result.answer_text)
        print(f"   evidence paragraphs: {', '.join(result.evidence_ids) or '(none)'}")
    return 0


def cmd_eval(args, config: Config) -> int:
    dataset = qa.load_dataset(Path(args.dataset).read_bytes())
    if args.pipeline == "algorithm":
        answerer = _algorithm_answerer(args, config)

        def system(question: str) -> list[qa.PredictedAnswer]:
            return [
                qa.PredictedAnswer(text=a.answer_text, evidence=(a.doc_id,))
                for a in answerer(question)
            ]

    else:
        answerer = _discussion_answerer(args, config)

        def system(question: str) -> list[qa.PredictedAnswer]:
            result = answerer(question)
            return [qa.PredictedAnswer(text=result.answer_text, evidence=result.evidence_ids)]

    report = qa.evaluate(dataset, system)
    out = _out_dir(args)
    _write(out / "eval_report.json", report.to_json())
    print(
        f"mean best-F1 over {report.total} questions: {report.mean_best_f1:.4f} "
        f"({report.answered} answered)"
    )
    return 0


def cmd_gen_qa(args, config: Config) -> int:
    paragraphs = discussion.load_paragraphs(Path(args.paragraphs).read_bytes())
    texts = {f"{p.para_id:04d}": p.text for p in paragraphs}
    generator = _generator(config, args.stub_providers, per_para=args.per_para)
    pairs, warnings = qa.generate_synthetic_qa(
        texts, generator, args.per_para, template=config.synth_template()
    )
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    out = _out_dir(args)
    _write(out / "synthetic_qa.xml", qa.save_dataset(pairs))
    print(f"generated {len(pairs)} question-answer pairs ({len(warnings)} paragraphs skipped)")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpgkit", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument(
            "--stub-providers",
            action="store_true",
            help="force deterministic offline providers",
        )

    p = sub.add_parser("build", parents=[], help="flowchart IR -> knowledge model")
    p.add_argument("ir_file")
    p.add_argument("--guideline-id", default=None)
    p.add_argument("--guideline-version", default="1.0")
    common(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("extract-discussion", help="text IR -> paragraph store")
    p.add_argument("text_ir_file")
    common(p)
    p.set_defaults(func=cmd_extract_discussion)

    p = sub.add_parser("diff", help="compare two model versions")
    p.add_argument("old_model")
    p.add_argument("new_model")
    common(p)
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("index", help="build retrieval indices")
    p.add_argument("target", choices=("algorithm", "discussion"))
    p.add_argument("source", help="model.jsonld or paragraphs.json")
    common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question")
    p.add_argument("question")
    p.add_argument("--pipeline", choices=("algorithm", "discussion"), required=True)
    p.add_argument("--index-dir", default="out")
    p.add_argument("--top", type=int, default=None, help="answers to return")
    common(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="evaluate a QA dataset")
    p.add_argument("dataset")
    p.add_argument("--pipeline", choices=("algorithm", "discussion"), required=True)
    p.add_argument("--index-dir", default="out")
    p.add_argument("--top", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-qa", help="synthesize QA pairs from paragraphs")
    p.add_argument("paragraphs")
    p.add_argument("--per-para", type=int, default=3)
    common(p)
    p.set_defaults(func=cmd_gen_qa)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if getattr(args, "top", None) is not None and args.top < 1:
            raise ValidationError("--top must be >= 1")
        return args.func(args, config)
    except (TransportError, ProviderError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CpgkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
