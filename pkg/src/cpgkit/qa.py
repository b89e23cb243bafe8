"""Question answering over the knowledge model, and its evaluation harness.

Two pipelines share the hybrid retriever. The flowchart pipeline indexes
one document per shortest path to a treatment node (the path text holds
the conditions leading there; the treatment itself is the answer). The
discussion pipeline retrieves the two best paragraphs and asks a
generation client to answer from them.

Evaluation uses token-overlap F1 against gold answers: each question
scores the best of its returned answers, and the report averages over
questions. Datasets are XML files of question-answer pairs.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Callable, Mapping

from .errors import GenerationError, ParseError, TransportError, ValidationError
from .knowledge_model import KnowledgeModel, shortest_paths
from .providers import GenerationRequest
from .retrieval import (
    DenseIndex,
    EmbeddingProvider,
    FusionParams,
    SparseIndex,
    hybrid_rank,
    hybrid_retrieve,
    normalize_tokens,
)

DEFAULT_DISCUSSION_TEMPLATE = """\
You are a clinical guideline assistant. Answer the question using only the
provided context passages. Be concise and do not invent information.

Context:
{context}

Question: {question}

Answer:"""

DEFAULT_SYNTH_TEMPLATE = """\
Read the passage and write {n} distinct questions that the passage answers.
Return one question per line, numbered.

Passage:
{context}

Questions:"""


# ---------------------------------------------------------------------------
# Path documents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathDocument:
    """Retrieval unit for the flowchart pipeline: one shortest path.

    ``text`` concatenates the contents of every node on the path except
    the final treatment node, whose content is the answer.
    """

    doc_id: str
    treatment_node: str
    treatment_content: str
    path: tuple[str, ...]
    text: str


def build_path_documents(
    model: KnowledgeModel, treatment_ids: list[str], cap: int = 8
) -> tuple[list[PathDocument], list[str]]:
    """One document per shortest path to each treatment node."""
    docs: list[PathDocument] = []
    warnings: list[str] = []
    for tid in treatment_ids:
        path_set = shortest_paths(model, tid, cap)
        if path_set.unreachable:
            warnings.append(f"treatment node {tid} unreachable from start; skipped")
            continue
        for i, path in enumerate(path_set.paths, start=1):
            if len(path) < 2:
                warnings.append(f"treatment node {tid} is the start node; path skipped")
                continue
            docs.append(
                PathDocument(
                    doc_id=f"{tid}#{i}",
                    treatment_node=tid,
                    treatment_content=model.nodes[tid].content,
                    path=path,
                    text=" ; ".join(model.nodes[n].content for n in path[:-1]),
                )
            )
    return docs, warnings


def path_documents_to_json(docs: list[PathDocument]) -> bytes:
    out = [
        {
            "doc_id": d.doc_id,
            "treatment_node": d.treatment_node,
            "treatment_content": d.treatment_content,
            "path": list(d.path),
            "text": d.text,
        }
        for d in docs
    ]
    return (json.dumps(out, indent=2) + "\n").encode("utf-8")


def path_documents_from_json(data: bytes | str) -> list[PathDocument]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"path documents: invalid JSON ({exc.msg})") from exc
    docs = []
    for i, obj in enumerate(raw):
        try:
            docs.append(
                PathDocument(
                    doc_id=obj["doc_id"],
                    treatment_node=obj["treatment_node"],
                    treatment_content=obj["treatment_content"],
                    path=tuple(obj["path"]),
                    text=obj["text"],
                )
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"path documents[{i}]: {exc}") from exc
    return docs


# ---------------------------------------------------------------------------
# Answering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlgorithmAnswer:
    """A treatment recommendation with the path that led to it."""

    treatment_node: str
    answer_text: str
    evidence_path: tuple[str, ...]
    doc_id: str
    fused_score: float


def answer_from_algorithm(
    question: str,
    documents: Mapping[str, PathDocument],
    sparse: SparseIndex,
    dense: DenseIndex,
    provider: EmbeddingProvider,
    params: FusionParams = FusionParams(),
) -> list[AlgorithmAnswer]:
    """Treatment nodes of the best-ranked path documents, duplicates collapsed.

    When two top documents share a treatment node, the next distinct node
    in the fused ranking is promoted so up to ``final_top`` distinct
    treatments come back.
    """
    fused = hybrid_rank(question, sparse, dense, provider, params)
    answers: list[AlgorithmAnswer] = []
    seen: set[str] = set()
    for doc_id, score in fused:
        doc = documents[doc_id]
        if doc.treatment_node in seen:
            continue
        seen.add(doc.treatment_node)
        answers.append(
            AlgorithmAnswer(
                treatment_node=doc.treatment_node,
                answer_text=doc.treatment_content,
                evidence_path=doc.path,
                doc_id=doc_id,
                fused_score=score,
            )
        )
        if len(answers) >= params.final_top:
            break
    return answers


@dataclass(frozen=True)
class DiscussionAnswer:
    """A generated answer with its two evidence paragraphs."""

    answer_text: str
    evidence_ids: tuple[str, ...]


def answer_from_discussion(
    question: str,
    paragraphs: Mapping[str, str],
    sparse: SparseIndex,
    dense: DenseIndex,
    provider: EmbeddingProvider,
    generator,
    params: FusionParams = FusionParams(),
    template: str = DEFAULT_DISCUSSION_TEMPLATE,
    max_tokens: int = 256,
    temperature: float = 0.0,
    retries: int = 3,
) -> DiscussionAnswer:
    """Retrieve the top paragraphs and generate an answer from them."""
    top = hybrid_retrieve(question, sparse, dense, provider, params)
    evidence_ids = tuple(doc_id for doc_id, _score in top)
    request = GenerationRequest(
        system_preamble=template,
        question=question,
        context=tuple(paragraphs[i] for i in evidence_ids),
        max_tokens=max_tokens,
        temperature=temperature,
    )
    last: Exception | None = None
    for _ in range(retries):
        try:
            text = generator.generate(request)
            return DiscussionAnswer(answer_text=text, evidence_ids=evidence_ids)
        except TransportError as exc:
            last = exc
    raise GenerationError(
        f"generation failed after {retries} attempts: {last}", evidence_ids=evidence_ids
    )


# ---------------------------------------------------------------------------
# Token-overlap F1 and evaluation
# ---------------------------------------------------------------------------


def f1_score(predicted: str, gold: str) -> float:
    """Harmonic mean of token precision and recall (multiset overlap)."""
    pred = normalize_tokens(predicted)
    ref = normalize_tokens(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum(min(pred.count(t), ref.count(t)) for t in set(pred))
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class PredictedAnswer:
    text: str
    evidence: tuple[str, ...] = ()


@dataclass(frozen=True)
class QAResult:
    question: str
    predicted: tuple[PredictedAnswer, ...]
    f1_scores: tuple[float, ...]
    best_f1: float


@dataclass
class EvalReport:
    mean_best_f1: float
    answered: int
    total: int
    results: list[QAResult]

    def to_obj(self) -> dict:
        return {
            "mean_best_f1": self.mean_best_f1,
            "answered": self.answered,
            "total": self.total,
            "results": [
                {
                    "question": r.question,
                    "predicted": [
                        {"text": p.text, "evidence": list(p.evidence)} for p in r.predicted
                    ],
                    "f1_scores": list(r.f1_scores),
                    "best_f1": r.best_f1,
                }
                for r in self.results
            ],
        }

    def to_json(self) -> bytes:
        return (json.dumps(self.to_obj(), indent=2) + "\n").encode("utf-8")


def evaluate(
    dataset: list["QAPair"], system: Callable[[str], list[PredictedAnswer]]
) -> EvalReport:
    """Best-of-answers F1 per question, averaged over the dataset."""
    if not dataset:
        raise ValidationError("cannot evaluate an empty dataset")
    results = []
    for pair in dataset:
        predicted = tuple(system(pair.question))[:2]
        scores = tuple(f1_score(p.text, pair.answer) for p in predicted)
        results.append(
            QAResult(
                question=pair.question,
                predicted=predicted,
                f1_scores=scores,
                best_f1=max(scores, default=0.0),
            )
        )
    mean = sum(r.best_f1 for r in results) / len(results)
    return EvalReport(
        mean_best_f1=mean,
        answered=sum(1 for r in results if r.predicted),
        total=len(results),
        results=results,
    )


# ---------------------------------------------------------------------------
# QA dataset XML
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QAPair:
    """One question-answer pair with its provenance label."""

    pair_id: str
    question: str
    answer: str
    source: str
    question_id: str = ""

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise ValidationError(f"QAPair {self.pair_id}: question and answer must be non-empty")


def load_dataset(data: bytes | str) -> list[QAPair]:
    """Parse the QA dataset XML; errors carry the offending element path."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ParseError(f"QA dataset: invalid XML ({exc})") from exc
    if root.tag != "QAData":
        raise ParseError(f"QAData: unexpected root element <{root.tag}>")
    source = root.get("source")
    if source is None:
        raise ParseError("QAData: missing 'source' attribute")
    pairs: list[QAPair] = []
    for i, elem in enumerate(root, start=1):
        where = f"QAData/QAPair[{i}]"
        if elem.tag != "QAPair":
            raise ParseError(f"{where}: unexpected element <{elem.tag}>")
        pid = elem.get("pid")
        if pid is None:
            raise ParseError(f"{where}: missing 'pid' attribute")
        question = elem.find("Question")
        if question is None:
            raise ParseError(f"{where}/Question: missing element")
        answer = elem.find("Answer")
        if answer is None:
            raise ParseError(f"{where}/Answer: missing element")
        try:
            pairs.append(
                QAPair(
                    pair_id=pid,
                    question=(question.text or "").strip(),
                    answer=(answer.text or "").strip(),
                    source=source,
                    question_id=question.get("qid", pid),
                )
            )
        except ValidationError as exc:
            raise ParseError(f"{where}: {exc}") from exc
    return pairs


def save_dataset(pairs: list[QAPair], version: str = "1.0") -> bytes:
    """Serialize pairs back to the dataset XML schema."""
    if not pairs:
        raise ValidationError("cannot save an empty dataset")
    sources = {p.source for p in pairs}
    if len(sources) != 1:
        raise ValidationError(f"pairs carry mixed sources: {sorted(sources)}")
    root = ET.Element("QAData", {"source": pairs[0].source, "version": version})
    for pair in pairs:
        elem = ET.SubElement(root, "QAPair", {"pid": pair.pair_id})
        question = ET.SubElement(elem, "Question", {"qid": pair.question_id or pair.pair_id})
        question.text = pair.question
        answer = ET.SubElement(elem, "Answer")
        answer.text = pair.answer
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


# ---------------------------------------------------------------------------
# Synthetic question generation
# ---------------------------------------------------------------------------

_NUMBERING_RE = re.compile(r"^\s*(?:\d+[.)]\s*|[-*]\s+)")


def _parse_question_lines(text: str) -> list[str]:
    questions = []
    for line in text.splitlines():
        stripped = _NUMBERING_RE.sub("", line).strip()
        if stripped:
            questions.append(stripped)
    return questions


def generate_synthetic_qa(
    paragraphs: Mapping[str, str],
    generator,
    per_para: int,
    template: str = DEFAULT_SYNTH_TEMPLATE,
    source: str = "synthetic",
    retries: int = 3,
) -> tuple[list[QAPair], list[str]]:
    """Ask the generator for questions per paragraph; pair them with it.

    Paragraphs whose generator output cannot be parsed, or that keep
    failing, are skipped and reported; the rest still come back.
    """
    filled = template.replace("{n}", str(per_para))
    pairs: list[QAPair] = []
    warnings: list[str] = []
    for para_id in sorted(paragraphs):
        request = GenerationRequest(
            system_preamble=filled, question="", context=(paragraphs[para_id],)
        )
        output = None
        last: Exception | None = None
        for _ in range(retries):
            try:
                output = generator.generate(request)
                break
            except TransportError as exc:
                last = exc
        if output is None:
            warnings.append(f"paragraph {para_id}: generation failed ({last})")
            continue
        questions = _parse_question_lines(output)[:per_para]
        if not questions:
            warnings.append(f"paragraph {para_id}: unparseable generator output; skipped")
            continue
        for k, question in enumerate(questions, start=1):
            pairs.append(
                QAPair(
                    pair_id=f"{para_id}-q{k}",
                    question=question,
                    answer=paragraphs[para_id],
                    source=source,
                )
            )
    return pairs, warnings
