"""ROUGE metrics, consistency scoring, and correction diagnostics."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .corpus import tokenize


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _score(overlap: float, cand_total: int, ref_total: int) -> RougeScore:
    p = overlap / cand_total if cand_total > 0 else 0.0
    r = overlap / ref_total if ref_total > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(precision=p, recall=r, f1=f1)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    """Clipped n-gram overlap; precision over candidate, recall over reference."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    return _score(overlap, sum(cand.values()), sum(ref.values()))


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    """Summary-level longest common subsequence over whole token sequences."""
    lcs = _lcs_len(candidate, reference)
    return _score(lcs, len(candidate), len(reference))


def _lcs_positions(a: Sequence[str], b: Sequence[str]) -> set[int]:
    # Positions in `b` covered by one LCS of (a, b); used by the union variant.
    m, n = len(a), len(b)
    dp = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if a[i - 1] == b[j - 1]:
                dp[i][j] = dp[i - 1][j - 1] + 1
            else:
                dp[i][j] = max(dp[i - 1][j], dp[i][j - 1])
    out: set[int] = set()
    i, j = m, n
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1]:
            out.add(j - 1)
            i -= 1
            j -= 1
        elif dp[i - 1][j] >= dp[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return out


def rouge_l_union(
    candidate_sentences: Sequence[Sequence[str]],
    reference_sentences: Sequence[Sequence[str]],
) -> RougeScore:
    """Sentence-level union-LCS variant, selectable behind --rouge-l-mode."""
    cand_total = sum(len(s) for s in candidate_sentences)
    ref_total = sum(len(s) for s in reference_sentences)
    union_size = 0
    for ref_sent in reference_sentences:
        covered: set[int] = set()
        for cand_sent in candidate_sentences:
            covered |= _lcs_positions(cand_sent, ref_sent)
        union_size += len(covered)
    return _score(union_size, cand_total, ref_total)


ProbFn = Callable[[str, str], float]


def consistency_score(prob_fn: ProbFn, pairs: Sequence[tuple[str, str]]) -> tuple[float, list[float]]:
    """Mean P(CORRECT) over (claim, document) pairs, scaled by 100."""
    if not pairs:
        raise ValueError("consistency_score needs at least one (claim, document) pair")
    per_record = [float(prob_fn(claim, document)) for claim, document in pairs]
    return 100.0 * sum(per_record) / len(per_record), per_record


def consistency_rate(per_record: Sequence[float], threshold: float = 0.5) -> float:
    """Binary-accuracy mode: share of records classified CORRECT, scaled by 100."""
    if not per_record:
        raise ValueError("consistency_rate needs at least one probability")
    return 100.0 * sum(1 for p in per_record if p >= threshold) / len(per_record)


@dataclass
class CorrectionDiagnostics:
    revised_fraction: float
    new_token_counts: list[int]
    few_new_token_fraction: float
    mean_summary_length: float
    revised_ids: list[str]

    def to_dict(self) -> dict:
        return {
            "revised_fraction": self.revised_fraction,
            "new_token_counts": self.new_token_counts,
            "few_new_token_fraction": self.few_new_token_fraction,
            "mean_summary_length": self.mean_summary_length,
            "revised_ids": self.revised_ids,
        }


def correction_diagnostics(
    candidates: Sequence[tuple[str, str]],
    corrected: Sequence[tuple[str, str]],
    few_threshold: int = 3,
) -> CorrectionDiagnostics:
    """Revision statistics for aligned (id, text) lists of candidate/corrected summaries.

    A summary counts as revised iff its token sequence changed; new tokens are
    the multiset difference corrected - candidate.
    """
    if len(candidates) != len(corrected):
        raise ValueError("candidate and corrected lists differ in length")
    if not candidates:
        raise ValueError("correction_diagnostics needs at least one summary")
    new_token_counts: list[int] = []
    revised_ids: list[str] = []
    lengths: list[int] = []
    for (cand_id, cand_text), (corr_id, corr_text) in zip(candidates, corrected):
        if cand_id != corr_id:
            raise ValueError(f"misaligned ids: {cand_id!r} vs {corr_id!r}")
        cand_tokens = tokenize(cand_text)
        corr_tokens = tokenize(corr_text)
        lengths.append(len(cand_tokens))
        if cand_tokens == corr_tokens:
            continue
        revised_ids.append(cand_id)
        diff = Counter(corr_tokens) - Counter(cand_tokens)
        new_token_counts.append(sum(diff.values()))
    revised = len(revised_ids)
    few = sum(1 for n in new_token_counts if n <= few_threshold)
    return CorrectionDiagnostics(
        revised_fraction=revised / len(candidates),
        new_token_counts=new_token_counts,
        few_new_token_fraction=few / revised if revised else 0.0,
        mean_summary_length=sum(lengths) / len(lengths),
        revised_ids=revised_ids,
    )


@dataclass
class EvalRow:
    id: str
    rouge1: RougeScore
    rouge2: RougeScore
    rougeL: RougeScore
    consistency: float | None = None


@dataclass
class EvalReport:
    label: str
    guidance: str
    rows: list[EvalRow]
    rouge1: float = 0.0
    rouge2: float = 0.0
    rougeL: float = 0.0
    consistency: float | None = None
    consistency_mode: str = "mean_probability"
    diagnostics: CorrectionDiagnostics | None = None
    rouge_l_mode: str = "summary"
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "guidance": self.guidance,
            "n": len(self.rows),
            "rouge1": self.rouge1,
            "rouge2": self.rouge2,
            "rougeL": self.rougeL,
            "rouge_l_mode": self.rouge_l_mode,
            "consistency": self.consistency,
            "consistency_mode": self.consistency_mode,
            "rows": [
                {
                    "id": row.id,
                    "rouge1": row.rouge1.f1,
                    "rouge2": row.rouge2.f1,
                    "rougeL": row.rougeL.f1,
                    "consistency": row.consistency,
                }
                for row in self.rows
            ],
        }
        if self.diagnostics is not None:
            out["diagnostics"] = self.diagnostics.to_dict()
        out.update(self.extras)
        return out


def _sentences_tokens(text: str) -> list[list[str]]:
    from .guidance import segment_sentences

    return [tokenize(sent.text) for sent in segment_sentences(text)]


def evaluate_system(
    outputs: Sequence[tuple[str, str]],
    references: Sequence[tuple[str, str]],
    documents: Sequence[tuple[str, str]],
    prob_fn: ProbFn | None = None,
    label: str = "system",
    guidance: str = "none",
    rouge_l_mode: str = "summary",
    consistency_mode: str = "mean_probability",
) -> EvalReport:
    """Corpus-level report over aligned (id, text) lists."""
    if rouge_l_mode not in ("summary", "union"):
        raise ValueError(f"unknown rouge_l_mode {rouge_l_mode!r}")
    if consistency_mode not in ("mean_probability", "binary_accuracy"):
        raise ValueError(f"unknown consistency_mode {consistency_mode!r}")
    if not (len(outputs) == len(references) == len(documents)):
        raise ValueError("outputs, references, and documents differ in length")
    rows: list[EvalRow] = []
    for (out_id, out_text), (ref_id, ref_text), (doc_id, doc_text) in zip(
        outputs, references, documents
    ):
        if not (out_id == ref_id == doc_id):
            raise ValueError(f"misaligned ids: {out_id!r}, {ref_id!r}, {doc_id!r}")
        cand = tokenize(out_text)
        ref = tokenize(ref_text)
        if rouge_l_mode == "union":
            r_l = rouge_l_union(_sentences_tokens(out_text), _sentences_tokens(ref_text))
        else:
            r_l = rouge_l(cand, ref)
        prob = float(prob_fn(out_text, doc_text)) if prob_fn is not None else None
        rows.append(
            EvalRow(
                id=out_id,
                rouge1=rouge_n(cand, ref, 1),
                rouge2=rouge_n(cand, ref, 2),
                rougeL=r_l,
                consistency=prob,
            )
        )
    n = len(rows)
    report = EvalReport(
        label=label,
        guidance=guidance,
        rows=rows,
        rouge1=100.0 * sum(r.rouge1.f1 for r in rows) / n,
        rouge2=100.0 * sum(r.rouge2.f1 for r in rows) / n,
        rougeL=100.0 * sum(r.rougeL.f1 for r in rows) / n,
        rouge_l_mode=rouge_l_mode,
        consistency_mode=consistency_mode,
    )
    if prob_fn is not None:
        probs = [r.consistency for r in rows]
        if consistency_mode == "binary_accuracy":
            report.consistency = consistency_rate(probs)
        else:
            report.consistency = 100.0 * sum(probs) / n
    return report


_TABLE_COLUMNS = ("Model", "Guidance Signal", "Rouge-1", "Rouge-2", "Rouge-L", "Consistency")


def render_table(reports: Sequence[EvalReport]) -> str:
    rows = [_TABLE_COLUMNS]
    for rep in reports:
        rows.append(
            (
                rep.label,
                rep.guidance,
                f"{rep.rouge1:.3f}",
                f"{rep.rouge2:.3f}",
                f"{rep.rougeL:.3f}",
                "-" if rep.consistency is None else f"{rep.consistency:.2f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(_TABLE_COLUMNS))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(widths))))
    return "\n".join(lines)


def write_report(path, reports: Sequence[EvalReport]) -> None:
    payload = {"reports": [rep.to_dict() for rep in reports]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")
