"""Score log I/O and the median/ratio/test summary tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

from ..stats import (AnovaResult, MannWhitneyResult, StatsError, anova_oneway, attn_ratio,
                     log_positive, mann_whitney_two_sided, median)

METRICS = ("cosine", "spearman")
METRIC_TITLES = {"cosine": "Cosine Similarity, Median", "spearman": "Spearman Correlation, Median"}
SCORE_FIELDS = ("frame_id", "method", "cosine", "spearman", "attention")


@dataclass(frozen=True)
class ScoreRecord:
    frame_id: str
    method: str
    cosine: float
    spearman: float
    attention: str


def write_scores(path, scores) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_FIELDS)
        for s in scores:
            writer.writerow([s.frame_id, s.method, repr(s.cosine), repr(s.spearman), s.attention])


def read_scores(path) -> list[ScoreRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if set(SCORE_FIELDS) - set(reader.fieldnames or ()):
            raise ValueError(f"{path}: score log needs columns {', '.join(SCORE_FIELDS)}")
        out = []
        for line_no, row in enumerate(reader, start=2):
            try:
                out.append(ScoreRecord(row["frame_id"], row["method"], float(row["cosine"]),
                                       float(row["spearman"]), row["attention"]))
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
    return out


@dataclass
class MethodRow:
    method: str
    n_all: int
    n_attentive: int
    n_inattentive: int
    all: float | None
    attentive: float | None
    inattentive: float | None
    ratio: float | None
    mann_whitney: MannWhitneyResult | None = None
    log_excluded: int = 0


@dataclass
class MetricTable:
    metric: str
    rows: list[MethodRow]
    anova: AnovaResult | None = None
    anova_note: str = ""


@dataclass
class ReportTable:
    tables: dict[str, MetricTable]
    meta: dict = field(default_factory=dict)


def _median_or_none(values):
    return median(values) if values else None


def _method_row(method: str, scores, metric: str) -> MethodRow:
    vals = [getattr(s, metric) for s in scores]
    att = [getattr(s, metric) for s in scores if s.attention == "attentive"]
    inatt = [getattr(s, metric) for s in scores if s.attention == "inattentive"]
    m_all, m_att, m_in = _median_or_none(vals), _median_or_none(att), _median_or_none(inatt)
    ratio = None
    if m_att is not None and m_in not in (None, 0.0):
        ratio = attn_ratio(m_att, m_in)
    log_att, drop_a = log_positive(att)
    log_in, drop_i = log_positive(inatt)
    mw = None
    if log_att.size and log_in.size:
        mw = mann_whitney_two_sided(log_att, log_in)
    return MethodRow(method, len(vals), len(att), len(inatt), m_all, m_att, m_in, ratio, mw, drop_a + drop_i)


def summarize(scores, methods=None, meta=None) -> ReportTable:
    """Medians per attention class, ratios, per-method Mann-Whitney on log scores
    (attentive vs inattentive) and a one-way ANOVA across methods."""
    scores = list(scores)
    if methods is None:
        methods = list(dict.fromkeys(s.method for s in scores))
    by_method = {m: [s for s in scores if s.method == m] for m in methods}
    tables = {}
    for metric in METRICS:
        rows = [_method_row(m, by_method[m], metric) for m in methods]
        groups = [[getattr(s, metric) for s in by_method[m]] for m in methods]
        anova, note = None, ""
        try:
            anova = anova_oneway(groups)
        except StatsError as exc:
            note = str(exc)
        tables[metric] = MetricTable(metric, rows, anova, note)
    return ReportTable(tables, dict(meta or {}))


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _fmt(v, spec=".5f"):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return format(v, spec)


def render_text(report: ReportTable) -> str:
    lines = []
    for key, value in report.meta.items():
        lines.append(f"# {key}: {value}")
    if report.meta:
        lines.append("")
    for metric, table in report.tables.items():
        width = max([len("Method")] + [len(r.method) for r in table.rows])
        lines.append(METRIC_TITLES.get(metric, metric))
        head = f"{'Method':<{width}}  {'All':>10}  {'Attentive':>10}  {'Inattentive':>11}  {'Ratio':>9}  {'N':>6}"
        lines.append(head)
        lines.append("-" * len(head))
        for r in table.rows:
            lines.append(f"{r.method:<{width}}  {_fmt(r.all):>10}  {_fmt(r.attentive):>10}  "
                         f"{_fmt(r.inattentive):>11}  {_fmt(r.ratio):>9}  {r.n_all:>6}")
        lines.append("")
        if table.anova is not None:
            a = table.anova
            lines.append(f"one-way ANOVA across methods: F({a.df_between}, {a.df_within}) = "
                         f"{_fmt(a.statistic, '.6g')}, p = {_fmt(a.p_value, '.4g')}")
        else:
            lines.append(f"one-way ANOVA across methods: not computed ({table.anova_note})")
        lines.append("Mann-Whitney (two-sided, log scores, attentive vs inattentive):")
        for r in table.rows:
            if r.mann_whitney is None:
                lines.append(f"  {r.method:<{width}}  not computed")
                continue
            mw = r.mann_whitney
            lines.append(f"  {r.method:<{width}}  U = {_fmt(mw.u_x, '.1f')}, p = {_fmt(mw.p_value, '.4g')} "
                         f"({mw.method_of_computation}; {r.log_excluded} non-positive excluded)")
        lines.append("")
    return "\n".join(lines)


def _clean(obj):
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def to_json(report: ReportTable) -> str:
    payload = {"meta": report.meta,
               "tables": {m: asdict(t) for m, t in report.tables.items()}}
    return json.dumps(_clean(payload), indent=2) + "\n"


def _unclean(v):
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return math.nan if v is None else v


def from_json(text: str) -> ReportTable:
    payload = json.loads(text)
    tables = {}
    for metric, t in payload["tables"].items():
        rows = []
        for r in t["rows"]:
            mw = r.pop("mann_whitney")
            rows.append(MethodRow(**r, mann_whitney=MannWhitneyResult(
                **{k: _unclean(v) if k not in ("method_of_computation",) else v for k, v in mw.items()})
                if mw else None))
        a = t.get("anova")
        anova = AnovaResult(**{k: _unclean(v) if k != "method_of_computation" else v for k, v in a.items()}) if a else None
        tables[metric] = MetricTable(metric, rows, anova, t.get("anova_note", ""))
    return ReportTable(tables, payload.get("meta", {}))


def render_tsv(report: ReportTable) -> str:
    """Machine-readable summary, tab separated, first field tags the record.

    ``median`` records: metric, method, n, all, attentive, inattentive, ratio,
    Mann-Whitney U, p and path.  ``anova`` records: metric, F, p, df between,
    df within.  Missing values print as ``-``.
    """
    out = []
    for metric, table in report.tables.items():
        for r in table.rows:
            mw = r.mann_whitney
            out.append("\t".join([
                "median", metric, r.method, str(r.n_all), _fmt(r.all, ".10g"), _fmt(r.attentive, ".10g"),
                _fmt(r.inattentive, ".10g"), _fmt(r.ratio, ".10g"),
                _fmt(mw.u_x if mw else None, ".10g"), _fmt(mw.p_value if mw else None, ".10g"),
                mw.method_of_computation if mw else "-"]))
        a = table.anova
        out.append("\t".join([
            "anova", metric, _fmt(a.statistic if a else None, ".10g"), _fmt(a.p_value if a else None, ".10g"),
            str(a.df_between) if a else "-", str(a.df_within) if a else "-"]))
    return "\n".join(out) + "\n"
