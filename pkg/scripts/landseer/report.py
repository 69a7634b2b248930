"""
Reports

DOT renderings of interference graphs, findings.json, and a summary
table (summary.md, rendered to summary.html with markdown).

Effect codes combine severity and effect:

    ++  severe improvement      --  severe degradation
    +   moderate improvement    -   moderate degradation
    ≡   no change (negligible)
"""

import json
import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import markdown

from .combinator import Combination, ExperimentSpec
from .igraph import InterferenceGraph
from .metrics import DeltaRecord, Effect, MetricSpec, Severity
from .registry import STAGES
from .rootcause import Finding, GraphAnalysis

logger = logging.getLogger(__name__)

PLAIN_CODES = {
    (Severity.SEVERE, Effect.IMPROVED): "++",
    (Severity.MODERATE, Effect.IMPROVED): "+",
    (Severity.MODERATE, Effect.DEGRADED): "-",
    (Severity.SEVERE, Effect.DEGRADED): "--",
}

UNICODE_CODES = {
    (Severity.SEVERE, Effect.IMPROVED): "↑++",
    (Severity.MODERATE, Effect.IMPROVED): "↑+",
    (Severity.MODERATE, Effect.DEGRADED): "↓−",
    (Severity.SEVERE, Effect.DEGRADED): "↓−−",
}

UNCHANGED = "≡"

# DOT styles per edge kind
VERTICAL_STYLE = 'color="blue", style="solid"'
HORIZONTAL_STYLE = 'color="red", style="dashed", dir="none", constraint="false"'
PRIME_STYLE = 'color="gray40", style="dotted"'


def effect_code(severity: Severity, effect: Effect, unicode: bool = False) -> str:
    """Pure function of (severity, effect)."""
    if severity is Severity.NEGLIGIBLE:
        return UNCHANGED
    return (UNICODE_CODES if unicode else PLAIN_CODES)[(severity, effect)]


def delta_code(delta: DeltaRecord, unicode: bool = False) -> str:
    return effect_code(delta.severity, delta.effect, unicode)


def short_label(combination_id: str) -> str:
    """pre[a] during[b] post[c2,c1]; 'baseline' for the empty combination."""
    combination = Combination.from_id(combination_id)
    parts = [f"{stage.value}[{','.join(tools)}]" for stage, tools in zip(STAGES, combination.stages) if tools]
    return " ".join(parts) if parts else "baseline"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def emit_dot(graph: InterferenceGraph, findings: Iterable[Finding] = ()) -> str:
    """
    Render one interference graph as DOT.

    Focus nodes are ellipses, prime nodes gray boxes; root-cause nodes are
    filled. Vertical edges are solid blue, horizontal dashed red, prime
    links dotted.
    """
    causes = {f.node for f in findings if f.focus == graph.focus}
    lines = [f"digraph {_quote('interference_' + graph.focus)} {{", "  rankdir=TB;"]
    for node in sorted(graph.nodes.values(), key=lambda n: (n.cardinality, not n.contains_focus, n.id)):
        attrs = [f"label={_quote(node.id)}"]
        if not node.contains_focus:
            attrs.append('shape="box", color="gray40", fontcolor="gray40"')
        if node.id in causes:
            attrs.append('style="filled", fillcolor="#f5b7b1", penwidth="2"')
        if not node.evaluated:
            attrs.append('fontcolor="gray60", style="dashed"')
        lines.append(f"  {_quote(node.id)} [{', '.join(attrs)}];")
    for edge in graph.vertical:
        lines.append(f"  {_quote(edge.parent)} -> {_quote(edge.child)} [{VERTICAL_STYLE}];")
    for a, b in graph.horizontal:
        lines.append(f"  {_quote(a)} -> {_quote(b)} [{HORIZONTAL_STYLE}];")
    for node, prime in sorted(graph.primes.items()):
        lines.append(f"  {_quote(node)} -> {_quote(prime)} [{PRIME_STYLE}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def emit_summary(findings: Sequence[Finding], metrics: Sequence[MetricSpec],
                 analyses: Sequence[GraphAnalysis] = (), spec: Optional[ExperimentSpec] = None,
                 unicode: bool = False, unevaluated: Sequence[Mapping] = ()) -> str:
    """Markdown summary: one row per finding with labels and per-metric codes."""
    names = [m.name for m in metrics]
    lines = []
    title = f"Interference summary: {spec.id}" if spec else "Interference summary"
    lines.append(f"# {title}")
    lines.append("")
    if spec is not None:
        lines.append(f"- Model: `{spec.model}`, dataset: `{spec.dataset}`, seeds: {spec.seeds}")
    applied = next((a for a in analyses if a.thresholds is not None), None)
    if applied is not None:
        thresholds, gi_fraction = applied.thresholds, applied.gi_fraction
    elif spec is not None:
        thresholds, gi_fraction = spec.thresholds, spec.gi_fraction
    else:
        thresholds = None
    if thresholds is not None:
        lines.append(f"- Thresholds: t_l = {thresholds.low:g}, t_h = {thresholds.high:g}, "
                     f"GI fraction = {gi_fraction:g}")
    modes = sorted({a.mode for a in analyses})
    if modes:
        lines.append(f"- Traversal: {', '.join(modes)}")
    lines.append(f"- Root causes: {len(findings)}")
    lines.append("")

    lines.append("## Findings")
    lines.append("")
    if not findings:
        lines.append("No interference found.")
    else:
        lines.append("| Focus | Combination | Labels | " + " | ".join(names) + " |")
        lines.append("|---|---|---|" + "---|" * len(names))
        for finding in sorted(findings, key=lambda f: (f.focus, f.cardinality, f.node)):
            codes = {d.metric: delta_code(d, unicode) for d in finding.deltas}
            labels = ", ".join(finding.sorted_labels) or "-"
            cells = [codes.get(name, UNCHANGED) for name in names]
            lines.append(f"| {finding.focus} | {short_label(finding.node)} | {labels} | " + " | ".join(cells) + " |")
    lines.append("")

    if analyses:
        lines.append("## Focus tools")
        lines.append("")
        lines.append("| Focus | Root causes | Interfering share | GI | Skipped nodes |")
        lines.append("|---|---|---|---|---|")
        for analysis in analyses:
            gi = analysis.gi
            share = f"{gi.interfering}/{gi.eligible} ({gi.fraction:.2f})" if gi and gi.fraction is not None else "n/a"
            flag = "yes" if gi and gi.is_global else "no"
            lines.append(f"| {analysis.focus} | {len(analysis.findings)} | {share} | {flag} | {len(analysis.skipped)} |")
        lines.append("")

    if unevaluated:
        lines.append("## Unevaluated combinations")
        lines.append("")
        for item in unevaluated:
            lines.append(f"- {short_label(item['combination'])} (seed {item['seed']}): {item['cause']}")
        lines.append("")
    return "\n".join(lines)


def emit_findings_json(findings: Iterable[Finding], path: Path) -> None:
    """findings.json: a list of Finding records."""
    payload = [f.to_dict() for f in findings]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def load_findings(path: Path) -> list[Finding]:
    return [Finding.from_dict(d) for d in json.loads(path.read_text(encoding="utf-8"))]


def write_analyses(analyses: Iterable[GraphAnalysis], path: Path) -> None:
    payload = [a.to_dict() for a in analyses]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def load_analyses(path: Path) -> list[GraphAnalysis]:
    return [GraphAnalysis.from_dict(d) for d in json.loads(path.read_text(encoding="utf-8"))]


HTML_TEMPLATE = """<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>{title}</title>
    <style>
        body {{
            font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif;
            line-height: 1.6;
            max-width: 1100px;
            margin: 0 auto;
            padding: 40px;
            color: #333;
        }}
        h1 {{ color: #1a5276; border-bottom: 3px solid #1a5276; padding-bottom: 15px; }}
        h2 {{ color: #2874a6; border-bottom: 2px solid #aed6f1; padding-bottom: 10px; margin-top: 40px; }}
        code {{ background: #f4f6f7; padding: 2px 6px; border-radius: 3px; font-family: 'Consolas', 'Monaco', monospace; }}
        table {{ width: 100%; border-collapse: collapse; margin: 20px 0; font-size: 0.95em; }}
        th {{ background: #2874a6; color: white; padding: 10px; text-align: left; }}
        td {{ border: 1px solid #ddd; padding: 8px; }}
        tr:nth-child(even) {{ background: #f8f9fa; }}
    </style>
</head>
<body>
{content}
</body>
</html>
"""


def render_summary_html(summary_md: str) -> str:
    """Wrap the markdown summary in a standalone HTML page."""
    title = "Interference summary"
    for line in summary_md.splitlines():
        if line.startswith("# "):
            title = line[2:].strip()
            break
    content = markdown.markdown(summary_md, extensions=["tables"])
    return HTML_TEMPLATE.format(title=title, content=content)


def write_report(rundir: Path, unicode: bool = False) -> list[Path]:
    """
    Render graphs/<focus>.dot, summary.md and summary.html from an analyzed run directory.

    Raises:
        FileNotFoundError: The run has not been analyzed yet
    """
    rundir = Path(rundir)
    spec = ExperimentSpec.from_dict(json.loads((rundir / "experiment.json").read_text(encoding="utf-8")))
    findings = load_findings(rundir / "findings.json")
    analyses_path = rundir / "analysis.json"
    analyses = load_analyses(analyses_path) if analyses_path.exists() else []
    unevaluated_path = rundir / "unevaluated.json"
    unevaluated = json.loads(unevaluated_path.read_text(encoding="utf-8")) if unevaluated_path.exists() else []

    written = []
    for graph_file in sorted((rundir / "graphs").glob("*.json")):
        graph = InterferenceGraph.from_dict(json.loads(graph_file.read_text(encoding="utf-8")))
        dot_path = graph_file.with_suffix(".dot")
        dot_path.write_text(emit_dot(graph, findings), encoding="utf-8")
        written.append(dot_path)

    summary = emit_summary(findings, spec.metrics, analyses, spec, unicode, unevaluated)
    summary_path = rundir / "summary.md"
    summary_path.write_text(summary, encoding="utf-8")
    html_path = rundir / "summary.html"
    html_path.write_text(render_summary_html(summary), encoding="utf-8")
    written.extend([summary_path, html_path])
    logger.info("Report for %s: %d files", spec.id, len(written))
    return written
