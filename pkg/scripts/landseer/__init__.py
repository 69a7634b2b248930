"""
Landseer: combinatorial ML-defense pipelines and interference analysis.

Modules:
    registry     tool descriptors, reproduction records, onboarding funnel
    combinator   experiments, stage-wise ordered combinations
    planner      task linearization and the deduplicated DAG
    executor     worker pool, backends, ledger
    cache        content-addressed two-level artifact cache
    store        shared object store (filesystem or HTTP)
    metrics      result vectors and delta classification
    igraph       per-tool interference graphs
    rootcause    root-cause traversal and PW/OI/GI labels
    report       DOT, findings.json, summary tables
    synthkit     synthetic tools and brute-force oracles
    cli          command line
"""

__version__ = "0.1.0"
