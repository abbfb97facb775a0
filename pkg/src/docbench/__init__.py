"""docbench: turn a document corpus into a benchmark and rank models on it.

The pipeline ingests text/HTML/markdown documents, chunks them semantically,
generates citation-grounded questions with a model ensemble, filters and
deduplicates the pool, then evaluates target models either by pairwise
judging with positional-bias correction (ranked via Bradley-Terry or Elo)
or by exact-match multiple choice scoring, with an analytics layer for
grounding, diversity, agreement, and correlation metrics.
"""

__version__ = "0.1.0"
