"""evalmine: mine frontier-LLM evaluation results from arXiv LaTeX sources
into a structured record store and run matched-pair meta-analyses on it."""

__version__ = "0.1.0"
