"""Sequence classification of social interactions from per-frame attribute vectors."""

__version__ = "0.1.0"

from socialseq.taxonomy import Domain, Relation, domain_of, infer_domain_distribution

__all__ = [
    "__version__",
    "Domain",
    "Relation",
    "domain_of",
    "infer_domain_distribution",
]
