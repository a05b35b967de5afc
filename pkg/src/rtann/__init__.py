"""Selective-LUT IVFPQ search with a software ray-tracing core."""

from .dataset_io import (
    Dataset,
    Metric,
    NeighborTable,
    gen_synthetic,
    gen_synthetic_queries,
    read_groundtruth,
    read_vecs,
    write_groundtruth,
    write_vecs,
)
from .trainer import Index, build_index, load_index, save_index
from .search import Mode, QueryResult, SearchParams, search_batch
from .reference import brute_force_topk, ivfpq_reference_search

__all__ = [
    "Dataset",
    "Metric",
    "NeighborTable",
    "gen_synthetic",
    "gen_synthetic_queries",
    "read_vecs",
    "write_vecs",
    "read_groundtruth",
    "write_groundtruth",
    "Index",
    "build_index",
    "save_index",
    "load_index",
    "Mode",
    "QueryResult",
    "SearchParams",
    "search_batch",
    "brute_force_topk",
    "ivfpq_reference_search",
]

__version__ = "0.1.0"
