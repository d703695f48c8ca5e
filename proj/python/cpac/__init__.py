"""Deep clustering with pairwise constraints (C++ core)."""

from ._core import (
    CpacError,
    acc,
    cluster,
    compute_lambda,
    connected_components,
    extract_clusters,
    final_threshold,
    geman_mcclure,
    geman_mcclure_grad,
    mknn_edges,
    nmi,
    pca_project,
    synth_blobs,
    synth_corrupted_blobs,
)

__all__ = [
    "CpacError",
    "acc",
    "cluster",
    "compute_lambda",
    "connected_components",
    "extract_clusters",
    "final_threshold",
    "geman_mcclure",
    "geman_mcclure_grad",
    "mknn_edges",
    "nmi",
    "pca_project",
    "synth_blobs",
    "synth_corrupted_blobs",
]
