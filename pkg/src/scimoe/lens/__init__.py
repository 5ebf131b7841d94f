"""Expert-choice analysis: profiles, t-SNE, separation statistics and plots."""

from .plot import emit_plot, label_colors
from .profiles import ExpertChoiceProfile, collect_profiles, expert_profile, profile_matrix
from .report import ClusterReport, cluster_report, silhouette
from .tsne import EmbeddingResult, joint_affinities, tsne_reduce

__all__ = [
    "ClusterReport",
    "EmbeddingResult",
    "ExpertChoiceProfile",
    "cluster_report",
    "collect_profiles",
    "emit_plot",
    "expert_profile",
    "joint_affinities",
    "label_colors",
    "profile_matrix",
    "silhouette",
    "tsne_reduce",
]
