from .detection import (
    GroundTruth,
    DetectionResult,
    all_points_ap,
    average_precision,
    match_by_score,
    unknown_recall,
)
from .clustering import (
    ClusteringScore,
    clustering_quality,
    cluster_embeddings,
    purity_score,
    estimate_k_elbow,
)
from .tracking import TrackingScore, tracking_metrics, match_frame
from .report import MetricReport, write_report, read_report, append_csv_row, AP_PROTOCOL
from .runner import (
    scene_ground_truth,
    predict_scenes,
    unknown_gt_embeddings,
    detection_report,
    embedding_report,
)
