from .tracker import (
    TrackerConfig,
    Track,
    AssignmentLog,
    OpenWorldTracker,
    association_cost,
    step,
)
from .runner import (
    DetectionSource,
    DetectorSource,
    GroundTruthSource,
    TrackRow,
    TrackingRun,
    run,
    gt_frame_tracks,
    write_mot,
)
