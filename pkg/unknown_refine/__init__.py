from .refiner import (
    KNOWN_OVERLAP_IOU,
    MATCHING_SCHEMES,
    RefineConfig,
    PseudoPair,
    select_unknown_candidates,
    build_pseudo_targets,
    gather_candidate_cells,
    refine_loss,
    unknown_category_loss,
)
