from .boxes import (
    Box,
    BinaryMask,
    iou,
    giou,
    mask_to_box,
    clamp_box,
    boxes_to_array,
    iou_matrix,
    nms,
    giou_loss_terms,
)
