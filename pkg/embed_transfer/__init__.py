from .teacher import TeacherFeatureMap, FeatureTeacher, OfflineTeacher
from .transfer import (
    ROW_KL,
    MATRIX_MSE,
    TEACHER,
    STUDENT,
    TransferConfig,
    SimilarityMatrix,
    TransferSet,
    roi_pool_teacher,
    similarity_matrix,
    transfer_loss,
    collect_transfer_instances,
)
