from .constants import KNOWN, UNKNOWN_SPLIT
from .scenes import (
    CategorySpec,
    SceneSpec,
    AnnotationRecord,
    Scene,
    Sprite,
    make_rng,
    default_roster,
    validate_roster,
    generate_scene,
)
from .oracles import (
    SegmenterConfig,
    TeacherConfig,
    OracleTeacher,
    make_teacher,
    oracle_segmenter,
    oracle_teacher,
    category_prototypes,
)
from .sequences import generate_sequence, reflect_position
from .dataset_io import Dataset, serialize_dataset, load_dataset, group_sequences
from .builder import ParallelSceneGenerator, DataConfig, DatasetBuilder
