"""skelimg: skeleton-image encodings of 3D pose sequences, a small
from-scratch CNN, and NTU-style evaluation protocols."""

__version__ = "0.1.0"

from .core import (
    Body,
    Frame,
    SampleMeta,
    SkeletonSequence,
    SkeletonTopology,
    SkelimgError,
    kinect25_topology,
    validate_topology,
)
from .representations import (
    Chain,
    ReferenceJointSet,
    SkeletonImage,
    build_du,
    build_motion,
    build_random_order,
    build_refjoints,
    build_tsrji,
    build_tssi,
    depth_first_chain,
    encode_sequence,
    normalize_minmax,
    quantize_to_image,
    resize_temporal,
    stack,
)
from .ingest import (
    DatasetIndex,
    build_index,
    parse_ntu_filename,
    parse_skeleton_file,
    select_bodies,
)
from .cnn import (
    CnnConfig,
    CnnModel,
    forward,
    gradient_check,
    init_model,
    load_model,
    predict_scores,
    save_model,
    sgd_step,
    softmax_cross_entropy,
    train,
)
from .evaluation import (
    CrossSetup,
    CrossSubject,
    CrossView,
    EvalReport,
    evaluate,
    late_fusion,
    split,
)
from .synth import SynthSpec, generate
