"""Dense scene tracking and manipulated-object extraction from depth sequences."""

import json

from ._core import (
    ManipflowError,
    ObjectParams,
    PointCloud,
    RegistrationParams,
    __version__,
    default_config,
    detect_contacts,
    estimate_normals,
    generate_scenario,
    ransac_rigid,
    read_ply,
    register_nonrigid,
    run_pipeline,
    run_stage,
    score_run,
    segment_actor,
    segment_object,
    track_sequence,
    umeyama_rigid_fit,
    voxel_downsample,
    write_ply,
    write_synthetic_dataset,
)


def scenario(name, **fields):
    """Scenario JSON for generate_scenario / write_synthetic_dataset."""
    return json.dumps({"scenario": name, **fields})
