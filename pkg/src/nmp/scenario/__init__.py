"""Synthetic driving scenarios: data model, generator and LiDAR synthesis."""
from .model import (
    DASHED,
    SCHEMA,
    SOLID,
    Actor,
    Boundary,
    Lane,
    Scenario,
    ScenarioFormatError,
    StopLine,
    dumps,
    load,
    loads,
    save,
)
from .generate import (
    ARCHETYPES,
    PARTITIONS,
    GenerationError,
    ScenarioConfig,
    generate,
    load_partition,
    partition_seeds,
    verify_demonstration,
    write_set,
)
from .lidar import LidarConfig, synthesize_points, synthesize_sweeps
