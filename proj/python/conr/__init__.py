"""Reference-sheet character renderer: synthetic data, UDP baking and the renderer/detector pair."""

from ._conr import (
    Model,
    character_json,
    cli,
    gradcheck,
    pose_json,
    read_png,
    read_udp,
    render_pose,
    split_dataset,
    write_png,
    write_udp,
)

__all__ = [
    "Model",
    "character_json",
    "cli",
    "gradcheck",
    "pose_json",
    "read_png",
    "read_udp",
    "render_pose",
    "split_dataset",
    "write_png",
    "write_udp",
]
