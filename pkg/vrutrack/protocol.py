# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

# Log tags
ext_vrulog = "#VRULOG"
ext_vru_version = "#VRU-VERSION"
ext_vru_frame = "#VRU-FRAME"
ext_vru_detection = "#VRU-DETECTION"
ext_vru_label = "#VRU-LABEL"
ext_vru_track = "#VRU-TRACK"
ext_vru_example = "#VRU-EXAMPLE"

log_version = 1

# Field order per record tag; serialization and parsing both follow it.
frame_fields = ("time", "sensor")
detection_fields = (
    "id",
    "time",
    "cx",
    "cy",
    "length",
    "width",
    "height",
    "heading",
    "class",
    "confidence",
    "sensor",
    "is_null",
)
label_fields = (
    "track_id",
    "time",
    "cx",
    "cy",
    "length",
    "width",
    "height",
    "heading",
    "vx",
    "vy",
    "class",
)
track_fields = (
    "time",
    "track_id",
    "class",
    "x",
    "y",
    "vx",
    "vy",
    "sigma_x",
    "sigma_y",
    "sigma_vx",
    "sigma_vy",
    "cx",
    "cy",
    "length",
    "width",
    "height",
    "heading",
    "confirmed",
)
example_fields = (
    "sequence_id",
    "frame_index",
    "track_key",
    "target_assoc",
    "target_score",
    "is_null",
    "target_x",
    "target_y",
    "target_vx",
    "target_vy",
    "anchor_x",
    "anchor_y",
) + tuple(f"f{i}" for i in range(25))

# Object classes and sensor channels
pedestrian = "pedestrian"
bicyclist = "bicyclist"
classes = (pedestrian, bicyclist)

lidar = "lidar"
camera = "camera"
sensors = (lidar, camera)

# Motion model kinds
static = "static"
cv = "cv"
ca = "ca"
motion_models = (static, cv, ca)

# Association modes
mode_iou = "iou"
mode_l2 = "l2"
mode_mahalanobis = "mahalanobis"
mode_learned_mlp = "learned-mlp"
mode_learned_lstm = "learned-lstm"
classical_modes = (mode_iou, mode_l2, mode_mahalanobis)
learned_modes = (mode_learned_mlp, mode_learned_lstm)
association_modes = classical_modes + learned_modes

output_probability_and_score = "probability+score"
output_probability = "probability"
output_score = "score"
association_outputs = (
    output_probability_and_score,
    output_probability,
    output_score,
)

# Defaults
frame_rate = 10.0
gating_radius = 4.0
max_age = 5
w_score = 0.02
w_state = 0.06
label_iou_threshold = 0.1
match_radius = 2.0
velocity_outlier_threshold = {pedestrian: 1.0, bicyclist: 1.5}
measurement_sigma = {lidar: 0.1, camera: 0.5}
initial_velocity_sigma = {pedestrian: 2.0, bicyclist: 4.0}

# Feature vector layout
feature_layout_id = 1
feature_dim = 25
feature_names = (
    "det_length",
    "det_width",
    "det_height",
    "det_cx",
    "det_cy",
    "track_length",
    "track_width",
    "track_height",
    "track_cx",
    "track_cy",
    "prev_x",
    "prev_y",
    "prev_vx",
    "prev_vy",
    "pred_x",
    "pred_y",
    "pred_vx",
    "pred_vy",
    "delta_x",
    "delta_y",
    "delta_norm",
    "dt",
    "confidence",
    "sensor_lidar",
    "sensor_camera",
)

# Network output layout
output_dim = 11
hidden_units = 64

# Weight files
weights_magic = b"VRUW"
weights_version = 1
topology_mlp = "mlp"
topology_lstm = "lstm"
topology_codes = {topology_mlp: 1, topology_lstm: 2}
