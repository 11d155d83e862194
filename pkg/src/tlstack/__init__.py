"""Temporal feature stacks for time-lapse camera-trap imagery.

Frames are turned into 5-plane stacks (R, G, B, temporal-average
background, colour-corrected difference mask); two channel-weighting
layers and a stratified camera-level dataset splitter are included.
"""

from .background import BackgroundModel, Skipped, build_background, luminosity_grey, temporal_average
from .container import read_stack, write_stack
from .diffmask import (ColorMatrix, FeatureStack, apply_color_correction, assemble_stack,
                       diff_mask, fit_color_matrix, value_gain_t_channel)
from .ingest import (Frame, Modality, ModalityPolicy, PriorWindow, SequenceManifest, Unavailable,
                     classify_modality, load_manifest, load_rgb, prior_window)
from .pipeline import PipelineConfig, fitness, run_split, run_stack
from .split import (AnnotationRecord, CameraProfile, ClassSet, PartitionSpec, SizeClusters,
                    assign_size, camera_profile, kmedoids_pam, parse_annotations,
                    search_partition, variance_terms)
from .weighting import (FixedWeights, SEParams, fixed_backward, fixed_forward, init_params,
                        se_backward, se_forward)

__version__ = "0.1.0"
