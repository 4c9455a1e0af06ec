from .images import (AugmentConfig, ImageBuffer, NormStats, augment, normalize_image, read_pgm,
                     read_pgm_header, resize_bilinear, rotate, write_pgm)
from .manifest import (META_DIM, META_LAYOUT, Condition, DatasetManifest, PatientMetadata, Plane,
                       SampleRecord, SeriesDescription, Severity, Sex, VertebralLevel, Weighting,
                       extract_metadata, load_manifest, manifest_metadata, write_manifest)
from .split import SplitAssignment, stratified_split
from .synth import CLASS_PROPORTIONS, largest_remainder, synth_dataset
