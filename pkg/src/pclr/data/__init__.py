"""ECG records, preprocessing, quality filters, labels, manifests and synthetic cohorts."""
from .labels import AF_KEYWORDS, LVH_KEYWORDS, label_af, label_lvh
from .manifest import CohortManifest, load_manifest, load_prepared, write_manifest
from .quality import Verdict, filter_records, quality_filter
from .records import LEADS, EcgRecord, prepare_ecg, read_waveform, resample_lead, write_waveform
from .synth import SynthConfig, generate_metadata, generate_synthetic_cohort

__all__ = [
    "AF_KEYWORDS", "LVH_KEYWORDS", "label_af", "label_lvh",
    "CohortManifest", "load_manifest", "load_prepared", "write_manifest",
    "Verdict", "filter_records", "quality_filter",
    "LEADS", "EcgRecord", "prepare_ecg", "read_waveform", "resample_lead", "write_waveform",
    "SynthConfig", "generate_metadata", "generate_synthetic_cohort",
]
