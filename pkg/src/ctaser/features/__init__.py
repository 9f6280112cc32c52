from ctaser.features.lmfb import (
    AudioFormatError,
    LmfbConfig,
    extract_lmfb,
    frame_count,
    load_wav,
    mel_center_frequencies,
    mel_filterbank,
    write_wav,
)
from ctaser.features.manifest import (
    Manifest,
    ManifestError,
    ManifestRecord,
    ValidationReport,
    load_manifest,
    write_manifest,
)
from ctaser.features.seqf import SeqfFormatError, read_seqf, read_seqf_header, write_seqf
from ctaser.features.synth import (
    SynthSpec,
    class_channel_map,
    detect_salient_channel,
    generate_synth_corpus,
)

__all__ = [
    "AudioFormatError",
    "LmfbConfig",
    "extract_lmfb",
    "frame_count",
    "load_wav",
    "mel_center_frequencies",
    "mel_filterbank",
    "write_wav",
    "Manifest",
    "ManifestError",
    "ManifestRecord",
    "ValidationReport",
    "load_manifest",
    "write_manifest",
    "SeqfFormatError",
    "read_seqf",
    "read_seqf_header",
    "write_seqf",
    "SynthSpec",
    "class_channel_map",
    "detect_salient_channel",
    "generate_synth_corpus",
]
