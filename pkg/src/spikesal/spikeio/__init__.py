from .simulate import IntensityClip, simulate_spikes
from .stream import (
    SpikeStream,
    DecodeError,
    encode_stream,
    decode_stream,
    write_spk,
    read_spk,
    read_spk_header,
    read_spk_frame,
    iter_spk_frames,
    write_spk_frames,
)
from .reconstruct import tfi_reconstruct
from .synthetic import SCENARIOS, SyntheticConfig, SyntheticSample, make_synthetic_dataset
from .imageio import (
    read_gray,
    write_gray,
    read_pgm,
    write_pgm,
    save_dataset,
    load_dataset,
    load_clip_dir,
)
