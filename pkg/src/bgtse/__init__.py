"""Beamformer-guided target speaker extraction toolkit (8 kHz, multichannel)."""

from .beamforming import beamform_backend, beamform_frontend
from .dsp import BACKEND_STFT, FRONTEND_STFT, ConfigurationError, StftConfig, istft, stft
from .geometry import ArrayGeometry, Doa, circular_array
from .metrics import pit_select, sdr, si_sdr, si_sdr_improvement
from .pipeline import ExtractorSpec, PipelineConfig, run_bg_tse, run_bg_tse_with_backend, run_pipeline
from .roomsim import SceneSpec, SimulationRanges, sample_scene, simulate_scene

__version__ = "0.1.0"
