"""Quantized burst spiking networks: training, scale absorption, integer inference."""

from .absorb import (AbsorbedLayer, AbsorbedModel, OpTrace, absorb_scales, export_model,
                     import_model, infer_integer, verify_equivalence)
from .autograd import backward_bptt, cross_entropy, forward_unroll, train_step
from .checkpoint import checkpoint_load, checkpoint_save
from .config import ExperimentConfig, load_config, parse_config
from .data import (Dataset, bin_events, encode_direct, encode_frames, generate_synthetic,
                   load_idx_images, read_events, read_idx)
from .energy import EnergyReport, count_ops, energy_report, estimate_energy
from .estimator import QBLIFClassifier
from .exceptions import (ChecksumError, ConfigError, DimensionError, FormatError,
                         InvalidScaleError, InvariantViolation, NumericFaultError, QBLIFError,
                         UnsupportedVersionError)
from .metrics import (BurstHistogram, burst_histogram, capacity_bound, effective_levels,
                      entropy_bits, mutual_information_deterministic)
from .network import LayerSpec, Network, NetworkSpec, build_network, parse_layers
from .neurons import (MembraneState, NeuronConfig, NeuronKind, SpikeTensor, ilif_step, lif_step,
                      neuron_step, qblif_step, quantize_burst, reset_state)
from .surrogates import Surrogate, SurrogateKind, arctan_surrogate, box_et, relsg_et

__version__ = "0.1.0"
