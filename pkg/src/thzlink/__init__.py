"""Link-level simulator for THz hybrid-beamforming UM-MIMO systems with
hardware impairments and a two-stage neural-network compensation pipeline."""

__version__ = "0.1.0"

from .chain import ChainSpec, HardwareProfile, LinkRealization, make_link
from .channel import BeamformerSet, ChannelModel, build_channel, design_beamformers
from .config import ExperimentConfig, load_config, save_config
from .core import RandomSource, SystemConfig, cgauss_matrix, frobenius_norm_sq
from .neural import SubNN, SubNNBank, TrainingConfig, TrainingReport
from .stage1 import Stage1Dataset, StructuredDNN, build_stage1, train_stage1
from .stage2 import DDnnBaseline, RxCompensator, TxCompensator, deploy_and_evaluate

__all__ = [
    "BeamformerSet",
    "ChainSpec",
    "ChannelModel",
    "DDnnBaseline",
    "ExperimentConfig",
    "HardwareProfile",
    "LinkRealization",
    "RandomSource",
    "RxCompensator",
    "Stage1Dataset",
    "StructuredDNN",
    "SubNN",
    "SubNNBank",
    "SystemConfig",
    "TrainingConfig",
    "TrainingReport",
    "TxCompensator",
    "__version__",
    "build_channel",
    "build_stage1",
    "cgauss_matrix",
    "deploy_and_evaluate",
    "design_beamformers",
    "frobenius_norm_sq",
    "load_config",
    "make_link",
    "save_config",
    "train_stage1",
]
