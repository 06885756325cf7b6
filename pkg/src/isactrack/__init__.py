"""Joint sensing and communication with a hybrid array: OFDM backscatter
simulation, GLRT delay-Doppler-angle detection with OS-CFAR, and adaptive
beam tracking of a moving target."""

from .arrays import (DftCodebook, ReductionPlan, TxBeam, beam_pattern,
                     build_codebook, design_tx_beam, draw_reduction_plan,
                     in_mainlobe, steering, steering_from_sin)
from .channel import (RxBlocks, comm_gain, generate_epoch_frames,
                      generate_frame, simulate_epoch_rx)
from .config import (ConfigError, ScenarioConfig, SystemConfig, load_config,
                     noise_variance, rng_stream, save_config, with_updates)
from .detector import (CalibrationError, CfarConfig, Detection, DetectionGrid,
                       calibrate_cfar, glrt_map_fast, glrt_statistic_oracle,
                       make_grid, os_cfar)
from .harness import (EnsembleSummary, EpochRecord, run_ensemble, run_trial,
                      spectral_efficiency, summarize)
from .scene import (Echoes, Scatterer, TargetState, Trajectory,
                    generate_trajectory, scatter_echoes, scatterer_layout,
                    step_kinematics, visible_scatterers)
from .tracker import (TrackState, fuse_center, place_rx_codebook, pointing,
                      predict, select_beamwidth, strongest_cluster, track_epoch)

__version__ = "0.1.0"
