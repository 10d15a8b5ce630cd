"""Deep unrolled signal recovery with inexact sensing operators.

The package trains L-stage unrolled networks (an ADMM-inspired image
recovery net and a DetNet-style symbol detector) under a measurement model
y = (A_k + A_u) x + noise where only A_k is known, and improves robustness
by distilling stage-wise traces from a teacher trained under a milder
mismatch.
"""

__version__ = "0.1.0"

from .admm_net import (AdmmNet, AdmmStage, AdmmState, DenoiserBlock, admm_forward,
                       admm_stage, init_state, load_admm, save_admm)
from .config import (EXPERIMENTS, SCALES, SCHEMA_VERSION, canonical_json,
                     config_hash, load_config, preset, validate_config)
from .data import (ImageDataset, SymbolBatch, bilinear_resize, gen_bpsk_batch,
                   gen_channel_batch, load_idx_images, load_idx_labels,
                   load_image_dataset, load_mnist_idx, resize_to_32,
                   synthetic_images)
from .detnet import (DetNet, DetNetStage, detnet_forward, detnet_stage,
                     hard_decision, load_detnet, psi_t, save_detnet)
from .distill import (DistillationConfig, MimoTask, SpcTask, TeacherSnapshot,
                      TrainResult, TRAIN_LOG_COLUMNS, composite_student_loss,
                      loss_grad, loss_output, recon_loss_detnet, recon_loss_mse,
                      stage_weights, train_baseline, train_student, train_teacher,
                      verify_gradients, write_train_log, zero_forcing)
from .errors import (ConfigError, DimensionError, EmptyResultsError, FormatError,
                     ParameterError, SymbolError, TrainingError)
from .experiments import (FIGURES, RESULT_COLUMNS, build_mimo_task, build_spc_task,
                          emit_plot_data, evaluate_mimo, evaluate_spc, read_results,
                          run_distill_grid, run_sigma_sweep, training_config,
                          write_results)
from .metrics import MetricRecord, ber, psnr, ssim
from .seeding import derive_seed
from .sensing import (ComplexChannel, MeasurementBatch, SensingOperator,
                      add_measurement_noise, build_hadamard_cake_cutting,
                      cake_cutting_order, count_sign_blocks, fidelity_gradient,
                      forward_measure, lift_complex_to_real, load_operator,
                      sample_unknown, save_operator, spc_operator)
from .trace import StageTrace
