"""Desk-scale differentially private federated learning simulator.

Record-level local DP via per-example clipping and Gaussian noise, per-client
Renyi accounting over realized participation, a plateau-then-cosine clip
schedule, and an offline quadratic fit mapping privacy budgets to clip
thresholds.  See the README for the CLI and file formats.
"""

from .accountant import (AccountantConfig, ClientPrivacy, FinalReport, LedgerEntry,
                         ParticipationLedger, basic_composition, calibrate_constant_z,
                         compose, final_report, rdp_per_round, rdp_to_dp,
                         read_ledgers, write_ledgers)
from .curvefit import (FitResult, GridSpec, PerformanceMatrix, ProxySimConfig,
                       curve_samples, evaluate_fit, fit_quadratic, iqr_filter,
                       monotone_project, read_fit, select_optimal, simulate_grid,
                       write_fit)
from .data import (Example, LocalDataset, gen_synthetic, load_csv, merge,
                   partition_noniid, planted_logistic_params)
from .errors import CalibrationError, ConfigError, FitError, SimulationError
from .federation import (BudgetClipPolicy, ClientProfile, CommunicationReport,
                         FederationConfig, FixedClipPolicy, LocalUpdateResult,
                         QuantileClipPolicy, RoundRecord, TrainingResult, aggregate,
                         communication_report, local_update, make_clients,
                         quantile_policy_update, run_training, sample_clients)
from .mechanism import (NoiseSpec, average_clipped, clip_to_norm, epsilon_from_z,
                        gaussian_perturb, sensitivity, z_from_epsilon)
from .models import (ModelSpec, accuracy, dataset_loss, example_loss, init_model,
                     param_count, per_example_gradient, per_example_gradients)
from .schedule import ScheduleParams, clip_bound, decay_start, round_scale
from .streams import stream

__version__ = "0.1.0"
