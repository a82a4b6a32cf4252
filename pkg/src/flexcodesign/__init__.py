"""Hardware-aware feature-to-classifier co-design for mixed-signal flexible wearables."""

from .adc import AdcConfig, code_to_input, convert_bank, dac_level, sar_convert
from .analog import (AnalogConfig, nmse, run_extractor_bank, sim_integrator_mean, sim_peak_detector,
                     sim_sum, from_voltage, to_voltage)
from .config import RunConfig, load_config
from .gating import (GammaSchedule, GateLayer, anneal_gamma, apply_gates, cost_loss, deterministic_gates,
                     gate_backward, prune_gates, sample_gates)
from .hwcost import CostLut, CostReport, default_lut, feature_cost_vector, mlp_cost, realtime_check, system_cost
from .mlp import (MlpModel, QuantizedModel, TrainConfig, backward, evaluate, forward, init_model,
                  quantize_input, quantize_weights, total_loss, train)
from .pipeline import ParetoPoint, export, pareto_filter, report, run_pipeline, tune_hyperparams
from .prune import SparsitySchedule, ltp_round, ltp_run, magnitude_mask
from .signal import (Dataset, SyntheticSpec, Window, WindowSet, apply_normalizer, fit_normalizer,
                     generate_synthetic, kfold_split, load_csv, make_windows, reference_features)

__version__ = "0.1.0"
