"""Filterformer: attention-based neural approximation of conditionally Gaussian optimal
filters, together with the exact filter used as ground truth."""
from .decoder import GeoAttentionParams, geo_attn, project_simplex
from .encoder import (AttentionParams, PosEncParams, SimScoreParams, attn, build_finite_encoder, build_pl_encoder,
                      pos_encoding, sim_score)
from .errors import (AssumptionViolation, ConfigError, DatasetIOError, DimensionError, DivergenceError,
                     FilterformerError, InvalidCovarianceError, InvalidPathError, NumericalError,
                     RetryBudgetExhausted, RiccatiBlowupError)
from .gaussian import ChartPoint, Gaussian, chart, d2f, pinelis_bounds, psd_sqrt, unchart, w2
from .mlp import MLPParams, forward, grad, init_mlp
from .model import (EvalReport, FilterformerModel, FilteringDataset, TrainConfig, build_dataset, evaluate,
                    init_model, loss, predict, train)
from .oracle import FilterTrajectory, discrete_kalman_reference, perturbation_stability, run_oracle
from .paths import PLDomainSpec, SampledPath, horizontal_extension, sample_pl_path, sup_distance, sup_norm
from .sde import CoefficientSet, SimConfig, make_preset, scalar_kalman, simulate

__version__ = "0.1.0"
