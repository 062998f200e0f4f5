"""Variance reduction for SDE Monte Carlo by learned pathwise coupling of two copies."""

from .models import (BasketCall, BlackScholes, Call, CoupledBatchState, CoupledEnv, Heston,
                     HestonCall, LogSquare, euler_step_pair, step_reward)
from .numerics import RngStream, SampleStats, gaussian_batch, sample_stats, sym_psd_sqrt_2x2
from .policy import (MaterializedAction, PolicyParams, init_params, load_checkpoint,
                     materialize_diag, materialize_ortho, reference_agent, save_checkpoint)
from .trainer import EvalReport, TrainConfig, evaluate_variance, train

__version__ = "0.1.0"
