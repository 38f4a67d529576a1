"""Moment-based training of polynomial recurrent sequence models.

Pipeline: simulate a linear-Gaussian input chain, form cross-moments of the
outputs with the chain's score tensors, decompose the resulting low-rank
tensors, and read model parameters off the factors.  Diagnostics quantify
recovery error modulo the model's symmetry group and evaluate deviation
bounds.
"""

__version__ = "0.1.0"

from .sequence_models import (AssumptionError, BrnnParams, MarkovChainSpec,
                              RnnParams, SequenceData, bounded_input_spec,
                              brnn_forward, rnn_forward, sample_markov_chain,
                              scalar_output_forward, stationary_covariance)
from .score import (LocalGaussian, ScoreTensor, batch_cross_moment,
                    centered_scores, local_gaussian, precision_matrix, score,
                    stein_check)
from .moments import (MomentTensor, cross_moment_s1, cross_moment_s2,
                      cross_moment_s3, cross_moment_s3_scalar,
                      cross_moment_s4_reshaped, load_moment,
                      measured_activation_scale, population_moment_oracle,
                      save_moment, toeplitz_blocks)
from .cp_decomp import (CpDecomposition, decompose, decompose_symmetric,
                        power_method, symmetrize, symmetrizer_from_moment,
                        whiten)
from .recovery import (BrnnEstimate, RnnEstimate, recover_brnn, recover_cubic,
                       recover_general, recover_linear, recover_quadratic,
                       recover_recurrence, recover_scalar, recover_u,
                       train_brnn, train_linear, train_quadratic, train_scalar)
from .diagnostics import (MixingEstimate, RecoveryReport, SweepResult, align,
                          concentration_bound, lipschitz_bound, mixing_estimate,
                          sample_sweep)
from .config import ConfigError, ExperimentConfig, parse_config

__all__ = [name for name in dir() if not name.startswith("_")]
