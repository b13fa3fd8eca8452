"""Natural actor-critic for POMDPs with finite-state controllers, plus exact oracles."""
from .errors import *  # noqa: F401,F403
from .model import (Belief, History, PomdpModel, belief_reward, filter_n, filter_step, load_model,
                    save_model, tv_distance)
from .controllers import (FeatureMap, FscPolicy, InternalStateSpec, action_probs, decode_window,
                          encode_window, generic_internal, log_policy_gradient, sliding_block,
                          tabular_features)
from .sampling import (Sampler, TrajectoryBatch, TrajectoryRecord, WarmStart, initial_law, rng_stream,
                       rollout, sample_h0, sample_visitation)
from .critic import CriticConfig, CriticEstimate, derived_values, project_ball, run_mstep_td, td_semigradient
from .actor import (ActorConfig, NacRunLog, cfa_loss_gradient, kl_potential, nac_update, run_nac,
                    sgd_inner_loop)
from .oracle import (ErrorReport, JointChain, best_fsc_bruteforce, best_linear_fit, compatible_fa_error,
                     concentrability, eps_pa, exact_q, exact_visitation, fixed_point_q, inference_error,
                     pdl_check)
from .stability import (BackwardVariables, ErgodicityCertificate, SmoothingKernel, backward_variables,
                        check_condition1, check_condition2, check_condition3, contraction_experiment,
                        left_multiply, smoothing_kernels, verify_kernel_minorization)
from .benchmarks import BenchmarkGenerator, generate_benchmark, two_state_noisy
from .harness import ExperimentConfig, load_config, run_experiment

__version__ = "0.1.0"
