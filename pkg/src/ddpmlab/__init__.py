"""Numerical laboratory for discrete-time DDPM sampling on tractable targets.

Modules:
    schedule   noise schedules and derived time coefficients
    target     Gaussian-mixture targets with closed-form scores and marginals
    simulate   forward chain, reverse-time SDE, DDPM sampler, score models
    fbsde      backward-SDE / PDE characterization checks of the score
    metrics    TV/KL distances and score-matching diagnostics
    bounds     explicit error bounds vs. empirical counterparts
    experiments, cli   reproducible config-driven runs
"""

from .schedule import (BandCheckResult, BridgeCoefficients, NoiseSchedule,
                       band_check, constant_rate, from_linear_variance,
                       load_schedule, save_schedule)
from .target import (GaussianMixtureDensity, GrowthConstants, MarginalLaw,
                     MixtureTarget, default_axis, fokker_planck_residual,
                     gaussian_target, growth_constants, load_target, save_target,
                     symmetric_mixture)
from .simulate import (ScoreModel, TrajectoryBatch, ddpm_sample,
                       forward_chain, growth_clip, path_generator, reverse_sde,
                       reverse_transition_density, save_trajectories)
from .fbsde import (ADJUDICATED_DRIFT_SIGN, BsdeProcesses, ResidualStats,
                    YastReport, bsde_processes, bsde_residual,
                    bsde_residual_both, f_weight, g_weight,
                    h_martingale_check, pde_residual, yast_check, z_energy)
from .metrics import (DensityGrid, denoise_identity_check, fd_bin_edges,
                      grid_from_density, kl, score_growth_audit, score_loss,
                      tv, tv_hist_two_samples, tv_hist_vs_density,
                      write_metric_report)
from .bounds import (BoundReport, banded_schedule_terms, girsanov_bound,
                     moment_report, schrodinger_bound, tv_bound_terms,
                     write_bound_reports)

__version__ = "0.1.0"
