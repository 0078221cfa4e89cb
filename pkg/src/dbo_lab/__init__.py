"""Single-loop decentralized bilevel optimization on a simulated agent network."""
from .config import RunConfig, parse_config, render_config
from .datagen import SynthSpec, generate_synthetic
from .diagnostics import (ConstantsLedger, Diagnostics, IterateTrace, check_stepsizes,
                          derive_constants, lyapunov, max_stepsizes, round_metrics,
                          theory_stepsizes)
from .errors import DBOError
from .harness import compare, execute, run_experiment
from .mixing import MixingMatrix, build_ring_mixing, complete_mixing, gossip, mixing_matrix
from .oracles import LogisticHyperOpt, QuadraticBilevel, random_quadratic
from .sldbo import NetworkState, StepSizes, combine, run, sldbo_step, track
from .soba import SobaState, run_soba, soba_step
from .truth import TruthReport, exact_hypergradient, finite_diff_hypergradient, solve_lower

__version__ = "0.1.0"
