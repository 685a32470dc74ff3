"""Graph total-variation solvers with forest preconditioners."""
from .analysis import (active_set, duality_gap, envelope_experiment, inactive_projector,
                       iteration_bound, lemma1_verify, local_rate)
from .forests import (ForestDecomposition, fixed_nested_forest, greedy_inactively_nested,
                      grid_chain_decomposition, minimum_spanning_forest, nesting_profile,
                      validate)
from .graph import (GraphError, WeightedGraph, apply_K, apply_KT, generate_grid,
                    generate_random_graph, load_benchmark, read_dimacs, read_edgelist,
                    total_variation)
from .oracle import exact_box_qp, fd_gradient_check, reference_solution
from .precond import (BlockForestPreconditioner, DiagonalPreconditioner, IdentityPreconditioner,
                      diagonal_preconditioner)
from .problems import DeconvDataTerm, RofDataTerm, deconv_oracle, rof_oracle, synth_deconv_instance
from .solvers import ConvergenceTrace, SolveConfig, SolveResult, solve, solve_fista, solve_pdhg, solve_pg
from .treeprox import retrieve_dual, tv_on_forest

__all__ = [name for name in dir() if not name.startswith("_")]
