"""Resource allocation for power-domain sparse code multiple access HetNets.

Modules
-------
scenario    configuration, topology, channel draws and codebook structures
phy         SINR, rate, SIC-order and receiver-complexity formulas
power       SCALE/dual power allocation for a fixed assignment
codebook    codebook assignment search for fixed powers
experiment  alternation loop, sweeps and result files
"""
from .scenario import (ChannelRealization, CodebookStructure, EtaPolicy, InfeasibleError,
                       ScenarioConfig, ScenarioError, Scheme, Topology, build_codebook_structure,
                       build_topology, dump_scenario, load_scenario, sample_channels,
                       structure_for, subcarrier_structure)
from .phy import (Allocation, ComplexityParams, LinkModel, avg_codebook_gain,
                  detection_order, receiver_complexity, sic_feasible, sinr_cross,
                  sinr_pdnoma, sinr_psma, sinr_scma, sum_rate)
from .power import (DualState, PowerProblem, ScaleCoeffs, brute_force_power_oracle,
                    linearize_sic_constraint, power_closed_form, scale_coeffs,
                    solve_power_scale, subgradient_step)
from .codebook import assign_codebooks, check_feasible, exhaustive_assign_oracle
from .experiment import (ExperimentSpec, ResultTable, SweepAxis, alternate_solve,
                         compare_schemes, emit_results, run_experiment)

__all__ = [
    "ChannelRealization",
    "CodebookStructure",
    "EtaPolicy",
    "InfeasibleError",
    "ScenarioConfig",
    "ScenarioError",
    "Scheme",
    "Topology",
    "build_codebook_structure",
    "build_topology",
    "dump_scenario",
    "load_scenario",
    "sample_channels",
    "structure_for",
    "subcarrier_structure",
    "Allocation",
    "ComplexityParams",
    "LinkModel",
    "avg_codebook_gain",
    "detection_order",
    "receiver_complexity",
    "sic_feasible",
    "sinr_cross",
    "sinr_pdnoma",
    "sinr_psma",
    "sinr_scma",
    "sum_rate",
    "DualState",
    "PowerProblem",
    "ScaleCoeffs",
    "brute_force_power_oracle",
    "linearize_sic_constraint",
    "power_closed_form",
    "scale_coeffs",
    "solve_power_scale",
    "subgradient_step",
    "assign_codebooks",
    "check_feasible",
    "exhaustive_assign_oracle",
    "ExperimentSpec",
    "ResultTable",
    "SweepAxis",
    "alternate_solve",
    "compare_schemes",
    "emit_results",
    "run_experiment",
]

__version__ = "0.1.0"
