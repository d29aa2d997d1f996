"""Block-diagonal state-feedback synthesis for interconnected LTI systems.

Per-subsystem dissipation LMIs certify each block against a local supply
rate; one interconnection LMI certifies that the supplies cancel globally.
Consensus ADMM (standard or Nesterov-accelerated) coordinates the two
levels; recovered gains are re-verified against the closed loop.
"""

__version__ = "0.1.0"

from .model import (InterconnectionProblem, StateSpace, Subsystem,
                    assemble_closed_loop, assemble_open_loop,
                    build_permutation, validate_problem)
from .lmi import (LmiConstraint, LocalCertificate, SupplyRate, VarSpec,
                  global_lmi, hinf_supply, local_lmi, smat, svec, svec_dim,
                  zero_supply)
from .subsolver import (CompiledSdp, LinTerm, QuadTerm, SdpProblem,
                        SdpSolution, solve_sdp)
from .admm import AdmmConfig, AdmmResult, ResidualTrace, run
from .synthesis import (SynthesisResult, VerificationReport,
                        centralized_synthesis, recover_gains,
                        synthesize_hinf, synthesize_stabilizing,
                        verify_certificates)
from .analysis import (DissipationCheck, Trajectory, check_dissipation,
                       hinf_norm, hinf_norm_bisection, simulate,
                       simulate_network, spectral_abscissa)

__all__ = [
    "InterconnectionProblem", "StateSpace", "Subsystem",
    "assemble_closed_loop", "assemble_open_loop", "build_permutation",
    "validate_problem",
    "LmiConstraint", "LocalCertificate", "SupplyRate", "VarSpec",
    "global_lmi", "hinf_supply", "local_lmi", "smat", "svec", "svec_dim",
    "zero_supply",
    "CompiledSdp", "LinTerm", "QuadTerm", "SdpProblem", "SdpSolution",
    "solve_sdp",
    "AdmmConfig", "AdmmResult", "ResidualTrace", "run",
    "SynthesisResult", "VerificationReport", "centralized_synthesis",
    "recover_gains", "synthesize_hinf", "synthesize_stabilizing",
    "verify_certificates",
    "DissipationCheck", "Trajectory", "check_dissipation", "hinf_norm",
    "hinf_norm_bisection", "simulate", "simulate_network",
    "spectral_abscissa",
]
