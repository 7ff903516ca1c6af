"""Inequality Process wage model: particle simulation, gamma macro model, panel fitting."""
__version__ = "0.1.0"

from .errors import DomainError, ValidationError
from .gamma_core import GammaParams, MacroContext, MixtureModel
from .estimation import Panel, PanelCell, SeriesFrame
from .dynamics import MacroFamily, TransitionPair, hollowing_verdict
from .fitter import FitConfig, FitResult, anneal, baseline_fit, bootstrap_se
from .microsim import Population, SimConfig, run
from .synth import SynthSpec, make_panel

__all__ = [
    "DomainError", "ValidationError", "GammaParams", "MacroContext", "MixtureModel",
    "Panel", "PanelCell", "SeriesFrame", "MacroFamily", "TransitionPair", "hollowing_verdict",
    "FitConfig", "FitResult", "anneal", "baseline_fit", "bootstrap_se",
    "Population", "SimConfig", "run", "SynthSpec", "make_panel",
]
