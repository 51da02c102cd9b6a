"""Bayesian look-up table correction for low-resolution quantizers."""
from .quantizer import Quantizer, apply_inl, make_uniform_midriser, quantize, requantize_dithered
from .signals import (BpskParams, LfmParams, PriorSpec, ScenarioModel, ToneParams, assemble_input,
                      known_prior)
from .likelihood import QuadratureSpec, likelihood_window, prior_x0, tone_validity_prob
from .estimators import EstimatorConfig, estimate_map, estimate_ml, estimate_mmse, lmmse_fit
from .lut import CorrectionPipeline, build_lut, correct_stream, load_lut, save_lut, window_index

__version__ = "0.1.0"
