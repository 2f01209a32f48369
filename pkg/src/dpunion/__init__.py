"""Differentially private set union and n-gram extraction."""

from dpunion.audit import audit_pvalue, run_audit
from dpunion.calibration import (CalibrationError, PrivacyParams, bw_delta, calibrate,
                                 calibrate_sigma, compose_sigma, rho1, rho_kgram_base,
                                 rho_policy_gaussian)
from dpunion.data import Corpus, ReleaseReport, gen_item_sets, gen_synthetic, load_corpus
from dpunion.dpne import DpneConfig, run_afp_dpne, run_level
from dpunion.dpsu import l1_counterexample_trace, run_policy_gaussian, spillover_surcharge_table
from dpunion.histogram import WeightedHistogram, build_weighted_histogram

__version__ = "0.1.0"
