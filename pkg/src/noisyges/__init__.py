"""Noisy greedy equivalence search with max-information corrected inference."""

from .graphs import Cpdag, Dag, Operator, dag_to_cpdag, pdag_to_dag, shd
from .scoring import Dataset, ScoreConfig
from .mechanisms import PrivacyBudget, RngStream
from .discovery import DiscoveryConfig, exact_noisy_search, noisy_ges
from .inference import build_report, corrected_alpha, fair_split_fraction

__version__ = "0.1.0"
