"""Statistical checks of simulated ensembles against exact and limiting predictions."""

from .checks import (
    check_bernoulli_reduction,
    check_extremes,
    check_first_moment,
    check_growth_rate,
    check_martingale,
    check_mixed_poisson,
    check_product_form,
    check_slln,
    check_survival_decay,
    window_reference,
)
from .envelopes import EnvelopeCase, check_envelopes, default_grid, run_envelope_suite
from .oracle import EulerConfig, cross_validate, run_euler_oracle
from .report import FAIL, INCONCLUSIVE, PASS, TestReport, summary_table, write_reports
