"""Composite-null hypothesis testing for binary-response generative models.

A test query's success probability is compared against the interval of
probabilities spanned by semantically equivalent rewrites of a base query,
under a fixed budget of model responses.
"""

__version__ = "0.1.0"

from .bounds import (
    BoundReport,
    avg_power_lower_bound,
    bound_report,
    ideal_power,
    ideal_rejection_probability,
    min_null_samples,
    power_lower_bound,
    size_upper_bound,
    validity_check,
)
from .core import (
    BernoulliEstimate,
    BoundNotApplicable,
    BudgetExhausted,
    NullRange,
    TestDesign,
    concentration_radius,
    concentration_slack,
)
from .optimizer import (
    NoValidDesign,
    NoValidDesignError,
    OptimalDesign,
    OptimizerConfig,
    borrow_design_from,
    optimal_test,
    optimize_design,
)
from .ranges import RangeEstimate, estimate_range
from .source import (
    LlmHttpSource,
    PoolSource,
    ResponseSource,
    RiggedSource,
    SyntheticSource,
    classify_response,
    load_source,
)
from .statistic import (
    ResponseBatch,
    generic_statistic,
    ideal_statistic,
    realistic_statistic,
    two_sample_exact_test,
)
