"""Evidential value for data fabrication from published ANOVA summaries."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError,
    DfMismatchError,
    DomainError,
    EnumerationLimitError,
    InputError,
    SchemaError,
    UnresolvableError,
    ValidationError,
)
from .evidence import (  # noqa: E402
    EvidenceReport,
    chi,
    combine_studies,
    evidence_pergroup,
    evidence_pooled,
    group_means,
    posterior_odds,
    rho_hat,
    s_statistic,
    within_group_ss,
)
from .summary import (  # noqa: E402
    CellTable,
    FStatRecord,
    Grouping,
    StudySummary,
    load_study,
    parse_study,
    per_cell_count,
    rounding_box,
)
from .variance import (  # noqa: E402
    effect_mean_square,
    pool_sigma2,
    recover_sigma2,
    sigma2_from_f,
    sigma2_interval,
    worst_case_table,
)


def bundled_study(name: str) -> StudySummary:
    """Load one of the study files shipped with the package (e.g. ``"stapel1996_table1"``)."""
    from importlib.resources import files

    return parse_study(files(__package__).joinpath("data", f"{name}.json").read_text("utf-8"))
