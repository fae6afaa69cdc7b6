"""Sequential dose-finding designs, property verification, and trial conduct."""

from .core import (
    BiomarkerModel,
    BracketError,
    Cohort,
    DoseDecision,
    DoseGrid,
    ToxScenario,
    TrialState,
    continuous_root,
    draw_binary_outcomes,
    draw_biomarker_outcomes,
    round_to_grid,
    true_mtd,
)
from .designs import (
    CrmPrior,
    DoseToxTable,
    NotEstimableError,
    WorkingModel,
    biased_coin_step,
    crm_next_dose,
    crm_posterior_mean,
    isotonic_next_dose,
    likelihood_crm_update,
    logit_mle_update,
    pava_isotonic,
    three_plus_three_step,
)
from .engines import (
    DESIGN_KINDS,
    BiasedCoinDesign,
    CoherenceGuard,
    CrmDesign,
    Design,
    DsaDesign,
    IsotonicDesign,
    LikelihoodCrmDesign,
    ThreePlusThreeDesign,
    VirtualObservationDesign,
    build_design,
    design_catalog,
)
from .sa import (
    AsymptoticInputs,
    SaConfig,
    VirtualState,
    dsa_freeze_index,
    dsa_step,
    efficiency_ratio,
    lambda_m,
    o_statistic,
    osa_step,
    rm_step,
    v_o,
    v_t,
    virtual_observation,
    vo_step,
)
from .sim import TrialTrajectory, check_asymptotics, design_cost, run_mc, run_trial
from .properties import (
    PropertyReport,
    Witness,
    certify_dsa_rigidity,
    check_coherence,
    detect_rigidity_empirical,
    estimate_indifference,
    probe_unbiasedness,
)

__version__ = "0.1.0"
