"""220 GHz urban-microcell channel toolkit.

Forward: stochastic cluster/ray synthesis on measured statistics plus
deterministic scene echoes, rendered through a direction-scan sounder
simulator. Inverse: PDP synthesis, peak-search multipath extraction,
MCD-DBSCAN clustering, and statistical characterization that round-trips
against the forward parameters.
"""

from .cli import data_file
from .params import (
    AntennaPattern,
    ClusteringParams,
    FoliageParams,
    FrequencyPlan,
    ParamBundle,
    ScanGrid,
    SounderParams,
    SynthesisParams,
    UmiCaseParams,
    load_config,
    validate,
)
from .propagation import LinkState, ci_path_loss, classify_link, draw_foliage_loss, foliage_excess_loss, fspl
from .scene import FoliageSegment, Scatterer, Scene
from .sounder import DriftModel, DssScan, antenna_gain, apply_calibration, correct_drift, dealias_extend, simulate_scan
from .synth import Mpc, MpcSet, deterministic_link, synthesize_link
from .estimation import Pdp, directional_pdp, extract_mpcs, mpc_threshold, omni_pdp
from .clustering import ClusterResult, adjusted_rand_index, dbscan, mcd
from .characterization import (
    ChannelStats,
    FitReport,
    circular_angle_spread,
    cluster_spreads,
    compare_reference,
    empirical_cdf,
    fit_ci,
    fit_gaussian,
    fit_lognormal,
    k_factor,
    rms_delay_spread,
)

__version__ = "0.1.0"
