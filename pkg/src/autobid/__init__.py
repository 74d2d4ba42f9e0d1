"""Truthful delivery mechanisms for constrained auto-bidding, with a seeded GSP market simulator.

The hot loops (oracle episodes for calibration, the controlled delivery loop)
run in a compiled extension when it is built and fall back to pure Python
otherwise; ``autobid.BACKEND`` names the one in use.
"""
from ._core import BACKEND
from .audit import (AuditReport, cpa_roi_equivalence_check, ic_audit, spa_audit,
                    spa_counterexample, unknown_value_demo, utility_of_report)
from .bidding import StrategyParams, bid_per_conversion, estimate_competitor_bids, optimal_bid
from .control import ControlConfig, EpisodeLog, EpisodeResult, run_episode, run_spa_episode
from .errors import (AutobidError, ConfigError, DomainError, EmptyFrontierError,
                     InvalidMechanismError, MalformedRequestError, PlanningError)
from .market import (AdRequest, AdvertiserProfile, AuctionOutcome, DeliveryRecord,
                     EpisodeSummary, Scenario, Slot, aggregate_episode, compute_request_delivery,
                     roi_to_tcpa, run_gsp_auction)
from .mechanism import (CompositeMechanism, Curve, DecomposedMechanism, Frontier, GFunction,
                        LinearDecomposition, SubmarketMechanism, TcpaMechanism,
                        calibrate_feasible_cv, calibrate_submarkets, decomposed_mechanism,
                        make_g_function, make_submarket_curve, submarket_mechanism,
                        tcpa_mechanism, verify_mechanism_ic)
from .scenario import ScenarioConfig, example1_scenario, generate_scenario

__version__ = "0.1.0"
