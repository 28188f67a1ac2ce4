"""Remote state estimation over a shared fading channel with multi-packet reception.

Sensors choose transmit powers from finite sets; the receiver decodes
packets by SINR thresholding, optionally with successive interference
cancellation.  The package computes the packet-arrival statistics, the
resulting Kalman covariance recursion, power-allocation policies (greedy,
finite horizon, discounted infinite horizon), stability conditions and
closed-loop simulations.
"""

from .channel import (Action, ArrivalDistribution, ChannelParams, Receiver,
                      arrival_distribution, arrival_distribution_closed_form2,
                      arrival_distribution_mc, decode, decode_batch)
from .estimator import (EstimatorState, SystemModel, expected_cost, g_operator,
                        measurement_update, psi, state_update, time_update)
from .simulator import SimConfig, SimMetrics, run, simulate, sweep_mu
from .stability import (StabilityReport, check_lemma, lambda_capital,
                        perfect_mp_probability, riccati_boundedness,
                        worst_channel_probability)

__version__ = "0.1.0"

__all__ = [
    "Action", "ArrivalDistribution", "ChannelParams", "EstimatorState", "Receiver",
    "SimConfig", "SimMetrics", "StabilityReport", "SystemModel",
    "arrival_distribution", "arrival_distribution_closed_form2",
    "arrival_distribution_mc", "check_lemma", "decode", "decode_batch",
    "expected_cost", "g_operator", "lambda_capital", "measurement_update",
    "perfect_mp_probability", "psi", "riccati_boundedness", "run", "simulate",
    "state_update", "sweep_mu", "time_update", "worst_channel_probability",
]
