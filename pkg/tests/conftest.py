import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=1000)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from dagqos.model import AimdParams, NetworkConfig


def mm1_config(lam=10.0, mu=8.0, duration=20_000.0) -> NetworkConfig:
    """One node served at a fixed exponential rate, one Poisson user.

    The shared scheduler is made effectively instantaneous so the node's own
    issue process is the only server.
    """
    return NetworkConfig(
        node_count=1, user_count=1, scheduling_rate=lam, load_fraction=mu / lam,
        scheduler_rate=1e9, duration=duration, warmup=100.0, mc_runs=1,
        aimd=AimdParams(enabled=False, fixed_rate=lam),
    )
