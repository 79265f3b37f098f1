"""lidarflock: a deterministic workbench for LiDAR-driven UAV swarm
collective navigation.

Submodules:
    geometry     quaternions and analytic ray casting
    world        scenarios, kinematics, collisions
    lidar        synthetic spinning-LiDAR scans and delay lines
    perception   filter -> cluster -> track neighbor pipeline
    observation  policy observation assembly (ego, neighbors, grid)
    reward       multi-term reward breakdown and termination verdicts
    planner      leader RRT + potential-field navigation
    net          numpy actor-critic with hand-written gradients
    ppo          GAE, clipped-surrogate training loop, gradient check
    checkpoint   policy serialization
    envs         closed-loop swarm environment
    baseline     rule-based flocking controller
    evalkit      episode runner, metrics, trajectory persistence
    config       TOML run configuration
    cli          command line entry point

Submodules load lazily: `import lidarflock` is cheap, and the CLI can
pin threading environment variables before numpy first loads.
"""
from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("geometry", "world", "lidar", "perception", "observation",
               "reward", "planner", "net", "ppo", "checkpoint", "envs",
               "baseline", "evalkit", "config", "cli")

# public name -> home submodule
_API = {
    "ScenarioConfig": "world",
    "Scenario": "world",
    "UavState": "world",
    "ObstacleField": "world",
    "generate_scenario": "world",
    "step_kinematics": "world",
    "LidarParams": "lidar",
    "PointCloud": "lidar",
    "DelayLine": "lidar",
    "scan": "lidar",
    "NeighborTracker": "perception",
    "FilterParams": "perception",
    "ClusterParams": "perception",
    "Observation": "observation",
    "GridParams": "observation",
    "observation_size": "observation",
    "RewardParams": "reward",
    "RewardBreakdown": "reward",
    "TerminationConfig": "reward",
    "compute_reward": "reward",
    "LeaderPlanner": "planner",
    "WaypointMission": "planner",
    "ActorCritic": "net",
    "NetConfig": "net",
    "PpoParams": "ppo",
    "train": "ppo",
    "gae": "ppo",
    "gradient_check": "ppo",
    "save_policy": "checkpoint",
    "load_policy": "checkpoint",
    "SwarmEnv": "envs",
    "EnvParams": "envs",
    "make_envs": "envs",
    "BaselineController": "baseline",
    "BaselineParams": "baseline",
    "PolicyController": "baseline",
    "Trajectory": "evalkit",
    "run_episode": "evalkit",
    "batch_evaluate": "evalkit",
    "metric_sr": "evalkit",
    "metric_mp": "evalkit",
    "metric_fr_ms_al_mdo": "evalkit",
    "RunConfig": "config",
    "parse_config": "config",
    "serialize_config": "config",
}

__all__ = sorted(set(_SUBMODULES) | set(_API) | {"__version__"})


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _API:
        module = importlib.import_module(f".{_API[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
