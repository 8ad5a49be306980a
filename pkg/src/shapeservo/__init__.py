"""Model-free 3-D shape servoing of continuum robots with RBF-learned Jacobians."""
from .controller import ControllerGains, check_gain_conditions, control, pseudo_inverse
from .features import FeatureKind, bending_angle, extract_feature, feature_jacobian, twist_angle
from .harness import RunResult, ServoLoop, run_repeat, run_scenario, verify
from .learner import LearnerGains, RbfBank, build_parameterization, estimate_jacobian, init_bank
from .plant import DisturbanceEvent, PlantConfig, Simulator, forward_shape, preset
from .scenario import ScenarioConfig

__version__ = "0.1.0"

__all__ = [
    "ControllerGains", "DisturbanceEvent", "FeatureKind", "LearnerGains", "PlantConfig", "RbfBank",
    "RunResult", "ScenarioConfig", "ServoLoop", "Simulator", "bending_angle", "build_parameterization",
    "check_gain_conditions", "control", "estimate_jacobian", "extract_feature", "feature_jacobian",
    "forward_shape", "init_bank", "preset", "pseudo_inverse", "run_repeat", "run_scenario", "twist_angle",
    "verify",
]
